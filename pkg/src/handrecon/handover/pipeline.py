"""Discrete-time handover pipeline.

Each step of ``dt`` seconds: perceive (while waiting or approaching), gate the
frame on the stereo reprojection error of the object centroid, reconstruct,
keep the reconstruction only if its mask IoU beats the best so far, replan
grasps, then advance the gripper through the phase graph

    waiting -> approaching -> grasping -> retracting -> delivering -> homing

with ``failed`` reachable from waiting (timeout) and approaching (no grasp).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Protocol

import numpy as np

from ..benchmark import EpisodeResult
from ..geometry import (
    CameraModel,
    DegenerateGeometryError,
    Mask,
    PointCloud,
    RigidTransform,
    TSDFGrid,
    convex_hull_mask,
    project_to_surface,
    mask_iou,
    triangulate,
    tsdf_surface_points,
)
from ..observation import FramePerception
from ..synth.scene import NoiseConfig, SceneConfig, SceneSample, perception_oracle
from ..synth.shapes import ObjectSpec
from .grasps import MIN_POINTS, Grasp, GraspSet, filter_grasps, points_in_gripper_box, sample_grasps
from .robot import RobotConfig, pose_distance, step_toward

log = logging.getLogger(__name__)

PHASES = ("waiting", "approaching", "grasping", "retracting", "delivering", "homing", "failed")
TRANSITIONS = {
    "waiting": {"approaching", "failed"},
    "approaching": {"grasping", "failed"},
    "grasping": {"retracting"},
    "retracting": {"delivering", "homing"},
    "delivering": {"homing"},
    "homing": set(),
    "failed": set(),
}
VIEWS = ("L", "R")
CONTACT_TOLERANCE = 0.005
CLOSURE_STEP = 5e-4


class PhaseError(RuntimeError):
    pass


class SafetyViolation(AssertionError):
    pass


@dataclass(frozen=True)
class PipelineConfig:
    dt: float = 0.1
    gate_px: float = 5.0
    timeout_s: float = 10.0
    n_grasps: int = 200
    grasp_width_margin: float = 0.01
    mask_dilation: int = 2
    max_time_s: float = 40.0


@dataclass
class PipelineState:
    gripper: RigidTransform
    phase: str = "waiting"
    t: float = 0.0
    best_iou: float = 0.0
    hand_cloud: PointCloud | None = None
    object_cloud: PointCloud | None = None
    grasps: GraspSet | None = None
    selected: int | None = None
    frozen: Grasp | None = None
    accepted_frames: int = 0
    object_point: np.ndarray | None = None
    start_time: float | None = None
    events: list[str] = field(default_factory=list)
    # grasp execution
    stage: str = ""
    close_steps_left: int = 0
    held: bool = False
    object_in_gripper: RigidTransform | None = None
    spilled: bool = False
    delivery_pose: RigidTransform | None = None
    release_time: float | None = None
    release_distance_mm: float | None = None
    finished: bool = False

    def set_phase(self, phase: str) -> None:
        if phase not in TRANSITIONS[self.phase]:
            raise PhaseError(f"illegal transition {self.phase} -> {phase}")
        self.events.append(f"phase:{phase}")
        self.phase = phase


# -- perception ----------------------------------------------------------------
def step_perception(state: PipelineState, frames: tuple[FramePerception | None, FramePerception | None],
                    config: PipelineConfig = PipelineConfig()) -> bool:
    """Gate one stereo frame; returns whether it was accepted.

    The timeout is checked first: at the first step with ``t >= timeout``
    and no frame accepted so far the state fails.
    """
    if state.phase == "waiting" and state.accepted_frames == 0 and state.t >= config.timeout_s - 1e-9:
        state.events.append("timeout")
        state.set_phase("failed")
        return False
    left, right = frames
    if left is None or right is None or not (left.detected and right.detected) \
            or left.centroid_px is None or right.centroid_px is None:
        state.events.append("frame_skipped")
        return False
    try:
        point, err_l, err_r = triangulate(left.centroid_px, right.centroid_px, left.camera, right.camera)
    except DegenerateGeometryError:
        state.events.append("frame_rejected:degenerate")
        return False
    if not (err_l < config.gate_px and err_r < config.gate_px):
        state.events.append(f"frame_rejected:{max(err_l, err_r):.2f}px")
        return False
    state.accepted_frames += 1
    state.object_point = point
    state.events.append("frame_accepted")
    return True


def reconstruction_iou(hand: PointCloud, obj: PointCloud, masks: dict[str, tuple[Mask, Mask]],
                       cameras: dict[str, CameraModel]) -> float:
    """Mean over views and classes of the IoU between the cloud's hull mask and the segmentation mask."""
    scores = []
    for view, cam in cameras.items():
        m_h, m_o = masks[view]
        for cloud, mask in ((hand, m_h), (obj, m_o)):
            scores.append(mask_iou(convex_hull_mask(cloud, cam), mask) if len(cloud) else 0.0)
    return float(np.mean(scores))


def update_reconstruction(state: PipelineState, hand: PointCloud, obj: PointCloud,
                          masks: dict[str, tuple[Mask, Mask]], cameras: dict[str, CameraModel]) -> bool:
    """Replace the stored clouds iff the new IoU beats the best one so far."""
    if not len(hand) or not len(obj):
        raise ValueError("reconstruction update needs non-empty hand and object clouds")
    iou = reconstruction_iou(hand, obj, masks, cameras)
    if iou > state.best_iou:
        state.best_iou = iou
        state.hand_cloud, state.object_cloud = hand, obj
        state.events.append(f"reconstruction_updated:{iou:.4f}")
        return True
    state.events.append(f"reconstruction_kept:{iou:.4f}")
    return False


# -- grasping ------------------------------------------------------------------
def select_grasp(grasps: GraspSet, gripper: RigidTransform, weight: float) -> int:
    """Index of the grasp nearest the gripper (lowest index on ties)."""
    d = [pose_distance(gripper, g.pose, weight) for g in grasps]
    return int(np.argmin(d))


@dataclass(frozen=True)
class Closure:
    held: bool
    width: float | None
    reason: str


def simulate_closure(obj: ObjectSpec, grasp_pose: RigidTransform, opening: float) -> Closure:
    """Close both fingers along the closing axis against the true object surface."""
    c, x = grasp_pose.translation, grasp_pose.rotation[:, 0]
    half = opening / 2
    s = np.arange(0.0, half + 1e-12, CLOSURE_STEP)[::-1]  # from the open fingertip inwards
    contacts = []
    for sign in (-1.0, 1.0):
        pts = c + sign * s[:, None] * x
        inside = obj.sdf(pts) <= 0
        if inside[0]:
            return Closure(False, None, "object wider than the gripper opening")
        hit = np.nonzero(inside)[0]
        if not len(hit):
            return Closure(False, None, "finger closed without contact")
        contacts.append(pts[hit[0]])
    for p in contacts:
        if abs(float(obj.sdf(p[None])[0])) > CONTACT_TOLERANCE:
            return Closure(False, None, "fingertip away from the surface")
    width = float(np.linalg.norm(contacts[1] - contacts[0]))
    if width > opening:
        return Closure(False, width, "object wider than the gripper opening")
    return Closure(True, width, "contact")


def _tilt_deg(pose: RigidTransform) -> float:
    return float(np.degrees(np.arccos(np.clip(pose.rotation[2, 2], -1.0, 1.0))))


def _reference_point(obj: ObjectSpec, pose: RigidTransform) -> np.ndarray:
    # containers are measured at the centre of their base, other objects at their origin
    if obj.is_container:
        return pose.apply(np.array([[0.0, 0.0, -obj.half_extents()[2]]]))[0]
    return pose.translation


@dataclass
class World:
    """Ground truth the simulator needs: the object and where it currently is."""

    object: ObjectSpec
    object_pose: RigidTransform

    @classmethod
    def from_scene(cls, scene: SceneSample) -> "World":
        return cls(scene.object, scene.object.pose)


def select_and_execute(state: PipelineState, robot: RobotConfig, world: World,
                       config: PipelineConfig = PipelineConfig()) -> None:
    """Advance the gripper by one time step according to the current phase."""
    step = robot.arm_speed * config.dt
    if state.phase == "approaching":
        if not state.grasps:
            state.events.append("no_grasp")
            state.set_phase("failed")
            return
        state.selected = select_grasp(state.grasps, state.gripper, robot.pose_weight)
        grasp = state.grasps[state.selected]
        state.gripper, reached = step_toward(state.gripper, grasp.standoff(robot.standoff), step)
        if reached:
            state.frozen = grasp
            state.stage = "descend"
            state.set_phase("grasping")
        return
    if state.phase == "grasping":
        grasp = state.frozen
        if state.stage == "descend":
            state.gripper, reached = step_toward(state.gripper, grasp.pose, step)
            if reached:
                state.stage = "close"
                travel = max(robot.max_opening - grasp.width, 0.0) / 2
                state.close_steps_left = max(1, int(np.ceil(travel / (robot.gripper_speed * config.dt) - 1e-9)))
            return
        # closing: the stored hand points must stay out of the gripper box
        if state.hand_cloud is not None and points_in_gripper_box(state.hand_cloud.points, grasp,
                                                                  robot.gripper_box).any():
            raise SafetyViolation("hand point inside the closing gripper box")
        state.close_steps_left -= 1
        if state.close_steps_left > 0:
            return
        closure = simulate_closure(world.object, grasp.pose, robot.max_opening)
        state.held = closure.held
        state.events.append(f"closure:{'held' if closure.held else 'missed'}:{closure.reason}")
        if closure.held:
            state.object_in_gripper = state.gripper.inverse() @ world.object_pose
        state.set_phase("retracting")
        return
    if state.phase in ("retracting", "delivering", "homing"):
        if state.phase == "retracting":
            target = state.frozen.standoff(robot.standoff)
        elif state.phase == "delivering":
            target = state.delivery_pose
        else:
            target = robot.home_world()
        state.gripper, reached = step_toward(state.gripper, target, step)
        if state.object_in_gripper is not None:
            world.object_pose = state.gripper @ state.object_in_gripper
            if not state.spilled and world.object.content_mass > 0 \
                    and _tilt_deg(world.object_pose) > robot.spill_tilt_deg:
                state.spilled = True
                state.events.append("spill")
        if not reached:
            return
        if state.phase == "retracting":
            if state.held:
                ref = _reference_point(world.object, world.object_pose)
                shift = np.asarray(robot.delivery_target) - ref
                state.delivery_pose = RigidTransform(state.gripper.rotation, state.gripper.translation + shift)
                state.set_phase("delivering")
            else:
                state.set_phase("homing")
        elif state.phase == "delivering":
            ref = _reference_point(world.object, world.object_pose)
            d = np.linalg.norm((ref - np.asarray(robot.delivery_target))[:2]) * 1000.0
            state.release_distance_mm = round(float(d), 3)  # micrometre reporting precision
            state.release_time = state.t
            state.object_in_gripper = None
            state.events.append("released")
            state.set_phase("homing")
        else:
            state.finished = True
            state.events.append("home")


# -- reconstruction sources ---------------------------------------------------
class Reconstructor(Protocol):
    def __call__(self, left: FramePerception, right: FramePerception) -> tuple[PointCloud, PointCloud, TSDFGrid]:
        """Hand cloud, object cloud and the object T-SDF, all in the world frame."""


class OracleReconstructor:
    """Returns surfaces of the ground-truth T-SDFs, ignoring the images."""

    def __init__(self, scene: SceneSample, threshold: float | None = None):
        self.scene = scene
        self.threshold = threshold

    def __call__(self, left, right):
        s = self.scene
        thr_h = self.threshold or s.gt_tsdf_hand.voxel_size
        thr_o = self.threshold or s.gt_tsdf_object.voxel_size
        return (tsdf_surface_points(s.gt_tsdf_hand, thr_h, "hand"),
                tsdf_surface_points(s.gt_tsdf_object, thr_o, "object"), s.gt_tsdf_object)


class LearnedReconstructor:
    """Encoder per view, stereo fusion, then decoding with the frozen codecs."""

    def __init__(self, encoder, codecs: dict, threshold: float = 0.01):
        self.encoder = encoder
        self.codecs = codecs
        self.threshold = threshold

    def __call__(self, left, right):
        from ..encoder import predict_distribution
        from ..fusion import fuse_distributions, reconstruct

        hl, ol = predict_distribution(self.encoder, left.observation)
        hr, orr = predict_distribution(self.encoder, right.observation)
        rec = reconstruct(fuse_distributions(hl, hr).distribution, fuse_distributions(ol, orr).distribution,
                          self.codecs, left.wrist_pose, self.threshold)
        return rec.hand, rec.object, rec.tsdf_object


FrameSource = Callable[[int, float, np.random.Generator], tuple[FramePerception | None, FramePerception | None]]


def oracle_frames(scene: SceneSample, noise: NoiseConfig = NoiseConfig(),
                  scene_config: SceneConfig = SceneConfig()) -> FrameSource:
    def source(k, t, rng):
        return perception_oracle(scene, noise, rng, scene_config)
    return source


def _trace_record(state: PipelineState) -> dict:
    return {
        "t": round(state.t, 6),
        "phase": state.phase,
        "gripper": [float(v) for v in state.gripper.to_list()],
        "grasp": state.selected,
        "iou_best": state.best_iou,
        "events": list(state.events),
    }


def run_episode(scene: SceneSample, reconstructor: Reconstructor, robot: RobotConfig = RobotConfig(),
                config: PipelineConfig = PipelineConfig(), frames: FrameSource | None = None,
                seed: int = 0, object_id: str | None = None,
                on_plan: Callable[[PointCloud, GraspSet], None] | None = None) -> tuple[EpisodeResult, list[dict]]:
    """Simulate one handover; returns the scored result inputs and the per-step trace.

    ``on_plan`` is called with the stored hand cloud and the filtered grasp
    set every time grasps are replanned.
    """
    from ..fusion import occlusion_aware_mask, remove_outliers

    rng = np.random.default_rng(seed)
    frames = frames or oracle_frames(scene)
    world = World.from_scene(scene)
    state = PipelineState(gripper=robot.home_world())
    trace: list[dict] = []
    hint_base = robot.base.translation
    for k in range(int(round(config.max_time_s / config.dt)) + 1):
        state.t = round(k * config.dt, 9)
        state.events = []
        if state.phase in ("waiting", "approaching"):
            left, right = frames(k, state.t, rng)
            if step_perception(state, (left, right), config):
                hand, obj, obj_grid = reconstructor(left, right)
                cams = {"L": left.camera, "R": right.camera}
                views = {"L": left, "R": right}
                hand, _ = remove_outliers(
                    hand, {v: occlusion_aware_mask(f.mask_hand, f.mask_object) for v, f in views.items()},
                    cams, config.mask_dilation)
                obj, _ = remove_outliers(
                    obj, {v: occlusion_aware_mask(f.mask_object, f.mask_hand) for v, f in views.items()},
                    cams, config.mask_dilation)
                masks = {"L": (left.mask_hand, left.mask_object), "R": (right.mask_hand, right.mask_object)}
                if len(hand) and len(obj) >= MIN_POINTS and update_reconstruction(state, hand, obj, masks, cams):
                    hint = state.object_point - hint_base
                    hint[2] = 0.0
                    # snap the surface band onto the zero level set for accurate widths and normals
                    pts, normals = project_to_surface(obj_grid, state.object_cloud.points)
                    ok = np.linalg.norm(normals, axis=1) > 0
                    sampled = sample_grasps(PointCloud(pts[ok], "object"), config.n_grasps,
                                            int(rng.integers(2 ** 31)), robot.max_opening,
                                            config.grasp_width_margin, approach_hint=hint, normals=normals[ok])
                    state.grasps = filter_grasps(sampled, state.hand_cloud, robot.gripper_box)
                    state.events.append(f"grasps:{len(sampled)}->{len(state.grasps)}")
                    if on_plan is not None:
                        on_plan(state.hand_cloud, state.grasps)
                    if state.phase == "waiting":
                        state.start_time = state.t
                        state.set_phase("approaching")
        if state.phase not in ("waiting", "failed") and not state.finished:
            if not (state.phase == "approaching" and state.start_time == state.t):
                select_and_execute(state, robot, world, config)
        trace.append(_trace_record(state))
        if state.phase == "failed" or state.finished:
            break
    delivered = state.release_time is not None
    m_hat = scene.object.mass
    m = (m_hat - (scene.object.content_mass if state.spilled else 0.0)) if delivered else 0.0
    result = EpisodeResult(
        object_id=object_id or scene.object.category,
        distance_mm=state.release_distance_mm if delivered else 0.0,
        elapsed_s=round(state.release_time - state.start_time, 6) if delivered else 0.0,
        delivered_mass=m,
        initial_mass=m_hat,
        grasp_held=state.held,
        is_container=scene.object.is_container,
        spilled_mass=scene.object.content_mass if state.spilled else 0.0,
        delivered=delivered,
    )
    return result, trace
