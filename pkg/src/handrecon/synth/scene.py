"""Seeded hand-object scene generation and the perception oracle."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.spatial.transform import Rotation

from ..geometry import BoundingBox2D, CameraModel, Mask, RigidTransform, TSDFGrid, tsdf_from_sdf
from ..geometry.transforms import orthonormalize
from ..observation import FramePerception, ViewObservation
from .render import render_silhouettes, silhouette_image
from .shapes import (
    CATEGORIES,
    GRASP_TYPES,
    HandGeometry,
    HandSpec,
    ObjectSpec,
    build_hand,
    min_gap,
    place_on_palm,
    sample_sizes,
)

MAX_REJECTIONS = 100
CONTACT_LIMIT = 0.005
PENETRATION_LIMIT = 0.003


class SceneGenerationError(RuntimeError):
    pass


@dataclass(frozen=True)
class SceneConfig:
    resolution: int = 32
    extent: float = 0.24
    truncation: float | None = None
    baseline_deg: float = 60.0
    camera_distance: float = 0.6
    camera_elevation_deg: float = 25.0
    workspace_center: tuple[float, float, float] = (0.55, 0.0, 0.25)
    image_size: tuple[int, int] = (256, 192)
    focal: float = 240.0
    crop_size: int = 64
    crop_scale: float = 1.2
    category_weights: tuple[float, ...] = (1.0,) * len(CATEGORIES)
    fill_probability: float = 0.5
    max_tilt_deg: float = 10.0

    @property
    def trunc(self) -> float:
        return 0.1 * self.extent if self.truncation is None else self.truncation


@dataclass(frozen=True)
class NoiseConfig:
    box_jitter_px: float = 0.0
    mask_morph_px: int = 0          # > 0 dilates, < 0 erodes
    wrist_rot_deg: float = 0.0
    wrist_trans_mm: float = 0.0
    centroid_jitter_px: float = 0.0
    centroid_bias_px: tuple[tuple[float, float], tuple[float, float]] = ((0.0, 0.0), (0.0, 0.0))


@dataclass(frozen=True, eq=False)
class SceneLayout:
    seed: int
    object: ObjectSpec | None
    hand: HandSpec | None


@dataclass(frozen=True, eq=False)
class SceneSample:
    seed: int
    object: ObjectSpec
    hand: HandSpec
    cameras: tuple[CameraModel, CameraModel]
    gt_tsdf_hand: TSDFGrid
    gt_tsdf_object: TSDFGrid
    observations: tuple[ViewObservation, ViewObservation]
    gt_masks: tuple[tuple[Mask, Mask], tuple[Mask, Mask]] = field(repr=False)

    @property
    def mass(self) -> float:
        return self.object.mass

    @property
    def object_center(self) -> np.ndarray:
        return self.object.pose.translation


def stereo_cameras(config: SceneConfig) -> tuple[CameraModel, CameraModel]:
    """Two cameras on either side of the robot (which sits at the world origin)."""
    target = np.asarray(config.workspace_center, float)
    el = np.radians(config.camera_elevation_deg)
    cams = []
    for sign in (1.0, -1.0):  # left camera at +y
        az = np.pi - sign * np.radians(config.baseline_deg) / 2
        eye = target + config.camera_distance * np.array([np.cos(el) * np.cos(az), np.cos(el) * np.sin(az),
                                                          np.sin(el)])
        w, h = config.image_size
        cams.append(CameraModel.simple(config.focal, w, h, RigidTransform.look_at(eye, target)))
    return cams[0], cams[1]


def _rz(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


GRASP_ROTATIONS = {
    # columns: object x, y, z axes expressed in the wrist frame
    "side": np.array([[1.0, 0.0, 0.0], [0.0, 0.0, 1.0], [0.0, -1.0, 0.0]]),
    "top": np.array([[1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, -1.0]]),
    "bottom": np.eye(3),
}


def _sample_mass(category_is_container: bool, filled: bool, rng) -> tuple[float, float]:
    if category_is_container:
        content = float(rng.uniform(80.0, 250.0)) if filled else 0.0
        return float(rng.uniform(40.0, 150.0)) + content, content
    return float(rng.uniform(30.0, 300.0)), 0.0


def sample_layout(seed: int, config: SceneConfig = SceneConfig(), geometry: HandGeometry = HandGeometry(),
                  cameras: tuple[CameraModel, CameraModel] | None = None) -> SceneLayout:
    """Object and hand specs for one seed; the category is the first draw."""
    rng = np.random.default_rng(seed)
    weights = np.asarray(config.category_weights, float)
    category = CATEGORIES[int(rng.choice(len(CATEGORIES), p=weights / weights.sum()))]
    cameras = cameras or stereo_cameras(config)
    half = config.extent / 2
    for _ in range(MAX_REJECTIONS):
        sizes = sample_sizes(category, rng)
        grasp = GRASP_TYPES[int(rng.integers(len(GRASP_TYPES)))]
        spin = rng.uniform(0, 2 * np.pi)
        probe = ObjectSpec(category, sizes, RigidTransform.identity())
        r_ho = GRASP_ROTATIONS[grasp] @ _rz(spin)
        along = rng.uniform(-0.01, 0.01)
        obj_in_wrist = place_on_palm(probe.local_sdf, r_ho, geometry, along)
        capsules = tuple(build_hand(probe.local_sdf, obj_in_wrist, geometry))

        tilt_axis = rng.normal(size=2)
        tilt = Rotation.from_rotvec(np.r_[tilt_axis / np.linalg.norm(tilt_axis), 0.0]
                                    * np.radians(rng.uniform(0, config.max_tilt_deg))).as_matrix()
        wrist_in_obj = obj_in_wrist.inverse()
        offset0 = tilt @ wrist_in_obj.translation
        alpha0 = np.arctan2(offset0[1], offset0[0])
        desired = rng.uniform(-np.pi / 3, np.pi / 3)
        r_wo = orthonormalize(_rz(desired - alpha0) @ tilt)
        pos = np.asarray(config.workspace_center) + rng.uniform([-0.04, -0.06, -0.04], [0.04, 0.06, 0.04])
        obj_pose = RigidTransform(r_wo, pos)
        wrist_pose = obj_pose @ wrist_in_obj

        filled = probe.is_container and rng.uniform() < config.fill_probability
        mass, content = _sample_mass(probe.is_container, filled, rng)
        obj = ObjectSpec(category, sizes, obj_pose, transparent=bool(rng.uniform() < 0.3), filled=filled,
                         mass=mass, content_mass=content)
        try:
            hand = HandSpec(wrist_pose, capsules, grasp)
        except ValueError:
            continue
        gap = min_gap(hand, obj)
        if not -PENETRATION_LIMIT <= gap < CONTACT_LIMIT:
            continue
        if np.any(np.abs(obj_in_wrist.translation) > half - 0.02):
            continue
        visible = True
        for cam in cameras:
            px, ok = cam.project(np.stack([pos, wrist_pose.translation]))
            margin = 20
            if not ok.all() or px.min() < margin or px[:, 0].max() > cam.width - margin \
                    or px[:, 1].max() > cam.height - margin:
                visible = False
        if not visible:
            continue
        return SceneLayout(seed, obj, hand)
    raise SceneGenerationError(f"seed {seed}: no valid grasp placement after {MAX_REJECTIONS} attempts")


def _bounds(obj: ObjectSpec | None, hand: HandSpec | None) -> tuple[np.ndarray, float] | tuple[None, None]:
    anchors, reach = [], 0.0
    if obj is not None:
        anchors.append(obj.pose.translation)
        reach = max(reach, float(np.linalg.norm(obj.half_extents())))
    if hand is not None:
        anchors.append(hand.wrist_pose.translation)
        reach = max(reach, 0.16)
    if not anchors:
        return None, None
    c = np.mean(anchors, axis=0)
    return c, max(float(np.linalg.norm(a - c)) for a in anchors) + reach + 0.01


def render_masks(scene: "SceneSample | SceneLayout", camera: CameraModel) -> tuple[Mask, Mask]:
    """Visible (M_H, M_O) for one camera; either part of the scene may be None."""
    c, r = _bounds(scene.object, scene.hand)
    if c is None:
        empty = np.zeros((camera.height, camera.width), bool)
        return Mask(empty, "hand"), Mask(empty, "object")
    m_h, m_o, _, _ = render_silhouettes(camera, scene.hand.sdf if scene.hand else None,
                                        scene.object.sdf if scene.object else None, c, r)
    return m_h, m_o


def crop_box(box_h: BoundingBox2D, box_o: BoundingBox2D | None) -> BoundingBox2D:
    """Union of the hand and object boxes; the crop is centred on it."""
    if box_o is None:
        return box_h
    lo = np.minimum(box_h.min_corner, box_o.min_corner)
    hi = np.maximum(box_h.max_corner, box_o.max_corner)
    return BoundingBox2D(tuple(lo), tuple(hi))


def crop_observation(camera: CameraModel, mask_h: Mask, mask_o: Mask, box: BoundingBox2D,
                     wrist_pose: RigidTransform, config: SceneConfig) -> ViewObservation:
    """Square crop around ``box`` (scaled), resampled to ``crop_size`` pixels."""
    side = config.crop_scale * max(box.width, box.height, 4.0)
    cx, cy = box.center
    x0, y0 = cx - side / 2, cy - side / 2
    n = config.crop_size
    crop_cam = camera.crop(x0, y0, side, n)
    coords = (np.arange(n) + 0.5) * side / n
    yy, xx = np.meshgrid(y0 + coords - 0.5, x0 + coords - 0.5, indexing="ij")
    sample = np.stack([yy.ravel(), xx.ravel()])
    ch = ndimage.map_coordinates(mask_h.bitmap.astype(np.float32), sample, order=1, mode="constant").reshape(n, n)
    co = ndimage.map_coordinates(mask_o.bitmap.astype(np.float32), sample, order=1, mode="constant").reshape(n, n)
    mh, mo = ch >= 0.5, co >= 0.5
    image = silhouette_image(mh, mo)
    # background removal: keep only pixels covered by either mask
    image = image * (mh | mo)[None]
    return ViewObservation(image, Mask(mh, "hand"), Mask(mo, "object"), wrist_pose, crop_cam)


def scene_tsdfs(seed: int, config: SceneConfig = SceneConfig()) -> tuple[TSDFGrid, TSDFGrid]:
    """Ground-truth (hand, object) T-SDFs for a seed without rendering any images."""
    layout = sample_layout(seed, config)
    wrist = layout.hand.wrist_pose
    return (tsdf_from_sdf(layout.hand.sdf, wrist, config.resolution, config.extent, config.trunc),
            tsdf_from_sdf(layout.object.sdf, wrist, config.resolution, config.extent, config.trunc))


def generate_scene(seed: int, config: SceneConfig = SceneConfig()) -> SceneSample:
    cameras = stereo_cameras(config)
    layout = sample_layout(seed, config, cameras=cameras)
    wrist = layout.hand.wrist_pose
    tsdf_h = tsdf_from_sdf(layout.hand.sdf, wrist, config.resolution, config.extent, config.trunc)
    tsdf_o = tsdf_from_sdf(layout.object.sdf, wrist, config.resolution, config.extent, config.trunc)
    masks = tuple(render_masks(layout, cam) for cam in cameras)
    obs = []
    for cam, (m_h, m_o) in zip(cameras, masks):
        box = crop_box(m_h.bounding_box() or BoundingBox2D((0, 0), (cam.width, cam.height)),
                       m_o.bounding_box())
        obs.append(crop_observation(cam, m_h, m_o, box, wrist, config))
    return SceneSample(seed, layout.object, layout.hand, cameras, tsdf_h, tsdf_o, (obs[0], obs[1]),
                       (masks[0], masks[1]))


def _jitter_box(box: BoundingBox2D | None, sigma: float, rng, size) -> BoundingBox2D | None:
    if box is None:
        return None
    lo = np.asarray(box.min_corner) + (rng.normal(0, sigma, 2) if sigma > 0 else 0)
    hi = np.asarray(box.max_corner) + (rng.normal(0, sigma, 2) if sigma > 0 else 0)
    return BoundingBox2D.clipped(lo, hi, size)


def perturb_pose(pose: RigidTransform, rot_deg: float, trans_mm: float, rng) -> RigidTransform:
    if rot_deg <= 0 and trans_mm <= 0:
        return pose
    r = pose.rotation
    t = pose.translation
    if rot_deg > 0:
        r = orthonormalize(Rotation.from_rotvec(rng.normal(0, np.radians(rot_deg), 3)).as_matrix() @ r)
    if trans_mm > 0:
        t = t + rng.normal(0, trans_mm / 1000.0, 3)
    return RigidTransform(r, t)


def perception_oracle(scene: SceneSample, noise: NoiseConfig = NoiseConfig(),
                      rng: np.random.Generator | None = None,
                      config: SceneConfig = SceneConfig()) -> tuple[FramePerception, FramePerception]:
    """Ground truth for both views, perturbed by the configured noise."""
    rng = rng or np.random.default_rng(0)
    out = []
    for v, cam in enumerate(scene.cameras):
        gt_h, gt_o = scene.gt_masks[v]
        m_h = gt_h.dilated(noise.mask_morph_px)
        m_o = gt_o.dilated(noise.mask_morph_px)
        box_h = _jitter_box(gt_h.bounding_box(), noise.box_jitter_px, rng, cam.image_size)
        box_o = _jitter_box(gt_o.bounding_box(), noise.box_jitter_px, rng, cam.image_size)
        wrist = perturb_pose(scene.hand.wrist_pose, noise.wrist_rot_deg, noise.wrist_trans_mm, rng)
        px, ok = cam.project(scene.object_center)
        centroid = None
        if ok[0]:
            centroid = px[0] + np.asarray(noise.centroid_bias_px[v], float)
            if noise.centroid_jitter_px > 0:
                centroid = centroid + rng.normal(0, noise.centroid_jitter_px, 2)
        obs = None
        if box_h is not None:
            obs = crop_observation(cam, m_h, m_o, crop_box(box_h, box_o), wrist, config)
        out.append(FramePerception(cam, box_h, box_o, m_h, m_o, wrist, centroid, obs))
    return out[0], out[1]
