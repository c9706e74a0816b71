"""Antipodal grasp sampling on point clouds and gripper-box collision filtering.

Gripper frame convention: x is the closing axis (fingers move along +-x),
z is the approach direction, the origin sits midway between the fingertips.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from ..geometry import PointCloud, RigidTransform

MAX_OPENING = 0.085
GRIPPER_BOX = (0.085, 0.03, 0.06)  # along closing axis, finger thickness, approach
MIN_POINTS = 20
SWEEP_RADIUS = 0.006  # finger pad half-size around the closing line
SWEEP_CLEARANCE = 0.008


def sweep_blocked(points: np.ndarray, centre: np.ndarray, closing: np.ndarray, width: float,
                  opening: float = MAX_OPENING) -> bool:
    """Whether cloud points sit on the fingers' closing path outside the contact pair.

    Such points mean the fingers would meet the object before the chosen
    contacts, e.g. a pair on the inside of a bowl pinched from outside.
    """
    rel = points - centre
    s = rel @ closing
    radial = np.linalg.norm(rel - s[:, None] * closing, axis=1)
    on_path = (radial < SWEEP_RADIUS) & (np.abs(s) > width / 2 + SWEEP_CLEARANCE) & (np.abs(s) <= opening / 2)
    return bool(on_path.any())


@dataclass(frozen=True, eq=False)
class Grasp:
    pose: RigidTransform  # gripper -> world at the grasp
    width: float          # contact separation, metres

    def __post_init__(self):
        if not 0.0 <= self.width <= MAX_OPENING:
            raise ValueError(f"grasp width {self.width:.4f} m outside [0, {MAX_OPENING}]")

    @property
    def approach(self) -> np.ndarray:
        return self.pose.rotation[:, 2]

    @property
    def closing_axis(self) -> np.ndarray:
        return self.pose.rotation[:, 0]

    @property
    def center(self) -> np.ndarray:
        return self.pose.translation

    def standoff(self, distance: float) -> RigidTransform:
        """Pre-grasp pose backed off along the approach direction."""
        return RigidTransform(self.pose.rotation, self.center - distance * self.approach)

    def to_dict(self) -> dict:
        return {"pose": self.pose.to_list(), "width": self.width}


@dataclass(frozen=True, eq=False)
class GraspSet:
    grasps: tuple[Grasp, ...]
    requested: int

    def __len__(self) -> int:
        return len(self.grasps)

    def __iter__(self):
        return iter(self.grasps)

    def __getitem__(self, i) -> Grasp:
        return self.grasps[i]

    @property
    def short(self) -> bool:
        """Fewer feasible candidates than requested."""
        return len(self.grasps) < self.requested


def estimate_normals(points: np.ndarray, k: int = 12) -> np.ndarray:
    """PCA normals from the k nearest neighbours, flipped to point away from the centroid."""
    k = min(k, len(points))
    _, idx = cKDTree(points).query(points, k=k)
    nbrs = points[idx]
    centred = nbrs - nbrs.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", centred, centred)
    _, vecs = np.linalg.eigh(cov)
    normals = vecs[:, :, 0]
    outward = np.einsum("ij,ij->i", normals, points - points.mean(axis=0)) < 0
    normals[outward] *= -1
    return normals


def _frame(closing: np.ndarray, approach: np.ndarray) -> np.ndarray:
    y = np.cross(approach, closing)
    return np.column_stack([closing, y / np.linalg.norm(y), approach])


def sample_grasps(cloud: PointCloud, n: int = 200, seed: int = 0, max_width: float = MAX_OPENING,
                  width_margin: float = 0.0, max_normal_angle_deg: float = 30.0,
                  axis_angle_deg: float = 15.0, approach_hint: np.ndarray | None = None,
                  max_attempts: int | None = None, normals: np.ndarray | None = None) -> GraspSet:
    """Sample up to ``n`` antipodal grasps from a cloud.

    A pair (p, q) qualifies when its normals are within ``max_normal_angle_deg``
    of opposing, the pair axis is within ``axis_angle_deg`` of both inward
    normals, the separation fits ``max_width - width_margin`` and the
    fingers' closing path is clear of other cloud points. The
    approach is drawn perpendicular to the pair axis; with ``approach_hint``
    it is flipped to have a non-negative component along the hint.
    Outward ``normals`` may be supplied (e.g. from a T-SDF gradient);
    otherwise they are estimated from the cloud.
    """
    pts = np.asarray(cloud.points, dtype=np.float64)
    if len(pts) < MIN_POINTS:
        raise ValueError(f"grasp sampling needs at least {MIN_POINTS} points, got {len(pts)}")
    rng = np.random.default_rng(seed)
    if normals is None:
        normals = estimate_normals(pts)
    elif np.shape(normals) != pts.shape:
        raise ValueError(f"normals shape {np.shape(normals)} does not match points {pts.shape}")
    tree = cKDTree(pts)
    limit = max_width - width_margin
    cos_opp = np.cos(np.radians(max_normal_angle_deg))
    cos_axis = np.cos(np.radians(axis_angle_deg))
    grasps: list[Grasp] = []
    attempts = max_attempts if max_attempts is not None else 30 * n
    for _ in range(attempts):
        if len(grasps) >= n:
            break
        i = int(rng.integers(len(pts)))
        cand = np.asarray(tree.query_ball_point(pts[i], limit), dtype=int)
        if not len(cand):
            continue
        d = pts[cand] - pts[i]
        dist = np.linalg.norm(d, axis=1)
        ok = dist > 1e-9
        cand, d, dist = cand[ok], d[ok], dist[ok]
        axis = d / dist[:, None] if len(cand) else d
        good = ((normals[cand] @ normals[i]) <= -cos_opp) \
            & ((axis @ -normals[i]) >= cos_axis) \
            & (np.einsum("ij,ij->i", axis, normals[cand]) >= cos_axis)
        if not good.any():
            continue
        choices = np.nonzero(good)[0]
        j = choices[int(rng.integers(len(choices)))]
        closing = axis[j]
        width = float(dist[j])
        # approach: random direction perpendicular to the pair axis
        helper = np.eye(3)[np.argmin(np.abs(closing))]
        u = np.cross(closing, helper)
        u /= np.linalg.norm(u)
        v = np.cross(closing, u)
        theta = rng.uniform(0.0, 2 * np.pi)
        approach = np.cos(theta) * u + np.sin(theta) * v
        if approach_hint is not None and approach @ approach_hint < 0:
            approach = -approach
        centre = pts[i] + 0.5 * width * closing
        if sweep_blocked(pts, centre, closing, width, max_width):
            continue
        grasps.append(Grasp(RigidTransform(_frame(closing, approach), centre), width))
    return GraspSet(tuple(grasps), n)


def points_in_gripper_box(points: np.ndarray, grasp: Grasp, dims=GRIPPER_BOX) -> np.ndarray:
    """Boolean mask of world points inside the oriented gripper box centred on the grasp."""
    local = (np.atleast_2d(points) - grasp.center) @ grasp.pose.rotation
    return np.all(np.abs(local) <= np.asarray(dims) / 2, axis=1)


def filter_grasps(grasps: GraspSet, hand: PointCloud, dims=GRIPPER_BOX) -> GraspSet:
    """Drop every grasp whose gripper box contains a hand point."""
    if not len(hand) or not len(grasps):
        return grasps
    keep = tuple(g for g in grasps if not points_in_gripper_box(hand.points, g, dims).any())
    return GraspSet(keep, grasps.requested)
