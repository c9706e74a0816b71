"""Analytic signed distance functions for the synthetic objects and the capsule hand.

Object-local frames have +z along the object's up axis and the origin at the
geometric centre of the object's bounding box.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..geometry import RigidTransform

CATEGORIES = ("cylinder", "box", "sphere", "bowl", "stem-glass", "thin-rod")
CONTAINERS = frozenset({"cylinder", "bowl", "stem-glass"})
GRASP_TYPES = ("side", "top", "bottom")

BOWL_WALL = 0.006
STEM_RADIUS = 0.005
GLASS_BASE_THICKNESS = 0.006
SIZE_RANGE = (0.02, 0.25)


def sd_box(p: np.ndarray, half) -> np.ndarray:
    q = np.abs(p) - np.asarray(half)
    return np.linalg.norm(np.maximum(q, 0.0), axis=-1) + np.minimum(q.max(axis=-1), 0.0)


def sd_cylinder(p: np.ndarray, radius: float, half_height: float, z0: float = 0.0) -> np.ndarray:
    dr = np.hypot(p[..., 0], p[..., 1]) - radius
    dz = np.abs(p[..., 2] - z0) - half_height
    return np.minimum(np.maximum(dr, dz), 0.0) + np.hypot(np.maximum(dr, 0.0), np.maximum(dz, 0.0))


def sd_capsule(p: np.ndarray, a, b, radius: float) -> np.ndarray:
    a, b = np.asarray(a, float), np.asarray(b, float)
    ab = b - a
    t = np.clip(((p - a) @ ab) / max(ab @ ab, 1e-18), 0.0, 1.0)
    return np.linalg.norm(p - a - t[..., None] * ab, axis=-1) - radius


@dataclass(frozen=True, eq=False)
class ObjectSpec:
    category: str
    sizes: dict[str, float]
    pose: RigidTransform  # object -> world
    transparent: bool = False
    filled: bool = False
    mass: float = 100.0         # grams, total including content
    content_mass: float = 0.0   # grams

    def __post_init__(self):
        if self.category not in CATEGORIES:
            raise ValueError(f"unknown category {self.category!r}")
        for k, v in self.sizes.items():
            if not SIZE_RANGE[0] <= v <= SIZE_RANGE[1]:
                raise ValueError(f"size {k}={v} outside {SIZE_RANGE} m")

    @property
    def is_container(self) -> bool:
        return self.category in CONTAINERS

    def local_sdf(self, p: np.ndarray) -> np.ndarray:
        s, c = self.sizes, self.category
        if c == "cylinder":
            return sd_cylinder(p, s["diameter"] / 2, s["height"] / 2)
        if c == "box":
            return sd_box(p, (s["width"] / 2, s["depth"] / 2, s["height"] / 2))
        if c == "sphere":
            return np.linalg.norm(p, axis=-1) - s["diameter"] / 2
        if c == "bowl":
            r = s["diameter"] / 2
            centre = np.array([0.0, 0.0, r / 2])
            shell = np.abs(np.linalg.norm(p - centre, axis=-1) - (r - BOWL_WALL / 2)) - BOWL_WALL / 2
            return np.maximum(shell, p[..., 2] - r / 2)
        if c == "stem-glass":
            h, rc = s["height"], s["cup_diameter"] / 2
            cup_h = 0.55 * h
            stem_h = h - cup_h - GLASS_BASE_THICKNESS
            bottom = -h / 2
            base = sd_cylinder(p, rc * 0.9, GLASS_BASE_THICKNESS / 2, bottom + GLASS_BASE_THICKNESS / 2)
            stem = sd_cylinder(p, STEM_RADIUS, stem_h / 2 + 0.001, bottom + GLASS_BASE_THICKNESS + stem_h / 2)
            cup = sd_cylinder(p, rc, cup_h / 2, h / 2 - cup_h / 2)
            return np.minimum(np.minimum(base, stem), cup)
        if c == "thin-rod":
            r, half = s["diameter"] / 2, s["length"] / 2 - s["diameter"] / 2
            return sd_capsule(p, (0, 0, -half), (0, 0, half), r)
        raise ValueError(c)

    def sdf(self, points: np.ndarray) -> np.ndarray:
        """Signed distance of world points."""
        return self.local_sdf(self.pose.inverse().apply(points))

    def half_extents(self) -> np.ndarray:
        s, c = self.sizes, self.category
        if c in ("cylinder",):
            return np.array([s["diameter"] / 2, s["diameter"] / 2, s["height"] / 2])
        if c == "box":
            return np.array([s["width"], s["depth"], s["height"]]) / 2
        if c == "sphere":
            return np.full(3, s["diameter"] / 2)
        if c == "bowl":
            return np.array([s["diameter"] / 2, s["diameter"] / 2, s["diameter"] / 4])
        if c == "stem-glass":
            return np.array([s["cup_diameter"] / 2, s["cup_diameter"] / 2, s["height"] / 2])
        return np.array([s["diameter"] / 2, s["diameter"] / 2, s["length"] / 2])

    def min_width(self) -> float:
        """Narrowest outer width a parallel gripper could close on."""
        s, c = self.sizes, self.category
        if c == "box":
            return float(min(s["width"], s["depth"], s["height"]))
        if c == "cylinder":
            return float(min(s["diameter"], s["height"]))
        if c == "stem-glass":
            return float(min(s["cup_diameter"], s["height"]))
        return float(s["diameter"])  # sphere, bowl (rim grasps not modelled), thin-rod

    def to_dict(self) -> dict:
        return {"category": self.category, "sizes": dict(self.sizes), "pose": self.pose.to_list(),
                "transparent": self.transparent, "filled": self.filled, "mass": self.mass,
                "content_mass": self.content_mass}

    @classmethod
    def from_dict(cls, d: dict) -> "ObjectSpec":
        return cls(d["category"], {k: float(v) for k, v in d["sizes"].items()},
                   RigidTransform.from_list(d["pose"]), bool(d["transparent"]), bool(d["filled"]),
                   float(d["mass"]), float(d["content_mass"]))


def sample_sizes(category: str, rng: np.random.Generator) -> dict[str, float]:
    u = rng.uniform
    if category == "cylinder":
        return {"diameter": u(0.05, 0.08), "height": u(0.07, 0.13)}
    if category == "box":
        return {"width": u(0.04, 0.11), "depth": u(0.03, 0.08), "height": u(0.06, 0.13)}
    if category == "sphere":
        return {"diameter": u(0.05, 0.09)}
    if category == "bowl":
        return {"diameter": u(0.08, 0.13)}
    if category == "stem-glass":
        return {"cup_diameter": u(0.05, 0.075), "height": u(0.11, 0.16)}
    return {"diameter": u(0.02, 0.03), "length": u(0.12, 0.18)}


@dataclass(frozen=True)
class Capsule:
    start: tuple[float, float, float]
    end: tuple[float, float, float]
    radius: float


@dataclass(frozen=True, eq=False)
class HandSpec:
    """Capsule hand. Capsule endpoints are in the wrist frame (x toward the
    fingers, z out of the palm); ``wrist_pose`` maps wrist -> world."""

    wrist_pose: RigidTransform
    capsules: tuple[Capsule, ...]
    grasp_type: str = "side"

    def __post_init__(self):
        if self.grasp_type not in GRASP_TYPES:
            raise ValueError(f"unknown grasp type {self.grasp_type!r}")
        for c in self.capsules:
            if not 0.006 <= c.radius <= 0.02:
                raise ValueError(f"capsule radius {c.radius} outside [0.006, 0.02] m")
            if min(np.linalg.norm(c.start), np.linalg.norm(c.end)) > 0.12:
                raise ValueError("capsule not connected to the wrist")

    def local_sdf(self, p: np.ndarray) -> np.ndarray:
        out = np.full(p.shape[:-1], np.inf)
        for c in self.capsules:
            out = np.minimum(out, sd_capsule(p, c.start, c.end, c.radius))
        return out

    def sdf(self, points: np.ndarray) -> np.ndarray:
        return self.local_sdf(self.wrist_pose.inverse().apply(points))

    def to_dict(self) -> dict:
        return {"wrist_pose": self.wrist_pose.to_list(), "grasp_type": self.grasp_type,
                "capsules": [[list(c.start), list(c.end), c.radius] for c in self.capsules]}

    @classmethod
    def from_dict(cls, d: dict) -> "HandSpec":
        caps = tuple(Capsule(tuple(s), tuple(e), float(r)) for s, e, r in d["capsules"])
        return cls(RigidTransform.from_list(d["wrist_pose"]), caps, d["grasp_type"])


@dataclass(frozen=True)
class HandGeometry:
    palm_radius: float = 0.012
    palm_length: float = 0.07
    palm_offsets: tuple[float, ...] = (-0.024, 0.0, 0.024)
    finger_offsets: tuple[float, ...] = (-0.027, -0.009, 0.009, 0.027)
    finger_length: float = 0.065
    finger_radius: float = 0.0085
    thumb_base: tuple[float, float, float] = (0.02, 0.036, 0.0)
    thumb_length: float = 0.055
    thumb_radius: float = 0.0095
    forearm_length: float = 0.06
    forearm_radius: float = 0.018
    palm_center_x: float = 0.042
    contact_gap: float = 0.001
    curl_step_deg: float = 2.0


def palm_capsules(g: HandGeometry) -> list[Capsule]:
    caps = [Capsule((0.0, y, 0.0), (g.palm_length, y, 0.0), g.palm_radius) for y in g.palm_offsets]
    caps.append(Capsule((-g.forearm_length, 0.0, 0.0), (0.0, 0.0, 0.0), g.forearm_radius))
    return caps


def _capsule_clearance(obj_sdf, a, b, radius, n=12) -> float:
    t = np.linspace(0.0, 1.0, n)[:, None]
    pts = np.asarray(a) + t * (np.asarray(b) - np.asarray(a))
    return float(obj_sdf(pts).min() - radius)


def curl_digit(obj_sdf, base, length, radius, direction_fn, gap, step_deg, max_deg=150.0) -> Capsule:
    """Rotate a digit from straight until it first touches the object."""
    base = np.asarray(base, float)
    end = base + length * direction_fn(0.0)
    for ang in np.arange(0.0, max_deg + 1e-9, step_deg):
        end = base + length * direction_fn(np.radians(ang))
        if _capsule_clearance(obj_sdf, base, end, radius) <= gap:
            break
    return Capsule(tuple(base), tuple(end), radius)


def build_hand(obj_local_sdf, obj_in_wrist: RigidTransform, g: HandGeometry = HandGeometry()) -> list[Capsule]:
    """Palm, forearm, four fingers and thumb closed around an object placed at ``obj_in_wrist``."""

    inv = obj_in_wrist.inverse()

    def obj_sdf(p):
        return obj_local_sdf(inv.apply(p))

    caps = palm_capsules(g)
    for y in g.finger_offsets:
        caps.append(curl_digit(obj_sdf, (g.palm_length + 0.005, y, 0.0), g.finger_length, g.finger_radius,
                               lambda a: np.array([np.cos(a), 0.0, np.sin(a)]), g.contact_gap, g.curl_step_deg))
    caps.append(curl_digit(obj_sdf, g.thumb_base, g.thumb_length, g.thumb_radius,
                           lambda a: np.array([0.35, np.cos(a), np.sin(a)]) / np.hypot(0.35, 1.0),
                           g.contact_gap, g.curl_step_deg))
    return caps


def place_on_palm(obj_local_sdf, rotation: np.ndarray, g: HandGeometry = HandGeometry(),
                  along: float = 0.0) -> RigidTransform:
    """Object->wrist transform that rests the object on the palm with a small gap.

    Bisects the height above the palm so the closest palm capsule is
    ``contact_gap`` away from the surface.
    """
    palm = [c for c in palm_capsules(g) if c.radius == g.palm_radius]

    def clearance(h):
        tr = RigidTransform(rotation, (g.palm_center_x, along, h))
        inv = tr.inverse()
        return min(_capsule_clearance(lambda p: obj_local_sdf(inv.apply(p)), c.start, c.end, c.radius, 24)
                   for c in palm)

    lo, hi = 0.0, 0.25
    for _ in range(50):
        mid = (lo + hi) / 2
        if clearance(mid) > g.contact_gap:
            hi = mid
        else:
            lo = mid
    return RigidTransform(rotation, (g.palm_center_x, along, hi))


def min_gap(hand: HandSpec, obj: ObjectSpec, samples: int = 16) -> float:
    """Smallest distance between hand capsule surfaces and the object surface (negative if overlapping)."""
    best = np.inf
    for c in hand.capsules:
        t = np.linspace(0.0, 1.0, samples)[:, None]
        pts = hand.wrist_pose.apply(np.asarray(c.start) + t * (np.asarray(c.end) - np.asarray(c.start)))
        best = min(best, float(obj.sdf(pts).min() - c.radius))
    return best
