"""Silhouette renderer: per-pixel sphere tracing of analytic SDFs."""
from __future__ import annotations

import numpy as np
from scipy import ndimage

from ..geometry import CameraModel, Mask

HIT_EPS = 2e-4
MAX_STEPS = 160
FAR = 3.0


def trace(sdf, origin: np.ndarray, dirs: np.ndarray, bound_center: np.ndarray | None = None,
          bound_radius: float | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Sphere-trace rays from one origin. Returns (hit, depth along the ray)."""
    n = len(dirs)
    t = np.zeros(n)
    alive = np.ones(n, dtype=bool)
    t_max = np.full(n, FAR)
    if bound_center is not None:
        # restrict marching to the bounding sphere of the scene
        oc = origin - bound_center
        b = dirs @ oc
        c = oc @ oc - bound_radius ** 2
        disc = b * b - c
        alive = disc > 0
        sq = np.sqrt(np.maximum(disc, 0.0))
        t = np.maximum(-b - sq, 0.0)
        t_max = -b + sq
        alive &= t_max > 0
    hit = np.zeros(n, dtype=bool)
    idx = np.nonzero(alive)[0]
    for _ in range(MAX_STEPS):
        if not len(idx):
            break
        d = sdf(origin + t[idx, None] * dirs[idx])
        done = d < HIT_EPS
        hit[idx[done]] = True
        t[idx] += np.where(done, 0.0, d)
        keep = ~done & (t[idx] < t_max[idx])
        idx = idx[keep]
    depth = np.where(hit, t, np.inf)
    return hit, depth


def render_silhouettes(camera: CameraModel, hand_sdf, object_sdf, bound_center=None,
                       bound_radius=None) -> tuple[Mask, Mask, np.ndarray, np.ndarray]:
    """Visible hand and object masks with mutual occlusion by depth.

    Returns (M_H, M_O, hand depth, object depth); depths are ray lengths and
    +inf where the ray misses.
    """
    h, w = camera.height, camera.width
    dirs = camera.pixel_center_rays().reshape(-1, 3)
    origin = camera.center
    if hand_sdf is None:
        hh, dh = np.zeros(len(dirs), bool), np.full(len(dirs), np.inf)
    else:
        hh, dh = trace(hand_sdf, origin, dirs, bound_center, bound_radius)
    if object_sdf is None:
        ho, do = np.zeros(len(dirs), bool), np.full(len(dirs), np.inf)
    else:
        ho, do = trace(object_sdf, origin, dirs, bound_center, bound_radius)
    m_o = ho & (do <= dh)
    m_h = hh & (dh < do)
    return (Mask(m_h.reshape(h, w), "hand"), Mask(m_o.reshape(h, w), "object"),
            dh.reshape(h, w), do.reshape(h, w))


def edge_map(union: np.ndarray) -> np.ndarray:
    """One-pixel inner boundary of a binary image."""
    return union & ~ndimage.binary_erosion(union)


def silhouette_image(m_h: np.ndarray, m_o: np.ndarray) -> np.ndarray:
    """3 x H x W float image: hand mask, object mask, union edge map."""
    union = m_h | m_o
    return np.stack([m_h, m_o, edge_map(union)]).astype(np.float32)
