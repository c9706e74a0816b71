from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from scipy.spatial import ConvexHull, QhullError

from .camera import CameraModel
from .pointcloud import ROLES, PointCloud


@dataclass(frozen=True, eq=False)
class Mask:
    bitmap: np.ndarray  # (height, width) bool
    role: str = "object"

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValueError(f"role must be one of {ROLES}, got {self.role!r}")
        b = np.array(self.bitmap, dtype=bool)
        if b.ndim != 2:
            raise ValueError("mask bitmap must be 2-d")
        b.setflags(write=False)
        object.__setattr__(self, "bitmap", b)

    @property
    def shape(self) -> tuple[int, int]:
        return self.bitmap.shape

    @property
    def area(self) -> int:
        return int(self.bitmap.sum())

    def matches(self, camera: CameraModel) -> bool:
        return self.bitmap.shape == (camera.height, camera.width)

    def dilated(self, radius: int) -> "Mask":
        """Grow (radius > 0) or shrink (radius < 0) by a disk of |radius| pixels."""
        if radius == 0:
            return self
        r = abs(int(radius))
        yy, xx = np.mgrid[-r:r + 1, -r:r + 1]
        disk = xx ** 2 + yy ** 2 <= r * r
        op = ndimage.binary_dilation if radius > 0 else ndimage.binary_erosion
        return Mask(op(self.bitmap, structure=disk), self.role)

    def centroid(self) -> np.ndarray | None:
        """Mean pixel-centre coordinate (x, y), or None if empty."""
        ii, jj = np.nonzero(self.bitmap)
        if not len(ii):
            return None
        return np.array([jj.mean() + 0.5, ii.mean() + 0.5])

    def bounding_box(self) -> "BoundingBox2D | None":
        ii, jj = np.nonzero(self.bitmap)
        if not len(ii):
            return None
        h, w = self.bitmap.shape
        return BoundingBox2D.clipped((jj.min(), ii.min()), (jj.max() + 1, ii.max() + 1), (w, h))


@dataclass(frozen=True)
class BoundingBox2D:
    min_corner: tuple[float, float]  # (x, y) pixels
    max_corner: tuple[float, float]

    def __post_init__(self):
        if self.min_corner[0] > self.max_corner[0] or self.min_corner[1] > self.max_corner[1]:
            raise ValueError("bounding box min corner exceeds max corner")

    @classmethod
    def clipped(cls, lo, hi, image_size) -> "BoundingBox2D":
        w, h = image_size
        x0, y0 = min(max(float(lo[0]), 0.0), w), min(max(float(lo[1]), 0.0), h)
        x1, y1 = min(max(float(hi[0]), 0.0), w), min(max(float(hi[1]), 0.0), h)
        return cls((min(x0, x1), min(y0, y1)), (max(x0, x1), max(y0, y1)))

    @property
    def width(self) -> float:
        return self.max_corner[0] - self.min_corner[0]

    @property
    def height(self) -> float:
        return self.max_corner[1] - self.min_corner[1]

    @property
    def center(self) -> np.ndarray:
        return (np.asarray(self.min_corner) + np.asarray(self.max_corner)) / 2


def mask_iou(a: Mask, b: Mask) -> float:
    if a.shape != b.shape:
        raise ValueError(f"mask dimensions differ: {a.shape} vs {b.shape}")
    union = np.logical_or(a.bitmap, b.bitmap).sum()
    if union == 0:
        return 0.0
    return float(np.logical_and(a.bitmap, b.bitmap).sum() / union)


def rasterize_convex_polygon(poly: np.ndarray, width: int, height: int) -> np.ndarray:
    """Scanline fill: a pixel is set when its centre lies inside the polygon."""
    out = np.zeros((height, width), dtype=bool)
    ys = np.arange(height) + 0.5
    x0, x1 = poly[:, 0], np.roll(poly[:, 0], -1)
    y0, y1 = poly[:, 1], np.roll(poly[:, 1], -1)
    lo = np.full(height, np.inf)
    hi = np.full(height, -np.inf)
    for ax, ay, bx, by in zip(x0, y0, x1, y1):
        ymin, ymax = min(ay, by), max(ay, by)
        rows = (ys >= ymin) & (ys <= ymax)
        if not rows.any():
            continue
        if by == ay:
            xs_lo = np.full(rows.sum(), min(ax, bx))
            xs_hi = np.full(rows.sum(), max(ax, bx))
        else:
            xs = ax + (ys[rows] - ay) * (bx - ax) / (by - ay)
            xs_lo = xs_hi = xs
        lo[rows] = np.minimum(lo[rows], xs_lo)
        hi[rows] = np.maximum(hi[rows], xs_hi)
    for i in np.nonzero(np.isfinite(lo))[0]:
        j0 = max(int(np.ceil(lo[i] - 0.5)), 0)
        j1 = min(int(np.floor(hi[i] - 0.5)), width - 1)
        if j1 >= j0:
            out[i, j0:j1 + 1] = True
    return out


def _points_mask(px: np.ndarray, width: int, height: int) -> np.ndarray:
    out = np.zeros((height, width), dtype=bool)
    j = np.floor(px[:, 0]).astype(int)
    i = np.floor(px[:, 1]).astype(int)
    ok = (j >= 0) & (j < width) & (i >= 0) & (i < height)
    out[i[ok], j[ok]] = True
    return out


def convex_hull_mask(cloud: PointCloud, camera: CameraModel) -> Mask:
    if cloud.empty:
        raise ValueError("convex hull of an empty cloud")
    px, valid = camera.project(cloud.points)
    px = px[valid]
    w, h = camera.image_size
    if len(px) >= 3:
        try:
            hull = ConvexHull(px)
        except QhullError:
            hull = None
        if hull is not None and hull.volume > 0:
            return Mask(rasterize_convex_polygon(px[hull.vertices], w, h), cloud.role)
    return Mask(_points_mask(px, w, h), cloud.role)
