from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .transforms import RigidTransform

DEPTH_EPS = 1e-6
MIN_RAY_ANGLE_DEG = 0.5


class DegenerateGeometryError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class CameraModel:
    """Pinhole camera. ``extrinsic`` maps world points into camera coordinates."""

    intrinsics: np.ndarray
    extrinsic: RigidTransform
    image_size: tuple[int, int]  # (width, height)

    def __post_init__(self):
        k = np.array(self.intrinsics, dtype=np.float64).reshape(3, 3)
        w, h = (int(v) for v in self.image_size)
        if abs(k[2, 2] - 1.0) > 1e-12 or k[1, 0] or k[2, 0] or k[2, 1]:
            raise ValueError("intrinsics must be upper triangular with K[2][2] = 1")
        if k[0, 0] <= 0 or k[1, 1] <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= k[0, 2] <= w and 0 <= k[1, 2] <= h):
            raise ValueError("principal point outside the image")
        k.setflags(write=False)
        object.__setattr__(self, "intrinsics", k)
        object.__setattr__(self, "image_size", (w, h))

    @classmethod
    def simple(cls, focal: float, width: int, height: int, extrinsic: RigidTransform | None = None,
               cx: float | None = None, cy: float | None = None) -> "CameraModel":
        k = np.array([[focal, 0.0, width / 2 if cx is None else cx],
                      [0.0, focal, height / 2 if cy is None else cy],
                      [0.0, 0.0, 1.0]])
        return cls(k, extrinsic or RigidTransform.identity(), (width, height))

    @property
    def width(self) -> int:
        return self.image_size[0]

    @property
    def height(self) -> int:
        return self.image_size[1]

    @property
    def center(self) -> np.ndarray:
        """Optical centre in world coordinates."""
        return -self.extrinsic.rotation.T @ self.extrinsic.translation

    def projection_matrix(self) -> np.ndarray:
        return self.intrinsics @ self.extrinsic.matrix()[:3]

    def project(self, points) -> tuple[np.ndarray, np.ndarray]:
        """Pixels (N, 2) and a validity flag; points at depth <= eps are invalid (NaN pixels)."""
        pc = self.extrinsic.apply(np.atleast_2d(points))
        depth = pc[:, 2]
        valid = depth > DEPTH_EPS
        uvw = pc @ self.intrinsics.T
        px = np.full((len(pc), 2), np.nan)
        px[valid] = uvw[valid, :2] / uvw[valid, 2:3]
        return px, valid

    def pixel_rays(self, pixels) -> np.ndarray:
        """Unit world-frame ray directions through continuous pixel coordinates."""
        px = np.atleast_2d(np.asarray(pixels, dtype=np.float64))
        homog = np.column_stack([px, np.ones(len(px))])
        d_cam = homog @ np.linalg.inv(self.intrinsics).T
        d = d_cam @ self.extrinsic.rotation  # R^T d for each row
        return d / np.linalg.norm(d, axis=1, keepdims=True)

    def pixel_center_rays(self) -> np.ndarray:
        """Rays through every pixel centre, row-major (height, width, 3)."""
        jj, ii = np.meshgrid(np.arange(self.width) + 0.5, np.arange(self.height) + 0.5)
        return self.pixel_rays(np.column_stack([jj.ravel(), ii.ravel()])).reshape(self.height, self.width, 3)

    def crop(self, x0: float, y0: float, side: float, out_size: int) -> "CameraModel":
        """Camera seeing the square window [x0, x0+side) x [y0, y0+side) resampled to out_size px."""
        s = out_size / side
        k = self.intrinsics.copy()
        k[0, 0] *= s
        k[1, 1] *= s
        k[0, 1] *= s
        k[0, 2] = (k[0, 2] - x0) * s
        k[1, 2] = (k[1, 2] - y0) * s
        return _unchecked_camera(k, self.extrinsic, (out_size, out_size))


def _unchecked_camera(k: np.ndarray, extrinsic: RigidTransform, size: tuple[int, int]) -> CameraModel:
    # Crop cameras may legitimately have their principal point off-image.
    cam = object.__new__(CameraModel)
    k = np.array(k, dtype=np.float64)
    k.setflags(write=False)
    object.__setattr__(cam, "intrinsics", k)
    object.__setattr__(cam, "extrinsic", extrinsic)
    object.__setattr__(cam, "image_size", (int(size[0]), int(size[1])))
    return cam


def project_points(points, camera: CameraModel) -> tuple[np.ndarray, np.ndarray]:
    return camera.project(points)


def triangulate(pixel_l, pixel_r, cam_l: CameraModel, cam_r: CameraModel) -> tuple[np.ndarray, float, float]:
    """Least-squares intersection of the two back-projected rays.

    Returns the 3D point and the reprojection error (pixels) in each view.
    """
    c1, c2 = cam_l.center, cam_r.center
    if np.linalg.norm(c1 - c2) < 1e-9:
        raise DegenerateGeometryError("camera centres coincide")
    d1 = cam_l.pixel_rays(pixel_l)[0]
    d2 = cam_r.pixel_rays(pixel_r)[0]
    angle = np.degrees(np.arccos(np.clip(abs(d1 @ d2), -1.0, 1.0)))
    if angle < MIN_RAY_ANGLE_DEG:
        raise DegenerateGeometryError(f"rays nearly parallel ({angle:.3f} deg)")
    a = np.zeros((3, 3))
    b = np.zeros(3)
    for c, d in ((c1, d1), (c2, d2)):
        p = np.eye(3) - np.outer(d, d)
        a += p
        b += p @ c
    x = np.linalg.solve(a, b)
    errs = []
    for cam, px in ((cam_l, pixel_l), (cam_r, pixel_r)):
        proj, valid = cam.project(x)
        errs.append(float(np.linalg.norm(proj[0] - np.asarray(px, float))) if valid[0] else float("inf"))
    return x, errs[0], errs[1]
