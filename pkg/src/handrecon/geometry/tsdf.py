"""Truncated signed distance grids (negative inside, positive outside)."""
from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np
from scipy import ndimage

from .mesh import Mesh, point_triangle_sq_distance, winding_number
from .pointcloud import PointCloud
from .transforms import RigidTransform, orthonormalize

TSDF_MAGIC = b"TSDF"
DEFAULT_EXTENT = 0.24
TRUNCATION_FRACTION = 0.1


class UnsignedDistanceWarning(UserWarning):
    pass


@dataclass(frozen=True, eq=False)
class TSDFGrid:
    """D^3 clamped signed distances on a cube of edge ``extent`` centred on ``origin``.

    ``values[i, j, k]`` is the sample at voxel centre
    ``origin.apply(((i, j, k) + 0.5) * voxel_size - extent / 2)``.
    """

    values: np.ndarray
    extent: float
    truncation: float
    origin: RigidTransform
    signed: bool = True

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float32)
        if v.ndim != 3 or len(set(v.shape)) != 1:
            raise ValueError(f"TSDF values must be a D x D x D cube, got {v.shape}")
        if self.truncation <= 0 or self.extent <= 0:
            raise ValueError("extent and truncation must be positive")
        v = np.clip(v, -self.truncation, self.truncation)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def resolution(self) -> int:
        return self.values.shape[0]

    @property
    def voxel_size(self) -> float:
        return self.extent / self.resolution

    def local_centers(self) -> np.ndarray:
        return voxel_centers(self.resolution, self.extent)

    def world_centers(self) -> np.ndarray:
        return self.origin.apply(self.local_centers().reshape(-1, 3)).reshape(self.local_centers().shape)

    def with_values(self, values: np.ndarray) -> "TSDFGrid":
        return TSDFGrid(values, self.extent, self.truncation, self.origin, self.signed)

    def normalized(self) -> np.ndarray:
        """Values scaled to [-1, 1] by the truncation distance."""
        return self.values / np.float32(self.truncation)


def voxel_centers(resolution: int, extent: float) -> np.ndarray:
    """Grid-local voxel centres, shape (D, D, D, 3)."""
    c = (np.arange(resolution) + 0.5) * (extent / resolution) - extent / 2
    return np.stack(np.meshgrid(c, c, c, indexing="ij"), axis=-1)


def default_truncation(extent: float) -> float:
    return TRUNCATION_FRACTION * extent


def tsdf_from_sdf(sdf: Callable[[np.ndarray], np.ndarray], origin: RigidTransform, resolution: int,
                  extent: float = DEFAULT_EXTENT, truncation: float | None = None) -> TSDFGrid:
    """Sample an analytic world-frame SDF at the voxel centres."""
    truncation = default_truncation(extent) if truncation is None else truncation
    pts = origin.apply(voxel_centers(resolution, extent).reshape(-1, 3))
    vals = sdf(pts).reshape((resolution,) * 3)
    return TSDFGrid(vals, extent, truncation, origin)


def mesh_to_tsdf(mesh: Mesh, frame: RigidTransform, resolution: int, extent: float = DEFAULT_EXTENT,
                 truncation: float | None = None, chunk: int = 2_000_000) -> TSDFGrid:
    """Voxelise a mesh (given in world coordinates) into a grid anchored at ``frame``.

    Distances are exact point-to-triangle distances; the sign comes from the
    generalised winding number. A mesh that is not watertight yields an
    unsigned grid (``signed=False``) and an ``UnsignedDistanceWarning``.
    """
    if resolution < 8:
        raise ValueError("resolution must be at least 8")
    truncation = default_truncation(extent) if truncation is None else truncation
    if not len(mesh.triangles):
        raise ValueError("mesh has no triangles")
    watertight = mesh.is_watertight()
    if not watertight:
        warnings.warn("mesh is not watertight; falling back to unsigned distance", UnsignedDistanceWarning,
                      stacklevel=2)
    pts = frame.apply(voxel_centers(resolution, extent).reshape(-1, 3))
    a, b, c = mesh.corners()
    step = max(1, chunk // len(a))
    out = np.empty(len(pts))
    for s in range(0, len(pts), step):
        p = pts[s:s + step]
        d = np.sqrt(point_triangle_sq_distance(p, a, b, c).min(axis=1))
        if watertight:
            inside = np.abs(winding_number(p, a, b, c)) > 0.5
            d = np.where(inside, -d, d)
        out[s:s + step] = d
    return TSDFGrid(out.reshape((resolution,) * 3), extent, truncation, frame, signed=watertight)


def tsdf_surface_points(grid: TSDFGrid, threshold: float, role: str = "object") -> PointCloud:
    """World-frame voxel centres whose |value| <= threshold."""
    if threshold < 0:
        raise ValueError("threshold must be non-negative")
    keep = np.abs(grid.values) <= threshold
    local = grid.local_centers()[keep]
    return PointCloud(grid.origin.apply(local) if len(local) else np.zeros((0, 3)), role)


def tsdf_sample(grid: TSDFGrid, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Trilinear T-SDF values (metres) and unit gradient directions at world points.

    Points outside the grid read the nearest border sample. Where the
    gradient vanishes the returned direction is zero.
    """
    local = grid.origin.inverse().apply(np.atleast_2d(points))
    coords = ((local + grid.extent / 2) / grid.voxel_size - 0.5).T
    vals = grid.values.astype(np.float64)

    def sample(a):
        return ndimage.map_coordinates(a, coords, order=1, mode="nearest")

    value = sample(vals)
    grad_local = np.stack([sample(g) for g in np.gradient(vals)], axis=1)
    grad = grad_local @ grid.origin.rotation.T
    norm = np.linalg.norm(grad, axis=1, keepdims=True)
    return value, np.divide(grad, norm, out=np.zeros_like(grad), where=norm > 1e-12)


def project_to_surface(grid: TSDFGrid, points: np.ndarray, iterations: int = 3) -> tuple[np.ndarray, np.ndarray]:
    """Newton steps ``p - v(p) n(p)`` onto the zero level set; returns (points, outward normals)."""
    p = np.array(np.atleast_2d(points), dtype=np.float64)
    for _ in range(iterations):
        v, n = tsdf_sample(grid, p)
        p = p - v[:, None] * n
    _, n = tsdf_sample(grid, p)
    return p, n


def write_tsdf(grid: TSDFGrid, path: str | Path) -> None:
    d = grid.resolution
    header = TSDF_MAGIC + struct.pack("<Iff", d, grid.extent, grid.truncation)
    header += struct.pack("<12f", *grid.origin.to_list())
    body = np.ascontiguousarray(grid.values.ravel(order="F"), dtype="<f4").tobytes()
    Path(path).write_bytes(header + body)


def read_tsdf(path: str | Path) -> TSDFGrid:
    data = Path(path).read_bytes()
    if data[:4] != TSDF_MAGIC:
        raise ValueError(f"{path}: bad TSDF magic {data[:4]!r}")
    d, extent, trunc = struct.unpack_from("<Iff", data, 4)
    origin = struct.unpack_from("<12f", data, 16)
    vals = np.frombuffer(data, dtype="<f4", count=d ** 3, offset=64).reshape((d, d, d), order="F")
    frame = RigidTransform(orthonormalize(np.reshape(origin[:9], (3, 3))), origin[9:12])
    return TSDFGrid(vals, float(extent), float(trunc), frame)
