from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

ROLES = ("hand", "object")
M_TO_CM = 100.0


@dataclass(frozen=True, eq=False)
class PointCloud:
    points: np.ndarray  # (N, 3) meters
    role: str = "object"

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValueError(f"role must be one of {ROLES}, got {self.role!r}")
        p = np.array(self.points, dtype=np.float64).reshape(-1, 3)
        if not np.all(np.isfinite(p)):
            raise ValueError("point cloud has non-finite coordinates")
        p.setflags(write=False)
        object.__setattr__(self, "points", p)

    def __len__(self) -> int:
        return len(self.points)

    @property
    def empty(self) -> bool:
        return len(self.points) == 0

    def subset(self, keep: np.ndarray) -> "PointCloud":
        return PointCloud(self.points[keep], self.role)

    def transformed(self, transform) -> "PointCloud":
        return PointCloud(transform.apply(self.points) if len(self) else self.points, self.role)


def chamfer_distance(gt: PointCloud | np.ndarray, pred: PointCloud | np.ndarray, reduction: str = "sum") -> float:
    """Symmetric squared nearest-neighbour distance in cm^2.

    ``reduction="sum"`` adds the squared distances of every point in both
    directions. ``reduction="mean"`` averages each direction over its point
    count before adding, which is the per-point figure usually reported for
    hand-object benchmarks.
    """
    a = (gt.points if isinstance(gt, PointCloud) else np.asarray(gt, float).reshape(-1, 3)) * M_TO_CM
    b = (pred.points if isinstance(pred, PointCloud) else np.asarray(pred, float).reshape(-1, 3)) * M_TO_CM
    if not len(a) or not len(b):
        raise ValueError("chamfer distance of an empty point cloud is undefined")
    if reduction not in ("sum", "mean"):
        raise ValueError(f"unknown reduction {reduction!r}")

    def directed(src, dst):
        _, idx = cKDTree(dst).query(src)
        diff = src - dst[idx]
        d2 = np.einsum("ij,ij->i", diff, diff)
        return d2.sum() if reduction == "sum" else d2.mean()

    return float(directed(a, b) + directed(b, a))


def write_ply(clouds: list[PointCloud], path: str | Path) -> None:
    """ASCII PLY with a per-vertex ``role`` property (0 = hand, 1 = object)."""
    n = sum(len(c) for c in clouds)
    lines = ["ply", "format ascii 1.0", "comment role 0=hand 1=object", f"element vertex {n}",
             "property double x", "property double y", "property double z", "property uchar role", "end_header"]
    for c in clouds:
        code = ROLES.index(c.role)
        lines += [f"{x!r} {y!r} {z!r} {code}" for x, y, z in c.points.tolist()]
    Path(path).write_text("\n".join(lines) + "\n")


def read_ply(path: str | Path) -> dict[str, PointCloud]:
    text = Path(path).read_text().splitlines()
    if not text or text[0] != "ply":
        raise ValueError(f"{path}: not a PLY file")
    end = text.index("end_header")
    n = next(int(l.split()[2]) for l in text[:end] if l.startswith("element vertex"))
    rows = np.array([l.split() for l in text[end + 1:end + 1 + n]], dtype=float).reshape(-1, 4)
    return {role: PointCloud(rows[rows[:, 3] == i, :3], role) for i, role in enumerate(ROLES)}
