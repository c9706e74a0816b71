from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from pathlib import Path

import numpy as np

AREA_EPS = 1e-14


@dataclass(frozen=True, eq=False)
class Mesh:
    vertices: np.ndarray   # (V, 3) meters
    triangles: np.ndarray  # (T, 3) vertex indices

    def __post_init__(self):
        v = np.array(self.vertices, dtype=np.float64).reshape(-1, 3)
        f = np.array(self.triangles, dtype=np.int64).reshape(-1, 3)
        if len(f) and (f.min() < 0 or f.max() >= len(v)):
            raise ValueError("triangle index out of range")
        if len(f):
            a, b, c = v[f[:, 0]], v[f[:, 1]], v[f[:, 2]]
            area2 = np.linalg.norm(np.cross(b - a, c - a), axis=1)
            f = f[area2 > AREA_EPS]
        v.setflags(write=False)
        f.setflags(write=False)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", f)

    def is_watertight(self) -> bool:
        """Every undirected edge shared by exactly two triangles."""
        if not len(self.triangles):
            return False
        edges = Counter()
        for tri in self.triangles:
            for i in range(3):
                a, b = int(tri[i]), int(tri[(i + 1) % 3])
                edges[(min(a, b), max(a, b))] += 1
        return all(n == 2 for n in edges.values())

    def transformed(self, transform) -> "Mesh":
        return Mesh(transform.apply(self.vertices), self.triangles)

    def corners(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        f = self.triangles
        return self.vertices[f[:, 0]], self.vertices[f[:, 1]], self.vertices[f[:, 2]]


def read_obj(path: str | Path) -> Mesh:
    verts: list[list[float]] = []
    faces: list[list[int]] = []
    for line in Path(path).read_text().splitlines():
        parts = line.split()
        if not parts or parts[0].startswith("#"):
            continue
        if parts[0] == "v":
            verts.append([float(x) for x in parts[1:4]])
        elif parts[0] == "f":
            idx = []
            for tok in parts[1:]:
                i = int(tok.split("/")[0])
                idx.append(i - 1 if i > 0 else len(verts) + i)
            for k in range(1, len(idx) - 1):
                faces.append([idx[0], idx[k], idx[k + 1]])
    return Mesh(np.array(verts), np.array(faces, dtype=np.int64))


def write_obj(mesh: Mesh, path: str | Path) -> None:
    lines = [f"v {x!r} {y!r} {z!r}" for x, y, z in mesh.vertices.tolist()]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.triangles.tolist()]
    Path(path).write_text("\n".join(lines) + "\n")


def uv_sphere(radius: float, n_lat: int = 24, n_lon: int = 48, center=(0.0, 0.0, 0.0)) -> Mesh:
    verts = [[0.0, 0.0, radius]]
    for i in range(1, n_lat):
        theta = np.pi * i / n_lat
        for j in range(n_lon):
            phi = 2 * np.pi * j / n_lon
            verts.append([radius * np.sin(theta) * np.cos(phi), radius * np.sin(theta) * np.sin(phi),
                          radius * np.cos(theta)])
    verts.append([0.0, 0.0, -radius])
    south = len(verts) - 1

    def ring(i, j):
        return 1 + (i - 1) * n_lon + j % n_lon

    faces = []
    for j in range(n_lon):
        faces.append([0, ring(1, j), ring(1, j + 1)])
        faces.append([south, ring(n_lat - 1, j + 1), ring(n_lat - 1, j)])
    for i in range(1, n_lat - 1):
        for j in range(n_lon):
            a, b, c, d = ring(i, j), ring(i, j + 1), ring(i + 1, j), ring(i + 1, j + 1)
            faces.append([a, c, b])
            faces.append([b, c, d])
    return Mesh(np.array(verts) + np.asarray(center), np.array(faces))


def box_mesh(half_extents, center=(0.0, 0.0, 0.0)) -> Mesh:
    hx, hy, hz = half_extents
    v = np.array([[x, y, z] for x in (-hx, hx) for y in (-hy, hy) for z in (-hz, hz)]) + np.asarray(center)
    # outward-facing quads, as vertex indices into the 8 corners (index = 4*ix + 2*iy + iz)
    quads = [(0, 1, 3, 2), (4, 6, 7, 5), (0, 4, 5, 1), (2, 3, 7, 6), (0, 2, 6, 4), (1, 5, 7, 3)]
    faces = []
    for a, b, c, d in quads:
        faces += [[a, b, c], [a, c, d]]
    return Mesh(v, np.array(faces))


def point_triangle_sq_distance(points: np.ndarray, a: np.ndarray, b: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Squared distance from each of n points to each of m triangles, shape (n, m)."""
    p = points[:, None, :]
    ab, ac = b - a, c - a
    n = np.cross(ab, ac)
    n = n / np.linalg.norm(n, axis=1, keepdims=True)
    ap = p - a
    dplane = np.einsum("nmk,mk->nm", ap, n)
    proj = p - dplane[..., None] * n
    # barycentric inside test on the projected point
    def edge_side(u, v):
        return np.einsum("nmk,mk->nm", np.cross(v - u, proj - u), n)
    inside = (edge_side(a, b) >= 0) & (edge_side(b, c) >= 0) & (edge_side(c, a) >= 0)

    def seg(u, v):
        uv = v - u
        t = np.clip(np.einsum("nmk,mk->nm", p - u, uv) / np.einsum("mk,mk->m", uv, uv), 0.0, 1.0)
        d = p - u - t[..., None] * uv
        return np.einsum("nmk,nmk->nm", d, d)

    edges = np.minimum(np.minimum(seg(a, b), seg(b, c)), seg(c, a))
    return np.where(inside, dplane ** 2, edges)


def winding_number(points: np.ndarray, a: np.ndarray, b: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Generalised winding number of a closed triangle soup at each point."""
    pa, pb, pc = a[None] - points[:, None], b[None] - points[:, None], c[None] - points[:, None]
    la, lb, lc = (np.linalg.norm(v, axis=2) for v in (pa, pb, pc))
    det = np.einsum("nmk,nmk->nm", pa, np.cross(pb, pc))
    dab = np.einsum("nmk,nmk->nm", pa, pb)
    dac = np.einsum("nmk,nmk->nm", pa, pc)
    dbc = np.einsum("nmk,nmk->nm", pb, pc)
    denom = la * lb * lc + dab * lc + dac * lb + dbc * la
    return (2.0 * np.arctan2(det, denom)).sum(axis=1) / (4.0 * np.pi)
