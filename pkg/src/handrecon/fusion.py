"""Stereo fusion of per-view token distributions and mask-based outlier removal."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .codec import CodecModel, TokenGrid, decode
from .encoder import DistributionGrid
from .geometry import CameraModel, Mask, PointCloud, RigidTransform, TSDFGrid, tsdf_surface_points

SURFACE_THRESHOLD = 0.01  # metres
MASK_DILATION_PX = 2


@dataclass(frozen=True, eq=False)
class FusionResult:
    distribution: DistributionGrid
    fallback_tokens: int  # tokens whose product vanished and were averaged instead


def fuse_distributions(p_left: DistributionGrid, p_right: DistributionGrid) -> FusionResult:
    """Per-token product of the two views, renormalised; disjoint supports fall back to the mean."""
    if p_left.probs.shape != p_right.probs.shape:
        raise ValueError(f"cannot fuse distributions of shape {p_left.probs.shape} and {p_right.probs.shape}")
    prod = p_left.probs * p_right.probs
    z = prod.sum(axis=-1, keepdims=True)
    dead = (z[..., 0] <= 0)
    avg = (p_left.probs + p_right.probs) / 2
    fused = np.where(dead[..., None], avg, prod / np.where(z > 0, z, 1.0))
    return FusionResult(DistributionGrid(fused), int(dead.sum()))


def select_embeddings(p: DistributionGrid, codebook_size: int | None = None) -> TokenGrid:
    """Argmax index per token; ``np.argmax`` returns the lowest index on ties."""
    return TokenGrid(p.argmax(), codebook_size or p.codebook_size)


@dataclass(frozen=True, eq=False)
class Reconstruction:
    hand: PointCloud
    object: PointCloud
    tsdf_hand: TSDFGrid
    tsdf_object: TSDFGrid

    @property
    def failed(self) -> dict[str, bool]:
        return {"hand": len(self.hand) == 0, "object": len(self.object) == 0}


def reconstruct(p_hand: DistributionGrid, p_object: DistributionGrid, codecs: dict[str, CodecModel],
                wrist_pose: RigidTransform, threshold: float = SURFACE_THRESHOLD) -> Reconstruction:
    """Decode each class's argmax tokens and sample its surface in the world frame."""
    grids, clouds = {}, {}
    for role, p in (("hand", p_hand), ("object", p_object)):
        tokens = select_embeddings(p, codecs[role].config.codebook_size)
        grids[role] = decode(codecs[role], tokens, wrist_pose)
        clouds[role] = tsdf_surface_points(grids[role], threshold, role)
    return Reconstruction(clouds["hand"], clouds["object"], grids["hand"], grids["object"])


def inside_mask(points: np.ndarray, camera: CameraModel, mask: Mask, dilation: int = MASK_DILATION_PX) -> np.ndarray:
    """Whether each point projects into the (dilated) mask; points behind the camera count as outside."""
    grown = mask.dilated(dilation).bitmap
    px, valid = camera.project(points)
    h, w = grown.shape
    ok = valid.copy()
    ok[valid] &= (px[valid, 0] >= 0) & (px[valid, 0] < w) & (px[valid, 1] >= 0) & (px[valid, 1] < h)
    out = np.zeros(len(points), dtype=bool)
    j = np.floor(px[ok, 0]).astype(int)
    i = np.floor(px[ok, 1]).astype(int)
    out[ok] = grown[i, j]
    return out


def occlusion_aware_mask(own: Mask, occluder: Mask) -> Mask:
    """``own`` widened by the other class's silhouette, keeping ``own``'s role.

    A point that projects onto the occluder may simply be hidden behind it, so
    only projections onto background count as evidence against the point.
    """
    return Mask(own.bitmap | occluder.bitmap, own.role)


def remove_outliers(cloud: PointCloud, masks: dict[str, Mask], cameras: dict[str, CameraModel],
                    dilation: int = MASK_DILATION_PX) -> tuple[PointCloud, PointCloud]:
    """Split ``cloud`` into (kept, removed): kept points fall inside the role's mask in every view.

    ``masks`` and ``cameras`` are keyed by view name; each mask must carry the
    cloud's role.
    """
    if set(masks) != set(cameras):
        raise ValueError("masks and cameras must cover the same views")
    keep = np.ones(len(cloud), dtype=bool)
    for view, mask in masks.items():
        if mask.role != cloud.role:
            raise ValueError(f"{view}: mask role {mask.role!r} does not match cloud role {cloud.role!r}")
        if len(cloud):
            keep &= inside_mask(cloud.points, cameras[view], mask, dilation)
    return PointCloud(cloud.points[keep], cloud.role), PointCloud(cloud.points[~keep], cloud.role)
