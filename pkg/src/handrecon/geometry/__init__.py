"""Shared geometry: transforms, cameras, meshes, T-SDF grids, clouds and masks."""
from .camera import CameraModel, DegenerateGeometryError, project_points, triangulate
from .masks import BoundingBox2D, Mask, convex_hull_mask, mask_iou
from .mesh import Mesh, read_obj, write_obj
from .pointcloud import PointCloud, chamfer_distance, read_ply, write_ply
from .transforms import RigidTransform
from .tsdf import (
    TSDFGrid,
    mesh_to_tsdf,
    project_to_surface,
    read_tsdf,
    tsdf_from_sdf,
    tsdf_sample,
    tsdf_surface_points,
    write_tsdf,
)

__all__ = [
    "BoundingBox2D",
    "CameraModel",
    "DegenerateGeometryError",
    "Mask",
    "Mesh",
    "PointCloud",
    "RigidTransform",
    "TSDFGrid",
    "chamfer_distance",
    "convex_hull_mask",
    "mask_iou",
    "mesh_to_tsdf",
    "project_points",
    "project_to_surface",
    "read_obj",
    "read_ply",
    "read_tsdf",
    "triangulate",
    "tsdf_from_sdf",
    "tsdf_sample",
    "tsdf_surface_points",
    "write_obj",
    "write_ply",
    "write_tsdf",
]
