"""Mesh registration, alignment, UV unwrapping and rasterization."""

from .mesh import (LANDMARK_NAMES, Mesh, load_landmarks, load_obj,
                   save_landmarks, save_obj)
from .procrustes import (RigidTransform, SimilarityTransform,
                         generalized_procrustes, normalize_dataset,
                         procrustes_align, procrustes_points, scale_meshes)
from .uvmap import (UVLayout, UVMap, cylindrical_unwrap, nearest_fill,
                    nose_distance_weights, rasterize_uv, sample_mesh_from_uv)
from .nicp import DEFAULT_STIFFNESS, NicpResult, nicp_fit
from .icp import icp_point_to_plane, point_to_plane_residual

__all__ = [
    "LANDMARK_NAMES", "Mesh", "load_landmarks", "load_obj", "save_landmarks",
    "save_obj", "RigidTransform", "SimilarityTransform",
    "generalized_procrustes", "normalize_dataset", "procrustes_align",
    "procrustes_points", "scale_meshes", "UVLayout", "UVMap",
    "cylindrical_unwrap", "nearest_fill", "nose_distance_weights",
    "rasterize_uv", "sample_mesh_from_uv", "DEFAULT_STIFFNESS", "NicpResult",
    "nicp_fit", "icp_point_to_plane", "point_to_plane_residual",
]
