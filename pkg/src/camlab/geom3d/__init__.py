"""Foundational 3D math: vectors, poses, cameras, ray casting, fits, clustering."""

from camlab.geom3d.cluster import NOISE, ClusterLabeling, VoxelGrid, dbscan, voxelize
from camlab.geom3d.core import (
    CameraModel,
    Pose,
    angle_between,
    as_points,
    canonical_sign,
    fit_line,
    fit_plane,
    look_at,
    mat_to_quat,
    quat_conj,
    quat_from_axis_angle,
    quat_mul,
    quat_rotate,
    quat_slerp,
    quat_to_mat,
    unit,
    vec3,
)
from camlab.geom3d.raycast import (
    NONE_ID,
    Box,
    Cylinder,
    deserialize_image,
    project,
    raycast_depth,
    serialize_image,
    surface_distance,
    unproject,
)

__all__ = [
    "NOISE",
    "NONE_ID",
    "Box",
    "CameraModel",
    "ClusterLabeling",
    "Cylinder",
    "Pose",
    "VoxelGrid",
    "angle_between",
    "as_points",
    "canonical_sign",
    "dbscan",
    "deserialize_image",
    "fit_line",
    "fit_plane",
    "look_at",
    "mat_to_quat",
    "project",
    "quat_conj",
    "quat_from_axis_angle",
    "quat_mul",
    "quat_rotate",
    "quat_slerp",
    "quat_to_mat",
    "raycast_depth",
    "serialize_image",
    "surface_distance",
    "unit",
    "unproject",
    "vec3",
    "voxelize",
]
