"""Voxel-region LiDAR/camera feature fusion front end."""

from .core import (
    Calibration,
    FeatureTensor,
    PointCloud,
    RangeSpec,
    RegionSet,
    ValidationError,
    VoxelRegion,
    VoxelSpec,
    matmul_homogeneous,
)
from .kernels import BACKEND

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "Calibration",
    "FeatureTensor",
    "PointCloud",
    "RangeSpec",
    "RegionSet",
    "ValidationError",
    "VoxelRegion",
    "VoxelSpec",
    "matmul_homogeneous",
]
