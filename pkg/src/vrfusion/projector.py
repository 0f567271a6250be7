"""LiDAR-to-pixel projection with field-of-view filtering."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Calibration, PointCloud, ValidationError, _frozen

EPS_DEPTH = 1e-6
MAX_YAW_DEG = 10.0
MAX_SHIFT_M = 1.0


@dataclass(frozen=True, eq=False)
class ProjectedCloud:
    pixels: np.ndarray
    depth: np.ndarray
    kept_indices: np.ndarray

    def __post_init__(self):
        px = _frozen(np.asarray(self.pixels, dtype=np.float64).reshape(-1, 2), name="pixels")
        n = px.shape[0]
        depth = _frozen(self.depth, shape=(n,), name="depth")
        kept = _frozen(self.kept_indices, dtype=np.int64, shape=(n,), name="kept_indices")
        if np.any(depth <= 0):
            raise ValidationError("projected depths must be positive")
        if np.any(np.diff(kept) <= 0):
            raise ValidationError("kept_indices must be strictly increasing")
        object.__setattr__(self, "pixels", px)
        object.__setattr__(self, "depth", depth)
        object.__setattr__(self, "kept_indices", kept)

    def __len__(self) -> int:
        return self.kept_indices.shape[0]


def to_pixels(xyz: np.ndarray, calib: Calibration) -> tuple[np.ndarray, np.ndarray]:
    """Unfiltered projection: ``(uv, w)`` for every point, w being the camera depth."""
    xyz = np.asarray(xyz, dtype=np.float64).reshape(-1, 3)
    hom = np.concatenate([xyz, np.ones((xyz.shape[0], 1))], axis=1)
    cam = hom @ calib.m_tran.T
    uvw = cam @ calib.m_intr.T
    w = uvw[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        uv = uvw[:, :2] / w[:, None]
    return uv, w


def fov_mask(uv: np.ndarray, w: np.ndarray, calib: Calibration) -> np.ndarray:
    return (
        (w > EPS_DEPTH)
        & (uv[:, 0] >= 0) & (uv[:, 0] < calib.image_width)
        & (uv[:, 1] >= 0) & (uv[:, 1] < calib.image_height)
    )


def project(cloud: PointCloud, calib: Calibration) -> ProjectedCloud:
    """Project into the image and keep points with positive depth inside it."""
    uv, w = to_pixels(cloud.xyz, calib)
    keep = np.flatnonzero(fov_mask(uv, w, calib))
    return ProjectedCloud(uv[keep], w[keep], keep)


def rigid_transform(yaw_deg: float, translation) -> np.ndarray:
    """4x4 ``Rz(yaw) @ T(t)``."""
    t = np.asarray(translation, dtype=np.float64).reshape(3)
    a = np.deg2rad(yaw_deg)
    rz = np.eye(4)
    rz[0, 0], rz[0, 1] = np.cos(a), -np.sin(a)
    rz[1, 0], rz[1, 1] = np.sin(a), np.cos(a)
    tr = np.eye(4)
    tr[:3, 3] = t
    return rz @ tr


def perturb_calibration(calib: Calibration, yaw_deg: float = 0.0, translation=(0.0, 0.0, 0.0)) -> Calibration:
    """Left-compose the extrinsics with a small rigid error; intrinsics untouched."""
    t = np.asarray(translation, dtype=np.float64).reshape(3)
    if not (np.isfinite(yaw_deg) and abs(yaw_deg) <= MAX_YAW_DEG):
        raise ValueError(f"|yaw| must be <= {MAX_YAW_DEG} deg, got {yaw_deg}")
    if not (np.all(np.isfinite(t)) and np.linalg.norm(t) <= MAX_SHIFT_M):
        raise ValueError(f"|translation| must be <= {MAX_SHIFT_M} m, got {t.tolist()}")
    if yaw_deg == 0 and not np.any(t):
        return calib
    m_tran = rigid_transform(yaw_deg, t) @ calib.m_tran
    m_tran[3] = (0.0, 0.0, 0.0, 1.0)
    return Calibration(calib.m_intr, m_tran, calib.image_width, calib.image_height)
