"""Shared geometric and tensor types.

Every type validates on construction and freezes its arrays, so instances
can be passed between threads without copying.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np


class ValidationError(ValueError):
    """A constructor received values that violate the type's invariants."""


def _frozen(arr, dtype=np.float64, shape=None, name="array") -> np.ndarray:
    out = np.array(arr, dtype=dtype, copy=True)
    if shape is not None:
        if out.ndim != len(shape) or any(s is not None and s != d for s, d in zip(shape, out.shape)):
            raise ValidationError(f"{name}: expected shape {shape}, got {out.shape}")
    out.setflags(write=False)
    return out


def matmul_homogeneous(m: np.ndarray, p: np.ndarray) -> np.ndarray:
    """Row-major product of a 3x4 or 4x4 matrix with homogeneous point(s).

    ``p`` may be a single 4-vector or an (N, 4) stack; the result has the
    matching leading shape.
    """
    m = np.asarray(m, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    if m.shape not in ((3, 4), (4, 4)):
        raise ValidationError(f"matrix must be 3x4 or 4x4, got {m.shape}")
    if p.shape[-1] != 4:
        raise ValidationError(f"points must be homogeneous 4-vectors, got {p.shape}")
    return p @ m.T


@dataclass(frozen=True, eq=False)
class PointCloud:
    """N LiDAR returns as an (N, 4) array of (x, y, z, intensity)."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.size == 0:
            pts = pts.reshape(0, 4)
        pts = _frozen(pts, shape=(None, 4), name="points")
        if not np.all(np.isfinite(pts)):
            bad = int(np.flatnonzero(~np.all(np.isfinite(pts), axis=1))[0])
            raise ValidationError(f"non-finite coordinate at point {bad}")
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def xyz(self) -> np.ndarray:
        return self.points[:, :3]

    def subset(self, indices) -> "PointCloud":
        return PointCloud(self.points[np.asarray(indices, dtype=np.int64)])


@dataclass(frozen=True, eq=False)
class Calibration:
    m_intr: np.ndarray
    m_tran: np.ndarray
    image_width: int
    image_height: int

    def __post_init__(self):
        intr = _frozen(self.m_intr, shape=(3, 4), name="m_intr")
        tran = _frozen(self.m_tran, shape=(4, 4), name="m_tran")
        if not (np.all(np.isfinite(intr)) and np.all(np.isfinite(tran))):
            raise ValidationError("calibration matrices must be finite")
        if not np.array_equal(tran[3], [0.0, 0.0, 0.0, 1.0]):
            raise ValidationError(f"last row of m_tran must be (0,0,0,1), got {tran[3].tolist()}")
        w, h = int(self.image_width), int(self.image_height)
        if w != self.image_width or h != self.image_height or w <= 0 or h <= 0:
            raise ValidationError(f"image dims must be positive integers, got {self.image_width}x{self.image_height}")
        object.__setattr__(self, "m_intr", intr)
        object.__setattr__(self, "m_tran", tran)
        object.__setattr__(self, "image_width", w)
        object.__setattr__(self, "image_height", h)

    @property
    def image_dims(self) -> tuple[int, int]:
        return self.image_width, self.image_height

    @property
    def projection(self) -> np.ndarray:
        """Composite 3x4 LiDAR-to-pixel matrix ``m_intr @ m_tran``."""
        return self.m_intr @ self.m_tran


@dataclass(frozen=True)
class RangeSpec:
    x_min: float
    y_min: float
    z_min: float
    x_max: float
    y_max: float
    z_max: float

    def __post_init__(self):
        vals = self.as_array()
        if not np.all(np.isfinite(vals)):
            raise ValidationError("range bounds must be finite")
        for axis, lo, hi in zip("xyz", vals[:3], vals[3:]):
            if not lo < hi:
                raise ValidationError(f"range {axis}: min {lo} must be < max {hi}")

    def as_array(self) -> np.ndarray:
        return np.array([self.x_min, self.y_min, self.z_min, self.x_max, self.y_max, self.z_max], dtype=np.float64)

    @property
    def mins(self) -> np.ndarray:
        return self.as_array()[:3]

    @property
    def maxs(self) -> np.ndarray:
        return self.as_array()[3:]

    def contains(self, xyz: np.ndarray) -> np.ndarray:
        """Half-open membership mask: min <= coord < max on every axis."""
        xyz = np.asarray(xyz, dtype=np.float64)
        return np.all((xyz >= self.mins) & (xyz < self.maxs), axis=-1)


# Model-setup profiles of the two detector baselines.
POINTPILLARS_RANGE = RangeSpec(0.0, -39.68, -3.0, 69.12, 39.68, 1.0)
VOXEL_RCNN_RANGE = RangeSpec(0.0, -40.0, -3.0, 70.4, 40.0, 1.0)
POINTPILLARS_VOXEL = (0.08, 0.08, 4.0)
VOXEL_RCNN_VOXEL = (0.05, 0.05, 0.1)
DEFAULT_SCALES = (1, 4, 8)


@dataclass(frozen=True)
class VoxelSpec:
    base_size: tuple[float, float, float]
    scales: tuple[int, ...]
    range: RangeSpec

    def __post_init__(self):
        size = tuple(float(v) for v in self.base_size)
        if len(size) != 3 or not all(np.isfinite(v) and v > 0 for v in size):
            raise ValidationError(f"base_size must be three positive lengths, got {self.base_size}")
        scales = tuple(self.scales)
        if not scales:
            raise ValidationError("scales must be non-empty")
        if any(int(s) != s or s <= 0 for s in scales):
            raise ValidationError(f"scales must be positive integers, got {scales}")
        scales = tuple(int(s) for s in scales)
        if scales[0] != 1:
            raise ValidationError(f"first scale must be 1, got {scales[0]}")
        if any(b <= a for a, b in zip(scales, scales[1:])):
            raise ValidationError(f"scales must be strictly increasing, got {scales}")
        object.__setattr__(self, "base_size", size)
        object.__setattr__(self, "scales", scales)

    def cell_size(self, scale: int) -> np.ndarray:
        if scale not in self.scales:
            raise ValidationError(f"scale {scale} not in {self.scales}")
        return np.asarray(self.base_size, dtype=np.float64) * scale

    def grid_shape(self, scale: int = 1) -> tuple[int, int, int]:
        """Cells per axis, ``ceil(extent / cell)``."""
        extent = self.range.maxs - self.range.mins
        return tuple(int(n) for n in np.ceil(extent / self.cell_size(scale) - 1e-9))

    @classmethod
    def pointpillars(cls, scales=DEFAULT_SCALES) -> "VoxelSpec":
        return cls(POINTPILLARS_VOXEL, tuple(scales), POINTPILLARS_RANGE)

    @classmethod
    def voxel_rcnn(cls, scales=DEFAULT_SCALES) -> "VoxelSpec":
        return cls(VOXEL_RCNN_VOXEL, tuple(scales), VOXEL_RCNN_RANGE)


@dataclass(frozen=True, eq=False)
class FeatureTensor:
    """Dense (H, W, C) image feature map.

    ``stride`` is the number of original-image pixels per tensor cell.
    """

    data: np.ndarray
    stride: float = 1.0

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 3:
            raise ValidationError(f"feature data must be (H, W, C), got shape {data.shape}")
        data = _frozen(data, name="features")
        if not np.all(np.isfinite(data)):
            raise ValidationError("feature data must be finite")
        stride = float(self.stride)
        if not (np.isfinite(stride) and stride >= 1.0):
            raise ValidationError(f"stride must be >= 1, got {self.stride}")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "stride", stride)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    def covers(self, image_width: int, image_height: int) -> bool:
        return self.stride * self.width >= image_width and self.stride * self.height >= image_height


@dataclass(frozen=True)
class VoxelRegion:
    voxel_id: int
    rect: tuple[float, float, float, float]
    alpha: float
    n_points: int

    def __post_init__(self):
        rect = tuple(float(v) for v in self.rect)
        if len(rect) != 4 or not all(np.isfinite(rect)):
            raise ValidationError(f"rect must be four finite values, got {self.rect}")
        if rect[0] > rect[2] or rect[1] > rect[3]:
            raise ValidationError(f"rect min exceeds max: {rect}")
        if not self.alpha >= 1.0:
            raise ValidationError(f"alpha must be >= 1, got {self.alpha}")
        if self.n_points < 1:
            raise ValidationError(f"n_points must be >= 1, got {self.n_points}")
        object.__setattr__(self, "rect", rect)
        object.__setattr__(self, "alpha", float(self.alpha))
        object.__setattr__(self, "voxel_id", int(self.voxel_id))
        object.__setattr__(self, "n_points", int(self.n_points))


@dataclass(frozen=True, eq=False)
class RegionSet(Sequence[VoxelRegion]):
    """Columnar storage for many VoxelRegions.

    Indexing yields VoxelRegion objects; the arrays are what the kernels use.
    """

    voxel_ids: np.ndarray
    rects: np.ndarray
    alphas: np.ndarray
    n_points: np.ndarray

    def __post_init__(self):
        ids = _frozen(self.voxel_ids, dtype=np.int64, shape=(None,), name="voxel_ids")
        n = ids.shape[0]
        rects = _frozen(np.asarray(self.rects, dtype=np.float64).reshape(n, 4), name="rects")
        alphas = _frozen(self.alphas, shape=(n,), name="alphas")
        counts = _frozen(self.n_points, dtype=np.int64, shape=(n,), name="n_points")
        if not np.all(np.isfinite(rects)):
            raise ValidationError("rects must be finite")
        if np.any(rects[:, 0] > rects[:, 2]) or np.any(rects[:, 1] > rects[:, 3]):
            raise ValidationError("rect min exceeds max")
        if np.any(~(alphas >= 1.0)):
            raise ValidationError("alpha must be >= 1")
        if np.any(counts < 1):
            raise ValidationError("n_points must be >= 1")
        for name, val in (("voxel_ids", ids), ("rects", rects), ("alphas", alphas), ("n_points", counts)):
            object.__setattr__(self, name, val)

    @classmethod
    def empty(cls) -> "RegionSet":
        return cls(np.zeros(0, np.int64), np.zeros((0, 4)), np.zeros(0), np.zeros(0, np.int64))

    @classmethod
    def from_regions(cls, regions: Sequence[VoxelRegion]) -> "RegionSet":
        if isinstance(regions, RegionSet):
            return regions
        if not regions:
            return cls.empty()
        return cls(
            [r.voxel_id for r in regions],
            [r.rect for r in regions],
            [r.alpha for r in regions],
            [r.n_points for r in regions],
        )

    def __len__(self) -> int:
        return self.voxel_ids.shape[0]

    def __getitem__(self, i):
        if isinstance(i, slice):
            return RegionSet(self.voxel_ids[i], self.rects[i], self.alphas[i], self.n_points[i])
        return VoxelRegion(int(self.voxel_ids[i]), tuple(self.rects[i]), float(self.alphas[i]), int(self.n_points[i]))

    def __iter__(self) -> Iterator[VoxelRegion]:
        for i in range(len(self)):
            yield self[i]
