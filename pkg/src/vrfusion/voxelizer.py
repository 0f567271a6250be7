"""Dynamic multi-scale voxelization and segment reductions.

Every in-range point is kept; there is no per-voxel cap and no sampling.
Coarse scales nest inside scale 1: the coarse index of a point is its
scale-1 index integer-divided by the scale, so all grids share the
range-min corner.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .core import PointCloud, ValidationError, VoxelSpec, _frozen

SENTINEL = -1


@dataclass(frozen=True, eq=False)
class VoxelAssignment:
    """Bidirectional point <-> voxel mapping at one scale.

    ``voxel_index_per_point`` holds a voxel id in ``[0, V)`` or ``SENTINEL``.
    ``voxel_ids`` are the (ix, iy, iz) grid keys of the occupied voxels in
    order of first occurrence in the input.
    """

    scale: int
    voxel_index_per_point: np.ndarray
    voxel_ids: np.ndarray
    centroid_per_voxel: np.ndarray
    count_per_voxel: np.ndarray
    grid_shape: tuple[int, int, int]

    def __post_init__(self):
        idx = _frozen(self.voxel_index_per_point, dtype=np.int64, shape=(None,), name="voxel_index_per_point")
        keys = _frozen(np.asarray(self.voxel_ids, dtype=np.int64).reshape(-1, 3), dtype=np.int64, name="voxel_ids")
        v = keys.shape[0]
        cent = _frozen(np.asarray(self.centroid_per_voxel, dtype=np.float64).reshape(v, 2), name="centroid_per_voxel")
        counts = _frozen(self.count_per_voxel, dtype=np.int64, shape=(v,), name="count_per_voxel")
        if np.any((idx < SENTINEL) | (idx >= v)):
            raise ValidationError("point index references a voxel that does not exist")
        if np.any(counts < 1):
            raise ValidationError("occupied voxel with zero points")
        if counts.sum() != np.count_nonzero(idx != SENTINEL):
            raise ValidationError("voxel counts do not sum to the in-range point count")
        for name, val in (("voxel_index_per_point", idx), ("voxel_ids", keys),
                          ("centroid_per_voxel", cent), ("count_per_voxel", counts)):
            object.__setattr__(self, name, val)
        object.__setattr__(self, "grid_shape", tuple(int(g) for g in self.grid_shape))

    @property
    def num_voxels(self) -> int:
        return self.voxel_ids.shape[0]

    @property
    def num_points(self) -> int:
        return self.voxel_index_per_point.shape[0]

    @property
    def in_range(self) -> np.ndarray:
        return self.voxel_index_per_point != SENTINEL

    def require_complete(self):
        """Raise unless every point is assigned (the fusion-stage precondition)."""
        if not np.all(self.in_range):
            bad = int(np.flatnonzero(~self.in_range)[0])
            raise ValueError(f"point {bad} is outside the voxel range; filter the cloud first")


def grid_indices(xyz: np.ndarray, spec: VoxelSpec) -> tuple[np.ndarray, np.ndarray]:
    """Scale-1 integer grid coordinates and the half-open in-range mask."""
    xyz = np.asarray(xyz, dtype=np.float64).reshape(-1, 3)
    mins = spec.range.mins
    cell = spec.cell_size(1)
    grid = np.asarray(spec.grid_shape(1), dtype=np.int64)
    inside = spec.range.contains(xyz)
    idx = np.floor((xyz - mins) / cell).astype(np.int64)
    # floating division can land exactly on the upper cell count for coords just below max
    idx = np.clip(idx, 0, grid - 1)
    return idx, inside


def voxelize(cloud: PointCloud, spec: VoxelSpec, scale: int) -> VoxelAssignment:
    if scale not in spec.scales:
        raise ValidationError(f"scale {scale} not in spec scales {spec.scales}")
    xyz = cloud.xyz
    fine, inside = grid_indices(xyz, spec)
    coarse = fine // scale
    gx, gy, gz = spec.grid_shape(scale)
    keys = (coarse[:, 0] * gy + coarse[:, 1]) * gz + coarse[:, 2]
    keys = np.where(inside, keys, SENTINEL)

    per_point, first = kernels.first_occurrence_ids(keys)
    v = first.shape[0]
    counts = np.bincount(per_point[inside], minlength=v)
    centroids = kernels.segment_reduce(xyz[inside, :2], per_point[inside], v, kernels.OP_MEAN)
    return VoxelAssignment(
        scale=scale,
        voxel_index_per_point=per_point,
        voxel_ids=coarse[first],
        centroid_per_voxel=centroids,
        count_per_voxel=counts,
        grid_shape=(gx, gy, gz),
    )


def voxelize_all(cloud: PointCloud, spec: VoxelSpec) -> list[VoxelAssignment]:
    return [voxelize(cloud, spec, s) for s in spec.scales]


def _check_ids(segment_ids, num_segments):
    ids = np.asarray(segment_ids)
    if ids.ndim != 1:
        raise ValueError(f"segment ids must be 1-D, got shape {ids.shape}")
    if ids.size and not np.issubdtype(ids.dtype, np.integer):
        raise TypeError(f"segment ids must be integers, got {ids.dtype}")
    ids = ids.astype(np.int64, copy=False)
    if ids.size and (ids.min() < 0 or ids.max() >= num_segments):
        bad = int(np.flatnonzero((ids < 0) | (ids >= num_segments))[0])
        raise IndexError(f"segment id {int(ids[bad])} at row {bad} outside [0, {num_segments})")
    return ids


def scatter_reduce(values, segment_ids, op: str, num_segments: int | None = None) -> np.ndarray:
    """Reduce rows of ``values`` that share a segment id.

    ``op`` is one of min, max, sum, mean. ``num_segments`` defaults to
    ``max(id) + 1``. A segment with no rows gives NaN (0 for sum).
    """
    if op not in kernels.OPS:
        raise ValueError(f"unknown op {op!r}; expected one of {sorted(kernels.OPS)}")
    vals = np.asarray(values, dtype=np.float64)
    flat = vals.ndim == 1
    if flat:
        vals = vals[:, None]
    if vals.ndim != 2:
        raise ValueError(f"values must be (N,) or (N, D), got {vals.shape}")
    ids = np.asarray(segment_ids)
    if ids.shape[0] != vals.shape[0]:
        raise ValueError(f"{ids.shape[0]} segment ids for {vals.shape[0]} rows")
    if num_segments is None:
        num_segments = int(ids.max()) + 1 if ids.size else 0
    ids = _check_ids(ids, num_segments)
    out = kernels.segment_reduce(vals, ids, num_segments, kernels.OPS[op])
    return out[:, 0] if flat else out


def gather(values, segment_ids) -> np.ndarray:
    """Map voxel rows back to points: row i of the result is ``values[ids[i]]``."""
    vals = np.asarray(values)
    ids = _check_ids(segment_ids, vals.shape[0])
    return vals[ids]
