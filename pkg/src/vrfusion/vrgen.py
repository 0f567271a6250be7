"""Dynamic Voxel Regions on the image plane.

A voxel's region is the axis-aligned bounding box of its projected member
points. Regions are then grown by a distance-dependent factor so that far,
sparse voxels still cover a useful patch of the image:

    alpha = 1 + |(x_c, y_c)| / |(x_max, y_max)|
    w' = alpha * (w + delta),  l' = alpha * (l + delta)

where (x_c, y_c) is the voxel's BEV centroid. Growth keeps the box centre
fixed and the result is clamped to the image.
"""

from __future__ import annotations

import logging

import numpy as np

from .core import RangeSpec, RegionSet, VoxelRegion, VoxelSpec
from .projector import ProjectedCloud
from .voxelizer import SENTINEL, VoxelAssignment, scatter_reduce

log = logging.getLogger(__name__)

DEFAULT_DELTA = 2.0


def generate_regions(projected: ProjectedCloud, assignment: VoxelAssignment) -> RegionSet:
    """Bounding rect of each voxel's projected members, alpha left at 1.

    Voxels with no projected member get no region.
    """
    v = assignment.num_voxels
    if projected.kept_indices.size and projected.kept_indices.max() >= assignment.num_points:
        raise ValueError("projected cloud and assignment refer to different clouds")
    ids = assignment.voxel_index_per_point[projected.kept_indices]
    member = ids != SENTINEL
    ids = ids[member]
    px = projected.pixels[member]
    counts = np.bincount(ids, minlength=v)
    lo = scatter_reduce(px, ids, "min", num_segments=v)
    hi = scatter_reduce(px, ids, "max", num_segments=v)
    present = np.flatnonzero(counts > 0)
    if present.size < v:
        log.info("%d of %d voxels have no projected point; their regions are omitted", v - present.size, v)
    rects = np.concatenate([lo[present], hi[present]], axis=1)
    return RegionSet(present, rects, np.ones(present.size), counts[present])


def scale_factor(centroid_bev, range_: RangeSpec) -> float | np.ndarray:
    """Enlargement factor for a BEV centroid (or an (V, 2) stack of them)."""
    denom = np.hypot(range_.x_max, range_.y_max)
    if denom == 0:
        raise ValueError("range corner (x_max, y_max) has zero norm; scale factor undefined")
    c = np.asarray(centroid_bev, dtype=np.float64)
    alpha = 1.0 + np.hypot(c[..., 0], c[..., 1]) / denom
    return float(alpha) if alpha.ndim == 0 else alpha


def _enlarge(rects, alphas, delta, image_dims):
    rects = np.asarray(rects, dtype=np.float64).reshape(-1, 4)
    alphas = np.asarray(alphas, dtype=np.float64).reshape(-1, 1)
    centre = (rects[:, :2] + rects[:, 2:]) / 2.0
    half = alphas * ((rects[:, 2:] - rects[:, :2]) + delta) / 2.0
    out = np.concatenate([centre - half, centre + half], axis=1)
    if image_dims is not None:
        w, h = image_dims
        out[:, [0, 2]] = np.clip(out[:, [0, 2]], 0.0, w)
        out[:, [1, 3]] = np.clip(out[:, [1, 3]], 0.0, h)
    return out


def enlarge_region(region: VoxelRegion, alpha: float, delta: float = DEFAULT_DELTA, image_dims=None) -> VoxelRegion:
    if delta < 0:
        raise ValueError(f"delta must be >= 0, got {delta}")
    rect = _enlarge([region.rect], [alpha], delta, image_dims)[0]
    return VoxelRegion(region.voxel_id, tuple(rect), alpha, region.n_points)


def enlarge_regions(regions: RegionSet, alphas, delta: float = DEFAULT_DELTA, image_dims=None) -> RegionSet:
    if delta < 0:
        raise ValueError(f"delta must be >= 0, got {delta}")
    alphas = np.asarray(alphas, dtype=np.float64).reshape(len(regions))
    rects = _enlarge(regions.rects, alphas, delta, image_dims)
    return RegionSet(regions.voxel_ids, rects, alphas, regions.n_points)


def cell_centres_bev(assignment: VoxelAssignment, spec: VoxelSpec) -> np.ndarray:
    """Geometric BEV centre of each occupied cell (alternative to the point mean)."""
    cell = spec.cell_size(assignment.scale)[:2]
    return spec.range.mins[:2] + (assignment.voxel_ids[:, :2] + 0.5) * cell


def voxel_regions(
    projected: ProjectedCloud,
    assignment: VoxelAssignment,
    spec: VoxelSpec,
    delta: float = DEFAULT_DELTA,
    image_dims=None,
    centroid: str = "mean",
) -> tuple[RegionSet, RegionSet]:
    """Generate, scale and enlarge. Returns ``(raw, enlarged)`` region sets.

    ``centroid`` picks the BEV position fed to the scale factor: ``mean`` of
    member points or the ``cell`` centre.
    """
    raw = generate_regions(projected, assignment)
    if centroid == "mean":
        centres = assignment.centroid_per_voxel
    elif centroid == "cell":
        centres = cell_centres_bev(assignment, spec)
    else:
        raise ValueError(f"centroid must be 'mean' or 'cell', got {centroid!r}")
    alphas = scale_factor(centres[raw.voxel_ids], spec.range) if len(raw) else np.zeros(0)
    return raw, enlarge_regions(raw, alphas, delta, image_dims)
