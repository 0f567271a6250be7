"""Vectorized numpy kernels. Reference path when numba is disabled."""

import numpy as np

OP_MIN, OP_MAX, OP_SUM, OP_MEAN = 0, 1, 2, 3

_ROI_CHUNK = 4096


def first_occurrence_ids(keys):
    """Relabel non-negative keys 0..V-1 in order of first appearance.

    Negative keys are sentinels and map to -1. Returns ``(ids, first_index)``
    where ``first_index[j]`` is the position of voxel j's first point.
    """
    keys = np.asarray(keys, dtype=np.int64)
    ids = np.full(keys.shape[0], -1, dtype=np.int64)
    valid = np.flatnonzero(keys >= 0)
    if valid.size == 0:
        return ids, np.zeros(0, dtype=np.int64)
    _, first, inverse = np.unique(keys[valid], return_index=True, return_inverse=True)
    order = np.argsort(first, kind="stable")
    rank = np.empty_like(order)
    rank[order] = np.arange(order.size)
    ids[valid] = rank[inverse.reshape(-1)]
    return ids, valid[first[order]]


def segment_reduce(values, ids, num_segments, op):
    """Per-segment reduction of an (N, D) array.

    Empty segments come back as NaN for min/max/mean and 0 for sum.
    """
    values = np.asarray(values, dtype=np.float64)
    n, d = values.shape
    counts = np.bincount(ids, minlength=num_segments)
    fill = 0.0 if op == OP_SUM else np.nan
    out = np.full((num_segments, d), fill)
    if n == 0:
        return out
    order = np.argsort(ids, kind="stable")
    sorted_vals = values[order]
    starts = np.concatenate(([0], np.cumsum(counts)[:-1]))
    nonempty = counts > 0
    at = starts[nonempty]
    if op == OP_MIN:
        out[nonempty] = np.minimum.reduceat(sorted_vals, at, axis=0)
    elif op == OP_MAX:
        out[nonempty] = np.maximum.reduceat(sorted_vals, at, axis=0)
    else:
        sums = np.add.reduceat(sorted_vals, at, axis=0)
        if op == OP_MEAN:
            sums = sums / counts[nonempty, None]
        out[nonempty] = sums
    return out


def bilinear_sample(fmap, xs, ys):
    """Sample an (H, W, C) map at continuous coordinates.

    Cell (r, c) sits at (c + 0.5, r + 0.5). Samples up to half a cell past
    the map edge take the border value; samples further out read 0.
    """
    h, w, c = fmap.shape
    gx = np.asarray(xs, dtype=np.float64) - 0.5
    gy = np.asarray(ys, dtype=np.float64) - 0.5
    outside = (gx < -1.0) | (gx > w) | (gy < -1.0) | (gy > h)
    gx = np.clip(gx, 0.0, w - 1.0)
    gy = np.clip(gy, 0.0, h - 1.0)
    x0 = gx.astype(np.int64)
    y0 = gy.astype(np.int64)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = (gx - x0)[..., None]
    fy = (gy - y0)[..., None]
    out = (1.0 - fy) * ((1.0 - fx) * fmap[y0, x0] + fx * fmap[y0, x1]) \
        + fy * ((1.0 - fx) * fmap[y1, x0] + fx * fmap[y1, x1])
    out[outside] = 0.0
    return out


def roi_align(fmap, rects, out_size, samples):
    """Pool (R, 4) feature-coordinate rects into (R, C, out, out).

    Each bin averages ``samples x samples`` regularly spaced bilinear taps.
    """
    rects = np.asarray(rects, dtype=np.float64).reshape(-1, 4)
    c = fmap.shape[2]
    n = out_size * samples
    result = np.empty((rects.shape[0], c, out_size, out_size))
    k = np.arange(n) + 0.5
    for lo in range(0, rects.shape[0], _ROI_CHUNK):
        chunk = rects[lo:lo + _ROI_CHUNK]
        r = chunk.shape[0]
        xs = chunk[:, 0, None] + k[None, :] * ((chunk[:, 2] - chunk[:, 0]) / n)[:, None]
        ys = chunk[:, 1, None] + k[None, :] * ((chunk[:, 3] - chunk[:, 1]) / n)[:, None]
        gx = np.broadcast_to(xs[:, None, :], (r, n, n))
        gy = np.broadcast_to(ys[:, :, None], (r, n, n))
        vals = bilinear_sample(fmap, gx, gy)
        vals = vals.reshape(r, out_size, samples, out_size, samples, c)
        pooled = vals.sum(axis=(2, 4)) / (samples * samples)
        result[lo:lo + r] = pooled.transpose(0, 3, 1, 2)
    return result


def rect_multiplicity(boxes, width, height):
    """Count, per pixel, how many integer boxes cover it.

    ``boxes`` rows are inclusive (col0, row0, col1, row1), already clipped.
    """
    boxes = np.asarray(boxes, dtype=np.int64).reshape(-1, 4)
    diff = np.zeros((height + 1, width + 1), dtype=np.int64)
    c0, r0, c1, r1 = boxes.T
    np.add.at(diff, (r0, c0), 1)
    np.add.at(diff, (r0, c1 + 1), -1)
    np.add.at(diff, (r1 + 1, c0), -1)
    np.add.at(diff, (r1 + 1, c1 + 1), 1)
    return diff.cumsum(axis=0).cumsum(axis=1)[:height, :width].astype(np.int32)
