"""Loop kernels compiled with numba; same contracts as the numpy path."""

import numpy as np
from numba import njit, types
from numba.typed import Dict

OP_MIN, OP_MAX, OP_SUM, OP_MEAN = 0, 1, 2, 3


@njit(cache=True)
def _first_occurrence_ids(keys):
    n = keys.shape[0]
    ids = np.full(n, -1, dtype=np.int64)
    first = np.empty(n, dtype=np.int64)
    seen = Dict.empty(key_type=types.int64, value_type=types.int64)
    v = 0
    for i in range(n):
        k = keys[i]
        if k < 0:
            continue
        j = seen.get(k, -1)
        if j < 0:
            j = v
            seen[k] = j
            first[j] = i
            v += 1
        ids[i] = j
    return ids, first[:v].copy()


def first_occurrence_ids(keys):
    return _first_occurrence_ids(np.ascontiguousarray(keys, dtype=np.int64))


@njit(cache=True)
def _segment_reduce(values, ids, num_segments, op):
    n, d = values.shape
    out = np.zeros((num_segments, d))
    counts = np.zeros(num_segments, dtype=np.int64)
    for i in range(n):
        s = ids[i]
        first = counts[s] == 0
        counts[s] += 1
        for k in range(d):
            x = values[i, k]
            if first:
                out[s, k] = x
            elif op == OP_MIN:
                if x < out[s, k]:
                    out[s, k] = x
            elif op == OP_MAX:
                if x > out[s, k]:
                    out[s, k] = x
            else:
                out[s, k] += x
    for s in range(num_segments):
        if counts[s] == 0:
            if op != OP_SUM:
                out[s, :] = np.nan
        elif op == OP_MEAN:
            for k in range(d):
                out[s, k] /= counts[s]
    return out


def segment_reduce(values, ids, num_segments, op):
    return _segment_reduce(
        np.ascontiguousarray(values, dtype=np.float64),
        np.ascontiguousarray(ids, dtype=np.int64),
        int(num_segments),
        int(op),
    )


@njit(cache=True, inline="always")
def _bilinear_into(fmap, x, y, out):
    h, w, c = fmap.shape
    gx = x - 0.5
    gy = y - 0.5
    if gx < -1.0 or gx > w or gy < -1.0 or gy > h:
        for k in range(c):
            out[k] = 0.0
        return
    gx = min(max(gx, 0.0), w - 1.0)
    gy = min(max(gy, 0.0), h - 1.0)
    x0 = int(gx)
    y0 = int(gy)
    x1 = min(x0 + 1, w - 1)
    y1 = min(y0 + 1, h - 1)
    fx = gx - x0
    fy = gy - y0
    for k in range(c):
        a = fmap[y0, x0, k]
        b = fmap[y0, x1, k]
        cc = fmap[y1, x0, k]
        d = fmap[y1, x1, k]
        out[k] = (1.0 - fy) * ((1.0 - fx) * a + fx * b) + fy * ((1.0 - fx) * cc + fx * d)


@njit(cache=True)
def _bilinear_sample(fmap, xs, ys):
    m = xs.shape[0]
    out = np.empty((m, fmap.shape[2]))
    for i in range(m):
        _bilinear_into(fmap, xs[i], ys[i], out[i])
    return out


def bilinear_sample(fmap, xs, ys):
    xs = np.asarray(xs, dtype=np.float64)
    shape = xs.shape
    out = _bilinear_sample(
        np.ascontiguousarray(fmap, dtype=np.float64),
        np.ascontiguousarray(xs.ravel()),
        np.ascontiguousarray(np.asarray(ys, dtype=np.float64).ravel()),
    )
    return out.reshape(shape + (fmap.shape[2],))


@njit(cache=True)
def _roi_align(fmap, rects, out_size, samples):
    r_count = rects.shape[0]
    c = fmap.shape[2]
    n = out_size * samples
    result = np.empty((r_count, c, out_size, out_size))
    vals = np.empty((n, n, c))
    for r in range(r_count):
        x0 = rects[r, 0]
        y0 = rects[r, 1]
        stepx = (rects[r, 2] - x0) / n
        stepy = (rects[r, 3] - y0) / n
        for i in range(n):
            y = y0 + (i + 0.5) * stepy
            for j in range(n):
                _bilinear_into(fmap, x0 + (j + 0.5) * stepx, y, vals[i, j])
        for k in range(c):
            for bi in range(out_size):
                for bj in range(out_size):
                    acc = 0.0
                    for si in range(samples):
                        for sj in range(samples):
                            acc += vals[bi * samples + si, bj * samples + sj, k]
                    result[r, k, bi, bj] = acc / (samples * samples)
    return result


def roi_align(fmap, rects, out_size, samples):
    return _roi_align(
        np.ascontiguousarray(fmap, dtype=np.float64),
        np.ascontiguousarray(np.asarray(rects, dtype=np.float64).reshape(-1, 4)),
        int(out_size),
        int(samples),
    )


@njit(cache=True)
def _rect_multiplicity(boxes, width, height):
    # corner increments, then a 2-D prefix sum: O(boxes + pixels)
    diff = np.zeros((height + 1, width + 1), dtype=np.int64)
    for b in range(boxes.shape[0]):
        c0, r0, c1, r1 = boxes[b, 0], boxes[b, 1], boxes[b, 2], boxes[b, 3]
        diff[r0, c0] += 1
        diff[r0, c1 + 1] -= 1
        diff[r1 + 1, c0] -= 1
        diff[r1 + 1, c1 + 1] += 1
    out = np.empty((height, width), dtype=np.int32)
    for r in range(height):
        run = 0
        for c in range(width):
            run += diff[r, c]
            above = out[r - 1, c] if r > 0 else 0
            out[r, c] = above + run
    return out


def rect_multiplicity(boxes, width, height):
    boxes = np.ascontiguousarray(np.asarray(boxes, dtype=np.int64).reshape(-1, 4))
    return _rect_multiplicity(boxes, int(width), int(height))
