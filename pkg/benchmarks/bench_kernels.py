"""Time every kernel on both backends and check they agree.

Usage: python3 benchmarks/bench_kernels.py [--points N] [--repeat R]

Each kernel runs once untimed (numba compiles or loads its cache), then
``repeat`` times; the best wall time is reported.
"""

import argparse
import time

import numpy as np

from vrfusion import kernels


def best_of(fn, repeat):
    fn()
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def cases(n, rng):
    keys = rng.integers(0, n // 8, n)
    keys[rng.random(n) < 0.05] = -1
    ids = rng.integers(0, n // 8, n)
    vals = rng.normal(size=(n, 8))
    fmap = rng.normal(size=(94, 311, 4))
    xs = rng.uniform(0, 311, n)
    ys = rng.uniform(0, 94, n)
    lo = rng.uniform(0, 290, (n // 100, 2)) * [1, 0.28]
    rects = np.hstack([lo, lo + rng.uniform(0.1, 12, lo.shape)])
    corners = np.sort(rng.integers(0, 375, (n // 10, 2, 2)), axis=1)
    boxes = corners.reshape(-1, 4)  # (c0, r0, c1, r1) after sorting each axis
    return {
        "first_occurrence_ids": lambda m: m.first_occurrence_ids(keys),
        "segment_reduce(max)": lambda m: m.segment_reduce(vals, ids, n // 8, kernels.OP_MAX),
        "segment_reduce(mean)": lambda m: m.segment_reduce(vals, ids, n // 8, kernels.OP_MEAN),
        "bilinear_sample": lambda m: m.bilinear_sample(fmap, xs, ys),
        "roi_align": lambda m: m.roi_align(fmap, rects, 7, 2),
        "rect_multiplicity": lambda m: m.rect_multiplicity(boxes, 375, 375),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--points", type=int, default=1_000_000)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)

    backends = {name: kernels.get_backend(name) for name in kernels.BACKENDS}
    rng = np.random.default_rng(0)
    print(f"{'kernel':<24}{'numpy s':>10}{'numba s':>10}{'speedup':>9}  agree")
    for name, run in cases(args.points, rng).items():
        t = {b: best_of(lambda: run(m), args.repeat) for b, m in backends.items()}
        a, b = run(backends["numpy"]), run(backends["numba"])
        a, b = (a if isinstance(a, tuple) else (a,)), (b if isinstance(b, tuple) else (b,))
        agree = all(np.allclose(x, y, rtol=0, atol=1e-12, equal_nan=True) for x, y in zip(a, b))
        print(f"{name:<24}{t['numpy']:>10.4f}{t['numba']:>10.4f}{t['numpy'] / t['numba']:>8.1f}x  {agree}")


if __name__ == "__main__":
    main()
