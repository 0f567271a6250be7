"""Shared scene builders for the tests."""

import numpy as np

from vrfusion.core import PointCloud
from vrfusion.strategy_bench import kitti_calibration


def random_cloud(rng, n, spec, margin=0.0):
    """Uniform points inside ``spec.range`` with random intensity."""
    lo = spec.range.mins + margin
    hi = spec.range.maxs - margin
    xyz = rng.uniform(lo, hi, (n, 3))
    return PointCloud(np.hstack([xyz, rng.uniform(0, 1, (n, 1))]))


def visible_cloud(rng, n, spec, calib=None):
    """Points in range that also land in the image of ``calib`` (KITTI by default)."""
    from vrfusion.projector import to_pixels, fov_mask

    calib = calib or kitti_calibration()
    keep = []
    while sum(len(k) for k in keep) < n:
        c = random_cloud(rng, 4 * n, spec)
        uv, w = to_pixels(c.xyz, calib)
        keep.append(c.points[fov_mask(uv, w, calib)])
    return PointCloud(np.concatenate(keep)[:n]), calib


def clustered_cloud(rng, n_voxels, per_voxel, spec, calib=None):
    """Visible points grouped so that roughly ``n_voxels`` scale-1 voxels are occupied."""
    from vrfusion.projector import to_pixels, fov_mask

    calib = calib or kitti_calibration()
    cell = spec.cell_size(1)
    pts = []
    while len(pts) < n_voxels:
        corner = rng.uniform(spec.range.mins, spec.range.maxs - cell)
        corner = spec.range.mins + np.floor((corner - spec.range.mins) / cell) * cell
        xyz = corner + rng.uniform(0.05, 0.95, (per_voxel, 3)) * cell
        uv, w = to_pixels(xyz, calib)
        if fov_mask(uv, w, calib).all():
            pts.append(np.hstack([xyz, rng.uniform(0, 1, (per_voxel, 1))]))
    return PointCloud(np.concatenate(pts)), calib


# -- randomized write/read round trips, each returning True on a bit-exact match


def roundtrip_fmap(rng, tmp_path):
    from vrfusion.core import FeatureTensor
    from vrfusion.kitti_io import feature_map_bytes, read_feature_map, write_feature_map

    h, w, c = rng.integers(1, 9, 3)
    data = rng.normal(size=(h, w, c)).astype(np.float32)
    ft = FeatureTensor(data, float(np.float32(rng.uniform(1, 8))))
    path = tmp_path / "x.fmap"
    write_feature_map(ft, path)
    back = read_feature_map(path)
    return path.read_bytes() == feature_map_bytes(back) and np.array_equal(back.data, data) and back.stride == ft.stride


def roundtrip_weights(rng, tmp_path):
    from vrfusion.fusion import EncoderWeights
    from vrfusion.kitti_io import read_weights, weights_bytes, write_weights

    scales = (1,) + tuple(sorted(rng.choice(np.arange(2, 9), rng.integers(0, 3), replace=False).tolist()))
    w = EncoderWeights.seeded(int(rng.integers(2**31)), scales, int(rng.integers(1, 5)),
                              int(rng.integers(1, 9)), int(rng.integers(1, 9)), int(rng.integers(1, 9)))
    path = tmp_path / "x.wgts"
    write_weights(w, path)
    back = read_weights(path)
    same = all(
        all(np.array_equal(getattr(a, f), getattr(b, f)) for f in ("weight", "bias", "bn_scale", "bn_shift",
                                                                     "running_mean", "running_var")) and a.eps == b.eps
        for a, b in zip(w.layers(), back.layers())
    )
    return same and back.scales == scales and weights_bytes(back) == path.read_bytes()


def roundtrip_fused(rng, tmp_path):
    from vrfusion.kitti_io import fused_bytes, parse_fused

    v, c, x, y = rng.integers(0, 7, 4)
    per_voxel = rng.normal(size=(v, c)).astype(np.float32)
    bev = rng.normal(size=(x, y, c)).astype(np.float32)
    raw = fused_bytes(per_voxel, bev)
    path = tmp_path / "x.vfus"
    path.write_bytes(raw)
    from vrfusion.kitti_io import read_fused
    pv, b = read_fused(path)
    return np.array_equal(pv, per_voxel) and np.array_equal(b, bev) and fused_bytes(pv, b) == raw and \
        parse_fused(raw)[0].shape == (v, c)


def roundtrip_regions(rng, tmp_path):
    from vrfusion.core import RegionSet
    from vrfusion.kitti_io import read_regions_csv, regions_csv_text, write_regions_csv

    n = int(rng.integers(0, 6))
    lo = np.round(rng.uniform(0, 1000, (n, 2)), 6)
    rects = np.hstack([lo, np.round(lo + rng.uniform(0, 50, (n, 2)), 6)])
    alphas = np.round(rng.uniform(1, 2, n), 6)
    rs = RegionSet(rng.integers(0, 10**6, n), rects, alphas, rng.integers(1, 100, n))
    scale = int(rng.choice([1, 4, 8]))
    path = tmp_path / "x.csv"
    write_regions_csv(rs, scale, path)
    back = read_regions_csv(path)
    ok = [s for s, _ in back] == [scale] * n
    ok &= [r.rect for _, r in back] == [tuple(r) for r in rects.tolist()]
    ok &= [r.alpha for _, r in back] == alphas.tolist()
    ok &= [(r.voxel_id, r.n_points) for _, r in back] == list(zip(rs.voxel_ids.tolist(), rs.n_points.tolist()))
    return bool(ok) and regions_csv_text([r for _, r in back], scale) == path.read_text()


def roundtrip_pnm(rng, tmp_path):
    from vrfusion.kitti_io import read_pgm, read_ppm, write_pgm, write_ppm

    h, w = rng.integers(1, 30, 2)
    gray = rng.integers(0, 256, (h, w)).astype(np.uint8)
    rgb = rng.integers(0, 256, (h, w, 3)).astype(np.uint8)
    write_pgm(gray, tmp_path / "x.pgm")
    write_ppm(rgb, tmp_path / "x.ppm")
    g, c = read_pgm(tmp_path / "x.pgm"), read_ppm(tmp_path / "x.ppm")
    raw_g, raw_c = (tmp_path / "x.pgm").read_bytes(), (tmp_path / "x.ppm").read_bytes()
    write_pgm(g, tmp_path / "y.pgm")
    write_ppm(c, tmp_path / "y.ppm")
    return (np.array_equal(g, gray) and np.array_equal(c, rgb)
            and (tmp_path / "y.pgm").read_bytes() == raw_g and (tmp_path / "y.ppm").read_bytes() == raw_c)


ROUNDTRIPS = {
    "FMAP": roundtrip_fmap,
    "WGTS": roundtrip_weights,
    "VFUS": roundtrip_fused,
    "regions CSV": roundtrip_regions,
    "PPM/PGM": roundtrip_pnm,
}
