"""Batch command line.

Exit codes: 0 success, 1 usage or config error, 2 input-format error,
3 internal invariant violation.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import kernels
from .config import RunConfig, load_config
from .core import ValidationError
from .fusion import ConfigError, EncoderWeights, fuse_frame
from .kitti_io import FormatError, load_frame, read_weights, regions_csv_text, write_fused
from .projector import project
from .strategy_bench import compare, make_synthetic_frame, reports_csv_text, write_overlays
from .voxelizer import voxelize

log = logging.getLogger("vrfusion")

EXIT_OK, EXIT_USAGE, EXIT_INPUT, EXIT_INTERNAL = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _exit_code(exc: BaseException) -> int:
    if isinstance(exc, (ConfigError, UsageError)):
        return EXIT_USAGE
    if isinstance(exc, (FormatError, FileNotFoundError, ValidationError, OSError)):
        return EXIT_INPUT
    return EXIT_INTERNAL


def _frame_ids(args) -> list[str]:
    ids = list(args.frame or [])
    if getattr(args, "frame_list", None):
        path = Path(args.frame_list)
        if not path.exists():
            raise UsageError(f"frame list {path} does not exist")
        ids += [line.strip() for line in path.read_text().splitlines() if line.strip()]
    for fid in ids:
        if len(fid) != 6 or not fid.isdigit():
            raise UsageError(f"frame id {fid!r} is not a 6-digit KITTI id")
    if not ids:
        raise UsageError("no frames given; use --frame or --frame-list")
    return ids


def _load(cfg: RunConfig, frame_id: str):
    cfg.require_paths("velodyne_dir", "calib_dir", "feature_dir")
    return load_frame(frame_id, cfg.path("velodyne_dir"), cfg.path("calib_dir"),
                      cfg.path("feature_dir"), cfg.path("mask_dir"))


def resolve_weights(cfg: RunConfig, image_channels: int) -> EncoderWeights:
    """Weights from the configured file, or seeded (seed 0) when none is set."""
    path = cfg.path("weights")
    if path is None:
        return EncoderWeights.seeded(0, cfg.spec.scales, image_channels, cfg.c_v, cfg.c_i, cfg.c_out)
    if not path.exists():
        raise FileNotFoundError(f"weights file {path} does not exist")
    weights = read_weights(path)
    have = (weights.c_v, weights.c_i, weights.c_out)
    want = (cfg.c_v, cfg.c_i, cfg.c_out)
    if have != want:
        raise ConfigError(f"weights {path} have (c_v, c_i, c_out) = {have}, config says {want}")
    if weights.scales != cfg.spec.scales:
        raise ConfigError(f"weights {path} are for scales {weights.scales}, config has {cfg.spec.scales}")
    return weights


def fuse_one(cfg: RunConfig, frame_id: str, out_dir: Path) -> list[Path]:
    frame = _load(cfg, frame_id)
    weights = resolve_weights(cfg, frame.features.channels)
    fused, stages = fuse_frame(frame.cloud, frame.calib, frame.features, cfg.spec, weights, cfg.delta)
    vfus = out_dir / f"{frame_id}.vfus"
    regions = out_dir / f"{frame_id}_regions.csv"
    write_fused(fused, vfus)
    regions.write_text("".join(
        regions_csv_text(stages[s].regions, s, header=(i == 0)) for i, s in enumerate(cfg.spec.scales)
    ))
    return [vfus, regions]


def _fuse_worker(job):
    cfg, frame_id, out_dir = job
    try:
        fuse_one(cfg, frame_id, out_dir)
        return frame_id, EXIT_OK, ""
    except Exception as exc:  # noqa: BLE001 - reported per frame
        return frame_id, _exit_code(exc), f"{type(exc).__name__}: {exc}"


def cmd_fuse(args) -> int:
    cfg = load_config(args.config)
    ids = _frame_ids(args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    jobs = [(cfg, fid, out_dir) for fid in ids]
    if args.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_fuse_worker, jobs))
    else:
        results = [_fuse_worker(j) for j in jobs]
    code = EXIT_OK
    for fid, rc, msg in results:
        if rc:
            print(f"frame {fid}: {msg}", file=sys.stderr)
        else:
            print(f"frame {fid}: ok")
        code = max(code, rc)
    return code


def cmd_compare(args) -> int:
    cfg = load_config(args.config) if args.config else RunConfig()
    if args.synthetic is not None:
        frame = make_synthetic_frame(args.synthetic, args.clusters, args.points)
        prefix = f"synthetic_{args.synthetic}"
    else:
        if args.config is None:
            raise UsageError("compare needs --config unless --synthetic is given")
        (prefix,) = _frame_ids(args)[:1]
        frame = _load(cfg, prefix)
    if args.scale not in cfg.spec.scales:
        raise UsageError(f"--scale {args.scale} not in configured scales {cfg.spec.scales}")
    weights = resolve_weights(cfg, frame.features.channels)
    perturbation = (args.yaw, (args.tx, args.ty, args.tz))
    reports, outputs = compare(frame, cfg.spec, perturbation, weights, args.scale, cfg.delta)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    text = reports_csv_text(reports)
    (out_dir / f"{prefix}_report.csv").write_text(text)
    write_overlays(outputs, frame.calib, out_dir, prefix)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_project(args) -> int:
    cfg = load_config(args.config)
    (fid,) = _frame_ids(args)[:1]
    frame = _load(cfg, fid)
    proj = project(frame.cloud, frame.calib)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["index", "u", "v", "depth"])
    for i, (u, v), d in zip(proj.kept_indices, proj.pixels, proj.depth):
        writer.writerow([int(i), repr(float(u)), repr(float(v)), repr(float(d))])
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / f"{fid}_projected.csv").write_text(buf.getvalue())
    print(f"frame {fid}: {len(proj)} of {len(frame.cloud)} points in view")
    return EXIT_OK


VOXEL_STATS_FIELDS = ("scale", "in_range_points", "voxels", "total_count", "max_count", "mean_count")


def cmd_voxelize(args) -> int:
    cfg = load_config(args.config)
    (fid,) = _frame_ids(args)[:1]
    frame = _load(cfg, fid)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(VOXEL_STATS_FIELDS)
    for s in cfg.spec.scales:
        asg = voxelize(frame.cloud, cfg.spec, s)
        counts = asg.count_per_voxel
        writer.writerow([
            s, int(np.count_nonzero(asg.in_range)), asg.num_voxels, int(counts.sum()),
            int(counts.max()) if counts.size else 0,
            repr(float(counts.mean())) if counts.size else "0.0",
        ])
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / f"{fid}_voxels.csv").write_text(buf.getvalue())
    sys.stdout.write(buf.getvalue())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="vrfusion", description="Voxel-region LiDAR/camera fusion front end")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def frames(p, many=False):
        p.add_argument("--config", required=True)
        p.add_argument("--frame", action="append", help="6-digit frame id")
        if many:
            p.add_argument("--frame-list", help="file with one frame id per line")
        p.add_argument("--out", required=True)

    p = sub.add_parser("fuse", help="fused voxel/BEV features and region CSV per frame")
    frames(p, many=True)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("compare", help="compare the four fusion strategies on one frame")
    p.add_argument("--config")
    p.add_argument("--frame", action="append")
    p.add_argument("--out", required=True)
    p.add_argument("--synthetic", type=int, metavar="SEED", help="use a generated frame instead of files")
    p.add_argument("--clusters", type=int, default=3)
    p.add_argument("--points", type=int, default=200)
    p.add_argument("--scale", type=int, default=1)
    p.add_argument("--yaw", type=float, default=0.5, help="calibration yaw error, degrees")
    p.add_argument("--tx", type=float, default=0.05)
    p.add_argument("--ty", type=float, default=0.0)
    p.add_argument("--tz", type=float, default=0.0)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("project", help="dump projected points")
    frames(p)
    p.set_defaults(func=cmd_project)

    p = sub.add_parser("voxelize", help="dump per-scale voxel statistics")
    frames(p)
    p.set_defaults(func=cmd_voxelize)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    log.debug("kernel backend: %s", kernels.BACKEND)
    try:
        return args.func(args)
    except Exception as exc:  # noqa: BLE001 - mapped to exit codes
        print(f"vrfusion {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return _exit_code(exc)


if __name__ == "__main__":
    sys.exit(main())
