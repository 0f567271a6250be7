"""Sectioned key-value run configuration.

Missing keys fall back to the Voxel R-CNN profile. Unknown sections or keys
are rejected so typos surface immediately. Relative paths resolve against
the config file's directory.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from pathlib import Path

from .core import VOXEL_RCNN_RANGE, VOXEL_RCNN_VOXEL, DEFAULT_SCALES, RangeSpec, ValidationError, VoxelSpec
from .fusion import DEFAULT_C_I, DEFAULT_C_OUT, DEFAULT_C_V, ConfigError
from .vrgen import DEFAULT_DELTA

KEYS = {
    "range": ("x_min", "y_min", "z_min", "x_max", "y_max", "z_max"),
    "voxel": ("l", "w", "h", "scales"),
    "region": ("delta",),
    "channels": ("c_v", "c_i", "c_out"),
    "paths": ("velodyne_dir", "calib_dir", "feature_dir", "mask_dir", "weights"),
}


@dataclass(frozen=True)
class RunConfig:
    spec: VoxelSpec = field(default_factory=lambda: VoxelSpec(VOXEL_RCNN_VOXEL, DEFAULT_SCALES, VOXEL_RCNN_RANGE))
    delta: float = DEFAULT_DELTA
    c_v: int = DEFAULT_C_V
    c_i: int = DEFAULT_C_I
    c_out: int = DEFAULT_C_OUT
    paths: dict = field(default_factory=dict)

    def path(self, key: str) -> Path | None:
        return self.paths.get(key)

    def require_paths(self, *keys):
        missing = [k for k in keys if self.paths.get(k) is None]
        if missing:
            raise ConfigError(f"config [paths] is missing {', '.join(missing)}")


def _number(parser, section, key, default, kind=float):
    if not parser.has_option(section, key):
        return default
    raw = parser.get(section, key)
    try:
        return kind(raw)
    except ValueError:
        raise ConfigError(f"[{section}] {key} = {raw!r} is not a valid {kind.__name__}") from None


def parse_config(text: str, base_dir: Path | None = None) -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    for section in parser.sections():
        if section not in KEYS:
            raise ConfigError(f"unknown config section [{section}]")
        for key in parser.options(section):
            if key not in KEYS[section]:
                raise ConfigError(f"unknown key {key!r} in [{section}]")

    r = VOXEL_RCNN_RANGE
    bounds = [_number(parser, "range", k, getattr(r, k)) for k in KEYS["range"]]
    size = [_number(parser, "voxel", k, d) for k, d in zip("lwh", VOXEL_RCNN_VOXEL)]
    scales = DEFAULT_SCALES
    if parser.has_option("voxel", "scales"):
        raw = parser.get("voxel", "scales").replace(",", " ").split()
        try:
            scales = tuple(int(s) for s in raw)
        except ValueError:
            raise ConfigError(f"[voxel] scales = {raw!r} must be integers") from None
    try:
        spec = VoxelSpec(tuple(size), scales, RangeSpec(*bounds))
    except ValidationError as exc:
        raise ConfigError(str(exc)) from None

    delta = _number(parser, "region", "delta", DEFAULT_DELTA)
    if delta < 0:
        raise ConfigError(f"[region] delta must be >= 0, got {delta}")
    widths = {k: _number(parser, "channels", k, d, int)
              for k, d in (("c_v", DEFAULT_C_V), ("c_i", DEFAULT_C_I), ("c_out", DEFAULT_C_OUT))}
    if any(v <= 0 for v in widths.values()):
        raise ConfigError(f"[channels] widths must be positive, got {widths}")

    base = Path(base_dir) if base_dir is not None else Path.cwd()
    paths = {}
    for key in KEYS["paths"]:
        value = parser.get("paths", key, fallback="").strip()
        paths[key] = (base / value) if value else None
    return RunConfig(spec, delta, widths["c_v"], widths["c_i"], widths["c_out"], paths)


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    return parse_config(path.read_text(), path.parent)


def config_text(cfg: RunConfig) -> str:
    """Serialize back to the on-disk format (paths written absolute)."""
    r = cfg.spec.range
    lines = ["[range]"] + [f"{k} = {getattr(r, k)!r}" for k in KEYS["range"]]
    l, w, h = cfg.spec.base_size
    lines += ["", "[voxel]", f"l = {l!r}", f"w = {w!r}", f"h = {h!r}",
              "scales = " + " ".join(str(s) for s in cfg.spec.scales)]
    lines += ["", "[region]", f"delta = {cfg.delta!r}"]
    lines += ["", "[channels]", f"c_v = {cfg.c_v}", f"c_i = {cfg.c_i}", f"c_out = {cfg.c_out}"]
    lines += ["", "[paths]"] + [f"{k} = {cfg.paths.get(k) or ''}" for k in KEYS["paths"]]
    return "\n".join(lines) + "\n"
