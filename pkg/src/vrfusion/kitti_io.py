"""Readers and writers for every on-disk format the pipeline touches.

Binary formats are little-endian throughout:

* velodyne ``.bin``: float32 quadruples (x, y, z, intensity)
* ``FMAP`` feature map: magic, version u32, H, W, C u32, stride f32,
  then H*W*C float32 in (row, col, channel) order
* ``WGTS`` encoder weights: magic, version u32, n_scales u32, the scales
  as u32, n_layers u32, then per layer out u32, in u32, eps f32 and the
  float32 payloads weight, bias, bn_scale, bn_shift, running_mean,
  running_var
* ``VFUS`` fused output: magic, version u32, V, C, X, Y u32, then the
  V*C voxel features and the X*Y*C BEV grid, float32

Masks are binary PGM (P5, nonzero = foreground); overlays are PPM (P6).
KITTI calib files carry no image size, so a one-line ``width height``
sidecar named ``<frame>.size`` sits next to each calib file.
"""

from __future__ import annotations

import csv
import io
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import Calibration, FeatureTensor, PointCloud, RegionSet, ValidationError, VoxelRegion
from .fusion import EncoderWeights, FusedFeatures, LayerWeights
from .raster import multiplicity

VERSION = 1
FMAP_HEADER = struct.Struct("<4sIIIIf")
VFUS_HEADER = struct.Struct("<4sIIIII")
REGION_FIELDS = ("voxel_id", "scale", "x_min", "y_min", "x_max", "y_max", "alpha", "n_points")

OVERLAY_RED = np.array([139.0, 0.0, 0.0])
OVERLAY_STEP = 0.35


class FormatError(ValueError):
    """Malformed file content; the message says where."""


@dataclass(frozen=True, eq=False)
class FrameBundle:
    cloud: PointCloud
    calib: Calibration
    features: FeatureTensor
    mask: np.ndarray | None = None

    def __post_init__(self):
        w, h = self.calib.image_dims
        if not self.features.covers(w, h):
            raise ValidationError(
                f"feature map {self.features.width}x{self.features.height} at stride {self.features.stride} "
                f"does not cover a {w}x{h} image"
            )
        if self.mask is not None:
            mask = np.asarray(self.mask, dtype=bool)
            if mask.shape != (h, w):
                raise ValidationError(f"mask shape {mask.shape} != image ({h}, {w})")
            mask = mask.copy()
            mask.setflags(write=False)
            object.__setattr__(self, "mask", mask)


# -- velodyne -----------------------------------------------------------------

def read_velodyne(path) -> PointCloud:
    raw = Path(path).read_bytes()
    if len(raw) % 16:
        raise FormatError(f"{path}: truncated record at byte offset {len(raw) - len(raw) % 16} "
                          f"(file length {len(raw)} not a multiple of 16)")
    pts = np.frombuffer(raw, dtype="<f4").reshape(-1, 4)
    finite = np.all(np.isfinite(pts), axis=1)
    if not np.all(finite):
        raise FormatError(f"{path}: non-finite value at point index {int(np.flatnonzero(~finite)[0])}")
    return PointCloud(pts.astype(np.float64))


def write_velodyne(cloud: PointCloud, path):
    Path(path).write_bytes(np.ascontiguousarray(cloud.points, dtype="<f4").tobytes())


# -- calibration --------------------------------------------------------------

_CALIB_SIZES = {"P2": 12, "R0_rect": 9, "Tr_velo_to_cam": 12}


def _homogenize(m: np.ndarray) -> np.ndarray:
    out = np.eye(4)
    out[: m.shape[0], : m.shape[1]] = m
    return out


def size_sidecar(calib_path) -> Path:
    return Path(calib_path).with_suffix(".size")


def read_image_size(path) -> tuple[int, int]:
    tokens = Path(path).read_text().split()
    try:
        w, h = (int(t) for t in tokens)
    except ValueError:
        raise FormatError(f"{path}: expected 'width height', got {' '.join(tokens)!r}") from None
    if w <= 0 or h <= 0:
        raise FormatError(f"{path}: image size must be positive, got {w}x{h}")
    return w, h


def write_image_size(path, width: int, height: int):
    Path(path).write_text(f"{width} {height}\n")


def read_calib(path, image_dims: tuple[int, int] | None = None) -> Calibration:
    """P2 becomes the intrinsics; R0_rect @ Tr_velo_to_cam the extrinsics."""
    path = Path(path)
    raw: dict[str, np.ndarray] = {}
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        if ":" not in line:
            raise FormatError(f"{path}:{lineno}: expected 'key: values'")
        key, value = line.split(":", 1)
        try:
            raw[key.strip()] = np.array([float(x) for x in value.split()])
        except ValueError:
            raise FormatError(f"{path}:{lineno}: non-numeric value for {key.strip()}") from None
    for key, size in _CALIB_SIZES.items():
        if key not in raw:
            raise FormatError(f"{path}: missing key {key}")
        if raw[key].size != size:
            raise FormatError(f"{path}: {key} has {raw[key].size} values, expected {size}")
    if image_dims is None:
        sidecar = size_sidecar(path)
        if not sidecar.exists():
            raise FileNotFoundError(f"{sidecar}: image size sidecar missing for {path}")
        image_dims = read_image_size(sidecar)
    m_tran = _homogenize(raw["R0_rect"].reshape(3, 3)) @ _homogenize(raw["Tr_velo_to_cam"].reshape(3, 4))
    return Calibration(raw["P2"].reshape(3, 4), m_tran, *image_dims)


def write_calib(path, p2, r0_rect=None, tr_velo_to_cam=None, image_dims=None):
    """Write a KITTI-style calib file (plus the size sidecar if dims are given)."""
    p2 = np.asarray(p2, dtype=np.float64).reshape(3, 4)
    r0 = np.eye(3) if r0_rect is None else np.asarray(r0_rect, dtype=np.float64).reshape(3, 3)
    tr = np.eye(4)[:3] if tr_velo_to_cam is None else np.asarray(tr_velo_to_cam, dtype=np.float64).reshape(3, 4)

    def row(key, m):
        return key + ": " + " ".join(repr(float(v)) for v in np.ravel(m)) + "\n"

    text = row("P0", p2) + row("P1", p2) + row("P2", p2) + row("P3", p2)
    text += row("R0_rect", r0) + row("Tr_velo_to_cam", tr) + row("Tr_imu_to_velo", np.eye(4)[:3])
    Path(path).write_text(text)
    if image_dims is not None:
        write_image_size(size_sidecar(path), *image_dims)


# -- feature maps -------------------------------------------------------------

def feature_map_bytes(fmap: FeatureTensor) -> bytes:
    h, w, c = fmap.data.shape
    return FMAP_HEADER.pack(b"FMAP", VERSION, h, w, c, fmap.stride) + np.ascontiguousarray(fmap.data, dtype="<f4").tobytes()


def parse_feature_map(raw: bytes, where="<bytes>") -> FeatureTensor:
    if len(raw) < FMAP_HEADER.size:
        raise FormatError(f"{where}: {len(raw)} bytes is shorter than the {FMAP_HEADER.size}-byte header")
    magic, version, h, w, c, stride = FMAP_HEADER.unpack_from(raw)
    if magic != b"FMAP":
        raise FormatError(f"{where}: bad magic {magic!r} at byte 0")
    if version != VERSION:
        raise FormatError(f"{where}: unsupported version {version} at byte 4")
    expected = FMAP_HEADER.size + 4 * h * w * c
    if len(raw) != expected:
        raise FormatError(f"{where}: payload length mismatch, expected {expected} bytes, got {len(raw)}")
    data = np.frombuffer(raw, dtype="<f4", offset=FMAP_HEADER.size).reshape(h, w, c)
    if not np.all(np.isfinite(data)):
        bad = int(np.flatnonzero(~np.isfinite(data.ravel()))[0])
        raise FormatError(f"{where}: non-finite value at element {bad}")
    return FeatureTensor(data.astype(np.float64), float(stride))


def read_feature_map(path) -> FeatureTensor:
    return parse_feature_map(Path(path).read_bytes(), path)


def write_feature_map(fmap: FeatureTensor, path):
    Path(path).write_bytes(feature_map_bytes(fmap))


# -- encoder weights ----------------------------------------------------------

def weights_bytes(weights: EncoderWeights) -> bytes:
    out = io.BytesIO()
    out.write(struct.pack("<4sII", b"WGTS", VERSION, len(weights.scales)))
    out.write(struct.pack(f"<{len(weights.scales)}I", *weights.scales))
    layers = weights.layers()
    out.write(struct.pack("<I", len(layers)))
    for layer in layers:
        out.write(struct.pack("<IIf", layer.out_dim, layer.in_dim, layer.eps))
        for arr in (layer.weight, layer.bias, layer.bn_scale, layer.bn_shift, layer.running_mean, layer.running_var):
            out.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return out.getvalue()


class _Cursor:
    def __init__(self, raw: bytes, where):
        self.raw, self.pos, self.where = raw, 0, where

    def take(self, fmt: str):
        size = struct.calcsize(fmt)
        if self.pos + size > len(self.raw):
            raise FormatError(f"{self.where}: truncated at byte {self.pos}, need {size} more bytes")
        vals = struct.unpack_from(fmt, self.raw, self.pos)
        self.pos += size
        return vals

    def floats(self, count: int, shape) -> np.ndarray:
        if self.pos + 4 * count > len(self.raw):
            raise FormatError(f"{self.where}: truncated payload at byte {self.pos}")
        arr = np.frombuffer(self.raw, dtype="<f4", count=count, offset=self.pos).reshape(shape)
        self.pos += 4 * count
        return arr.astype(np.float64)


def parse_weights(raw: bytes, where="<bytes>") -> EncoderWeights:
    cur = _Cursor(raw, where)
    magic, version, n_scales = cur.take("<4sII")
    if magic != b"WGTS":
        raise FormatError(f"{where}: bad magic {magic!r} at byte 0")
    if version != VERSION:
        raise FormatError(f"{where}: unsupported version {version} at byte 4")
    scales = cur.take(f"<{n_scales}I")
    (n_layers,) = cur.take("<I")
    if n_layers != 2 * n_scales + 1:
        raise FormatError(f"{where}: {n_layers} layers for {n_scales} scales, expected {2 * n_scales + 1}")
    layers = []
    for i in range(n_layers):
        out_dim, in_dim, eps = cur.take("<IIf")
        parts = [cur.floats(out_dim * in_dim, (out_dim, in_dim))] + [cur.floats(out_dim, (out_dim,)) for _ in range(5)]
        try:
            layers.append(LayerWeights(*parts, eps=float(eps)))
        except ValidationError as exc:
            raise FormatError(f"{where}: layer {i}: {exc}") from None
    if cur.pos != len(raw):
        raise FormatError(f"{where}: {len(raw) - cur.pos} trailing bytes after byte {cur.pos}")
    voxel = {s: layers[2 * k] for k, s in enumerate(scales)}
    image = {s: layers[2 * k + 1] for k, s in enumerate(scales)}
    return EncoderWeights(tuple(scales), voxel, image, layers[-1])


def read_weights(path) -> EncoderWeights:
    return parse_weights(Path(path).read_bytes(), path)


def write_weights(weights: EncoderWeights, path):
    Path(path).write_bytes(weights_bytes(weights))


# -- fused output -------------------------------------------------------------

def fused_bytes(per_voxel: np.ndarray, bev: np.ndarray) -> bytes:
    v, c = per_voxel.shape
    x, y, cb = bev.shape
    if cb != c:
        raise ValueError(f"voxel features have {c} channels, BEV has {cb}")
    head = VFUS_HEADER.pack(b"VFUS", VERSION, v, c, x, y)
    return head + np.ascontiguousarray(per_voxel, dtype="<f4").tobytes() + np.ascontiguousarray(bev, dtype="<f4").tobytes()


def parse_fused(raw: bytes, where="<bytes>") -> tuple[np.ndarray, np.ndarray]:
    """Returns ``(per_voxel, bev)`` as float32 arrays."""
    if len(raw) < VFUS_HEADER.size:
        raise FormatError(f"{where}: {len(raw)} bytes is shorter than the {VFUS_HEADER.size}-byte header")
    magic, version, v, c, x, y = VFUS_HEADER.unpack_from(raw)
    if magic != b"VFUS":
        raise FormatError(f"{where}: bad magic {magic!r} at byte 0")
    if version != VERSION:
        raise FormatError(f"{where}: unsupported version {version} at byte 4")
    expected = VFUS_HEADER.size + 4 * (v * c + x * y * c)
    if len(raw) != expected:
        raise FormatError(f"{where}: payload length mismatch, expected {expected} bytes, got {len(raw)}")
    off = VFUS_HEADER.size
    per_voxel = np.frombuffer(raw, dtype="<f4", count=v * c, offset=off).reshape(v, c)
    bev = np.frombuffer(raw, dtype="<f4", offset=off + 4 * v * c).reshape(x, y, c)
    return per_voxel.astype(np.float32), bev.astype(np.float32)


def write_fused(fused: FusedFeatures, path):
    Path(path).write_bytes(fused_bytes(fused.per_voxel, fused.bev))


def read_fused(path) -> tuple[np.ndarray, np.ndarray]:
    return parse_fused(Path(path).read_bytes(), path)


# -- regions CSV --------------------------------------------------------------

def regions_csv_text(regions, scale: int, header: bool = True) -> str:
    regions = RegionSet.from_regions(regions)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    if header:
        writer.writerow(REGION_FIELDS)
    for vid, rect, alpha, n in zip(regions.voxel_ids, regions.rects, regions.alphas, regions.n_points):
        writer.writerow([int(vid), int(scale), *(f"{v:.6f}" for v in rect), f"{alpha:.6f}", int(n)])
    return buf.getvalue()


def write_regions_csv(regions, scale: int, path):
    Path(path).write_text(regions_csv_text(regions, scale))


def read_regions_csv(path) -> list[tuple[int, VoxelRegion]]:
    """Rows as ``(scale, region)`` pairs."""
    out = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if tuple(header or ()) != REGION_FIELDS:
            raise FormatError(f"{path}: header {header} != {list(REGION_FIELDS)}")
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(REGION_FIELDS):
                raise FormatError(f"{path}:{lineno}: {len(row)} fields, expected {len(REGION_FIELDS)}")
            try:
                vid, scale, *rect, alpha, n = row
                region = VoxelRegion(int(vid), tuple(float(v) for v in rect), float(alpha), int(n))
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from None
            out.append((int(scale), region))
    return out


# -- PGM / PPM ----------------------------------------------------------------

def _pnm_header(raw: bytes, magic: bytes, where) -> tuple[int, int, int]:
    """Parse a netpbm header; returns (width, height, payload offset)."""
    if raw[:2] != magic:
        raise FormatError(f"{where}: bad magic {raw[:2]!r} at byte 0, expected {magic!r}")
    tokens, pos = [], 2
    while len(tokens) < 3:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if pos < len(raw) and raw[pos:pos + 1] == b"#":
            while pos < len(raw) and raw[pos:pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError(f"{where}: truncated header at byte {pos}")
        try:
            tokens.append(int(raw[start:pos]))
        except ValueError:
            raise FormatError(f"{where}: non-integer header field at byte {start}") from None
    w, h, maxval = tokens
    if maxval != 255:
        raise FormatError(f"{where}: maxval {maxval} unsupported, expected 255")
    return w, h, pos + 1


def write_pgm(mask, path):
    img = np.asarray(mask)
    img = np.where(img.astype(bool), 255, 0).astype(np.uint8) if img.dtype == bool else img.astype(np.uint8)
    h, w = img.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode() + img.tobytes())


def read_pgm(path) -> np.ndarray:
    """Raw 8-bit gray levels, shape (H, W)."""
    raw = Path(path).read_bytes()
    w, h, off = _pnm_header(raw, b"P5", path)
    if len(raw) - off != w * h:
        raise FormatError(f"{path}: payload length mismatch, expected {w * h} bytes, got {len(raw) - off}")
    return np.frombuffer(raw, dtype=np.uint8, offset=off).reshape(h, w).copy()


def read_mask(path) -> np.ndarray:
    return read_pgm(path) != 0


def write_ppm(rgb, path):
    img = np.asarray(rgb, dtype=np.uint8)
    h, w, _ = img.shape
    Path(path).write_bytes(f"P6\n{w} {h}\n255\n".encode() + np.ascontiguousarray(img).tobytes())


def read_ppm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    w, h, off = _pnm_header(raw, b"P6", path)
    if len(raw) - off != 3 * w * h:
        raise FormatError(f"{path}: payload length mismatch, expected {3 * w * h} bytes, got {len(raw) - off}")
    return np.frombuffer(raw, dtype=np.uint8, offset=off).reshape(h, w, 3).copy()


def blend_overlay(canvas: np.ndarray, counts: np.ndarray) -> np.ndarray:
    """Blend each pixel toward dark red once per covering region."""
    base = np.asarray(canvas, dtype=np.float64)
    keep = (1.0 - OVERLAY_STEP) ** counts.astype(np.float64)
    out = OVERLAY_RED + keep[..., None] * (base - OVERLAY_RED)
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)


def write_overlay_ppm(canvas, regions, path, image_dims: tuple[int, int] | None = None):
    """Render region footprints over ``canvas`` (or a white canvas of ``image_dims``).

    ``regions`` may be a RegionSet, a list of VoxelRegion or an (R, 4) rect array.
    """
    if canvas is None:
        if image_dims is None:
            raise ValueError("need a canvas or image_dims")
        w, h = image_dims
        canvas = np.full((h, w, 3), 255, dtype=np.uint8)
    canvas = np.asarray(canvas, dtype=np.uint8)
    h, w = canvas.shape[:2]
    if isinstance(regions, np.ndarray):
        rects = regions.reshape(-1, 4)
    else:
        rects = RegionSet.from_regions(regions).rects
    write_ppm(blend_overlay(canvas, multiplicity(rects, w, h)), path)


# -- frames -------------------------------------------------------------------

def frame_paths(frame_id: str, velodyne_dir, calib_dir, feature_dir, mask_dir=None) -> dict[str, Path | None]:
    return {
        "velodyne": Path(velodyne_dir) / f"{frame_id}.bin",
        "calib": Path(calib_dir) / f"{frame_id}.txt",
        "features": Path(feature_dir) / f"{frame_id}.fmap",
        "mask": Path(mask_dir) / f"{frame_id}.pgm" if mask_dir else None,
    }


def load_frame(frame_id: str, velodyne_dir, calib_dir, feature_dir, mask_dir=None) -> FrameBundle:
    paths = frame_paths(frame_id, velodyne_dir, calib_dir, feature_dir, mask_dir)
    for key in ("velodyne", "calib", "features"):
        if not paths[key].exists():
            raise FileNotFoundError(f"frame {frame_id}: missing {key} file {paths[key]}")
    mask = read_mask(paths["mask"]) if paths["mask"] is not None and paths["mask"].exists() else None
    return FrameBundle(
        read_velodyne(paths["velodyne"]),
        read_calib(paths["calib"]),
        read_feature_map(paths["features"]),
        mask,
    )


def save_frame(frame: FrameBundle, frame_id: str, velodyne_dir, calib_dir, feature_dir, mask_dir=None):
    """Write a bundle in the on-disk layout ``load_frame`` expects.

    The extrinsics are written as ``Tr_velo_to_cam`` with an identity
    ``R0_rect``.
    """
    paths = frame_paths(frame_id, velodyne_dir, calib_dir, feature_dir, mask_dir)
    for p in paths.values():
        if p is not None:
            p.parent.mkdir(parents=True, exist_ok=True)
    write_velodyne(frame.cloud, paths["velodyne"])
    write_calib(paths["calib"], frame.calib.m_intr, np.eye(3), frame.calib.m_tran[:3], frame.calib.image_dims)
    write_feature_map(frame.features, paths["features"])
    if paths["mask"] is not None and frame.mask is not None:
        write_pgm(frame.mask, paths["mask"])
