"""Point, voxel and image-region feature extraction and fusion.

Per scale the fused point feature is

    F_fuse = F_P | gather(F_V) | gather(F_I)

with F_P the raw point plus its offset from the voxel mean, F_V a
linear-BN-ReLU-max encoder over the points of each voxel, and F_I a
linear-BN-ReLU head over the RoI-aligned 7x7 patch of the image feature
map under the voxel's region. Scales are concatenated point-wise, pooled
back to scale-1 voxels with one more linear-BN-ReLU-max layer, and the
voxel features are scattered to a BEV grid.

All layers run in inference mode; nothing here trains.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .core import Calibration, FeatureTensor, PointCloud, RegionSet, ValidationError, VoxelSpec, _frozen
from .projector import ProjectedCloud, project
from .voxelizer import VoxelAssignment, gather, scatter_reduce, voxelize
from .vrgen import DEFAULT_DELTA, voxel_regions

POOL_SIZE = 7
POOL_SAMPLES = 2
MIN_EXTENT = 1e-3
POINT_CHANNELS = 7

DEFAULT_C_V = 64
DEFAULT_C_I = 16
DEFAULT_C_OUT = 128


class ConfigError(ValueError):
    """Weights, channel widths or scales do not fit together."""


@dataclass(frozen=True, eq=False)
class LayerWeights:
    """Linear layer followed by inference-mode batch norm and ReLU."""

    weight: np.ndarray
    bias: np.ndarray
    bn_scale: np.ndarray
    bn_shift: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    eps: float = 1e-3

    def __post_init__(self):
        w = _frozen(self.weight, name="weight")
        if w.ndim != 2:
            raise ValidationError(f"weight must be 2-D, got shape {w.shape}")
        out = w.shape[0]
        vecs = {}
        for name in ("bias", "bn_scale", "bn_shift", "running_mean", "running_var"):
            vecs[name] = _frozen(getattr(self, name), shape=(out,), name=name)
        arrays = [w, *vecs.values()]
        if not all(np.all(np.isfinite(a)) for a in arrays) or not np.isfinite(self.eps):
            raise ValidationError("layer weights must be finite")
        if np.any(vecs["running_var"] <= 0):
            raise ValidationError("running variance must be positive")
        if self.eps < 0:
            raise ValidationError("eps must be non-negative")
        object.__setattr__(self, "weight", w)
        for name, val in vecs.items():
            object.__setattr__(self, name, val)
        object.__setattr__(self, "eps", float(self.eps))

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.in_dim:
            raise ConfigError(f"layer expects {self.in_dim} input channels, got {x.shape[-1]}")
        y = x @ self.weight.T + self.bias
        y = (y - self.running_mean) / np.sqrt(self.running_var + self.eps) * self.bn_scale + self.bn_shift
        return np.maximum(y, 0.0)

    @classmethod
    def seeded(cls, rng: np.random.Generator, in_dim: int, out_dim: int) -> "LayerWeights":
        # values pass through float32 so a WGTS round trip is lossless
        def f32(a):
            return np.asarray(a, dtype=np.float32).astype(np.float64)

        return cls(
            weight=f32(rng.normal(0.0, 1.0 / np.sqrt(in_dim), (out_dim, in_dim))),
            bias=f32(rng.normal(0.0, 0.1, out_dim)),
            bn_scale=f32(rng.uniform(0.5, 1.5, out_dim)),
            bn_shift=f32(rng.normal(0.0, 0.1, out_dim)),
            running_mean=f32(rng.normal(0.0, 0.1, out_dim)),
            running_var=f32(rng.uniform(0.5, 1.5, out_dim)),
            eps=float(np.float32(1e-3)),
        )

    @classmethod
    def identity(cls, dim: int) -> "LayerWeights":
        """Transparent layer: ``ReLU(x)``."""
        return cls(np.eye(dim), np.zeros(dim), np.ones(dim), np.zeros(dim), np.zeros(dim), np.ones(dim), 0.0)


@dataclass(frozen=True, eq=False)
class EncoderWeights:
    """One voxel encoder and one image head per scale, plus the final pooling layer."""

    scales: tuple[int, ...]
    voxel: dict[int, LayerWeights]
    image: dict[int, LayerWeights]
    final: LayerWeights

    def __post_init__(self):
        scales = tuple(int(s) for s in self.scales)
        object.__setattr__(self, "scales", scales)
        if set(self.voxel) != set(scales) or set(self.image) != set(scales):
            raise ConfigError(f"need one voxel encoder and one image head per scale {scales}")
        c_v = {self.voxel[s].out_dim for s in scales}
        c_i = {self.image[s].out_dim for s in scales}
        img_in = {self.image[s].in_dim for s in scales}
        if len(c_v) != 1 or len(c_i) != 1 or len(img_in) != 1:
            raise ConfigError("all scales must share channel widths")
        if any(self.voxel[s].in_dim != POINT_CHANNELS for s in scales):
            raise ConfigError(f"voxel encoders must take {POINT_CHANNELS} point channels")
        if img_in.pop() % (POOL_SIZE * POOL_SIZE):
            raise ConfigError(f"image head input is not a multiple of {POOL_SIZE * POOL_SIZE}")
        if self.final.in_dim != len(scales) * self.fuse_width:
            raise ConfigError(f"final layer takes {self.final.in_dim} channels, fused width is {len(scales) * self.fuse_width}")

    @property
    def image_channels(self) -> int:
        return self.image[self.scales[0]].in_dim // (POOL_SIZE * POOL_SIZE)

    @property
    def c_v(self) -> int:
        return self.voxel[self.scales[0]].out_dim

    @property
    def c_i(self) -> int:
        return self.image[self.scales[0]].out_dim

    @property
    def c_out(self) -> int:
        return self.final.out_dim

    @property
    def fuse_width(self) -> int:
        return POINT_CHANNELS + self.c_v + self.c_i

    @classmethod
    def seeded(cls, seed: int, scales, image_channels: int = 4, c_v: int = DEFAULT_C_V,
               c_i: int = DEFAULT_C_I, c_out: int = DEFAULT_C_OUT) -> "EncoderWeights":
        rng = np.random.default_rng(seed)
        scales = tuple(scales)
        voxel, image = {}, {}
        for s in scales:
            voxel[s] = LayerWeights.seeded(rng, POINT_CHANNELS, c_v)
            image[s] = LayerWeights.seeded(rng, image_channels * POOL_SIZE * POOL_SIZE, c_i)
        final = LayerWeights.seeded(rng, len(scales) * (POINT_CHANNELS + c_v + c_i), c_out)
        return cls(scales, voxel, image, final)

    def layers(self) -> list[LayerWeights]:
        """Declared on-disk order: per scale (voxel, image), then final."""
        out = []
        for s in self.scales:
            out += [self.voxel[s], self.image[s]]
        return out + [self.final]

    def check(self, spec: VoxelSpec, features: FeatureTensor | None = None):
        if self.scales != spec.scales:
            raise ConfigError(f"weights are for scales {self.scales}, config has {spec.scales}")
        if features is not None and features.channels != self.image_channels:
            raise ConfigError(f"weights expect {self.image_channels} image channels, feature map has {features.channels}")


@dataclass(frozen=True, eq=False)
class FusedFeatures:
    per_point: np.ndarray      # F_fuse of the first scale, N x (C_p + C_v + C_i)
    multi_scale: np.ndarray    # F_S, N x S*(C_p + C_v + C_i)
    per_voxel: np.ndarray      # F_SV, V1 x C_out
    bev: np.ndarray            # X x Y x C_out, float32
    voxel_coords: np.ndarray   # V1 x 3 scale-1 grid keys


def encode_points(cloud: PointCloud, assignment: VoxelAssignment) -> np.ndarray:
    """(x, y, z, intensity, offsets from the voxel's member mean) per point."""
    assignment.require_complete()
    if assignment.num_points != len(cloud):
        raise ValueError(f"assignment covers {assignment.num_points} points, cloud has {len(cloud)}")
    ids = assignment.voxel_index_per_point
    means = scatter_reduce(cloud.xyz, ids, "mean", num_segments=assignment.num_voxels)
    return np.concatenate([cloud.points, cloud.xyz - means[ids]], axis=1)


def encode_voxels(f_p: np.ndarray, assignment: VoxelAssignment, layer: LayerWeights) -> np.ndarray:
    assignment.require_complete()
    if layer.in_dim != np.shape(f_p)[1]:
        raise ConfigError(f"voxel encoder takes {layer.in_dim} channels, point features have {np.shape(f_p)[1]}")
    return scatter_reduce(layer(f_p), assignment.voxel_index_per_point, "max", num_segments=assignment.num_voxels)


def _feature_rects(features: FeatureTensor, rects) -> np.ndarray:
    r = np.asarray(rects, dtype=np.float64).reshape(-1, 4) / features.stride
    for lo, hi in ((0, 2), (1, 3)):
        flat = r[:, hi] - r[:, lo] <= 0
        r[flat, hi] = r[flat, lo] + MIN_EXTENT
    return r


def roi_align_many(features: FeatureTensor, rects, out_size: int = POOL_SIZE) -> np.ndarray:
    """Pool image-pixel rects into an (R, C, out, out) stack."""
    return kernels.roi_align(features.data, _feature_rects(features, rects), out_size, POOL_SAMPLES)


def roi_align(features: FeatureTensor, rect, out_size: int = POOL_SIZE) -> np.ndarray:
    """Pool one image-pixel rect into a (C, out, out) tensor.

    Bins hold the mean of 2x2 bilinear samples; cell centres sit at
    integer + 0.5. Samples within half a cell of the map edge take the
    border value and samples further out read 0.
    """
    return roi_align_many(features, [rect], out_size)[0]


def image_voxel_features(features: FeatureTensor, regions: RegionSet, layer: LayerWeights,
                         num_voxels: int | None = None) -> np.ndarray:
    """F_I: one row per voxel; voxels without a region get zeros."""
    regions = RegionSet.from_regions(regions)
    cells = features.channels * POOL_SIZE * POOL_SIZE
    if layer.in_dim != cells:
        raise ConfigError(f"image head takes {layer.in_dim} inputs, pooled patch has {cells}")
    if num_voxels is None:
        num_voxels = int(regions.voxel_ids.max()) + 1 if len(regions) else 0
    out = np.zeros((num_voxels, layer.out_dim))
    if len(regions):
        pooled = roi_align_many(features, regions.rects)
        out[regions.voxel_ids] = layer(pooled.reshape(len(regions), cells))
    return out


def fuse_scale(f_p, f_v, f_i, assignment: VoxelAssignment) -> np.ndarray:
    ids = assignment.voxel_index_per_point
    if np.shape(f_p)[0] != ids.shape[0]:
        raise ValueError(f"{np.shape(f_p)[0]} point rows for {ids.shape[0]} assigned points")
    return np.concatenate([f_p, gather(f_v, ids), gather(f_i, ids)], axis=1)


def bev_scatter(per_voxel: np.ndarray, assignment: VoxelAssignment) -> np.ndarray:
    """Max-pool voxel rows over z into a dense (X, Y, C) float32 grid."""
    gx, gy, _ = assignment.grid_shape
    c = per_voxel.shape[1]
    bev = np.zeros((gx, gy, c), dtype=np.float32)
    if assignment.num_voxels == 0:
        return bev
    keys = assignment.voxel_ids[:, 0] * gy + assignment.voxel_ids[:, 1]
    cell_ids, first = kernels.first_occurrence_ids(keys)
    pooled = kernels.segment_reduce(per_voxel, cell_ids, first.shape[0], kernels.OP_MAX)
    cells = keys[first]
    bev.reshape(gx * gy, c)[cells] = pooled.astype(np.float32)
    return bev


def fuse_multiscale(per_scale: list[np.ndarray], assignment_scale1: VoxelAssignment,
                    final: LayerWeights) -> FusedFeatures:
    if not per_scale:
        raise ValueError("need at least one scale")
    n = {m.shape[0] for m in per_scale}
    if len(n) != 1 or n != {assignment_scale1.num_points}:
        raise ValueError(f"per-scale row counts {sorted(n)} disagree with {assignment_scale1.num_points} points")
    assignment_scale1.require_complete()
    f_s = np.concatenate(per_scale, axis=1)
    if final.in_dim != f_s.shape[1]:
        raise ConfigError(f"final layer takes {final.in_dim} channels, F_S has {f_s.shape[1]}")
    f_sv = scatter_reduce(final(f_s), assignment_scale1.voxel_index_per_point, "max",
                          num_segments=assignment_scale1.num_voxels)
    return FusedFeatures(
        per_point=per_scale[0],
        multi_scale=f_s,
        per_voxel=f_sv,
        bev=bev_scatter(f_sv, assignment_scale1),
        voxel_coords=assignment_scale1.voxel_ids,
    )


@dataclass
class ScaleStage:
    """Intermediate products of one scale, kept for diagnostics and CSV dumps."""

    assignment: VoxelAssignment
    raw_regions: RegionSet
    regions: RegionSet
    f_p: np.ndarray
    f_v: np.ndarray
    f_i: np.ndarray
    fused: np.ndarray


def prepare_cloud(cloud: PointCloud, calib: Calibration, spec: VoxelSpec) -> tuple[PointCloud, ProjectedCloud, np.ndarray]:
    """FoV filter then range filter.

    Returns the working cloud, its projection (indices relative to the
    working cloud) and the source index of each working point.
    """
    projected = project(cloud, calib)
    inside = spec.range.contains(cloud.xyz[projected.kept_indices])
    source = projected.kept_indices[inside]
    working = cloud.subset(source)
    proj = ProjectedCloud(projected.pixels[inside], projected.depth[inside], np.arange(source.size))
    return working, proj, source


def fuse_frame(cloud: PointCloud, calib: Calibration, features: FeatureTensor, spec: VoxelSpec,
               weights: EncoderWeights, delta: float = DEFAULT_DELTA) -> tuple[FusedFeatures, dict[int, ScaleStage]]:
    """Full multi-scale fusion of one frame."""
    weights.check(spec, features)
    working, proj, _ = prepare_cloud(cloud, calib, spec)
    stages: dict[int, ScaleStage] = {}
    for s in spec.scales:
        asg = voxelize(working, spec, s)
        f_p = encode_points(working, asg)
        f_v = encode_voxels(f_p, asg, weights.voxel[s])
        raw, grown = voxel_regions(proj, asg, spec, delta, calib.image_dims)
        f_i = image_voxel_features(features, grown, weights.image[s], asg.num_voxels)
        stages[s] = ScaleStage(asg, raw, grown, f_p, f_v, f_i, fuse_scale(f_p, f_v, f_i, asg))
    fused = fuse_multiscale([stages[s].fused for s in spec.scales], stages[1].assignment, weights.final)
    return fused, stages
