"""Parametric residual blocks: classic bottleneck through the final ConvNeXt form.

A ``BlockSpec`` describes one residual block. ``block_layers`` lowers it to a
flat layer plan (convs, norms, activations, layer scale) that is the single
source of truth shared by the forward pass, weight naming and validation,
parameter initialization, and cost accounting.

Canonical layer-name grammar (relative to one block):

    pw1 | pw2      pointwise 1x1 convs, in branch order
    spatial        the kxk conv (dense, grouped, or depthwise)
    norm1..norm3   normalizations, in branch order
    proj           projection shortcut conv, with proj_norm
    gamma          layer-scale vector

Parameters are ``<layer>.<field>`` with fields weight/bias for convs and
gamma/beta (+ running_mean/running_var for batch norm) for norms; the
layer-scale vector is the bare name ``gamma``.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum
from typing import Optional, Union

import numpy as np

from . import autograd as ag
from . import tensor as T
from .tensor import Tensor


class SpatialPosition(str, Enum):
    MIDDLE = "middle"
    FIRST = "first"


class Grouping(str, Enum):
    DENSE = "dense"
    DEPTHWISE = "depthwise"


class NormKind(str, Enum):
    BATCH = "batch"
    LAYER = "layer"


class NormPlacement(str, Enum):
    PER_CONV = "per_conv"
    SINGLE_BEFORE_POINTWISE = "single_before_pointwise"


class ActKind(str, Enum):
    RELU = "relu"
    GELU = "gelu"


class ActPlacement(str, Enum):
    PER_CONV = "per_conv"
    SINGLE_BETWEEN_POINTWISE = "single_between_pointwise"


class ShortcutKind(str, Enum):
    IDENTITY = "identity"
    PROJECTION = "projection"


class StemKind(str, Enum):
    RESNET = "resnet"
    PATCHIFY = "patchify"


BLOCK_KERNEL_SIZES = (3, 5, 7, 9, 11)


@dataclass(frozen=True)
class BlockSpec:
    """One residual block, from classic bottleneck to the final ConvNeXt form."""

    channels: int
    kernel_size: int
    inner_ratio: float
    spatial_position: SpatialPosition
    grouping: Grouping
    norm_kind: NormKind
    norm_placement: NormPlacement
    act_kind: ActKind
    act_placement: ActPlacement
    stride: int = 1
    shortcut: ShortcutKind = ShortcutKind.IDENTITY
    layer_scale_init: Optional[float] = None
    drop_path_rate: float = 0.0
    in_channels: Optional[int] = None  # None means same as channels
    spatial_groups: Optional[int] = None  # dense grouped conv only (ResNeXt-style)

    def __post_init__(self):
        if self.channels < 1:
            raise ValueError("channels must be >= 1")
        if self.kernel_size not in BLOCK_KERNEL_SIZES:
            raise ValueError(f"kernel_size must be one of {BLOCK_KERNEL_SIZES}, got {self.kernel_size}")
        hidden = self.inner_ratio * self.channels
        if hidden < 1 or hidden != int(hidden):
            raise ValueError(f"inner_ratio {self.inner_ratio} x channels {self.channels} must be a positive integer")
        if self.stride not in (1, 2):
            raise ValueError(f"stride must be 1 or 2, got {self.stride}")
        if not 0.0 <= self.drop_path_rate < 1.0:
            raise ValueError(f"drop_path_rate must be in [0, 1), got {self.drop_path_rate}")
        if self.spatial_position == SpatialPosition.FIRST and self.grouping != Grouping.DEPTHWISE:
            raise ValueError("spatial_position=first requires grouping=depthwise")
        single_norm = self.norm_placement == NormPlacement.SINGLE_BEFORE_POINTWISE
        single_act = self.act_placement == ActPlacement.SINGLE_BETWEEN_POINTWISE
        if (single_norm or single_act) and self.spatial_position != SpatialPosition.FIRST:
            raise ValueError("single norm/act placement requires spatial_position=first")
        if single_norm and not single_act:
            raise ValueError("single_before_pointwise norm requires single_between_pointwise act")
        if self.grouping == Grouping.DEPTHWISE and self.spatial_groups is not None:
            raise ValueError("spatial_groups applies to dense grouping only")
        needs_proj = self.stride == 2 or self.input_channels != self.channels
        if (self.shortcut == ShortcutKind.PROJECTION) != needs_proj:
            raise ValueError(
                "shortcut must be projection iff stride=2 or input/output widths differ "
                f"(stride={self.stride}, in={self.input_channels}, out={self.channels})"
            )

    @property
    def input_channels(self) -> int:
        return self.channels if self.in_channels is None else self.in_channels

    @property
    def hidden_channels(self) -> int:
        return int(self.inner_ratio * self.channels)


@dataclass(frozen=True)
class StemSpec:
    """Input stem: classic conv+maxpool or a non-overlapping patchify conv."""

    kind: StemKind
    kernel_size: int
    stride: int
    out_channels: int
    norm_kind: Optional[NormKind]
    act_kind: Optional[ActKind]
    in_channels: int = 3

    def __post_init__(self):
        if self.kind == StemKind.PATCHIFY and self.kernel_size != self.stride:
            raise ValueError("patchify stem requires kernel_size == stride")
        if self.kind == StemKind.RESNET and (self.kernel_size, self.stride) != (7, 2):
            raise ValueError("resnet stem is fixed at 7x7 stride 2")


def resnet_stem(width: int = 64) -> StemSpec:
    return StemSpec(StemKind.RESNET, 7, 2, width, NormKind.BATCH, ActKind.RELU)


def patchify_stem(kernel: int, stride: int, width: int,
                  norm_kind: Optional[NormKind] = NormKind.LAYER,
                  act_kind: Optional[ActKind] = None) -> StemSpec:
    return StemSpec(StemKind.PATCHIFY, kernel, stride, width, norm_kind, act_kind)


# ---------------------------------------------------------------------------
# Layer plans
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ConvDef:
    name: str
    kernel: tuple[int, int]
    in_channels: int
    out_channels: int
    groups: int
    stride: tuple[int, int]
    padding: tuple[int, int]
    bias: bool


@dataclass(frozen=True)
class NormDef:
    name: str
    kind: NormKind
    channels: int


@dataclass(frozen=True)
class ActDef:
    kind: ActKind


@dataclass(frozen=True)
class ScaleDef:
    name: str
    channels: int


@dataclass(frozen=True)
class MaxPoolDef:
    kernel: tuple[int, int]
    stride: tuple[int, int]
    padding: tuple[int, int]


LayerDef = Union[ConvDef, NormDef, ActDef, ScaleDef, MaxPoolDef]


@dataclass(frozen=True)
class BlockPlan:
    branch: tuple[LayerDef, ...]
    shortcut: tuple[LayerDef, ...]  # empty for identity
    post_act: Optional[ActDef]
    drop_path_rate: float


def _conv(name, k, cin, cout, groups=1, stride=1, same_pad=False, bias=False) -> ConvDef:
    pad = ((k - 1) // 2, (k - 1) // 2) if same_pad else (0, 0)
    return ConvDef(name, (k, k), cin, cout, groups, (stride, stride), pad, bias)


def block_layers(spec: BlockSpec) -> BlockPlan:
    """Lower a block spec to its ordered layer plan."""
    cin = spec.input_channels
    cout = spec.channels
    hidden = spec.hidden_channels
    k = spec.kernel_size
    bias = spec.norm_kind == NormKind.LAYER
    act = ActDef(spec.act_kind)

    def norm(name, ch):
        return NormDef(name, spec.norm_kind, ch)

    per_conv_norm = spec.norm_placement == NormPlacement.PER_CONV
    per_conv_act = spec.act_placement == ActPlacement.PER_CONV

    if spec.spatial_position == SpatialPosition.MIDDLE:
        groups = hidden if spec.grouping == Grouping.DEPTHWISE else (spec.spatial_groups or 1)
        pw1 = _conv("pw1", 1, cin, hidden, bias=bias)
        sp = _conv("spatial", k, hidden, hidden, groups=groups, stride=spec.stride, same_pad=True, bias=bias)
        pw2 = _conv("pw2", 1, hidden, cout, bias=bias)
        branch = [pw1, norm("norm1", hidden), act, sp, norm("norm2", hidden), act, pw2, norm("norm3", cout)]
        post_act = act
    else:
        sp = _conv("spatial", k, cin, cin, groups=cin, stride=spec.stride, same_pad=True, bias=bias)
        pw1 = _conv("pw1", 1, cin, hidden, bias=bias)
        pw2 = _conv("pw2", 1, hidden, cout, bias=bias)
        if per_conv_norm and per_conv_act:
            branch = [sp, norm("norm1", cin), act, pw1, norm("norm2", hidden), act, pw2, norm("norm3", cout)]
            post_act = act
        elif per_conv_norm:
            branch = [sp, norm("norm1", cin), pw1, norm("norm2", hidden), act, pw2, norm("norm3", cout)]
            post_act = None
        else:
            branch = [sp, norm("norm1", cin), pw1, act, pw2]
            post_act = None

    if spec.layer_scale_init is not None:
        branch.append(ScaleDef("gamma", cout))

    shortcut: list[LayerDef] = []
    if spec.shortcut == ShortcutKind.PROJECTION:
        shortcut = [_conv("proj", 1, cin, cout, stride=spec.stride, bias=bias),
                    NormDef("proj_norm", spec.norm_kind, cout)]

    return BlockPlan(tuple(branch), tuple(shortcut), post_act, spec.drop_path_rate)


def stem_layers(stem: StemSpec) -> tuple[LayerDef, ...]:
    bias = stem.norm_kind == NormKind.LAYER or stem.norm_kind is None
    layers: list[LayerDef] = []
    if stem.kind == StemKind.RESNET:
        layers.append(ConvDef("conv", (7, 7), stem.in_channels, stem.out_channels, 1, (2, 2), (3, 3), bias))
    else:
        k = stem.kernel_size
        layers.append(ConvDef("conv", (k, k), stem.in_channels, stem.out_channels, 1,
                              (stem.stride, stem.stride), (0, 0), bias))
    if stem.norm_kind is not None:
        layers.append(NormDef("norm", stem.norm_kind, stem.out_channels))
    if stem.act_kind is not None:
        layers.append(ActDef(stem.act_kind))
    if stem.kind == StemKind.RESNET:
        layers.append(MaxPoolDef((3, 3), (2, 2), (1, 1)))
    return tuple(layers)


def downsample_layers(cin: int, cout: int) -> tuple[LayerDef, ...]:
    """Separate downsampler: layer norm then a 2x2 stride-2 conv."""
    return (NormDef("norm", NormKind.LAYER, cin),
            ConvDef("conv", (2, 2), cin, cout, 1, (2, 2), (0, 0), True))


# ---------------------------------------------------------------------------
# Weights
# ---------------------------------------------------------------------------

NORM_FIELDS = {NormKind.BATCH: ("gamma", "beta", "running_mean", "running_var"),
               NormKind.LAYER: ("gamma", "beta")}


def layer_param_shapes(layers) -> dict[str, tuple[int, ...]]:
    """Parameter name -> extents for every parameterized layer in a plan."""
    shapes: dict[str, tuple[int, ...]] = {}
    for d in layers:
        if isinstance(d, ConvDef):
            shapes[f"{d.name}.weight"] = (d.kernel[0], d.kernel[1], d.in_channels // d.groups, d.out_channels)
            if d.bias:
                shapes[f"{d.name}.bias"] = (d.out_channels,)
        elif isinstance(d, NormDef):
            for f in NORM_FIELDS[d.kind]:
                shapes[f"{d.name}.{f}"] = (d.channels,)
        elif isinstance(d, ScaleDef):
            shapes[d.name] = (d.channels,)
    return shapes


def block_param_shapes(spec: BlockSpec) -> dict[str, tuple[int, ...]]:
    plan = block_layers(spec)
    return layer_param_shapes(plan.branch + plan.shortcut)


def validate_block_weights(spec: BlockSpec, weights: dict) -> None:
    """Check the weights hold exactly the entries the spec demands."""
    expected = block_param_shapes(spec)
    missing = sorted(set(expected) - set(weights))
    extra = sorted(set(weights) - set(expected))
    if missing:
        raise ValueError(f"missing block weights: {', '.join(missing)}")
    if extra:
        raise ValueError(f"unexpected block weights: {', '.join(extra)}")
    for name, shape in expected.items():
        got = tuple(weights[name].shape)
        if got != shape:
            raise ValueError(f"extent mismatch for {name}: expected {shape}, got {got}")


# ---------------------------------------------------------------------------
# Forward execution
# ---------------------------------------------------------------------------


def drop_path_multiplier(rng: np.random.Generator, n: int, rate: float, dtype=np.float32) -> np.ndarray:
    """Per-sample branch multiplier: 0 with probability rate, else 1/(1-rate)."""
    keep = 1.0 - rate
    mask = (rng.random(n) < keep).astype(dtype)
    return (mask / keep).reshape(n, 1, 1, 1)


def _norm_params(weights, prefix, d: NormDef):
    eps = T.BN_EPS if d.kind == NormKind.BATCH else T.LN_EPS
    g = weights[f"{prefix}{d.name}.gamma"]
    b = weights[f"{prefix}{d.name}.beta"]
    if d.kind == NormKind.BATCH:
        return g, b, weights[f"{prefix}{d.name}.running_mean"], weights[f"{prefix}{d.name}.running_var"], eps
    return g, b, None, None, eps


def apply_layers(runner: ag.Runner, h, layers, weights: dict, prefix: str = ""):
    """Run a layer plan over a value handle (ndarray in eval, tape Ref in train)."""
    for d in layers:
        if isinstance(d, ConvDef):
            w = runner.param(f"{prefix}{d.name}.weight", weights[f"{prefix}{d.name}.weight"])
            inputs = [h, w]
            if d.bias:
                inputs.append(runner.param(f"{prefix}{d.name}.bias", weights[f"{prefix}{d.name}.bias"]))
            h = runner.apply(ag.Conv2d, inputs, stride=d.stride, padding=d.padding,
                             groups=d.groups, with_bias=d.bias)
        elif isinstance(d, NormDef):
            g, b, mean, var, eps = _norm_params(weights, prefix, d)
            gh = runner.param(f"{prefix}{d.name}.gamma", g)
            bh = runner.param(f"{prefix}{d.name}.beta", b)
            if d.kind == NormKind.BATCH:
                h = runner.apply(ag.BatchNormAffine, [h, gh, bh], mean=mean, var=var, eps=eps)
            else:
                h = runner.apply(ag.LayerNorm, [h, gh, bh], eps=eps)
        elif isinstance(d, ActDef):
            h = runner.apply(ag.Gelu if d.kind == ActKind.GELU else ag.Relu, [h])
        elif isinstance(d, ScaleDef):
            gh = runner.param(f"{prefix}{d.name}", weights[f"{prefix}{d.name}"])
            h = runner.apply(ag.ChannelScale, [h, gh])
        elif isinstance(d, MaxPoolDef):
            h = runner.apply(ag.MaxPool, [h], kernel=d.kernel, stride=d.stride, padding=d.padding)
        else:
            raise TypeError(f"unknown layer def {d!r}")
    return h


def apply_block(runner: ag.Runner, h, spec: BlockSpec, weights: dict, mode: str = "eval",
                rng: Optional[np.random.Generator] = None, prefix: str = ""):
    """Residual block over a value handle; see block_forward for the contract."""
    if mode not in ("eval", "train"):
        raise ValueError(f"mode must be 'eval' or 'train', got {mode!r}")
    if mode == "train" and rng is None:
        raise ValueError("train mode requires a random generator for drop-path")
    plan = block_layers(spec)
    branch = apply_layers(runner, h, plan.branch, weights, prefix)
    if mode == "train" and plan.drop_path_rate > 0.0:
        n = runner.value(branch).shape[0]
        mult = drop_path_multiplier(rng, n, plan.drop_path_rate, dtype=runner.value(branch).dtype)
        branch = runner.apply(ag.MulConst, [branch], const=mult)
    shortcut = apply_layers(runner, h, plan.shortcut, weights, prefix) if plan.shortcut else h
    out = runner.apply(ag.Add, [shortcut, branch])
    if plan.post_act is not None:
        out = runner.apply(ag.Gelu if plan.post_act.kind == ActKind.GELU else ag.Relu, [out])
    return out


def block_forward(x: Tensor, spec: BlockSpec, weights: dict, mode: str = "eval",
                  rng: Optional[np.random.Generator] = None) -> Tensor:
    """Residual sum of shortcut(x) and the branch dictated by the spec.

    In eval mode drop-path is identity; in train mode the branch is zeroed per
    sample with probability drop_path_rate and survivors are scaled by
    1/(1-rate), drawn from the supplied generator.
    """
    if x.shape[3] != spec.input_channels:
        raise ValueError(f"channel mismatch: input has {x.shape[3]} channels, spec expects {spec.input_channels}")
    validate_block_weights(spec, weights)
    out = apply_block(ag.Runner(), x.data, spec, weights, mode, rng)
    return Tensor._wrap(out)


def bottleneck_forward(x: Tensor, spec: BlockSpec, weights: dict, mode: str = "eval",
                       rng: Optional[np.random.Generator] = None) -> Tensor:
    """Classic bottleneck: middle spatial position, per-conv norm and act."""
    if spec.spatial_position != SpatialPosition.MIDDLE:
        raise ValueError("bottleneck_forward requires spatial_position=middle")
    if spec.norm_placement != NormPlacement.PER_CONV or spec.act_placement != ActPlacement.PER_CONV:
        raise ValueError("bottleneck_forward requires per_conv norm and act placement")
    return block_forward(x, spec, weights, mode, rng)


def downsample_forward(x: Tensor, weights: dict) -> Tensor:
    """Separate downsampling layer: layer norm, then 2x2 stride-2 conv."""
    cin = x.shape[3]
    cout = weights["conv.weight"].shape[3]
    out = apply_layers(ag.Runner(), x.data, downsample_layers(cin, cout), weights)
    return Tensor._wrap(out)


def stem_forward(x: Tensor, stem: StemSpec, weights: dict) -> Tensor:
    """Input stem; 4x total downsampling for resnet, stride-sized for patchify."""
    out = apply_layers(ag.Runner(), x.data, stem_layers(stem), weights)
    return Tensor._wrap(out)


def count_layer_kinds(plan: BlockPlan) -> dict[str, int]:
    """Norm/activation census of one block (post-add activation included)."""
    layers = list(plan.branch) + ([plan.post_act] if plan.post_act else [])
    return {
        "norms": sum(isinstance(d, NormDef) for d in plan.branch),
        "acts": sum(isinstance(d, ActDef) for d in layers),
        "convs": sum(isinstance(d, ConvDef) for d in plan.branch),
    }


def realize_block(template: BlockSpec, in_channels: int, stride: int) -> BlockSpec:
    """Instantiate a stage's block template at a concrete position."""
    needs_proj = stride == 2 or in_channels != template.channels
    return replace(
        template,
        stride=stride,
        in_channels=None if in_channels == template.channels else in_channels,
        shortcut=ShortcutKind.PROJECTION if needs_proj else ShortcutKind.IDENTITY,
    )
