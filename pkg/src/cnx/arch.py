"""Whole-network specs, named variants, the modernization roadmap, and forward.

A ``ModelSpec`` is resolution-independent: stem, four (or one) stages of
residual blocks, the downsampling mode, and the classifier head. The roadmap
is a fixed, ordered list of spec-to-spec transforms; applying them out of
order is rejected. The final transform of each regime closes onto the
corresponding named variant.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Optional

import numpy as np
from scipy.special import ndtri

from . import autograd as ag
from . import blocks as B
from .blocks import (ActKind, ActPlacement, BlockSpec, Grouping, NormKind, NormPlacement,
                     ShortcutKind, SpatialPosition, StemKind, StemSpec)
from .tensor import Tensor

WEIGHT_INIT_STD = 0.02
WEIGHT_INIT_BOUND = 2.0  # truncation, in units of std
LAYER_SCALE_INIT = 1e-6


class Downsampling(str, Enum):
    IN_BLOCK = "in_block"
    SEPARATE = "separate"


@dataclass(frozen=True)
class StageSpec:
    blocks: int
    width: int
    block: BlockSpec  # template; stride/shortcut/in_channels are realized per position

    def __post_init__(self):
        if self.blocks < 1:
            raise ValueError("stage must have at least one block")
        if self.block.channels != self.width:
            raise ValueError(f"block template channels {self.block.channels} != stage width {self.width}")
        if self.block.stride != 1 or self.block.in_channels is not None:
            raise ValueError("stage block template must be the canonical stride-1 form")


@dataclass(frozen=True)
class HeadSpec:
    num_classes: int = 1000
    final_norm: bool = False


@dataclass(frozen=True)
class ModelSpec:
    stem: StemSpec
    stages: tuple[StageSpec, ...]
    downsampling: Downsampling
    head: HeadSpec
    name: Optional[str] = field(default=None, compare=False)

    def __post_init__(self):
        if not self.stages:
            raise ValueError("model needs at least one stage")
        if len(self.stages) > 1:
            for a, b in zip(self.stages, self.stages[1:]):
                if b.width != 2 * a.width:
                    raise ValueError(f"stage widths must double: {a.width} -> {b.width}")
        if self.downsampling == Downsampling.SEPARATE:
            if len(self.stages) != 4:
                raise ValueError("separate downsampling expects 4 stages")
            if self.stem.out_channels != self.stages[0].width:
                raise ValueError("separate downsampling requires stem width == first stage width")

    @property
    def is_isotropic(self) -> bool:
        return len(self.stages) == 1


def stage_block_specs(model: ModelSpec, stage_index: int) -> list[BlockSpec]:
    """Realized block specs for one stage (transition stride/projection resolved)."""
    stage = model.stages[stage_index]
    prev = model.stem.out_channels if stage_index == 0 else model.stages[stage_index - 1].width
    out = []
    for j in range(stage.blocks):
        if j == 0 and model.downsampling == Downsampling.IN_BLOCK:
            stride = 2 if stage_index > 0 else 1
            out.append(B.realize_block(stage.block, prev, stride))
        else:
            out.append(B.realize_block(stage.block, stage.width, 1))
    return out


def downsampler_widths(model: ModelSpec) -> list[tuple[int, int]]:
    if model.downsampling != Downsampling.SEPARATE:
        return []
    return [(a.width, b.width) for a, b in zip(model.stages, model.stages[1:])]


# ---------------------------------------------------------------------------
# Parameter plan
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ParamDef:
    name: str
    shape: tuple[int, ...]
    kind: str  # weight | bias | norm_gamma | norm_beta | running_mean | running_var | layer_scale
    fill: Optional[float] = None

    @property
    def trainable(self) -> bool:
        return self.kind not in ("running_mean", "running_var")


def _layer_param_defs(layers, prefix: str, scale_fill: Optional[float]):
    for d in layers:
        if isinstance(d, B.ConvDef):
            cin_g = d.in_channels // d.groups
            yield ParamDef(f"{prefix}{d.name}.weight", (d.kernel[0], d.kernel[1], cin_g, d.out_channels), "weight")
            if d.bias:
                yield ParamDef(f"{prefix}{d.name}.bias", (d.out_channels,), "bias")
        elif isinstance(d, B.NormDef):
            yield ParamDef(f"{prefix}{d.name}.gamma", (d.channels,), "norm_gamma")
            yield ParamDef(f"{prefix}{d.name}.beta", (d.channels,), "norm_beta")
            if d.kind == NormKind.BATCH:
                yield ParamDef(f"{prefix}{d.name}.running_mean", (d.channels,), "running_mean")
                yield ParamDef(f"{prefix}{d.name}.running_var", (d.channels,), "running_var")
        elif isinstance(d, B.ScaleDef):
            yield ParamDef(f"{prefix}{d.name}", (d.channels,), "layer_scale", fill=scale_fill)


def parameter_defs(model: ModelSpec) -> list[ParamDef]:
    """Every parameter the spec demands, in canonical (execution) order."""
    defs: list[ParamDef] = []
    defs.extend(_layer_param_defs(B.stem_layers(model.stem), "stem.", None))
    ds = downsampler_widths(model)
    for i, stage in enumerate(model.stages):
        if i > 0 and ds:
            cin, cout = ds[i - 1]
            defs.extend(_layer_param_defs(B.downsample_layers(cin, cout), f"downsamplers.{i - 1}.", None))
        for j, bspec in enumerate(stage_block_specs(model, i)):
            plan = B.block_layers(bspec)
            prefix = f"stages.{i}.blocks.{j}."
            defs.extend(_layer_param_defs(plan.branch + plan.shortcut, prefix, bspec.layer_scale_init))
    c = model.stages[-1].width
    if model.head.final_norm:
        defs.append(ParamDef("head.norm.gamma", (c,), "norm_gamma"))
        defs.append(ParamDef("head.norm.beta", (c,), "norm_beta"))
    defs.append(ParamDef("head.fc.weight", (c, model.head.num_classes), "weight"))
    defs.append(ParamDef("head.fc.bias", (model.head.num_classes,), "bias"))
    return defs


def parameter_shapes(model: ModelSpec) -> dict[str, tuple[int, ...]]:
    return {d.name: d.shape for d in parameter_defs(model)}


@dataclass
class ModelWeights:
    """Named arrays closed under a spec (bijection with the parameter plan)."""

    spec: ModelSpec
    arrays: dict[str, np.ndarray]
    metadata: dict = field(default_factory=dict)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.arrays[name]

    def astype(self, dtype) -> "ModelWeights":
        return ModelWeights(self.spec, {k: v.astype(dtype) for k, v in self.arrays.items()},
                            dict(self.metadata))


def _trunc_normal(rng: np.random.Generator, shape, std: float, bound: float) -> np.ndarray:
    # Inverse-CDF sampling: one deterministic uniform draw per element.
    from scipy.special import ndtr

    low, high = ndtr(-bound), ndtr(bound)
    u = rng.random(shape) * (high - low) + low
    return (ndtri(u) * std).astype(np.float32)


def init_weights(model: ModelSpec, seed: int) -> ModelWeights:
    """Truncated-normal conv/linear weights, zero biases, identity norms.

    Deterministic in the seed: parameters are drawn in canonical plan order.
    """
    rng = np.random.default_rng(seed)
    arrays: dict[str, np.ndarray] = {}
    for d in parameter_defs(model):
        if d.kind == "weight":
            arrays[d.name] = _trunc_normal(rng, d.shape, WEIGHT_INIT_STD, WEIGHT_INIT_BOUND)
        elif d.kind in ("bias", "norm_beta", "running_mean"):
            arrays[d.name] = np.zeros(d.shape, dtype=np.float32)
        elif d.kind in ("norm_gamma", "running_var"):
            arrays[d.name] = np.ones(d.shape, dtype=np.float32)
        elif d.kind == "layer_scale":
            arrays[d.name] = np.full(d.shape, d.fill, dtype=np.float32)
        else:
            raise AssertionError(d.kind)
    from .tensor import BN_EPS, LN_EPS

    meta = {"spec": model.name or "custom", "ln_eps": LN_EPS, "bn_eps": BN_EPS}
    return ModelWeights(model, arrays, meta)


# ---------------------------------------------------------------------------
# Forward
# ---------------------------------------------------------------------------

PROBE_NAMES = ("stem_out", "stage_out", "pooled", "logits")


def run_model(runner: ag.Runner, model: ModelSpec, arrays: dict, x, mode: str = "eval",
              rng: Optional[np.random.Generator] = None, probes: Optional[dict] = None):
    """Execute the network over a value handle. Fills `probes` if given."""

    def probe(name, h):
        if probes is not None:
            probes[name] = np.array(runner.value(h))

    h = B.apply_layers(runner, x, B.stem_layers(model.stem), arrays, "stem.")
    probe("stem_out", h)
    ds = downsampler_widths(model)
    for i, stage in enumerate(model.stages):
        if i > 0 and ds:
            h = B.apply_layers(runner, h, B.downsample_layers(*ds[i - 1]), arrays, f"downsamplers.{i - 1}.")
        for j, bspec in enumerate(stage_block_specs(model, i)):
            h = B.apply_block(runner, h, bspec, arrays, mode, rng, f"stages.{i}.blocks.{j}.")
        probe(f"stage{i}_out", h)
    h = runner.apply(ag.GlobalAvgPool, [h])
    if model.head.final_norm:
        g = runner.param("head.norm.gamma", arrays["head.norm.gamma"])
        b = runner.param("head.norm.beta", arrays["head.norm.beta"])
        from .tensor import LN_EPS

        h = runner.apply(ag.LayerNorm, [h, g, b], eps=LN_EPS)
    h = runner.apply(ag.FlattenSpatial, [h])
    probe("pooled", h)
    w = runner.param("head.fc.weight", arrays["head.fc.weight"])
    bias = runner.param("head.fc.bias", arrays["head.fc.bias"])
    logits = runner.apply(ag.Linear, [h, w, bias], with_bias=True)
    probe("logits", logits)
    return logits


def _check_bound(model: ModelSpec, weights) -> dict:
    arrays = weights.arrays if isinstance(weights, ModelWeights) else weights
    expected = parameter_shapes(model)
    missing = sorted(set(expected) - set(arrays))
    if missing:
        raise ValueError(f"missing weights: {', '.join(missing[:5])}{' ...' if len(missing) > 5 else ''}")
    return arrays


def _as_array(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x)


def forward(model: ModelSpec, weights, x, mode: str = "eval",
            rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """Run the network; returns (N, num_classes) logits. Eval is deterministic."""
    arrays = _check_bound(model, weights)
    xd = _as_array(x)
    if xd.shape[3] != model.stem.in_channels:
        raise ValueError(f"input has {xd.shape[3]} channels, stem expects {model.stem.in_channels}")
    return run_model(ag.Runner(), model, arrays, xd, mode, rng)


def forward_probed(model: ModelSpec, weights, x) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    """Eval forward that also captures stem/stage/pooled/logits activations."""
    arrays = _check_bound(model, weights)
    probes: dict[str, np.ndarray] = {}
    logits = run_model(ag.Runner(), model, arrays, _as_array(x), "eval", None, probes)
    return logits, probes


def probe_shapes(model: ModelSpec, resolution: int) -> dict[str, tuple[int, ...]]:
    """Expected probe extents (batch 1) at a given input resolution."""
    from . import analysis

    sizes = analysis.stage_output_sizes(model, resolution)
    shapes = {"stem_out": (1, sizes[0][0], sizes[0][1], model.stem.out_channels)}
    for i, stage in enumerate(model.stages):
        h, w = sizes[i + 1]
        shapes[f"stage{i}_out"] = (1, h, w, stage.width)
    shapes["pooled"] = (1, model.stages[-1].width)
    shapes["logits"] = (1, model.head.num_classes)
    return shapes


# ---------------------------------------------------------------------------
# Named variants
# ---------------------------------------------------------------------------


def _convnext_block(width: int, layer_scale: Optional[float] = LAYER_SCALE_INIT) -> BlockSpec:
    return BlockSpec(
        channels=width, kernel_size=7, inner_ratio=4.0,
        spatial_position=SpatialPosition.FIRST, grouping=Grouping.DEPTHWISE,
        norm_kind=NormKind.LAYER, norm_placement=NormPlacement.SINGLE_BEFORE_POINTWISE,
        act_kind=ActKind.GELU, act_placement=ActPlacement.SINGLE_BETWEEN_POINTWISE,
        layer_scale_init=layer_scale,
    )


def _classic_block(width: int) -> BlockSpec:
    return BlockSpec(
        channels=width, kernel_size=3, inner_ratio=0.25,
        spatial_position=SpatialPosition.MIDDLE, grouping=Grouping.DENSE,
        norm_kind=NormKind.BATCH, norm_placement=NormPlacement.PER_CONV,
        act_kind=ActKind.RELU, act_placement=ActPlacement.PER_CONV,
    )


_CONVNEXT_CONFIGS = {
    "convnext-t": ((3, 3, 9, 3), (96, 192, 384, 768)),
    "convnext-s": ((3, 3, 27, 3), (96, 192, 384, 768)),
    "convnext-b": ((3, 3, 27, 3), (128, 256, 512, 1024)),
    "convnext-l": ((3, 3, 27, 3), (192, 384, 768, 1536)),
    "convnext-xl": ((3, 3, 27, 3), (256, 512, 1024, 2048)),
}

# Isotropic variants: feature width, depth, layer-scale init (disabled for S/B).
_ISO_CONFIGS = {
    "iso-s": (384, 18, None),
    "iso-b": (768, 18, None),
    "iso-l": (1024, 36, LAYER_SCALE_INIT),
}

_RESNET_CONFIGS = {
    "resnet-50": (3, 4, 6, 3),
    "resnet-200": (3, 24, 36, 3),
}

VARIANT_NAMES = tuple(list(_CONVNEXT_CONFIGS) + list(_ISO_CONFIGS) + list(_RESNET_CONFIGS))


def build_variant(name: str, num_classes: int = 1000) -> ModelSpec:
    """Instantiate a named variant spec."""
    if name in _CONVNEXT_CONFIGS:
        depths, widths = _CONVNEXT_CONFIGS[name]
        return ModelSpec(
            stem=B.patchify_stem(4, 4, widths[0]),
            stages=tuple(StageSpec(d, w, _convnext_block(w)) for d, w in zip(depths, widths)),
            downsampling=Downsampling.SEPARATE,
            head=HeadSpec(num_classes, final_norm=True),
            name=name,
        )
    if name in _ISO_CONFIGS:
        width, depth, scale = _ISO_CONFIGS[name]
        return ModelSpec(
            stem=B.patchify_stem(16, 16, width),
            stages=(StageSpec(depth, width, _convnext_block(width, scale)),),
            downsampling=Downsampling.IN_BLOCK,
            head=HeadSpec(num_classes, final_norm=True),
            name=name,
        )
    if name in _RESNET_CONFIGS:
        depths = _RESNET_CONFIGS[name]
        widths = (256, 512, 1024, 2048)
        return ModelSpec(
            stem=B.resnet_stem(64),
            stages=tuple(StageSpec(d, w, _classic_block(w)) for d, w in zip(depths, widths)),
            downsampling=Downsampling.IN_BLOCK,
            head=HeadSpec(num_classes, final_norm=False),
            name=name,
        )
    raise KeyError(f"unknown model name {name!r}; known: {', '.join(VARIANT_NAMES)}")


def micro_isotropic(width: int = 32, depth: int = 2, patch: int = 4,
                    num_classes: int = 2, layer_scale: Optional[float] = None) -> ModelSpec:
    """Desk-scale isotropic spec for toy training and gradient checks."""
    return ModelSpec(
        stem=B.patchify_stem(patch, patch, width),
        stages=(StageSpec(depth, width, _convnext_block(width, layer_scale)),),
        downsampling=Downsampling.IN_BLOCK,
        head=HeadSpec(num_classes, final_norm=True),
        name=f"micro-iso-{width}x{depth}",
    )


# ---------------------------------------------------------------------------
# Modernization roadmap
# ---------------------------------------------------------------------------


class StepId(str, Enum):
    BASELINE_RECIPE = "baseline_recipe"
    STAGE_RATIO = "stage_ratio"
    PATCHIFY_STEM = "patchify_stem"
    DEPTHWISE_CONV = "depthwise_conv"
    INCREASE_WIDTH = "increase_width"
    INVERT_DIMS = "invert_dims"
    MOVE_UP_DW = "move_up_dw"
    KERNEL_5 = "kernel_5"
    KERNEL_7 = "kernel_7"
    KERNEL_9 = "kernel_9"
    KERNEL_11 = "kernel_11"
    RELU_TO_GELU = "relu_to_gelu"
    FEWER_ACTS = "fewer_acts"
    FEWER_NORMS = "fewer_norms"
    BN_TO_LN = "bn_to_ln"
    SEPARATE_DS = "separate_ds"


STEP_ORDER = tuple(StepId)


class Regime(str, Enum):
    RN50 = "rn50"
    RN200 = "rn200"


@dataclass(frozen=True)
class RoadmapStep:
    id: StepId
    regime: Regime


class RoadmapOrderError(ValueError):
    """A roadmap step was applied out of its documented order."""


# Per-regime constants: baseline depths, modernized depths, base widths.
_REGIME = {
    Regime.RN50: {"baseline": "resnet-50", "depths": (3, 3, 9, 3),
                  "base0": 64, "ratio_base": 64, "wide_base": 96, "final": "convnext-t"},
    Regime.RN200: {"baseline": "resnet-200", "depths": (3, 3, 27, 3),
                   "base0": 64, "ratio_base": 84, "wide_base": 128, "final": "convnext-b"},
}


def _require(cond: bool, step: StepId, why: str):
    if not cond:
        raise RoadmapOrderError(f"step {step.value} is out of order: {why}")


def _map_blocks(spec: ModelSpec, fn) -> ModelSpec:
    stages = tuple(replace(s, block=fn(s.block)) for s in spec.stages)
    return replace(spec, stages=stages)


def _tmpl(spec: ModelSpec) -> BlockSpec:
    return spec.stages[0].block


def apply_step(spec: ModelSpec, step: RoadmapStep) -> ModelSpec:
    """One roadmap transform; validates the spec is at the right position."""
    cfg = _REGIME[step.regime]
    t = _tmpl(spec)
    sid = step.id

    if sid == StepId.BASELINE_RECIPE:
        baseline = build_variant(cfg["baseline"], spec.head.num_classes)
        _require(spec == baseline, sid, f"expected the {cfg['baseline']} baseline spec")
        return replace(spec, name=f"{cfg['baseline']} (enhanced recipe)")

    if sid == StepId.STAGE_RATIO:
        baseline = build_variant(cfg["baseline"], spec.head.num_classes)
        _require(spec == baseline, sid, "stage ratio applies to the baseline")
        depths = cfg["depths"]
        scale = cfg["ratio_base"] / cfg["base0"]
        stages = tuple(
            StageSpec(d, int(s.width * scale), replace(s.block, channels=int(s.width * scale)))
            for d, s in zip(depths, spec.stages)
        )
        stem = replace(spec.stem, out_channels=cfg["ratio_base"])
        return replace(spec, stages=stages, stem=stem, name="stage ratio")

    if sid == StepId.PATCHIFY_STEM:
        depths = tuple(s.blocks for s in spec.stages)
        _require(spec.stem.kind == StemKind.RESNET and depths == cfg["depths"],
                 sid, "patchify stem follows the stage-ratio step")
        stem = B.patchify_stem(4, 4, spec.stem.out_channels, NormKind.BATCH, ActKind.RELU)
        return replace(spec, stem=stem, name="patchify stem")

    if sid == StepId.DEPTHWISE_CONV:
        _require(spec.stem.kind == StemKind.PATCHIFY and t.grouping == Grouping.DENSE
                 and t.inner_ratio == 0.25, sid, "depthwise conv follows the patchify step")
        return replace(_map_blocks(spec, lambda b: replace(b, grouping=Grouping.DEPTHWISE)),
                       name="depthwise conv")

    if sid == StepId.INCREASE_WIDTH:
        _require(t.grouping == Grouping.DEPTHWISE and t.inner_ratio == 0.25
                 and t.hidden_channels == cfg["ratio_base"],
                 sid, "increase width follows the depthwise step")
        scale = cfg["wide_base"] / cfg["ratio_base"]
        stages = tuple(
            StageSpec(s.blocks, int(s.width * scale), replace(s.block, channels=int(s.width * scale)))
            for s in spec.stages
        )
        stem = replace(spec.stem, out_channels=cfg["wide_base"])
        return replace(spec, stages=stages, stem=stem, name="increase width")

    if sid == StepId.INVERT_DIMS:
        _require(t.inner_ratio == 0.25 and t.grouping == Grouping.DEPTHWISE
                 and t.hidden_channels == cfg["wide_base"],
                 sid, "inverting dimensions follows the width increase")
        stages = tuple(
            StageSpec(s.blocks, s.width // 4, replace(s.block, channels=s.width // 4, inner_ratio=4.0))
            for s in spec.stages
        )
        return replace(spec, stages=stages, name="inverting dimensions")

    if sid == StepId.MOVE_UP_DW:
        _require(t.inner_ratio == 4.0 and t.spatial_position == SpatialPosition.MIDDLE,
                 sid, "moving up the depthwise conv follows the inverted bottleneck")
        return replace(_map_blocks(spec, lambda b: replace(b, spatial_position=SpatialPosition.FIRST)),
                       name="move up depthwise conv")

    if sid in (StepId.KERNEL_5, StepId.KERNEL_7, StepId.KERNEL_9, StepId.KERNEL_11):
        k = int(sid.value.split("_")[1])
        _require(t.spatial_position == SpatialPosition.FIRST
                 and t.act_placement == ActPlacement.PER_CONV,
                 sid, "kernel sweep follows the moved-up depthwise conv")
        return replace(_map_blocks(spec, lambda b: replace(b, kernel_size=k)),
                       name=f"kernel size {k}")

    if sid == StepId.RELU_TO_GELU:
        _require(t.act_kind == ActKind.RELU and t.spatial_position == SpatialPosition.FIRST,
                 sid, "the activation swap follows the kernel sweep")
        stem = replace(spec.stem, act_kind=ActKind.GELU) if spec.stem.act_kind else spec.stem
        return replace(_map_blocks(spec, lambda b: replace(b, act_kind=ActKind.GELU)),
                       stem=stem, name="ReLU to GELU")

    if sid == StepId.FEWER_ACTS:
        _require(t.act_kind == ActKind.GELU and t.act_placement == ActPlacement.PER_CONV,
                 sid, "fewer activations follows the GELU swap")
        stem = replace(spec.stem, act_kind=None)
        return replace(
            _map_blocks(spec, lambda b: replace(b, act_placement=ActPlacement.SINGLE_BETWEEN_POINTWISE)),
            stem=stem, name="fewer activations")

    if sid == StepId.FEWER_NORMS:
        _require(t.act_placement == ActPlacement.SINGLE_BETWEEN_POINTWISE
                 and t.norm_placement == NormPlacement.PER_CONV,
                 sid, "fewer norms follows fewer activations")
        return replace(
            _map_blocks(spec, lambda b: replace(b, norm_placement=NormPlacement.SINGLE_BEFORE_POINTWISE)),
            name="fewer norms")

    if sid == StepId.BN_TO_LN:
        _require(t.norm_kind == NormKind.BATCH
                 and t.norm_placement == NormPlacement.SINGLE_BEFORE_POINTWISE,
                 sid, "the BN to LN swap follows the fewer-norms step")
        stem = replace(spec.stem, norm_kind=NormKind.LAYER)
        return replace(_map_blocks(spec, lambda b: replace(b, norm_kind=NormKind.LAYER)),
                       stem=stem, name="BN to LN")

    if sid == StepId.SEPARATE_DS:
        _require(t.norm_kind == NormKind.LAYER and spec.downsampling == Downsampling.IN_BLOCK,
                 sid, "separate downsampling is the final step")
        out = _map_blocks(spec, lambda b: replace(b, layer_scale_init=LAYER_SCALE_INIT))
        return replace(out, downsampling=Downsampling.SEPARATE,
                       head=replace(spec.head, final_norm=True), name=cfg["final"])

    raise KeyError(f"unknown roadmap step {sid!r}")


def roadmap(regime: Regime | str) -> list[tuple[RoadmapStep, ModelSpec]]:
    """All Table-row specs of one regime, in order; the kernel sweep rows are
    mutually exclusive alternatives branching from the moved-up spec, and the
    micro steps continue from the kernel-7 choice."""
    regime = Regime(regime)
    cfg = _REGIME[regime]
    rows: list[tuple[RoadmapStep, ModelSpec]] = []
    spec = build_variant(cfg["baseline"])
    for sid in (StepId.BASELINE_RECIPE, StepId.STAGE_RATIO, StepId.PATCHIFY_STEM,
                StepId.DEPTHWISE_CONV, StepId.INCREASE_WIDTH, StepId.INVERT_DIMS,
                StepId.MOVE_UP_DW):
        step = RoadmapStep(sid, regime)
        spec = apply_step(spec, step)
        rows.append((step, spec))
    moved_up = spec
    kernel7 = None
    for sid in (StepId.KERNEL_5, StepId.KERNEL_7, StepId.KERNEL_9, StepId.KERNEL_11):
        step = RoadmapStep(sid, regime)
        candidate = apply_step(moved_up, step)
        rows.append((step, candidate))
        if sid == StepId.KERNEL_7:
            kernel7 = candidate
    spec = kernel7
    for sid in (StepId.RELU_TO_GELU, StepId.FEWER_ACTS, StepId.FEWER_NORMS,
                StepId.BN_TO_LN, StepId.SEPARATE_DS):
        step = RoadmapStep(sid, regime)
        spec = apply_step(spec, step)
        rows.append((step, spec))
    return rows


# ---------------------------------------------------------------------------
# Spec serialization (human-readable structured text)
# ---------------------------------------------------------------------------


def spec_to_dict(model: ModelSpec) -> dict:
    def block_dict(b: BlockSpec) -> dict:
        return {
            "channels": b.channels, "kernel_size": b.kernel_size, "inner_ratio": b.inner_ratio,
            "spatial_position": b.spatial_position.value, "grouping": b.grouping.value,
            "norm_kind": b.norm_kind.value, "norm_placement": b.norm_placement.value,
            "act_kind": b.act_kind.value, "act_placement": b.act_placement.value,
            "layer_scale_init": b.layer_scale_init, "drop_path_rate": b.drop_path_rate,
            "spatial_groups": b.spatial_groups,
        }

    return {
        "name": model.name,
        "stem": {
            "kind": model.stem.kind.value, "kernel_size": model.stem.kernel_size,
            "stride": model.stem.stride, "out_channels": model.stem.out_channels,
            "norm_kind": model.stem.norm_kind.value if model.stem.norm_kind else None,
            "act_kind": model.stem.act_kind.value if model.stem.act_kind else None,
            "in_channels": model.stem.in_channels,
        },
        "stages": [{"blocks": s.blocks, "width": s.width, "block": block_dict(s.block)}
                   for s in model.stages],
        "downsampling": model.downsampling.value,
        "head": {"num_classes": model.head.num_classes, "final_norm": model.head.final_norm},
    }


def spec_from_dict(d: dict) -> ModelSpec:
    if "variant" in d:
        return build_variant(d["variant"], d.get("num_classes", 1000))

    def block_from(bd: dict) -> BlockSpec:
        return BlockSpec(
            channels=bd["channels"], kernel_size=bd["kernel_size"], inner_ratio=bd["inner_ratio"],
            spatial_position=SpatialPosition(bd["spatial_position"]), grouping=Grouping(bd["grouping"]),
            norm_kind=NormKind(bd["norm_kind"]), norm_placement=NormPlacement(bd["norm_placement"]),
            act_kind=ActKind(bd["act_kind"]), act_placement=ActPlacement(bd["act_placement"]),
            layer_scale_init=bd.get("layer_scale_init"), drop_path_rate=bd.get("drop_path_rate", 0.0),
            spatial_groups=bd.get("spatial_groups"),
        )

    sd = d["stem"]
    stem = StemSpec(
        kind=StemKind(sd["kind"]), kernel_size=sd["kernel_size"], stride=sd["stride"],
        out_channels=sd["out_channels"],
        norm_kind=NormKind(sd["norm_kind"]) if sd.get("norm_kind") else None,
        act_kind=ActKind(sd["act_kind"]) if sd.get("act_kind") else None,
        in_channels=sd.get("in_channels", 3),
    )
    stages = tuple(StageSpec(s["blocks"], s["width"], block_from(s["block"])) for s in d["stages"])
    return ModelSpec(
        stem=stem, stages=stages, downsampling=Downsampling(d["downsampling"]),
        head=HeadSpec(d["head"].get("num_classes", 1000), d["head"].get("final_norm", False)),
        name=d.get("name"),
    )


def spec_to_json(model: ModelSpec, indent: int = 2) -> str:
    return json.dumps(spec_to_dict(model), indent=indent)


def spec_from_json(text: str) -> ModelSpec:
    return spec_from_dict(json.loads(text))
