"""Exact parameter and multiply-accumulate accounting for any model spec.

Counting convention: one reported "FLOP" is one multiply-accumulate.
Convs and linear layers count k*k*(Cin/groups)*Cout per output position;
normalizations, activations, pooling, and biases are excluded. The
convention tag is embedded in every report so serialized numbers are
self-describing.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from . import blocks as B
from .arch import Downsampling, ModelSpec, RoadmapStep, Regime, downsampler_widths, roadmap, stage_block_specs
from .blocks import ConvDef, MaxPoolDef, NormDef, NormKind, ScaleDef
from .tensor import conv_output_size

CONVENTION = ("1 FLOP = 1 multiply-accumulate; convs and linear layers count "
              "kH*kW*(Cin/groups)*Cout per output position; norms, activations, "
              "pooling, and biases excluded")


@dataclass(frozen=True)
class CostRow:
    name: str
    params: int
    macs: int
    non_trainable: int = 0  # batch-norm running statistics


@dataclass
class CostReport:
    rows: list[CostRow]
    resolution: int
    convention: str = CONVENTION
    spec_name: str = ""

    @property
    def total_params(self) -> int:
        return sum(r.params for r in self.rows)

    @property
    def total_macs(self) -> int:
        return sum(r.macs for r in self.rows)

    @property
    def total_non_trainable(self) -> int:
        return sum(r.non_trainable for r in self.rows)

    def to_dict(self) -> dict:
        return {
            "spec": self.spec_name,
            "resolution": self.resolution,
            "convention": self.convention,
            "rows": [{"name": r.name, "params": r.params, "macs": r.macs,
                      "non_trainable": r.non_trainable} for r in self.rows],
            "total_params": self.total_params,
            "total_macs": self.total_macs,
            "total_non_trainable": self.total_non_trainable,
        }

    def to_text(self) -> str:
        """Fixed-width columns: name (48, left), params (14), MACs (18)."""
        lines = [f"{'layer':<48}{'params':>14}{'MACs':>18}"]
        for r in self.rows:
            lines.append(f"{r.name:<48}{r.params:>14}{r.macs:>18}")
        lines.append(f"{'TOTAL':<48}{self.total_params:>14}{self.total_macs:>18}")
        if self.total_non_trainable:
            lines.append(f"# non-trainable (running stats): {self.total_non_trainable}")
        lines.append(f"# resolution: {self.resolution}x{self.resolution}")
        lines.append(f"# convention: {self.convention}")
        return "\n".join(lines)


def _layer_rows(layers, prefix: str, h: int, w: int) -> tuple[list[CostRow], int, int]:
    rows: list[CostRow] = []
    for d in layers:
        if isinstance(d, ConvDef):
            ho = conv_output_size(h, d.kernel[0], d.stride[0], d.padding[0])
            wo = conv_output_size(w, d.kernel[1], d.stride[1], d.padding[1])
            params = d.kernel[0] * d.kernel[1] * (d.in_channels // d.groups) * d.out_channels
            if d.bias:
                params += d.out_channels
            macs = d.kernel[0] * d.kernel[1] * (d.in_channels // d.groups) * d.out_channels * ho * wo
            rows.append(CostRow(f"{prefix}{d.name}", params, macs))
            h, w = ho, wo
        elif isinstance(d, NormDef):
            stats = 2 * d.channels if d.kind == NormKind.BATCH else 0
            rows.append(CostRow(f"{prefix}{d.name}", 2 * d.channels, 0, stats))
        elif isinstance(d, ScaleDef):
            rows.append(CostRow(f"{prefix}{d.name}", d.channels, 0))
        elif isinstance(d, MaxPoolDef):
            h = conv_output_size(h, d.kernel[0], d.stride[0], d.padding[0])
            w = conv_output_size(w, d.kernel[1], d.stride[1], d.padding[1])
    return rows, h, w


def _block_rows(spec, prefix: str, h: int, w: int) -> tuple[list[CostRow], int, int]:
    plan = B.block_layers(spec)
    rows, ho, wo = _layer_rows(plan.branch, prefix, h, w)
    if plan.shortcut:
        srows, sh, sw = _layer_rows(plan.shortcut, prefix, h, w)
        if (sh, sw) != (ho, wo):
            raise AssertionError(f"shortcut/branch resolution mismatch at {prefix}: {(sh, sw)} vs {(ho, wo)}")
        rows.extend(srows)
    return rows, ho, wo


def cost_report(model: ModelSpec, resolution: int) -> CostReport:
    """Per-layer parameter and MAC accounting at a given input resolution."""
    rows, h, w = _layer_rows(B.stem_layers(model.stem), "stem.", resolution, resolution)
    ds = downsampler_widths(model)
    for i, stage in enumerate(model.stages):
        if i > 0 and ds:
            drows, h, w = _layer_rows(B.downsample_layers(*ds[i - 1]), f"downsamplers.{i - 1}.", h, w)
            rows.extend(drows)
        for j, bspec in enumerate(stage_block_specs(model, i)):
            brows, h, w = _block_rows(bspec, f"stages.{i}.blocks.{j}.", h, w)
            rows.extend(brows)
    c = model.stages[-1].width
    if model.head.final_norm:
        rows.append(CostRow("head.norm", 2 * c, 0))
    rows.append(CostRow("head.fc", c * model.head.num_classes + model.head.num_classes,
                        c * model.head.num_classes))
    return CostReport(rows, resolution, spec_name=model.name or "custom")


def count_params(model: ModelSpec) -> int:
    """Trainable parameter count (running statistics reported separately)."""
    return cost_report(model, 224).total_params


def count_macs(model: ModelSpec, resolution: int) -> int:
    """Multiply-accumulate count under the documented convention."""
    return cost_report(model, resolution).total_macs


def stage_output_sizes(model: ModelSpec, resolution: int) -> list[tuple[int, int]]:
    """Spatial extents after the stem (index 0) and after each stage (index i+1)."""
    _, h, w = _layer_rows(B.stem_layers(model.stem), "stem.", resolution, resolution)
    sizes = [(h, w)]
    ds = downsampler_widths(model)
    for i in range(len(model.stages)):
        if i > 0 and ds:
            _, h, w = _layer_rows(B.downsample_layers(*ds[i - 1]), "", h, w)
        for bspec in stage_block_specs(model, i):
            _, h, w = _block_rows(bspec, "", h, w)
        sizes.append((h, w))
    return sizes


def roadmap_cost_table(regime: Regime | str, resolution: int = 224) -> list[tuple[RoadmapStep, float]]:
    """GFLOPs (multiply-accumulates / 1e9) of every roadmap row."""
    return [(step, count_macs(spec, resolution) / 1e9) for step, spec in roadmap(regime)]


def block_composition(spec) -> str:
    """Short conv-stack description of one block, e.g. 'd7x7, 96 | 1x1, 384 | 1x1, 96'."""
    plan = B.block_layers(spec)
    parts = []
    for d in plan.branch:
        if isinstance(d, ConvDef):
            dw = "d" if d.groups == d.in_channels == d.out_channels and d.groups > 1 else ""
            parts.append(f"{dw}{d.kernel[0]}x{d.kernel[1]}, {d.out_channels}")
    return " | ".join(parts)


@dataclass
class StageSummary:
    name: str
    output_size: tuple[int, int]
    composition: str
    params: int
    macs: int


def stage_summaries(model: ModelSpec, resolution: int) -> list[StageSummary]:
    """Per-stage rollup mirroring a detailed-architecture table."""
    report = cost_report(model, resolution)
    sizes = stage_output_sizes(model, resolution)

    def rollup(prefix: str) -> tuple[int, int]:
        sel = [r for r in report.rows if r.name.startswith(prefix)]
        return sum(r.params for r in sel), sum(r.macs for r in sel)

    out = []
    p, m = rollup("stem.")
    out.append(StageSummary("stem", sizes[0], f"{model.stem.kernel_size}x{model.stem.kernel_size}, "
                                              f"{model.stem.out_channels}, stride {model.stem.stride}", p, m))
    for i, stage in enumerate(model.stages):
        p, m = rollup(f"stages.{i}.")
        if i > 0 and model.downsampling == Downsampling.SEPARATE:
            dp, dm = rollup(f"downsamplers.{i - 1}.")
            p, m = p + dp, m + dm
        comp = f"[{block_composition(stage.block)}] x {stage.blocks}"
        out.append(StageSummary(f"stage{i}", sizes[i + 1], comp, p, m))
    p, m = rollup("head.")
    out.append(StageSummary("head", (1, 1), f"GAP -> {model.head.num_classes} classes", p, m))
    return out
