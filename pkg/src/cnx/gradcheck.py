"""Finite-difference verification cases for every backward rule.

Each case builds a float64 micro instance of one op, produces a scalar loss
through a fixed random projection, and compares tape gradients against
central differences. The CLI ``gradcheck`` subcommand and the test suite both
run these cases.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from . import blocks as B


class WeightedSum(ag.Op):
    """Scalar projection sum(x * weights); turns any output into a loss."""

    name = "weighted_sum"

    @staticmethod
    def forward(attrs, x):
        return np.asarray((x * attrs["weights"]).sum()), None

    @staticmethod
    def backward(ctx, attrs, grad):
        return (grad * attrs["weights"],)


def _loss_fn(build):
    """Wrap an op-graph builder into the (loss, grads) callable the checker wants.

    ``build(tape, leafs)`` must return the output ref; the loss is a fixed
    random projection of that output, created once per case.
    """
    proj = {}

    def fn(params):
        tape = ag.Tape()
        leafs = {k: tape.leaf(v, k) for k, v in params.items()}
        out = build(tape, leafs)
        if "w" not in proj:
            rng = np.random.default_rng(1234)
            proj["w"] = rng.standard_normal(out.value.shape)
        loss = tape.apply(WeightedSum, [out], weights=proj["w"])
        grads = tape.backward(loss).named()
        return float(loss.value), grads

    return fn


@dataclass
class Case:
    name: str
    params: dict[str, np.ndarray]
    fn: object  # callable(params) -> (loss, grads)


def _rand(rng, *shape):
    return rng.standard_normal(shape)


def _conv_case(rng, tag, xshape, wshape, stride, padding, groups, bias=True):
    params = {"x": _rand(rng, *xshape), "w": 0.5 * _rand(rng, *wshape)}
    if bias:
        params["b"] = 0.1 * _rand(rng, wshape[3])

    def build(tape, leafs):
        inputs = [leafs["x"], leafs["w"]] + ([leafs["b"]] if bias else [])
        return tape.apply(ag.Conv2d, inputs, stride=stride, padding=padding,
                          groups=groups, with_bias=bias)

    return Case(tag, params, _loss_fn(build))


def _case_conv2d(rng, i):
    return [
        _conv_case(rng, f"conv2d/dense[{i}]", (2, 5, 5, 3), (3, 3, 3, 4), (1, 1), (1, 1), 1),
        _conv_case(rng, f"conv2d/grouped[{i}]", (1, 5, 5, 4), (3, 3, 2, 6), (1, 1), (0, 0), 2),
        _conv_case(rng, f"conv2d/depthwise[{i}]", (1, 6, 6, 4), (3, 3, 1, 4), (1, 1), (1, 1), 4),
        _conv_case(rng, f"conv2d/strided[{i}]", (1, 7, 7, 3), (3, 3, 3, 5), (2, 2), (1, 1), 1, bias=False),
    ]


def _case_linear(rng, i):
    params = {"x": _rand(rng, 2, 3, 3, 4), "w": 0.5 * _rand(rng, 4, 5), "b": 0.1 * _rand(rng, 5)}

    def build(tape, leafs):
        return tape.apply(ag.Linear, [leafs["x"], leafs["w"], leafs["b"]], with_bias=True)

    return [Case(f"linear[{i}]", params, _loss_fn(build))]


def _case_layer_norm(rng, i):
    params = {"x": _rand(rng, 1, 3, 3, 6), "gamma": 1.0 + 0.2 * _rand(rng, 6), "beta": 0.1 * _rand(rng, 6)}

    def build(tape, leafs):
        return tape.apply(ag.LayerNorm, [leafs["x"], leafs["gamma"], leafs["beta"]], eps=1e-6)

    return [Case(f"layer_norm[{i}]", params, _loss_fn(build))]


def _case_batch_norm(rng, i):
    mean = _rand(rng, 5)
    var = 0.5 + np.abs(_rand(rng, 5))
    params = {"x": _rand(rng, 2, 3, 3, 5), "gamma": 1.0 + 0.2 * _rand(rng, 5), "beta": 0.1 * _rand(rng, 5)}

    def build(tape, leafs):
        return tape.apply(ag.BatchNormAffine, [leafs["x"], leafs["gamma"], leafs["beta"]],
                          mean=mean, var=var, eps=1e-5)

    return [Case(f"batch_norm_inference[{i}]", params, _loss_fn(build))]


def _case_gelu(rng, i):
    params = {"x": 2.0 * _rand(rng, 1, 4, 4, 3)}

    def build(tape, leafs):
        return tape.apply(ag.Gelu, [leafs["x"]])

    return [Case(f"gelu[{i}]", params, _loss_fn(build))]


def _case_relu(rng, i):
    # Keep values away from the kink at 0, where FD is ill-defined.
    x = _rand(rng, 1, 4, 4, 3)
    x = np.where(np.abs(x) < 0.05, 0.5, x)
    params = {"x": x}

    def build(tape, leafs):
        return tape.apply(ag.Relu, [leafs["x"]])

    return [Case(f"relu[{i}]", params, _loss_fn(build))]


def _case_max_pool(rng, i):
    params = {"x": _rand(rng, 1, 6, 6, 2)}

    def build(tape, leafs):
        return tape.apply(ag.MaxPool, [leafs["x"]], kernel=(3, 3), stride=(2, 2), padding=(1, 1))

    return [Case(f"max_pool[{i}]", params, _loss_fn(build))]


def _case_global_avg_pool(rng, i):
    params = {"x": _rand(rng, 2, 5, 5, 3)}

    def build(tape, leafs):
        return tape.apply(ag.GlobalAvgPool, [leafs["x"]])

    return [Case(f"global_avg_pool[{i}]", params, _loss_fn(build))]


def _case_layer_scale(rng, i):
    params = {"x": _rand(rng, 1, 4, 4, 5), "g": 0.5 * _rand(rng, 5)}

    def build(tape, leafs):
        return tape.apply(ag.ChannelScale, [leafs["x"], leafs["g"]])

    return [Case(f"layer_scale[{i}]", params, _loss_fn(build))]


def _case_drop_path(rng, i):
    mult = B.drop_path_multiplier(rng, 4, 0.5, dtype=np.float64)
    params = {"x": _rand(rng, 4, 3, 3, 2)}

    def build(tape, leafs):
        return tape.apply(ag.MulConst, [leafs["x"]], const=mult)

    return [Case(f"drop_path_fixed_mask[{i}]", params, _loss_fn(build))]


def _case_residual_add(rng, i):
    params = {"a": _rand(rng, 1, 4, 4, 3), "b": _rand(rng, 1, 4, 4, 3)}

    def build(tape, leafs):
        return tape.apply(ag.Add, [leafs["a"], leafs["b"]])

    return [Case(f"residual_add[{i}]", params, _loss_fn(build))]


def _case_cross_entropy(rng, i):
    labels = rng.integers(0, 5, size=3)
    params = {"logits": _rand(rng, 3, 5)}

    def fn(p):
        tape = ag.Tape()
        lref = tape.leaf(p["logits"], "logits")
        loss = tape.apply(ag.CrossEntropySmoothed, [lref], labels=labels, eps=0.1)
        return float(loss.value), tape.backward(loss).named()

    return [Case(f"cross_entropy[{i}]", params, fn)]


def micro_block_spec(channels: int = 4) -> B.BlockSpec:
    return B.BlockSpec(
        channels=channels, kernel_size=7, inner_ratio=4.0,
        spatial_position=B.SpatialPosition.FIRST, grouping=B.Grouping.DEPTHWISE,
        norm_kind=B.NormKind.LAYER, norm_placement=B.NormPlacement.SINGLE_BEFORE_POINTWISE,
        act_kind=B.ActKind.GELU, act_placement=B.ActPlacement.SINGLE_BETWEEN_POINTWISE,
        layer_scale_init=1e-2,
    )


def _case_block_micro(rng, i):
    spec = micro_block_spec(4)
    shapes = B.block_param_shapes(spec)
    params = {"x": _rand(rng, 1, 6, 6, 4)}
    for name, shape in shapes.items():
        if name.endswith(".weight"):
            params[name] = 0.3 * _rand(rng, *shape)
        elif name.endswith(".gamma") or name == "gamma":
            params[name] = 1.0 + 0.1 * _rand(rng, *shape)
        else:
            params[name] = 0.05 * _rand(rng, *shape)

    def build(tape, leafs):
        # Runner.param passes already-leafed refs through, so the leafs dict
        # doubles as the block's weights dict.
        return B.apply_block(ag.Runner(tape), leafs["x"], spec, leafs, "eval")

    return [Case(f"block_micro[{i}]", params, _loss_fn(build))]


CASE_BUILDERS = {
    "conv2d": _case_conv2d,
    "linear": _case_linear,
    "layer_norm": _case_layer_norm,
    "batch_norm_inference": _case_batch_norm,
    "gelu": _case_gelu,
    "relu": _case_relu,
    "max_pool": _case_max_pool,
    "global_avg_pool": _case_global_avg_pool,
    "layer_scale": _case_layer_scale,
    "drop_path": _case_drop_path,
    "residual_add": _case_residual_add,
    "cross_entropy": _case_cross_entropy,
    "block_micro": _case_block_micro,
}


@dataclass
class CaseResult:
    name: str
    passed: bool
    worst_rel_error: float


def run_gradcheck(ops=None, seed: int = 0, tol: float = 1e-5, instances: int = 3,
                  h: float = 1e-5) -> list[CaseResult]:
    """Run the FD suite; >= `instances` random micro instances per op."""
    names = list(CASE_BUILDERS) if ops is None else list(ops)
    unknown = [n for n in names if n not in CASE_BUILDERS]
    if unknown:
        raise KeyError(f"unknown gradcheck ops: {', '.join(unknown)}")
    results = []
    for op in names:
        for i in range(instances):
            rng = np.random.default_rng(seed * 1000 + i)
            for case in CASE_BUILDERS[op](rng, i):
                report = ag.finite_diff_check(case.fn, case.params, h=h, tol=tol)
                results.append(CaseResult(case.name, report.passed, report.worst()))
    return results
