"""Reference forward passes in torch.

Two reference families provide the parity oracle:

- torchvision's ConvNeXt models for the released variants, driven with
  forward hooks to capture the stage probes;
- a direct torch interpretation of the engine's JSON spec schema, for micro
  and roadmap-intermediate architectures torchvision does not ship.

The spec-schema interpreter keeps torch-native tensor layouts (conv OIHW,
linear (out, in)); the export step adapts layouts into the container.
"""

from __future__ import annotations

import numpy as np
import torch
import torch.nn.functional as F

LN_EPS = 1e-6
BN_EPS = 1e-5


def assert_exact_gelu(module: torch.nn.Module) -> None:
    """The parity tolerance assumes the exact erf GELU, not the tanh form."""
    for m in module.modules():
        if isinstance(m, torch.nn.GELU) and m.approximate != "none":
            raise AssertionError(f"reference model uses approximate GELU ({m.approximate})")


# ---------------------------------------------------------------------------
# Spec-schema interpreter
# ---------------------------------------------------------------------------


def _act(kind: str, x):
    if kind == "gelu":
        return F.gelu(x)
    if kind == "relu":
        return F.relu(x)
    raise ValueError(f"unknown activation {kind!r}")


def _norm(kind: str, params, name: str, x):
    if kind == "layer":
        # channels-last normalization on an NCHW tensor
        y = x.permute(0, 2, 3, 1)
        y = F.layer_norm(y, y.shape[-1:], params[f"{name}.gamma"], params[f"{name}.beta"], eps=LN_EPS)
        return y.permute(0, 3, 1, 2)
    if kind == "batch":
        return F.batch_norm(x, params[f"{name}.running_mean"], params[f"{name}.running_var"],
                            params[f"{name}.gamma"], params[f"{name}.beta"],
                            training=False, eps=BN_EPS)
    raise ValueError(f"unknown norm {kind!r}")


def _conv(params, name: str, x, stride: int, padding: int, groups: int = 1):
    bias = params.get(f"{name}.bias")
    return F.conv2d(x, params[f"{name}.weight"], bias, stride=stride, padding=padding, groups=groups)


def _block_forward(block: dict, params, prefix: str, x):
    cin = x.shape[1]
    cout = block["channels"]
    hidden = int(block["inner_ratio"] * cout)
    k = block["kernel_size"]
    stride = block.get("stride", 1)
    pad = (k - 1) // 2
    per_conv_norm = block["norm_placement"] == "per_conv"
    per_conv_act = block["act_placement"] == "per_conv"
    norm_kind = block["norm_kind"]
    act_kind = block["act_kind"]

    def norm(n, h):
        return _norm(norm_kind, params, f"{prefix}{n}", h)

    if block["spatial_position"] == "middle":
        groups = hidden if block["grouping"] == "depthwise" else (block.get("spatial_groups") or 1)
        h = _conv(params, f"{prefix}pw1", x, 1, 0)
        h = _act(act_kind, norm("norm1", h))
        h = _conv(params, f"{prefix}spatial", h, stride, pad, groups)
        h = _act(act_kind, norm("norm2", h))
        h = _conv(params, f"{prefix}pw2", h, 1, 0)
        h = norm("norm3", h)
        post_act = True
    else:
        h = _conv(params, f"{prefix}spatial", x, stride, pad, groups=cin)
        h = norm("norm1", h)
        if per_conv_act:
            h = _act(act_kind, h)
            h = _conv(params, f"{prefix}pw1", h, 1, 0)
            h = _act(act_kind, norm("norm2", h))
            h = _conv(params, f"{prefix}pw2", h, 1, 0)
            h = norm("norm3", h)
            post_act = True
        elif per_conv_norm:
            h = _conv(params, f"{prefix}pw1", h, 1, 0)
            h = _act(act_kind, norm("norm2", h))
            h = _conv(params, f"{prefix}pw2", h, 1, 0)
            h = norm("norm3", h)
            post_act = False
        else:
            h = _conv(params, f"{prefix}pw1", h, 1, 0)
            h = _act(act_kind, h)
            h = _conv(params, f"{prefix}pw2", h, 1, 0)
            post_act = False

    if f"{prefix}gamma" in params:
        h = h * params[f"{prefix}gamma"].reshape(1, cout, 1, 1)

    if f"{prefix}proj.weight" in params:
        short = _conv(params, f"{prefix}proj", x, stride, 0)
        short = _norm(norm_kind, params, f"{prefix}proj_norm", short)
    else:
        short = x
    out = short + h
    return _act(act_kind, out) if post_act else out


def spec_forward(spec_dict: dict, params: dict[str, torch.Tensor], x_nchw: torch.Tensor,
                 probes: dict | None = None) -> torch.Tensor:
    """Run the engine's JSON spec schema as a torch program (eval semantics)."""

    def probe(name, h):
        if probes is not None:
            probes[name] = h

    stem = spec_dict["stem"]
    if stem["kind"] == "resnet":
        h = _conv(params, "stem.conv", x_nchw, 2, 3)
    else:
        h = _conv(params, "stem.conv", x_nchw, stem["stride"], 0)
    if stem.get("norm_kind"):
        h = _norm(stem["norm_kind"], params, "stem.norm", h)
    if stem.get("act_kind"):
        h = _act(stem["act_kind"], h)
    if stem["kind"] == "resnet":
        h = F.max_pool2d(h, 3, stride=2, padding=1)
    probe("stem_out", h)

    separate = spec_dict["downsampling"] == "separate"
    for i, stage in enumerate(spec_dict["stages"]):
        if i > 0 and separate:
            h = _norm("layer", params, f"downsamplers.{i - 1}.norm", h)
            h = _conv(params, f"downsamplers.{i - 1}.conv", h, 2, 0)
        for j in range(stage["blocks"]):
            block = dict(stage["block"])
            if j == 0 and not separate and i > 0:
                block["stride"] = 2
            h = _block_forward(block, params, f"stages.{i}.blocks.{j}.", h)
        probe(f"stage{i}_out", h)

    h = h.mean(dim=(2, 3))
    if spec_dict["head"]["final_norm"]:
        h = F.layer_norm(h, h.shape[-1:], params["head.norm.gamma"], params["head.norm.beta"], eps=LN_EPS)
    probe("pooled", h)
    logits = F.linear(h, params["head.fc.weight"], params["head.fc.bias"])
    probe("logits", logits)
    return logits


def random_spec_params(spec_dict: dict, seed: int) -> dict[str, torch.Tensor]:
    """Seeded torch-native parameters for a spec-schema model.

    Canonical names, torch layouts: conv weights OIHW, linear weights
    (out, in), vectors 1-d. Norm statistics are randomized too so the
    batch-norm inference path is exercised.
    """
    from cnx import arch

    spec = arch.spec_from_dict(spec_dict)
    gen = torch.Generator().manual_seed(seed)

    def randn(*shape):
        return torch.randn(*shape, generator=gen, dtype=torch.float32)

    params: dict[str, torch.Tensor] = {}
    for d in arch.parameter_defs(spec):
        shape = d.shape
        if d.kind == "weight":
            if len(shape) == 4:  # canonical (kh, kw, cin/g, cout) -> torch (cout, cin/g, kh, kw)
                kh, kw, cin_g, cout = shape
                params[d.name] = 0.25 * randn(cout, cin_g, kh, kw)
            else:  # canonical (cin, cout) -> torch (cout, cin)
                cin, cout = shape
                params[d.name] = 0.25 * randn(cout, cin)
        elif d.kind == "bias":
            params[d.name] = 0.05 * randn(*shape)
        elif d.kind == "norm_gamma":
            params[d.name] = 1.0 + 0.1 * randn(*shape)
        elif d.kind == "norm_beta":
            params[d.name] = 0.05 * randn(*shape)
        elif d.kind == "running_mean":
            params[d.name] = 0.2 * randn(*shape)
        elif d.kind == "running_var":
            params[d.name] = 0.5 + torch.rand(*shape, generator=gen)
        elif d.kind == "layer_scale":
            params[d.name] = torch.full(shape, float(d.fill))
        else:
            raise AssertionError(d.kind)
    return params


# ---------------------------------------------------------------------------
# torchvision adapter
# ---------------------------------------------------------------------------

_TORCHVISION_BUILDERS = {
    "convnext-t": "convnext_tiny",
    "convnext-s": "convnext_small",
    "convnext-b": "convnext_base",
    "convnext-l": "convnext_large",
}


def build_torchvision_model(variant: str, num_classes: int = 1000) -> torch.nn.Module:
    import torchvision.models as tvm

    if variant not in _TORCHVISION_BUILDERS:
        raise KeyError(f"no torchvision reference for {variant!r}")
    model = getattr(tvm, _TORCHVISION_BUILDERS[variant])(weights=None, num_classes=num_classes)
    model.eval()
    assert_exact_gelu(model)
    return model


def torchvision_forward_with_probes(model: torch.nn.Module, x_nchw: torch.Tensor
                                    ) -> tuple[torch.Tensor, dict[str, torch.Tensor]]:
    """Eval forward capturing the canonical probe set via hooks."""
    probes: dict[str, torch.Tensor] = {}
    hooks = []

    def grab(name):
        def fn(_m, _inp, out):
            probes[name] = out.detach()
        return fn

    hooks.append(model.features[0].register_forward_hook(grab("stem_out")))
    for i, fi in enumerate((1, 3, 5, 7)):
        hooks.append(model.features[fi].register_forward_hook(grab(f"stage{i}_out")))
    hooks.append(model.classifier[1].register_forward_hook(grab("pooled")))  # post-norm flatten
    try:
        with torch.no_grad():
            logits = model(x_nchw)
    finally:
        for h in hooks:
            h.remove()
    probes["logits"] = logits.detach()
    return logits, probes
