"""Export torch checkpoints and reference activations into cnx containers.

Layout adaptation from torch conventions to the container's canonical
extents is rule-based: 4-d conv weights (O, I/g, kH, kW) -> (kH, kW, I/g, O),
2-d linear weights (O, I) -> (I, O), everything else reshaped to the declared
vector extents. The canonical name decides the rule; a shape that cannot be
adapted is an extent mismatch.
"""

from __future__ import annotations

import numpy as np
import torch

from cnx import arch, weights_io

from . import container
from .manifest import ExportManifest, MappingError, UnmappedParameterError
from .reference import (build_torchvision_model, random_spec_params, spec_forward,
                        torchvision_forward_with_probes)

EXPORTER_VERSION = "cnx-exporter/0.1.0"
INPUT_GENERATOR = "numpy.random.default_rng(seed).standard_normal((n, r, r, 3)), float32"


class ExtentMismatchError(ValueError):
    pass


def adapt_tensor(canonical: str, source: torch.Tensor, expected: tuple[int, ...]) -> np.ndarray:
    arr = source.detach().cpu().numpy()
    if arr.ndim == 4 and canonical.endswith(".weight"):
        arr = arr.transpose(2, 3, 1, 0)
    elif arr.ndim == 2 and canonical.endswith(".weight"):
        # torch Linear (out, in) -> (in, out); a 1x1 conv target reshapes below
        arr = arr.T
    if arr.shape != tuple(expected) and arr.size == int(np.prod(expected)):
        arr = arr.reshape(expected)
    if arr.shape != tuple(expected):
        raise ExtentMismatchError(
            f"{canonical}: source extents {tuple(source.shape)} do not adapt to spec extents {tuple(expected)}")
    return np.ascontiguousarray(arr, dtype=np.float32)


def _base_metadata(spec: arch.ModelSpec, manifest: ExportManifest | None, source_dtype: str) -> dict:
    meta = {
        "spec": spec.name or "custom",
        "spec_config": arch.spec_to_dict(spec),
        "ln_eps": 1e-6,
        "bn_eps": 1e-5,
        "exporter": EXPORTER_VERSION,
        "source_dtype": source_dtype,
    }
    if manifest is not None:
        meta["source"] = {"path": manifest.source_path, "url": manifest.source_url}
        meta["mean"] = manifest.mean
        meta["std"] = manifest.std
    return meta


def export_weights(manifest: ExportManifest, out_path) -> None:
    """Convert the manifest's source checkpoint into a container that binds
    cleanly against the named variant."""
    manifest.validate()
    spec = manifest.spec()
    expected = arch.parameter_shapes(spec)
    state = torch.load(manifest.source_path, map_location="cpu", weights_only=True)

    unmapped = sorted(k for k in state if k not in manifest.mapping)
    if unmapped:
        raise UnmappedParameterError(f"source parameters without mapping rows: {', '.join(unmapped[:5])}"
                                     + (" ..." if len(unmapped) > 5 else ""))
    missing_src = sorted(k for k in manifest.mapping if k not in state)
    if missing_src:
        raise MappingError(f"mapping rows without source parameters: {', '.join(missing_src[:5])}")

    source_dtype = str(next(iter(state.values())).dtype).replace("torch.", "")
    arrays = {}
    for src_name, canonical in manifest.mapping.items():
        arrays[canonical] = adapt_tensor(canonical, state[src_name], expected[canonical])
    ordered = {name: arrays[name] for name in expected}
    container.write_container(out_path, ordered, _base_metadata(spec, manifest, source_dtype))
    container.lint_container(out_path)
    weights_io.bind(weights_io.load(out_path), spec)


def fixture_input(seed: int, resolution: int, batch: int = 1) -> np.ndarray:
    """Documented deterministic pseudo-random fixture input (pre-normalized)."""
    rng = np.random.default_rng(seed)
    return rng.standard_normal((batch, resolution, resolution, 3)).astype(np.float32)


def _probes_to_nhwc(probes: dict[str, torch.Tensor]) -> dict[str, np.ndarray]:
    out = {}
    for name, t in probes.items():
        a = t.detach().cpu().numpy()
        if a.ndim == 4:
            a = a.transpose(0, 2, 3, 1)
        out[name] = np.ascontiguousarray(a, dtype=np.float32)
    return out


def export_fixture(manifest: ExportManifest, out_path, seed: int, resolution: int = 224,
                   batch: int = 1) -> None:
    """Run the torchvision reference on a seeded input and capture probes."""
    manifest.validate()
    spec = manifest.spec()
    model = build_torchvision_model(manifest.variant, manifest.num_classes)
    state = torch.load(manifest.source_path, map_location="cpu", weights_only=True)
    model.load_state_dict(state)
    model.eval()

    x = fixture_input(seed, resolution, batch)
    x_nchw = torch.from_numpy(x.transpose(0, 3, 1, 2)).contiguous()
    _, probes = torchvision_forward_with_probes(model, x_nchw)
    probes = _probes_to_nhwc({name: probes[name] for name in manifest.probes})

    meta = _base_metadata(spec, manifest, "float32")
    meta.update({"seed": seed, "resolution": resolution, "input_generator": INPUT_GENERATOR,
                 "reference": "torchvision"})
    container.write_fixture(out_path, x, probes, meta)
    container.lint_container(out_path)
    fixture = weights_io.load_fixture(out_path)
    weights_io.validate_fixture(fixture, spec)


def export_random_micro(spec_dict: dict, seed: int, weights_path, fixture_path,
                        resolution: int = 16, batch: int = 2) -> None:
    """Build the spec-schema architecture in torch, random-initialize with the
    seed, and export a weights/fixture pair for intermediate-architecture parity."""
    spec = arch.spec_from_dict(spec_dict)
    expected = arch.parameter_shapes(spec)
    params = random_spec_params(spec_dict, seed)

    arrays = {name: adapt_tensor(name, params[name], shape) for name, shape in expected.items()}
    meta = _base_metadata(spec, None, "float32")
    meta["seed"] = seed
    container.write_container(weights_path, arrays, meta)
    container.lint_container(weights_path)
    weights_io.bind(weights_io.load(weights_path), spec)

    x = fixture_input(seed, resolution, batch)
    x_nchw = torch.from_numpy(x.transpose(0, 3, 1, 2)).contiguous()
    probes: dict[str, torch.Tensor] = {}
    with torch.no_grad():
        spec_forward(spec_dict, params, x_nchw, probes)
    fmeta = dict(meta)
    fmeta.update({"resolution": resolution, "input_generator": INPUT_GENERATOR,
                  "reference": "torch spec-schema interpreter"})
    container.write_fixture(fixture_path, x, _probes_to_nhwc(probes), fmeta)
    container.lint_container(fixture_path)


def make_seeded_checkpoint(variant: str, path, seed: int, layer_scale: float = 0.25,
                           num_classes: int = 1000) -> None:
    """Create a local torchvision-format checkpoint as the export source.

    Stands in for a published checkpoint when none is reachable; layer-scale
    values are raised from their 1e-6 init so residual branches contribute
    meaningfully to parity.
    """
    torch.manual_seed(seed)
    model = build_torchvision_model(variant, num_classes)
    state = model.state_dict()
    for name in state:
        if name.endswith("layer_scale"):
            state[name] = torch.full_like(state[name], layer_scale)
    torch.save(state, path)
