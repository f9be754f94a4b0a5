"""Cross-framework parity: the engine must reproduce the torch references.

This is the oracle handoff: full-variant activations within 1e-3 max abs,
micro/intermediate architectures within 1e-4.
"""

import numpy as np
import pytest

from cnx import arch, weights_io
from cnx_exporter import (export_fixture, export_random_micro, export_weights,
                          make_seeded_checkpoint, torchvision_manifest)

from conftest import MICRO_CLASSIC, MICRO_CONVNEXT, MICRO_MOVED_UP


def probe_diffs(spec, weights_path, fixture_path):
    bound = weights_io.bind(weights_io.load(weights_path), spec)
    fixture = weights_io.load_fixture(fixture_path)
    weights_io.validate_fixture(fixture, spec)
    _, probes = arch.forward_probed(spec, bound, fixture.input)
    return {name: float(np.max(np.abs(probes[name] - expected)))
            for name, expected in fixture.probes.items()}


@pytest.fixture(scope="module")
def exported(tmp_path_factory):
    root = tmp_path_factory.mktemp("tiny")
    ckpt = root / "convnext_tiny.pt"
    make_seeded_checkpoint("convnext-t", ckpt, seed=0)
    manifest = torchvision_manifest("convnext-t", str(ckpt))
    wpath, fpath = root / "w.cnxw", root / "f.cnxw"
    export_weights(manifest, wpath)
    export_fixture(manifest, fpath, seed=3, resolution=224)
    return wpath, fpath


class TestConvNextTinyParity:
    def test_logits_and_all_stage_probes_within_1e3(self, exported):
        wpath, fpath = exported
        diffs = probe_diffs(arch.build_variant("convnext-t"), wpath, fpath)
        assert set(diffs) == {"stem_out", "stage0_out", "stage1_out", "stage2_out",
                              "stage3_out", "pooled", "logits"}
        for name, diff in sorted(diffs.items()):
            assert diff <= 1e-3, f"{name}: {diff:.3e}"
        print("\nACCEPTANCE convnext-t parity vs torchvision: PASS "
              f"(worst probe {max(diffs.values()):.3e} <= 1e-3)")


class TestMicroParity:
    @pytest.mark.parametrize("name,spec_dict,resolution", [
        ("convnext_micro_block", MICRO_CONVNEXT, 16),
        ("classic_bottleneck", MICRO_CLASSIC, 32),
        ("strided_moved_up_depthwise", MICRO_MOVED_UP, 16),
    ])
    def test_random_weight_parity_within_1e4(self, tmp_path, name, spec_dict, resolution):
        wpath = tmp_path / f"{name}.w.cnxw"
        fpath = tmp_path / f"{name}.f.cnxw"
        export_random_micro(spec_dict, seed=5, weights_path=wpath, fixture_path=fpath,
                            resolution=resolution, batch=2)
        diffs = probe_diffs(arch.spec_from_dict(spec_dict), wpath, fpath)
        worst = max(diffs.values())
        assert worst <= 1e-4, diffs
        print(f"\nACCEPTANCE {name} parity: PASS (worst probe {worst:.3e} <= 1e-4)")

    def test_rerun_same_seed_is_bitwise_identical(self, tmp_path):
        a_w, a_f = tmp_path / "a.w", tmp_path / "a.f"
        b_w, b_f = tmp_path / "b.w", tmp_path / "b.f"
        export_random_micro(MICRO_CONVNEXT, seed=2, weights_path=a_w, fixture_path=a_f)
        export_random_micro(MICRO_CONVNEXT, seed=2, weights_path=b_w, fixture_path=b_f)
        assert a_w.read_bytes() == b_w.read_bytes()
        assert a_f.read_bytes() == b_f.read_bytes()
