import json
from pathlib import Path

import numpy as np
import pytest
import torch

from cnx import analysis, arch, weights_io
from cnx_exporter import (ExportManifest, ExtentMismatchError, MappingError,
                          UnmappedParameterError, assert_exact_gelu, export_fixture,
                          export_random_micro, export_weights, lint_container,
                          make_seeded_checkpoint, torchvision_manifest, write_container)

from conftest import MICRO_CLASSIC, MICRO_CONVNEXT, MICRO_MOVED_UP

MANIFESTS_DIR = Path(__file__).parent.parent / "manifests"


@pytest.fixture(scope="module")
def tiny_checkpoint(tmp_path_factory):
    path = tmp_path_factory.mktemp("ckpt") / "convnext_tiny.pt"
    make_seeded_checkpoint("convnext-t", path, seed=0)
    return path


@pytest.fixture(scope="module")
def tiny_manifest(tiny_checkpoint):
    return torchvision_manifest("convnext-t", str(tiny_checkpoint))


class TestManifest:
    def test_mapping_is_bijection_onto_spec(self, tiny_manifest):
        tiny_manifest.validate()
        expected = set(arch.parameter_shapes(arch.build_variant("convnext-t")))
        assert set(tiny_manifest.mapping.values()) == expected
        assert len(set(tiny_manifest.mapping.values())) == len(tiny_manifest.mapping)

    def test_name_mapping_round_trips(self, tiny_manifest):
        inverse = tiny_manifest.inverse()
        for source, canonical in tiny_manifest.mapping.items():
            assert inverse[canonical] == source

    def test_committed_manifest_files_validate(self):
        for path in sorted(MANIFESTS_DIR.glob("*.json")):
            manifest = ExportManifest.load(path)
            manifest.validate()
            assert manifest.mean and manifest.std
            assert "logits" in manifest.probes

    def test_save_load_round_trip(self, tiny_manifest, tmp_path):
        path = tmp_path / "m.json"
        tiny_manifest.save(path)
        loaded = ExportManifest.load(path)
        assert loaded.mapping == tiny_manifest.mapping
        assert loaded.variant == tiny_manifest.variant

    def test_duplicate_target_rejected(self, tiny_manifest):
        mapping = dict(tiny_manifest.mapping)
        mapping["features.0.0.weight"] = "stem.conv.bias"  # collides with the bias row
        bad = ExportManifest("convnext-t", tiny_manifest.source_path, mapping)
        with pytest.raises(MappingError, match="duplicated|not covered"):
            bad.validate()


class TestExportWeights:
    def test_container_binds_to_variant(self, tiny_manifest, tmp_path):
        out = tmp_path / "w.cnxw"
        export_weights(tiny_manifest, out)
        store = weights_io.load(out)
        bound = weights_io.bind(store, arch.build_variant("convnext-t"))
        assert bound.metadata["exporter"].startswith("cnx-exporter")
        assert bound.metadata["ln_eps"] == 1e-6
        assert bound.metadata["bn_eps"] == 1e-5
        assert bound.metadata["source"]["path"] == tiny_manifest.source_path

    def test_param_count_matches_analysis(self, tiny_manifest, tmp_path):
        out = tmp_path / "w.cnxw"
        export_weights(tiny_manifest, out)
        store = weights_io.load(out)
        total = sum(int(np.prod(a.shape)) for name, a in store.arrays.items()
                    if not name.endswith(("running_mean", "running_var")))
        target = analysis.count_params(arch.build_variant("convnext-t"))
        assert abs(total - target) / target <= 0.005
        assert total == target  # torchvision and this engine agree exactly

    def test_dropped_mapping_row_is_unmapped_error(self, tiny_manifest, tmp_path):
        mapping = dict(tiny_manifest.mapping)
        del mapping["features.0.0.weight"]
        bad = ExportManifest("convnext-t", tiny_manifest.source_path, mapping)
        with pytest.raises((UnmappedParameterError, MappingError)):
            export_weights(bad, tmp_path / "w.cnxw")

    def test_extent_mismatch_after_mapping(self, tiny_manifest, tmp_path):
        mapping = dict(tiny_manifest.mapping)
        # swap two structurally incompatible targets; still a bijection
        a, b = "features.0.0.weight", "classifier.2.weight"
        mapping[a], mapping[b] = mapping[b], mapping[a]
        bad = ExportManifest("convnext-t", tiny_manifest.source_path, mapping)
        with pytest.raises(ExtentMismatchError, match="do not adapt"):
            export_weights(bad, tmp_path / "w.cnxw")


class TestExportFixture:
    def test_probe_shapes_and_determinism(self, tiny_manifest, tmp_path):
        f1 = tmp_path / "f1.cnxw"
        f2 = tmp_path / "f2.cnxw"
        export_fixture(tiny_manifest, f1, seed=9, resolution=64)
        export_fixture(tiny_manifest, f2, seed=9, resolution=64)
        assert f1.read_bytes() == f2.read_bytes()
        fixture = weights_io.load_fixture(f1)
        weights_io.validate_fixture(fixture, arch.build_variant("convnext-t"))
        assert set(fixture.probes) == {"stem_out", "stage0_out", "stage1_out",
                                       "stage2_out", "stage3_out", "pooled", "logits"}
        assert fixture.metadata["seed"] == 9
        assert "input_generator" in fixture.metadata

    def test_different_seed_changes_fixture(self, tiny_manifest, tmp_path):
        f1 = tmp_path / "f1.cnxw"
        f3 = tmp_path / "f3.cnxw"
        export_fixture(tiny_manifest, f1, seed=9, resolution=64)
        export_fixture(tiny_manifest, f3, seed=10, resolution=64)
        assert f1.read_bytes() != f3.read_bytes()


class TestFormatLinter:
    def test_lints_clean_export(self, tmp_path):
        export_random_micro(MICRO_CONVNEXT, 1, tmp_path / "w.cnxw", tmp_path / "f.cnxw")
        lint_container(tmp_path / "w.cnxw")
        lint_container(tmp_path / "f.cnxw")

    def test_catches_truncation(self, tmp_path):
        export_random_micro(MICRO_CONVNEXT, 1, tmp_path / "w.cnxw", tmp_path / "f.cnxw")
        data = (tmp_path / "w.cnxw").read_bytes()
        (tmp_path / "w.cnxw").write_bytes(data[:-7])
        with pytest.raises(weights_io.ContainerError):
            lint_container(tmp_path / "w.cnxw")

    def test_catches_non_finite_payload(self, tmp_path):
        path = tmp_path / "nan.cnxw"
        write_container(path, {"x": np.array([1.0, np.nan], np.float32)}, {})
        with pytest.raises(ValueError, match="non-finite"):
            lint_container(path)


class TestReferenceConventions:
    def test_exact_gelu_enforced(self):
        good = torch.nn.Sequential(torch.nn.GELU())
        assert_exact_gelu(good)
        bad = torch.nn.Sequential(torch.nn.GELU(approximate="tanh"))
        with pytest.raises(AssertionError, match="approximate"):
            assert_exact_gelu(bad)
