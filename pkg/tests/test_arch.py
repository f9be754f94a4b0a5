import numpy as np
import pytest

from cnx import arch
from cnx.arch import (Downsampling, Regime, RoadmapOrderError, RoadmapStep, StepId,
                      apply_step, build_variant, roadmap)
from cnx.blocks import ActPlacement, Grouping, NormKind, SpatialPosition, StemKind


class TestVariants:
    def test_convnext_t_config(self):
        spec = build_variant("convnext-t")
        assert tuple(s.blocks for s in spec.stages) == (3, 3, 9, 3)
        assert tuple(s.width for s in spec.stages) == (96, 192, 384, 768)
        t = spec.stages[0].block
        assert t.kernel_size == 7 and t.inner_ratio == 4.0
        assert t.layer_scale_init == 1e-6
        assert spec.downsampling == Downsampling.SEPARATE
        assert spec.head.final_norm

    def test_convnext_xl_config(self):
        spec = build_variant("convnext-xl")
        assert tuple(s.blocks for s in spec.stages) == (3, 3, 27, 3)
        assert tuple(s.width for s in spec.stages) == (256, 512, 1024, 2048)

    def test_iso_s_config(self):
        spec = build_variant("iso-s")
        assert len(spec.stages) == 1
        assert spec.stages[0].width == 384 and spec.stages[0].blocks == 18
        assert spec.stem.kind == StemKind.PATCHIFY and spec.stem.stride == 16
        assert spec.downsampling == Downsampling.IN_BLOCK
        assert spec.stages[0].block.layer_scale_init is None

    def test_iso_l_keeps_layer_scale(self):
        assert build_variant("iso-l").stages[0].block.layer_scale_init == 1e-6

    def test_resnet_50_config(self):
        spec = build_variant("resnet-50")
        assert tuple(s.blocks for s in spec.stages) == (3, 4, 6, 3)
        assert tuple(s.width for s in spec.stages) == (256, 512, 1024, 2048)
        assert spec.stem.kind == StemKind.RESNET
        assert not spec.head.final_norm

    def test_unknown_name(self):
        with pytest.raises(KeyError, match="unknown model name"):
            build_variant("convnext-q")

    def test_serialization_round_trip(self):
        for name in arch.VARIANT_NAMES:
            spec = build_variant(name)
            assert arch.spec_from_json(arch.spec_to_json(spec)) == spec

    def test_variant_shortcut_in_dict(self):
        assert arch.spec_from_dict({"variant": "convnext-t"}) == build_variant("convnext-t")


class TestRoadmap:
    def test_stage_ratio_example(self):
        spec = apply_step(build_variant("resnet-50"), RoadmapStep(StepId.STAGE_RATIO, Regime.RN50))
        assert tuple(s.blocks for s in spec.stages) == (3, 3, 9, 3)

    def test_rn200_width84_then_128(self):
        rows = dict((step.id, spec) for step, spec in roadmap("rn200"))
        ratio = rows[StepId.STAGE_RATIO]
        assert tuple(s.block.hidden_channels for s in ratio.stages) == (84, 168, 336, 672)
        assert ratio.stem.out_channels == 84
        widened = rows[StepId.INCREASE_WIDTH]
        assert tuple(s.block.hidden_channels for s in widened.stages) == (128, 256, 512, 1024)

    def test_sixteen_rows_in_table_order(self):
        rows = roadmap("rn50")
        assert [step.id for step, _ in rows] == list(StepId)
        assert len(rows) == 16

    def test_structural_closure(self):
        assert roadmap("rn50")[-1][1] == build_variant("convnext-t")
        assert roadmap("rn200")[-1][1] == build_variant("convnext-b")

    def test_kernel_sweep_rows_branch_from_move_up(self):
        rows = dict((step.id, spec) for step, spec in roadmap("rn50"))
        for sid, k in [(StepId.KERNEL_5, 5), (StepId.KERNEL_7, 7),
                       (StepId.KERNEL_9, 9), (StepId.KERNEL_11, 11)]:
            spec = rows[sid]
            assert spec.stages[0].block.kernel_size == k
            assert spec.stages[0].block.act_placement == ActPlacement.PER_CONV

    def test_micro_chain_states(self):
        rows = dict((step.id, spec) for step, spec in roadmap("rn50"))
        assert rows[StepId.RELU_TO_GELU].stages[0].block.kernel_size == 7
        assert rows[StepId.FEWER_NORMS].stages[0].block.norm_kind == NormKind.BATCH
        assert rows[StepId.BN_TO_LN].stem.norm_kind == NormKind.LAYER
        assert rows[StepId.BN_TO_LN].downsampling == Downsampling.IN_BLOCK

    @pytest.mark.parametrize("spec_step,bad_step", [
        (StepId.PATCHIFY_STEM, StepId.INCREASE_WIDTH),
        (StepId.BASELINE_RECIPE, StepId.DEPTHWISE_CONV),
        (StepId.DEPTHWISE_CONV, StepId.INVERT_DIMS),
        (StepId.INVERT_DIMS, StepId.KERNEL_7),
        (StepId.MOVE_UP_DW, StepId.FEWER_ACTS),
        (StepId.RELU_TO_GELU, StepId.FEWER_NORMS),
        (StepId.FEWER_ACTS, StepId.BN_TO_LN),
        (StepId.FEWER_NORMS, StepId.SEPARATE_DS),
    ])
    def test_transposed_order_rejected(self, spec_step, bad_step):
        rows = dict((step.id, spec) for step, spec in roadmap("rn50"))
        with pytest.raises(RoadmapOrderError):
            apply_step(rows[spec_step], RoadmapStep(bad_step, Regime.RN50))

    def test_move_up_before_invert_rejected(self):
        rows = dict((step.id, spec) for step, spec in roadmap("rn50"))
        with pytest.raises(RoadmapOrderError):
            apply_step(rows[StepId.INCREASE_WIDTH], RoadmapStep(StepId.MOVE_UP_DW, Regime.RN50))


class TestInitWeights:
    def test_deterministic_in_seed(self):
        spec = arch.micro_isotropic()
        a = arch.init_weights(spec, 9)
        b = arch.init_weights(spec, 9)
        assert a.arrays.keys() == b.arrays.keys()
        for k in a.arrays:
            np.testing.assert_array_equal(a.arrays[k], b.arrays[k])

    def test_truncation_bound(self):
        w = arch.init_weights(build_variant("convnext-t", num_classes=10), 0)
        for d in arch.parameter_defs(w.spec):
            if d.kind == "weight":
                assert np.abs(w.arrays[d.name]).max() <= 0.04 + 1e-7

    def test_empirical_std_matches_truncated_normal(self):
        # std of a +/-2-sigma truncated normal: sigma * sqrt(1 - 4*phi(2)/Z),
        # phi(2)=0.05399097, Z=0.95449974 -> 0.879626 * 0.02 = 0.0175925
        spec = build_variant("convnext-s", num_classes=10)
        w = arch.init_weights(spec, 1)
        big = next(w.arrays[d.name] for d in arch.parameter_defs(spec)
                   if d.kind == "weight" and np.prod(d.shape) >= 1e5)
        expected = 0.02 * 0.8796256
        assert abs(big.std() - expected) / expected <= 0.05

    def test_norms_and_scales(self):
        spec = build_variant("resnet-50", num_classes=4)
        w = arch.init_weights(spec, 0)
        assert np.all(w.arrays["stem.norm.gamma"] == 1.0)
        assert np.all(w.arrays["stem.norm.beta"] == 0.0)
        assert np.all(w.arrays["stem.norm.running_mean"] == 0.0)
        assert np.all(w.arrays["stem.norm.running_var"] == 1.0)
        t = arch.init_weights(arch.micro_isotropic(layer_scale=1e-6), 0)
        assert np.all(t.arrays["stages.0.blocks.0.gamma"] == np.float32(1e-6))


class TestForward:
    def test_logit_shape_and_softmax(self, rng):
        spec = build_variant("convnext-t", num_classes=1000)
        w = arch.init_weights(spec, 0)
        x = rng.standard_normal((1, 64, 64, 3)).astype(np.float32)
        logits = arch.forward(spec, w, x)
        assert logits.shape == (1, 1000)
        z = logits - logits.max(axis=1, keepdims=True)
        probs = np.exp(z) / np.exp(z).sum(axis=1, keepdims=True)
        assert abs(probs.sum() - 1.0) <= 1e-5

    def test_eval_deterministic(self, rng):
        spec = arch.micro_isotropic()
        w = arch.init_weights(spec, 0)
        x = rng.standard_normal((2, 32, 32, 3)).astype(np.float32)
        np.testing.assert_array_equal(arch.forward(spec, w, x), arch.forward(spec, w, x))

    def test_missing_weights_rejected(self, rng):
        spec = arch.micro_isotropic()
        w = arch.init_weights(spec, 0)
        del w.arrays["head.fc.bias"]
        with pytest.raises(ValueError, match="missing weights"):
            arch.forward(spec, w, rng.standard_normal((1, 32, 32, 3)).astype(np.float32))

    def test_incompatible_resolution_rejected(self, rng):
        spec = build_variant("convnext-t", num_classes=10)
        w = arch.init_weights(spec, 0)
        with pytest.raises(ValueError, match="non-positive output extent"):
            arch.forward(spec, w, rng.standard_normal((1, 16, 16, 3)).astype(np.float32))

    @pytest.mark.parametrize("name", ["convnext-t", "convnext-s", "convnext-b",
                                      "convnext-l", "convnext-xl", "resnet-50"])
    def test_resolution_flexibility_without_weight_changes(self, rng, name):
        spec = build_variant(name, num_classes=7)
        w = arch.init_weights(spec, 0)
        for res in (64, 96):
            logits = arch.forward(spec, w, rng.standard_normal((1, res, res, 3)).astype(np.float32))
            assert logits.shape == (1, 7)
            assert np.all(np.isfinite(logits))

    def test_probe_shapes_match_forward(self, rng):
        spec = build_variant("convnext-t", num_classes=10)
        w = arch.init_weights(spec, 0)
        x = rng.standard_normal((1, 64, 64, 3)).astype(np.float32)
        logits, probes = arch.forward_probed(spec, w, x)
        expected = arch.probe_shapes(spec, 64)
        for name, shape in expected.items():
            assert tuple(probes[name].shape) == shape, name
        np.testing.assert_array_equal(probes["logits"], logits)


class TestRoadmapForwardFeasibility:
    @pytest.mark.parametrize("regime", ["rn50", "rn200"])
    def test_all_roadmap_specs_forward_finite_at_32(self, rng, regime):
        x = rng.standard_normal((1, 32, 32, 3)).astype(np.float32)
        for step, spec in roadmap(regime):
            spec = arch.ModelSpec(spec.stem, spec.stages, spec.downsampling,
                                  arch.HeadSpec(8, spec.head.final_norm), spec.name)
            w = arch.init_weights(spec, 0)
            logits = arch.forward(spec, w, x)
            assert np.all(np.isfinite(logits)), step.id
