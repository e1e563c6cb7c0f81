import numpy as np
import pytest

from tagnets.architectures import (
    ARCH_IDS,
    BUDGET_GRID,
    BudgetError,
    ConvBlock,
    DenseBlock,
    GruBlock,
    NetworkSpec,
    build,
    count_params,
    describe,
    forward,
    infer_shapes,
    render_describe,
    scale_to_target,
    scale_widths,
    template,
)
from tagnets.tensor import ShapeError, Tape, Tensor, backward


class TestShapeInference:
    def test_k2c2_collapses_to_1x1(self):
        spec = NetworkSpec.resolve("k2c2")
        assert spec.layer_shapes[5][1] == (spec.widths[4], 1, 1)

    def test_crnn_pre_rnn_map_is_1x15(self):
        spec = NetworkSpec.resolve("crnn")
        assert spec.layer_shapes[4][1] == (spec.widths[3], 1, 15)

    def test_k1c2_keeps_96_bands(self):
        spec = NetworkSpec.resolve("k1c2")
        assert spec.layer_shapes[4][1] == (spec.widths[3], 96, 1)

    def test_k2c1_single_band_from_first_layer(self):
        spec = NetworkSpec.resolve("k2c1")
        # every block output has one frequency band; time collapses to 1
        assert spec.layer_shapes[1][1] == (spec.widths[0], 1, 341)
        assert spec.layer_shapes[5][1] == (spec.widths[4], 1, 1)

    def test_all_end_in_50_outputs(self):
        for arch in ARCH_IDS:
            spec = NetworkSpec.resolve(arch)
            assert spec.layer_shapes[-1] == ("output", (50,))

    def test_incompatible_input_names_block(self):
        with pytest.raises(ShapeError, match="conv2d1"):
            infer_shapes(NetworkSpec.resolve("k2c1"), (1, 40, 1366))

    def test_k2c2_has_no_hidden_dense_layers(self):
        spec = NetworkSpec.resolve("k2c2")
        assert all(isinstance(b, ConvBlock) for b in spec.blocks)

    def test_crnn_ends_with_two_gru_blocks(self):
        spec = NetworkSpec.resolve("crnn")
        assert [type(b) for b in spec.blocks[-2:]] == [GruBlock, GruBlock]


class TestCountParams:
    def test_single_dense_hand_count(self):
        # 2 -> 3 dense with bias and batch norm, then 3 -> 50 readout
        spec = NetworkSpec.resolve("k2c2")
        assert spec.param_count == count_params(spec)

    def test_matches_enumeration_oracle(self):
        for arch in ARCH_IDS:
            spec = NetworkSpec.resolve(arch)
            model = build(spec, np.random.default_rng(0))
            assert model.n_trainable() == spec.param_count, arch

    def test_base_counts_near_100k(self):
        for arch in ARCH_IDS:
            spec = NetworkSpec.resolve(arch)
            assert abs(spec.param_count - 100_000) / 100_000 < 0.05, arch


class TestScaler:
    def test_fixed_point_returns_base_widths(self):
        for arch in ARCH_IDS:
            base = NetworkSpec.resolve(arch)
            spec = scale_to_target(arch, base.param_count)
            assert spec.widths == base.widths, arch

    def test_k2c2_3m_matches_published_profile(self):
        spec = scale_to_target("k2c2", 3_000_000)
        published = (118, 236, 236, 355, 473)
        assert abs(spec.param_count - 3_000_000) / 3_000_000 <= 0.02
        for w, ref in zip(spec.widths, published):
            assert abs(w - ref) / ref <= 0.15

    @pytest.mark.parametrize("arch", ARCH_IDS)
    @pytest.mark.parametrize("target", BUDGET_GRID)
    def test_full_grid_within_2_percent(self, arch, target):
        spec = scale_to_target(arch, target)
        assert abs(spec.param_count - target) / target <= 0.02

    def test_structure_invariant_under_scaling(self):
        for arch in ARCH_IDS:
            small = scale_to_target(arch, 100_000)
            big = scale_to_target(arch, 3_000_000)
            assert len(small.blocks) == len(big.blocks)
            for a, b in zip(small.blocks, big.blocks):
                assert type(a) is type(b)
                if isinstance(a, ConvBlock):
                    assert a.kernel == b.kernel and a.pool == b.pool

    def test_monotone_in_multiplier(self):
        tpl = template("crnn")
        rng = np.random.default_rng(0)
        ms = np.sort(rng.uniform(0.2, 8.0, size=25))
        counts = [
            count_params(NetworkSpec.resolve("crnn", scale_widths(tpl.base_widths, m)))
            for m in ms
        ]
        assert all(a <= b for a, b in zip(counts, counts[1:]))

    def test_target_below_minimum_rejected(self):
        with pytest.raises(BudgetError):
            scale_to_target("k2c2", 100)

    def test_unknown_arch_rejected(self):
        with pytest.raises(ValueError):
            scale_to_target("k3c3", 100_000)


class TestBuild:
    def test_same_seed_bitwise_identical(self):
        spec = scale_to_target("crnn", 100_000)
        m1 = build(spec, np.random.default_rng(33))
        m2 = build(spec, np.random.default_rng(33))
        for (n1, t1), (n2, t2) in zip(m1.named_trainables(), m2.named_trainables()):
            assert n1 == n2
            np.testing.assert_array_equal(t1.data, t2.data)

    def test_different_seed_differs(self):
        spec = NetworkSpec.resolve("k2c2")
        m1 = build(spec, np.random.default_rng(1))
        m2 = build(spec, np.random.default_rng(2))
        assert any(
            not np.array_equal(t1.data, t2.data)
            for (_, t1), (_, t2) in zip(m1.named_trainables(), m2.named_trainables())
        )

    @pytest.mark.parametrize("arch", ARCH_IDS)
    def test_forward_gives_50_sigmoid_outputs(self, arch):
        spec = scale_to_target(arch, 100_000)
        model = build(spec, np.random.default_rng(5))
        x = np.random.default_rng(6).standard_normal((2, 1, 96, 1366))
        y = forward(spec, model, Tensor(x), train=False)
        assert y.shape == (2, 50)
        assert np.all((y.data > 0) & (y.data < 1))

    def test_gru_reset_gate_affects_gradients(self):
        # full backward through the recurrent readout touches every tensor
        spec = NetworkSpec.resolve("crnn", (2, 3, 3, 3, 4, 4), input_shape=(1, 8, 16))
        model = build(spec, np.random.default_rng(8))
        x = Tensor(np.random.default_rng(9).standard_normal((2, 1, 8, 16)))
        with Tape() as tape:
            y = forward(spec, model, x, train=True, rng=np.random.default_rng(1))
            loss = y.sum()
        backward(loss, tape)
        for name, t in model.named_trainables():
            assert t.grad is not None, name


class TestDescribe:
    def test_sheet_fields_and_render(self):
        sheet = describe("k2c2", 1_000_000)
        assert sheet["arch"] == "k2c2"
        assert abs(sheet["param_count"] - 1_000_000) / 1e6 <= 0.02
        assert len(sheet["layers"]) == 6  # 5 conv + output
        text = render_describe(sheet)
        assert "k2c2" in text and "output" in text

    def test_json_round_trip_to_spec(self):
        sheet = describe("crnn", 250_000)
        spec = NetworkSpec.resolve(sheet["arch"], sheet["widths"])
        assert spec.param_count == sheet["param_count"]
