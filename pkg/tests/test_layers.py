import numpy as np
import pytest

from _oracles import (
    conv2d_naive,
    finite_difference_grad,
    gru_step_by_hand,
    max_rel_err,
    maxpool_naive,
)
from tagnets.layers import (
    LayerParams,
    batchnorm,
    conv2d,
    dense,
    dropout,
    elu,
    gru_layer,
    maxpool2d,
    sigmoid,
)
from tagnets.tensor import ShapeError, Tape, Tensor, backward


def conv_params(cout, cin, kf, kt, rng=None, value=None):
    if value is not None:
        kernel = np.full((cout, cin, kf, kt), value, dtype=float)
    else:
        kernel = rng.standard_normal((cout, cin, kf, kt))
    return LayerParams({"kernel": Tensor(kernel, True), "bias": Tensor(np.zeros(cout), True)})


class TestConv2d:
    def test_1x1_identity_kernel(self):
        x = Tensor(np.random.default_rng(0).standard_normal((1, 5, 6)))
        p = conv_params(1, 1, 1, 1, value=1.0)
        np.testing.assert_array_equal(conv2d(x, p).data, x.data.reshape(1, 5, 6))

    def test_tall_frequency_collapse(self):
        # a frequency-valid 96x4 kernel maps (1,96,1366) to (C,1,1366)
        rng = np.random.default_rng(1)
        x = Tensor(rng.standard_normal((1, 96, 1366)))
        p = conv_params(4, 1, 96, 4, rng=rng)
        y = conv2d(x, p, pad=("valid", "same"))
        assert y.shape == (4, 1, 1366)

    def test_matches_naive_loop_exactly(self):
        rng = np.random.default_rng(2)
        x = rng.standard_normal((2, 5, 7))
        p = conv_params(3, 2, 3, 3, rng=rng)
        p.params["bias"].data = rng.standard_normal(3)
        for pad, pads in [("same", (1, 1, 1, 1)), ("valid", (0, 0, 0, 0))]:
            y = conv2d(Tensor(x), p, pad=pad)
            ref = conv2d_naive(x, p["kernel"].data, p["bias"].data, pads)
            np.testing.assert_allclose(y.data, ref, rtol=1e-12, atol=1e-12)

    def test_even_kernel_same_padding_asymmetric(self):
        rng = np.random.default_rng(3)
        x = rng.standard_normal((1, 4, 9))
        p = conv_params(2, 1, 1, 4, rng=rng)
        y = conv2d(Tensor(x), p, pad="same")
        ref = conv2d_naive(x, p["kernel"].data, p["bias"].data, (0, 0, 1, 2))
        assert y.shape == (2, 4, 9)
        np.testing.assert_allclose(y.data, ref, rtol=1e-12, atol=1e-12)

    def test_kernel_too_large_raises(self):
        x = Tensor(np.zeros((1, 4, 4)))
        p = conv_params(1, 1, 6, 1, value=1.0)
        with pytest.raises(ShapeError, match="6x1"):
            conv2d(x, p, pad="valid")

    def test_gradcheck(self):
        rng = np.random.default_rng(4)
        x = Tensor(rng.standard_normal((2, 2, 4, 5)), requires_grad=True)
        p = conv_params(3, 2, 3, 3, rng=rng)
        coeff = rng.standard_normal((2, 3, 4, 5))

        def loss_value():
            return float((conv2d(Tensor(x.data), p, pad="same").data * coeff).sum())

        with Tape() as tape:
            loss = (conv2d(x, p, pad="same") * Tensor(coeff)).sum()
        backward(loss, tape)
        for t in (x, p["kernel"], p["bias"]):
            fd = finite_difference_grad(loss_value, t.data)
            assert max_rel_err(t.grad, fd) < 1e-5


class TestMaxPool:
    def test_pool_1x1_identity(self):
        x = Tensor(np.random.default_rng(5).standard_normal((2, 3, 4)))
        np.testing.assert_array_equal(maxpool2d(x, (1, 1)).data, x.data)

    def test_crnn_schedule_reaches_1x15(self):
        x = Tensor(np.zeros((1, 96, 1366)))
        for pool in [(2, 2), (3, 3), (4, 4), (4, 4)]:
            x = maxpool2d(x, pool, ceil_mode=True)
        assert x.shape == (1, 1, 15)

    def test_k2c2_schedule_reaches_1x1(self):
        x = Tensor(np.zeros((1, 96, 1366)))
        for pool in [(2, 4), (2, 4), (2, 4), (3, 5), (4, 4)]:
            x = maxpool2d(x, pool, ceil_mode=False)
        assert x.shape == (1, 1, 1)

    @pytest.mark.parametrize("ceil_mode", [False, True])
    def test_matches_naive_windows(self, ceil_mode):
        rng = np.random.default_rng(6)
        x = rng.standard_normal((1, 6, 7))
        y = maxpool2d(Tensor(x), (2, 3), ceil_mode=ceil_mode)
        np.testing.assert_array_equal(y.data, maxpool_naive(x, 2, 3, ceil_mode))

    def test_backward_routes_to_first_argmax(self):
        x = Tensor(np.array([[[1.0, 1.0, 0.0, 2.0]]]), requires_grad=True)
        with Tape() as tape:
            loss = maxpool2d(x, (1, 2)).sum()
        backward(loss, tape)
        np.testing.assert_array_equal(x.grad, [[[1.0, 0.0, 0.0, 1.0]]])

    def test_gradcheck_with_partial_windows(self):
        rng = np.random.default_rng(7)
        x = Tensor(rng.standard_normal((1, 2, 5, 7)), requires_grad=True)
        coeff = rng.standard_normal((1, 2, 3, 3))

        def loss_value():
            return float((maxpool2d(Tensor(x.data), (2, 3), ceil_mode=True).data * coeff).sum())

        with Tape() as tape:
            loss = (maxpool2d(x, (2, 3), ceil_mode=True) * Tensor(coeff)).sum()
        backward(loss, tape)
        fd = finite_difference_grad(loss_value, x.data)
        assert max_rel_err(x.grad, fd) < 1e-5


class TestDense:
    def test_identity(self):
        p = LayerParams({"weight": Tensor(np.eye(3), True), "bias": Tensor(np.zeros(3), True)})
        x = np.array([1.0, -2.0, 3.0])
        np.testing.assert_array_equal(dense(Tensor(x), p).data, x)

    def test_hand_checked_affine(self):
        p = LayerParams(
            {"weight": Tensor(np.array([[1.0, 3.0], [2.0, 4.0]]), True),
             "bias": Tensor(np.zeros(2), True)}
        )
        out = dense(Tensor(np.array([1.0, 1.0])), p)
        np.testing.assert_array_equal(out.data, [3.0, 7.0])

    def test_shape_mismatch(self):
        p = LayerParams({"weight": Tensor(np.zeros((3, 2)), True), "bias": Tensor(np.zeros(2), True)})
        with pytest.raises(ShapeError):
            dense(Tensor(np.zeros((4, 5))), p)

    def test_gradcheck(self):
        rng = np.random.default_rng(8)
        p = LayerParams(
            {"weight": Tensor(rng.standard_normal((4, 3)), True),
             "bias": Tensor(rng.standard_normal(3), True)}
        )
        x = Tensor(rng.standard_normal((2, 4)), requires_grad=True)
        coeff = rng.standard_normal((2, 3))

        def loss_value():
            return float(((x.data @ p["weight"].data + p["bias"].data) * coeff).sum())

        with Tape() as tape:
            loss = (dense(x, p) * Tensor(coeff)).sum()
        backward(loss, tape)
        for t in (x, p["weight"], p["bias"]):
            fd = finite_difference_grad(loss_value, t.data)
            assert max_rel_err(t.grad, fd) < 1e-6


def bn_params(c):
    return LayerParams(
        {"gamma": Tensor(np.ones(c), True), "beta": Tensor(np.zeros(c), True)},
        {"running_mean": np.zeros(c), "running_var": np.ones(c), "momentum": 0.9},
    )


class TestBatchNorm:
    def test_constant_channel_gives_beta(self):
        p = bn_params(3)
        p.params["beta"].data = np.array([1.0, -2.0, 0.5])
        x = Tensor(np.ones((4, 3, 2, 2)) * np.array([5.0, 6.0, 7.0]).reshape(1, 3, 1, 1))
        y = batchnorm(x, p, train=True)
        np.testing.assert_allclose(y.data, np.broadcast_to(p.params["beta"].data.reshape(1, 3, 1, 1), y.shape), atol=1e-6)

    def test_normalizes_to_zero_mean_unit_var(self):
        rng = np.random.default_rng(9)
        x = Tensor(rng.standard_normal((64, 5, 3, 3)) * 4.0 + 2.0)
        y = batchnorm(x, bn_params(5), train=True).data
        np.testing.assert_allclose(y.mean(axis=(0, 2, 3)), 0.0, atol=1e-6)
        np.testing.assert_allclose(y.var(axis=(0, 2, 3)), 1.0, atol=1e-4)

    def test_batch_of_one_rejected_in_train(self):
        with pytest.raises(ValueError, match="batch size >= 2"):
            batchnorm(Tensor(np.zeros((1, 3, 2, 2))), bn_params(3), train=True)

    def test_infer_converges_to_train_statistics(self):
        # after 100 large batches of a fixed distribution the running
        # statistics approach the stream's true parameters, so inference
        # output matches the large-batch limit of train-mode normalization
        rng = np.random.default_rng(10)
        p = bn_params(4)
        mu, sd = np.array([1.0, -2.0, 0.0, 3.0]), np.array([0.5, 2.0, 1.0, 3.0])
        for _ in range(100):
            x = rng.standard_normal((2048, 4)) * sd + mu
            batchnorm(Tensor(x), p, train=True)
        x = rng.standard_normal((2048, 4)) * sd + mu
        infer_out = batchnorm(Tensor(x), p, train=False).data
        limit = (x - mu) / sd  # gamma=1, beta=0
        assert np.abs(infer_out - limit).max() < 1e-2 * float(np.abs(limit).max())

    def test_infer_is_pure(self):
        p = bn_params(2)
        x = Tensor(np.random.default_rng(11).standard_normal((3, 2)))
        a = batchnorm(x, p, train=False).data
        b = batchnorm(x, p, train=False).data
        np.testing.assert_array_equal(a, b)
        np.testing.assert_array_equal(p.state["running_mean"], np.zeros(2))

    @pytest.mark.parametrize("train", [True, False])
    def test_gradcheck(self, train):
        rng = np.random.default_rng(12)
        p = bn_params(3)
        p.state["running_mean"] = rng.standard_normal(3)
        p.state["running_var"] = rng.uniform(0.5, 2.0, 3)
        p.params["gamma"].data = rng.uniform(0.5, 1.5, 3)
        p.params["beta"].data = rng.standard_normal(3)
        x = Tensor(rng.standard_normal((4, 3, 2, 2)), requires_grad=True)
        coeff = rng.standard_normal((4, 3, 2, 2))

        def loss_value():
            q = LayerParams(
                {"gamma": p.params["gamma"], "beta": p.params["beta"]},
                {"running_mean": p.state["running_mean"].copy(),
                 "running_var": p.state["running_var"].copy(),
                 "momentum": 0.9},
            )
            return float((batchnorm(Tensor(x.data), q, train=train).data * coeff).sum())

        with Tape() as tape:
            loss = (batchnorm(x, p, train=train) * Tensor(coeff)).sum()
        backward(loss, tape)
        for t in (x, p.params["gamma"], p.params["beta"]):
            fd = finite_difference_grad(loss_value, t.data)
            assert max_rel_err(t.grad, fd) < 1e-4




class TestDropout:
    def test_rate_zero_identity(self):
        x = Tensor(np.random.default_rng(13).standard_normal(10))
        rng = np.random.default_rng(0)
        np.testing.assert_array_equal(dropout(x, 0.0, train=True, rng=rng).data, x.data)
        np.testing.assert_array_equal(dropout(x, 0.0, train=False).data, x.data)

    def test_infer_identity(self):
        x = Tensor(np.random.default_rng(14).standard_normal(10))
        np.testing.assert_array_equal(dropout(x, 0.1, train=False).data, x.data)

    def test_rate_one_rejected(self):
        with pytest.raises(ValueError):
            dropout(Tensor(np.zeros(3)), 1.0, train=True, rng=np.random.default_rng(0))

    def test_law_of_large_numbers(self):
        n = 1_000_000
        x = Tensor(np.ones(n))
        y = dropout(x, 0.1, train=True, rng=np.random.default_rng(99)).data
        zero_fraction = float((y == 0).mean())
        assert abs(y.mean() - 1.0) < 0.01
        assert abs(zero_fraction - 0.1) < 0.005

    def test_backward_uses_same_mask(self):
        x = Tensor(np.ones(1000), requires_grad=True)
        with Tape() as tape:
            y = dropout(x, 0.5, train=True, rng=np.random.default_rng(3))
            loss = y.sum()
        backward(loss, tape)
        np.testing.assert_array_equal(x.grad, (y.data != 0) * 2.0)


def gru_params(d_in, d_h, rng=None, zero=False):
    params = {}
    for gate in ("z", "r", "h"):
        if zero:
            w, u = np.zeros((d_in, d_h)), np.zeros((d_h, d_h))
        else:
            w, u = rng.standard_normal((d_in, d_h)), rng.standard_normal((d_h, d_h))
        params[f"w_{gate}"] = Tensor(w, True)
        params[f"u_{gate}"] = Tensor(u, True)
        params[f"b_{gate}"] = Tensor(np.zeros(d_h), True)
    return LayerParams(params)


class TestGru:
    def test_zero_weights_zero_state_fixed_point(self):
        p = gru_params(3, 2, zero=True)
        xs = [Tensor(np.ones((1, 3))) for _ in range(4)]
        outs, h_t = gru_layer(xs, p)
        for o in outs:
            np.testing.assert_array_equal(o.data, np.zeros((1, 2)))
        assert h_t is outs[-1]

    def test_empty_sequence_rejected(self):
        with pytest.raises(ValueError):
            gru_layer([], gru_params(2, 2, zero=True))

    def test_single_step_matches_hand_formula(self):
        rng = np.random.default_rng(15)
        p = gru_params(1, 1, rng=rng)
        for t in p.params.values():
            t.data = rng.standard_normal(t.shape)
        x = rng.standard_normal((1, 1))
        h0 = rng.standard_normal((1, 1))
        _, h1 = gru_layer([Tensor(x)], p, h0=Tensor(h0))
        ref = gru_step_by_hand(
            x[0], h0[0],
            *(p.params[k].data for k in
              ("w_z", "u_z", "b_z", "w_r", "u_r", "b_r", "w_h", "u_h", "b_h")),
        )
        np.testing.assert_allclose(h1.data[0], ref, rtol=1e-12, atol=1e-12)

    def test_final_state_is_last_output(self):
        rng = np.random.default_rng(16)
        p = gru_params(2, 3, rng=rng)
        xs = [Tensor(rng.standard_normal((2, 2))) for _ in range(5)]
        outs, h_t = gru_layer(xs, p)
        assert h_t is outs[-1]

    def test_bptt_gradcheck(self):
        rng = np.random.default_rng(17)
        p = gru_params(2, 2, rng=rng)
        for t in p.params.values():
            t.data = 0.5 * rng.standard_normal(t.shape)
        xs_data = [rng.standard_normal((1, 2)) for _ in range(3)]
        coeff = rng.standard_normal((1, 2))

        def loss_value():
            _, h = gru_layer([Tensor(x) for x in xs_data], p)
            return float((h.data * coeff).sum())

        with Tape() as tape:
            _, h = gru_layer([Tensor(x) for x in xs_data], p)
            loss = (h * Tensor(coeff)).sum()
        backward(loss, tape)
        for name, t in p.params.items():
            fd = finite_difference_grad(loss_value, t.data)
            assert max_rel_err(t.grad, fd) < 1e-4, name
