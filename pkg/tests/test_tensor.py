import io

import numpy as np
import pytest

from _oracles import finite_difference_grad, max_rel_err
from tagnets.tensor import (
    ShapeError,
    Tape,
    Tensor,
    array_from_bytes,
    array_to_bytes,
    backward,
    clip,
    elu,
    load_array,
    log,
    matmul,
    save_array,
    sigmoid,
    tanh,
)


class TestMatmul:
    def test_identity(self):
        m = Tensor(np.arange(9.0).reshape(3, 3))
        out = matmul(Tensor(np.eye(3)), m)
        np.testing.assert_array_equal(out.data, m.data)

    def test_scalar_1x1(self):
        out = matmul(Tensor([[2.0]]), Tensor([[3.0]]))
        assert out.data[0, 0] == 6.0

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
            matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(0)
        a = Tensor(rng.standard_normal((4, 5)), requires_grad=True)
        b = Tensor(rng.standard_normal((5, 3)), requires_grad=True)
        coeff = rng.standard_normal((4, 3))  # random projection to a scalar

        with Tape() as tape:
            loss = (matmul(a, b) * Tensor(coeff)).sum()
        backward(loss, tape)

        for t in (a, b):
            fd = finite_difference_grad(
                lambda: float(((a.data @ b.data) * coeff).sum()), t.data
            )
            assert max_rel_err(t.grad, fd) < 1e-6


class TestBackward:
    def test_sum_gives_ones(self):
        x = Tensor(np.random.default_rng(1).standard_normal((3, 4)), requires_grad=True)
        with Tape() as tape:
            loss = x.sum()
        backward(loss, tape)
        np.testing.assert_array_equal(x.grad, np.ones((3, 4)))

    def test_quadratic_gives_2x(self):
        x = Tensor(np.random.default_rng(2).standard_normal(7), requires_grad=True)
        with Tape() as tape:
            loss = (x * x).sum()
        backward(loss, tape)
        np.testing.assert_allclose(x.grad, 2 * x.data, rtol=1e-12)

    def test_non_scalar_loss_rejected(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with Tape() as tape:
            y = x * 2.0
        with pytest.raises(ShapeError):
            backward(y, tape)

    def test_backward_twice_doubles_grads(self):
        x = Tensor(np.random.default_rng(3).standard_normal(5), requires_grad=True)
        with Tape() as tape:
            loss = (x * x).sum()
        backward(loss, tape)
        once = x.grad.copy()
        backward(loss, tape)
        np.testing.assert_allclose(x.grad, 2 * once, rtol=1e-12)

    def test_gradients_accumulate_across_reuse(self):
        x = Tensor(np.array([1.5, -0.5]), requires_grad=True)
        with Tape() as tape:
            y = x * 3.0
            loss = (y + y).sum()  # x used via y in two places
        backward(loss, tape)
        np.testing.assert_allclose(x.grad, np.full(2, 6.0))

    def test_forward_deterministic(self):
        rng = np.random.default_rng(4)
        a, b = rng.standard_normal((3, 3)), rng.standard_normal((3, 3))
        r1 = matmul(Tensor(a), Tensor(b)).data
        r2 = matmul(Tensor(a), Tensor(b)).data
        np.testing.assert_array_equal(r1, r2)


class TestUnaryOps:
    def test_elu_values(self):
        x = Tensor(np.array([0.0, -1.0, 2.0, -40.0]))
        y = elu(x).data
        assert y[0] == 0.0
        np.testing.assert_allclose(y[1], np.exp(-1) - 1.0, rtol=1e-12)
        assert y[2] == 2.0
        np.testing.assert_allclose(y[3], -1.0, atol=1e-12)  # limit toward -1

    def test_sigmoid_symmetry_and_range(self):
        rng = np.random.default_rng(5)
        x = rng.uniform(-700, 700, size=200)
        s = sigmoid(Tensor(x)).data
        assert sigmoid(Tensor(np.zeros(1))).data[0] == 0.5
        np.testing.assert_allclose(s + sigmoid(Tensor(-x)).data, 1.0, atol=1e-12)
        assert np.all(np.isfinite(s))

    @pytest.mark.parametrize("op", [elu, sigmoid, tanh])
    def test_gradcheck(self, op):
        rng = np.random.default_rng(6)
        x = Tensor(rng.standard_normal(17), requires_grad=True)
        coeff = rng.standard_normal(17)
        with Tape() as tape:
            loss = (op(x) * Tensor(coeff)).sum()
        backward(loss, tape)
        fd = finite_difference_grad(
            lambda: float((op(Tensor(x.data)).data * coeff).sum()), x.data
        )
        assert max_rel_err(x.grad, fd) < 1e-4

    def test_log_clip_gradcheck(self):
        rng = np.random.default_rng(7)
        x = Tensor(rng.uniform(0.05, 0.95, size=11), requires_grad=True)
        with Tape() as tape:
            loss = log(clip(x, 0.1, 0.9)).sum()
        backward(loss, tape)
        fd = finite_difference_grad(
            lambda: float(np.log(np.clip(x.data, 0.1, 0.9)).sum()), x.data
        )
        # clip boundaries are excluded from the sample so fd is smooth
        assert max_rel_err(x.grad, fd) < 1e-5


class TestBroadcasting:
    def test_bias_add_unbroadcast(self):
        x = Tensor(np.random.default_rng(8).standard_normal((4, 3)), requires_grad=True)
        b = Tensor(np.random.default_rng(9).standard_normal(3), requires_grad=True)
        with Tape() as tape:
            loss = (x + b).sum()
        backward(loss, tape)
        np.testing.assert_array_equal(b.grad, np.full(3, 4.0))
        np.testing.assert_array_equal(x.grad, np.ones((4, 3)))

    def test_rsub_scalar(self):
        z = Tensor(np.array([0.25, 0.75]), requires_grad=True)
        with Tape() as tape:
            loss = (1.0 - z).sum()
        backward(loss, tape)
        np.testing.assert_array_equal(z.grad, -np.ones(2))

    def test_getitem_scatter(self):
        x = Tensor(np.arange(12.0).reshape(3, 4), requires_grad=True)
        with Tape() as tape:
            loss = x[:, 1].sum()
        backward(loss, tape)
        expect = np.zeros((3, 4))
        expect[:, 1] = 1.0
        np.testing.assert_array_equal(x.grad, expect)


class TestSerialization:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(10)
        for shape in [(), (5,), (3, 4), (2, 3, 4, 5)]:
            a = rng.standard_normal(shape)
            b = array_from_bytes(array_to_bytes(a))
            assert b.shape == a.shape
            np.testing.assert_array_equal(a, b)
        path = tmp_path / "t.ten"
        save_array(path, rng.standard_normal((96, 10)))
        assert load_array(path).shape == (96, 10)

    def test_wire_format_little_endian(self):
        raw = array_to_bytes(np.array([[1.0, 2.0]]))
        assert raw[:4] == (2).to_bytes(4, "little")
        assert raw[4:8] == (1).to_bytes(4, "little")
        assert raw[8:12] == (2).to_bytes(4, "little")
        assert np.frombuffer(raw[12:], "<f8").tolist() == [1.0, 2.0]

    def test_truncated_blob_rejected(self):
        raw = array_to_bytes(np.ones((2, 2)))
        with pytest.raises(ValueError):
            array_from_bytes(raw[:-8])
        with pytest.raises(ValueError):
            array_from_bytes(raw[:6])
