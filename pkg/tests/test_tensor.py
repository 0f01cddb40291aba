import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from spectramba import tensor as T
from spectramba.gradcheck import gradcheck, max_error

from conftest import leaf
from oracles import causal_conv_loops, matmul_loops, naive_dft

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


class TestMatmul:
    def test_identity(self, rng):
        b = rng.standard_normal((3, 2))
        np.testing.assert_array_equal(T.matmul(T.Tensor(np.eye(3)), T.Tensor(b)).data, b)

    def test_zeros(self, rng):
        out = T.matmul(T.Tensor(np.zeros((2, 2))), T.Tensor(rng.standard_normal((2, 2))))
        np.testing.assert_array_equal(out.data, np.zeros((2, 2)))

    def test_triple_loop(self, rng):
        a, b = rng.standard_normal((4, 5)), rng.standard_normal((5, 3))
        np.testing.assert_allclose(T.matmul(T.Tensor(a), T.Tensor(b)).data, matmul_loops(a, b), rtol=0, atol=1e-12)

    def test_batched_broadcast(self, rng):
        a, b = rng.standard_normal((2, 3, 4, 5)), rng.standard_normal((5, 2))
        out = T.matmul(T.Tensor(a), T.Tensor(b)).data
        assert out.shape == (2, 3, 4, 2)
        np.testing.assert_allclose(out[1, 2], matmul_loops(a[1, 2], b), atol=1e-12)

    def test_shape_error_names_shapes(self):
        with pytest.raises(T.DimensionError, match=r"\(2, 3\).*\(4, 2\)"):
            T.matmul(T.Tensor(np.ones((2, 3))), T.Tensor(np.ones((4, 2))))

    def test_backward_formula(self, rng):
        a, b = leaf(rng.standard_normal((3, 4))), leaf(rng.standard_normal((4, 2)))
        g = rng.standard_normal((3, 2))
        T.backward(T.sum(T.matmul(a, b) * T.Tensor(g)))
        np.testing.assert_allclose(a.grad, g @ b.data.T, atol=1e-12)
        np.testing.assert_allclose(b.grad, a.data.T @ g, atol=1e-12)


class TestActivation:
    def test_relu_negative(self):
        assert T.activation("relu", T.Tensor([-1.5])).item() == 0.0

    def test_elu_zero(self):
        assert T.activation("elu", T.Tensor([0.0])).item() == 0.0

    def test_silu_formula(self):
        expected = 3.0 / (1.0 + math.exp(-3.0))
        assert abs(T.activation("silu", T.Tensor([3.0])).item() - expected) <= 1e-15

    def test_relu_subgradient_zero_at_kink(self):
        x = leaf([0.0, 1.0, -1.0])
        T.backward(T.sum(T.relu(x)))
        np.testing.assert_array_equal(x.grad, [0.0, 1.0, 0.0])

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            T.activation("tanh", T.Tensor([1.0]))

    def test_non_finite_input(self):
        with pytest.raises(T.NonFiniteError):
            T.activation("relu", T.Tensor([np.nan]))

    def test_sigmoid_extremes_are_finite(self):
        s = T.sigmoid(T.Tensor([-800.0, 800.0])).data
        np.testing.assert_array_equal(s, [0.0, 1.0])


class TestSoftmax:
    def test_uniform(self):
        np.testing.assert_allclose(T.softmax(T.Tensor(np.full(5, 2.0))).data, np.full(5, 0.2), atol=1e-15)

    def test_single_element(self):
        assert T.softmax(T.Tensor([[7.0]]), axis=-1).item() == 1.0

    def test_direct_formula(self):
        e = [math.exp(v) for v in (1.0, 2.0, 3.0)]
        expected = [v / sum(e) for v in e]
        np.testing.assert_allclose(T.softmax(T.Tensor([1.0, 2.0, 3.0])).data, expected, rtol=0, atol=1e-12)

    def test_empty_axis(self):
        with pytest.raises(T.DimensionError):
            T.softmax(T.Tensor(np.zeros((3, 0))), axis=1)

    def test_large_inputs_stable(self):
        out = T.softmax(T.Tensor([1000.0, 1001.0])).data
        assert np.isfinite(out).all()

    @settings(max_examples=50, deadline=None)
    @given(arrays(np.float64, (3, 6), elements=finite), finite)
    def test_normalization_and_shift_invariance(self, x, c):
        s = T.softmax(T.Tensor(x), axis=1).data
        assert (s >= 0).all()
        np.testing.assert_allclose(s.sum(axis=1), 1.0, atol=1e-9)
        np.testing.assert_allclose(T.softmax(T.Tensor(x + c), axis=1).data, s, atol=1e-9)


class TestRfft:
    def test_constant_is_dc_only(self):
        spec = T.rfft(T.Tensor(np.full(8, 2.5)))
        np.testing.assert_allclose(spec.real.data, [20.0, 0, 0, 0, 0], atol=1e-12)
        np.testing.assert_allclose(spec.imag.data, np.zeros(5), atol=1e-12)

    def test_impulse_is_flat(self):
        x = np.zeros(8)
        x[0] = 1.0
        spec = T.rfft(T.Tensor(x))
        np.testing.assert_allclose(spec.real.data, np.ones(5), atol=1e-15)
        np.testing.assert_allclose(spec.imag.data, np.zeros(5), atol=1e-15)

    @pytest.mark.parametrize("D", [1, 2, 7, 96, 97, 256])
    def test_naive_dft(self, rng, D):
        x = rng.standard_normal(D)
        spec = T.rfft(T.Tensor(x))
        re, im = naive_dft(x)
        assert spec.n_bins == D // 2 + 1
        np.testing.assert_allclose(spec.real.data, re, rtol=0, atol=1e-9)
        np.testing.assert_allclose(spec.imag.data, im, rtol=0, atol=1e-9)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(1, 64).flatmap(lambda D: arrays(np.float64, D, elements=finite)))
    def test_parseval(self, x):
        D = len(x)
        spec = T.rfft(T.Tensor(x))
        p = spec.real.data ** 2 + spec.imag.data ** 2
        total = p[0] + 2 * p[1:(D + 1) // 2].sum()
        if D % 2 == 0:
            total += p[D // 2]
        energy = float(np.sum(x * x))
        assert abs(total / D - energy) <= 1e-9 * max(energy, 1e-300) + 1e-12

    @settings(max_examples=40, deadline=None)
    @given(arrays(np.float64, 24, elements=finite), arrays(np.float64, 24, elements=finite), finite, finite)
    def test_linearity(self, x, y, a, b):
        lhs = T.rfft(T.Tensor(a * x + b * y))
        sx, sy = T.rfft(T.Tensor(x)), T.rfft(T.Tensor(y))
        np.testing.assert_allclose(lhs.real.data, a * sx.real.data + b * sy.real.data, atol=1e-9)
        np.testing.assert_allclose(lhs.imag.data, a * sx.imag.data + b * sy.imag.data, atol=1e-9)

    @pytest.mark.parametrize("D", [8, 9])
    def test_adjoint_gradcheck(self, rng, D):
        x = leaf(rng.standard_normal((2, 3, D)))
        assert max_error(gradcheck(lambda: T.rfft_stacked(x), [x])) <= 1e-4


class TestConv:
    def test_single_recent_tap_is_identity(self, rng):
        x = rng.standard_normal((2, 3, 10))
        w = np.zeros((3, 3, 3))
        for c in range(3):
            w[c, c, -1] = 1.0
        np.testing.assert_array_equal(T.conv1d_causal(T.Tensor(x), T.Tensor(w), 2).data, x)

    def test_zero_input_gives_bias(self, rng):
        w = T.Tensor(rng.standard_normal((4, 2, 3)))
        out = T.conv1d_causal(T.Tensor(np.zeros((1, 2, 6))), w, 1, bias=T.Tensor([1.0, 2.0, 3.0, 4.0]))
        np.testing.assert_array_equal(out.data[0, :, 0], [1.0, 2.0, 3.0, 4.0])
        np.testing.assert_array_equal(T.conv1d_causal(T.Tensor(np.zeros((1, 2, 6))), w, 1).data, 0.0)

    def test_sliding_window_oracle(self, rng):
        x, w = rng.standard_normal((2, 3, 11)), rng.standard_normal((4, 3, 3))
        out = T.conv1d_causal(T.Tensor(x), T.Tensor(w), 2).data
        np.testing.assert_allclose(out, causal_conv_loops(x, w, 2), rtol=0, atol=1e-12)

    def test_depthwise_oracle(self, rng):
        x, w = rng.standard_normal((2, 3, 11)), rng.standard_normal((3, 1, 3))
        out = T.conv1d_causal(T.Tensor(x), T.Tensor(w), 4, groups=3).data
        np.testing.assert_allclose(out, causal_conv_loops(x, w, 4, depthwise=True), rtol=0, atol=1e-12)

    def test_bad_dilation(self):
        with pytest.raises(ValueError):
            T.conv1d_causal(T.Tensor(np.ones((1, 1, 4))), T.Tensor(np.ones((1, 1, 2))), 0)

    @pytest.mark.parametrize("t", [0, 3, 9])
    def test_future_independence(self, rng, t):
        x, w = rng.standard_normal((2, 3, 12)), T.Tensor(rng.standard_normal((3, 3, 3)))
        cut = x.copy()
        cut[..., t + 1:] = 0.0
        a = T.conv1d_causal(T.Tensor(x), w, 2).data
        b = T.conv1d_causal(T.Tensor(cut), w, 2).data
        assert np.array_equal(a[..., : t + 1], b[..., : t + 1])

    @pytest.mark.parametrize("groups", [1, 3])
    def test_gradcheck(self, rng, groups):
        x = leaf(rng.standard_normal((2, 3, 9)))
        w = leaf(rng.standard_normal((3, 3 // groups, 3)))
        b = leaf(rng.standard_normal(3))
        err = gradcheck(lambda: T.conv1d_causal(x, w, 2, bias=b, groups=groups), [x, w, b])
        assert max_error(err) <= 1e-4


class TestLayerNorm:
    def test_constant_vector(self):
        for c in (2.5, 3.3):
            out = T.layer_norm(T.Tensor(np.full(6, c)), weight=T.Tensor(np.ones(6)), bias=T.Tensor(np.zeros(6)))
            np.testing.assert_allclose(out.data, np.zeros(6), rtol=0, atol=1e-12)

    def test_fixed_point(self, rng):
        x = rng.standard_normal(50)
        x = (x - x.mean()) / x.std()
        np.testing.assert_allclose(T.layer_norm(T.Tensor(x), eps=1e-12).data, x, atol=1e-9)

    def test_direct_formula(self, rng):
        x = rng.standard_normal((3, 7))
        w, b = rng.standard_normal(7), rng.standard_normal(7)
        mu = x.mean(axis=1, keepdims=True)
        var = ((x - mu) ** 2).mean(axis=1, keepdims=True)
        ref = (x - mu) / np.sqrt(var + 1e-5) * w + b
        out = T.layer_norm(T.Tensor(x), eps=1e-5, weight=T.Tensor(w), bias=T.Tensor(b)).data
        np.testing.assert_allclose(out, ref, rtol=0, atol=1e-12)

    def test_gradcheck(self, rng):
        x, w, b = leaf(rng.standard_normal((4, 6))), leaf(rng.standard_normal(6)), leaf(rng.standard_normal(6))
        assert max_error(gradcheck(lambda: T.layer_norm(x, weight=w, bias=b), [x, w, b])) <= 1e-4


class TestBackward:
    def test_sum_gives_ones(self, rng):
        x = leaf(rng.standard_normal((2, 3, 4)))
        T.backward(T.sum(x))
        np.testing.assert_array_equal(x.grad, np.ones((2, 3, 4)))

    def test_half_square(self, rng):
        x = leaf(rng.standard_normal(5))
        T.backward(T.sum(x * x) * 0.5)
        np.testing.assert_allclose(x.grad, x.data, atol=1e-15)

    def test_accumulation_is_additive(self, rng):
        x = leaf(rng.standard_normal(4))
        y = T.exp(x)
        T.backward(T.sum(y + y + y))
        np.testing.assert_allclose(x.grad, 3 * np.exp(x.data), atol=1e-12)

    def test_chain_and_tape_cleared(self, rng):
        x = leaf(rng.standard_normal(3))
        T.backward(T.sum(T.exp(T.sin(x))))
        np.testing.assert_allclose(x.grad, np.exp(np.sin(x.data)) * np.cos(x.data), atol=1e-12)
        assert T.tape_length() == 0

    def test_non_scalar_rejected(self, rng):
        x = leaf(rng.standard_normal(3))
        with pytest.raises(T.TapeError):
            T.backward(x * 2.0)

    def test_off_tape_rejected(self):
        with pytest.raises(T.TapeError):
            T.backward(T.Tensor(1.0))
        x = leaf([1.0])
        with T.no_grad():
            y = T.sum(x * 2.0)
        with pytest.raises(T.TapeError):
            T.backward(y)

    def test_consumed_tape_rejected(self):
        x = leaf([1.0, 2.0])
        loss = T.sum(x * x)
        T.backward(loss)
        with pytest.raises(T.TapeError):
            T.backward(loss)

    def test_non_finite_forward_names_op(self):
        with pytest.raises(T.NonFiniteError, match="log"):
            T.log(T.Tensor([0.0]))

    @pytest.mark.parametrize("name,fn", [
        ("add", lambda a, b: a + b),
        ("sub", lambda a, b: a - b),
        ("mul", lambda a, b: a * b),
        ("div", lambda a, b: a / (T.exp(b) + 1.0)),
        ("exp", lambda a, b: T.exp(a)),
        ("cos", lambda a, b: T.cos(a * b)),
        ("sin", lambda a, b: T.sin(a)),
        ("square", lambda a, b: T.square(a)),
        ("sqrt", lambda a, b: T.sqrt(T.exp(a))),
        ("softplus", lambda a, b: T.softplus(a)),
        ("sigmoid", lambda a, b: T.sigmoid(a)),
        ("relu", lambda a, b: T.relu(a)),
        ("elu", lambda a, b: T.elu(a)),
        ("silu", lambda a, b: T.silu(a)),
        ("softmax", lambda a, b: T.softmax(a * b, axis=1)),
        ("mean", lambda a, b: T.mean(a * b, axis=0)),
        ("transpose", lambda a, b: T.transpose(a, (1, 0)) * 2.0),
        ("flip", lambda a, b: T.flip(a, 1) * b),
        ("getitem", lambda a, b: a[:, 1:3] * b[0, :2]),
        ("fancy_getitem", lambda a, b: a[:, [0, 0, 2]]),
        ("concat", lambda a, b: T.concat([a, b], axis=0)),
        ("stack", lambda a, b: T.stack([a, b], axis=1)),
        ("reshape", lambda a, b: T.reshape(a, (-1,)) * T.reshape(b, (-1,))),
        ("broadcast", lambda a, b: a * b[0]),
    ])
    def test_primitive_gradcheck(self, rng, name, fn):
        a, b = leaf(rng.standard_normal((3, 4))), leaf(rng.standard_normal((3, 4)))
        assert max_error(gradcheck(lambda: fn(a, b), [a, b])) <= 1e-4, name

    def test_linear_recurrence_gradcheck(self, rng):
        a = leaf(rng.uniform(0.1, 0.9, (2, 6, 3)))
        b = leaf(rng.standard_normal((2, 6, 3)))
        assert max_error(gradcheck(lambda: T.linear_recurrence(a, b, axis=1), [a, b])) <= 1e-4

    def test_float32_stays_float32(self, rng):
        x = T.Tensor(rng.standard_normal(4).astype(np.float32), requires_grad=True)
        y = T.sum(T.exp(x) * 2.0)
        assert y.dtype == np.float32
        T.backward(y)
        assert x.grad.dtype == np.float32
