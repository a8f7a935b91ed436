"""Tape engine tests: forward values against independent oracles, gradients
against central finite differences."""

import numpy as np
import pytest

from thermocast import autodiff as ad
from thermocast.errors import ShapeMismatchError, TapeError, ValidationError


def conv2d_loops(x, kernel, bias=None):
    """Nested-loop cross-correlation oracle, stride 1, zero-padded same output."""
    B, Cin, H, W = x.shape
    Cout, _, kh, kw = kernel.shape
    ph, pw = kh // 2, kw // 2
    out = np.zeros((B, Cout, H, W))
    for b in range(B):
        for co in range(Cout):
            for i in range(H):
                for j in range(W):
                    acc = 0.0
                    for ci in range(Cin):
                        for u in range(kh):
                            for v in range(kw):
                                ii, jj = i + u - ph, j + v - pw
                                if 0 <= ii < H and 0 <= jj < W:
                                    acc += x[b, ci, ii, jj] * kernel[co, ci, u, v]
                    out[b, co, i, j] = acc + (bias[co] if bias is not None else 0.0)
    return out


def test_conv2d_matches_loop_oracle():
    rng = np.random.default_rng(7)
    for _ in range(4):
        B, Cin, Cout = rng.integers(1, 3), rng.integers(1, 4), rng.integers(1, 4)
        H, W = rng.integers(3, 7), rng.integers(3, 7)
        k = rng.choice([1, 3, 5])
        x = rng.standard_normal((B, Cin, H, W))
        kern = rng.standard_normal((Cout, Cin, k, k))
        bias = rng.standard_normal(Cout)
        tape = ad.Tape()
        out = ad.conv2d(tape.leaf(x), tape.leaf(kern), tape.leaf(bias))
        expect = conv2d_loops(x, kern, bias)
        assert np.allclose(out.data, expect, rtol=0, atol=1e-12)


def test_conv2d_identity_kernel():
    """A centered one-hot kernel reproduces the input exactly."""
    rng = np.random.default_rng(3)
    x = rng.standard_normal((1, 1, 3, 3))
    kern = np.zeros((1, 1, 3, 3))
    kern[0, 0, 1, 1] = 1.0
    tape = ad.Tape()
    out = ad.conv2d(tape.leaf(x), kern)
    assert np.array_equal(out.data, x)


def test_conv2d_rejects_channel_mismatch_and_even_kernel():
    tape = ad.Tape()
    x = tape.leaf(np.zeros((1, 2, 4, 4)))
    with pytest.raises(ShapeMismatchError):
        ad.conv2d(x, np.zeros((1, 3, 3, 3)))
    with pytest.raises(ValidationError):
        ad.conv2d(x, np.zeros((1, 2, 2, 2)))


def test_elementwise_values_and_dispatch():
    rng = np.random.default_rng(11)
    a = rng.standard_normal((3, 4)) + 2.5
    b = rng.standard_normal((3, 4)) + 2.5
    tape = ad.Tape()
    ta, tb = tape.leaf(a), tape.leaf(b)
    assert np.array_equal((ta + tb).data, a + b)
    assert np.array_equal((ta - tb).data, a - b)
    assert np.array_equal((ta * tb).data, a * b)
    assert np.array_equal((ta / tb).data, a / b)
    assert np.array_equal(ad.square(ta).data, a * a)
    assert np.array_equal(ad.absval(ta).data, np.abs(a))
    assert np.array_equal(ad.scale(ta, -1.5).data, -1.5 * a)
    assert np.array_equal(ad.power4(ta).data, (a * a) * (a * a))
    assert np.array_equal(ad.elementwise("mul", ta, tb).data, a * b)
    with pytest.raises(ValidationError):
        ad.elementwise("pow", ta, tb)


def test_shape_mismatch_names_both_shapes():
    tape = ad.Tape()
    a = tape.leaf(np.zeros((2, 3)))
    b = tape.leaf(np.zeros((3, 2)))
    with pytest.raises(ShapeMismatchError) as exc:
        ad.add(a, b)
    assert "(2, 3)" in str(exc.value) and "(3, 2)" in str(exc.value)


def test_scalar_broadcast_only():
    tape = ad.Tape()
    a = tape.leaf(np.ones((2, 2)))
    s = tape.leaf(3.0)
    assert np.array_equal((a * s).data, 3 * np.ones((2, 2)))
    # scalar gets the summed gradient
    loss = ad.reduce_sum(a * s)
    tape.backward(loss)
    assert s.grad == pytest.approx(4.0)


def test_div_by_zero_rejected():
    tape = ad.Tape()
    a = tape.leaf(np.ones(3))
    with pytest.raises(ValidationError):
        ad.div(a, np.array([1.0, 0.0, 2.0]))


def test_sigmoid_saturates_without_nan():
    tape = ad.Tape()
    x = tape.leaf(np.array([-1e4, -50.0, 0.0, 50.0, 1e4]))
    s = ad.sigmoid(x)
    assert np.all(np.isfinite(s.data))
    assert s.data[0] == 0.0 and s.data[-1] == 1.0
    assert s.data[2] == 0.5


def test_reduce_and_concat_and_narrow():
    rng = np.random.default_rng(5)
    a = rng.standard_normal((2, 3, 4, 4))
    b = rng.standard_normal((2, 2, 4, 4))
    tape = ad.Tape()
    ta, tb = tape.leaf(a), tape.leaf(b)
    cat = ad.concat_channels(ta, tb)
    assert cat.shape == (2, 5, 4, 4)
    back = ad.narrow(cat, 1, 0, 3)
    assert np.array_equal(back.data, a)
    assert ad.reduce_mean(ta).item() == pytest.approx(a.mean())
    assert ad.reduce_sum(tb).item() == pytest.approx(b.sum())
    with pytest.raises(ValidationError):
        ad.reduce_mean(tape.leaf(np.zeros((0, 2))))
    # zero-channel concat keeps the other operand
    empty = tape.leaf(np.zeros((2, 0, 4, 4)))
    same = ad.concat_channels(ta, empty)
    assert np.array_equal(same.data, a)


def test_concat_channels_rejects_spatial_mismatch():
    tape = ad.Tape()
    with pytest.raises(ShapeMismatchError):
        ad.concat_channels(tape.leaf(np.zeros((1, 1, 4, 4))), tape.leaf(np.zeros((1, 1, 5, 4))))


def test_concat_constant_operands():
    rng = np.random.default_rng(9)
    a = rng.standard_normal((1, 2, 3, 3))
    b = rng.standard_normal((1, 4, 3, 3))
    tape = ad.Tape()
    tb = tape.leaf(b)
    cat = ad.concat_channels(a, tb)
    assert np.array_equal(cat.data, np.concatenate([a, b], axis=1))
    # constants carry no gradient, the tensor operand gets its full share
    ad.reduce_sum(ad.mul(cat, cat)).backward()
    assert np.allclose(tb.grad, 2 * b)
    with pytest.raises(TapeError):
        ad.concat([a, b], axis=1)


def test_reshape_round_trip_and_grad():
    rng = np.random.default_rng(11)
    x = rng.uniform(0.5, 2.0, size=(3, 4))
    tape = ad.Tape()
    t = tape.leaf(x)
    flat = ad.reshape(t, (12,))
    assert np.array_equal(flat.data, x.ravel())
    back = ad.reshape(flat, (3, 4))
    assert np.array_equal(back.data, x)
    with pytest.raises(ShapeMismatchError):
        ad.reshape(t, (5, 5))
    err = ad.grad_check(lambda v: ad.reduce_sum(ad.square(ad.reshape(v, (12,)))), x)
    assert err < 1e-6


def test_shift2d_values():
    x = np.arange(9.0).reshape(1, 1, 3, 3)
    tape = ad.Tape()
    t = tape.leaf(x)
    east = ad.shift2d(t, 0, 1)  # out[i,j] = x[i, j+1]
    assert np.array_equal(east.data[0, 0], np.array([[1, 2, 0], [4, 5, 0], [7, 8, 0]], dtype=float))
    south = ad.shift2d(t, 1, 0)
    assert np.array_equal(south.data[0, 0], np.array([[3, 4, 5], [6, 7, 8], [0, 0, 0]], dtype=float))


class TestBackward:
    def test_non_scalar_loss_rejected(self):
        tape = ad.Tape()
        x = tape.leaf(np.ones((2, 2)))
        with pytest.raises(TapeError):
            tape.backward(x)

    def test_stale_tape_rejected(self):
        tape = ad.Tape()
        x = tape.leaf(np.ones(3))
        loss = ad.reduce_sum(ad.square(x))
        tape.backward(loss)
        with pytest.raises(TapeError):
            tape.backward(loss)
        tape.reset()
        y = tape.leaf(np.ones(3))
        tape.backward(ad.reduce_sum(y))  # usable again after reset

    def test_foreign_tensor_rejected(self):
        t1, t2 = ad.Tape(), ad.Tape()
        a = t1.leaf(np.ones(2))
        b = t2.leaf(np.ones(2))
        with pytest.raises(TapeError):
            ad.add(a, b)

    def test_fanout_accumulates(self):
        """y = x*x + x used twice: dy/dx = 2x + 1."""
        tape = ad.Tape()
        x = tape.leaf(np.array(3.0))
        y = ad.add(ad.mul(x, x), x)
        tape.backward(y)
        assert x.grad == pytest.approx(7.0)

    def test_gradient_linearity(self):
        """grad(a*L1 + b*L2) == a*grad(L1) + b*grad(L2) on the same function."""
        rng = np.random.default_rng(19)
        x0 = rng.standard_normal((4, 4))

        def build(tape):
            x = tape.leaf(x0)
            l1 = ad.reduce_mean(ad.square(x))
            l2 = ad.reduce_sum(ad.tanh(x))
            return x, l1, l2

        grads = []
        for a, b in [(1.0, 0.0), (0.0, 1.0), (2.5, -1.25)]:
            tape = ad.Tape()
            x, l1, l2 = build(tape)
            tape.backward(ad.add(ad.scale(l1, a), ad.scale(l2, b)))
            grads.append(x.grad)
        combo = 2.5 * grads[0] - 1.25 * grads[1]
        denom = np.maximum(np.abs(combo), 1e-12)
        assert np.max(np.abs(grads[2] - combo) / denom) < 1e-12

    def test_identical_graph_is_bit_deterministic(self):
        rng = np.random.default_rng(23)
        x0 = rng.standard_normal((3, 5, 5))

        def run():
            tape = ad.Tape()
            x = tape.leaf(x0)
            y = ad.reduce_mean(ad.square(ad.tanh(ad.shift2d(x, 1, -1))))
            tape.backward(y)
            return y.data.copy(), x.grad.copy()

        v1, g1 = run()
        v2, g2 = run()
        assert np.array_equal(v1, v2) and np.array_equal(g1, g2)


class TestGradCheck:
    """Central-difference verification of every op, 20 seeds each."""

    SEEDS = range(20)

    @pytest.mark.parametrize("seed", SEEDS)
    def test_binary_and_unary_ops(self, seed):
        rng = np.random.default_rng(seed)
        b = rng.standard_normal((3, 4)) * 0.5 + 2.0  # away from 0 for div/abs

        checks = [
            lambda x: ad.reduce_sum(ad.add(x, b)),
            lambda x: ad.reduce_mean(ad.sub(x, b)),
            lambda x: ad.reduce_sum(ad.mul(x, b)),
            lambda x: ad.reduce_mean(ad.div(x, b)),
            lambda x: ad.reduce_sum(ad.square(x)),
            lambda x: ad.reduce_mean(ad.absval(x)),
            lambda x: ad.reduce_sum(ad.scale(x, -0.75)),
            lambda x: ad.reduce_mean(ad.power4(x)),
            lambda x: ad.reduce_sum(ad.sigmoid(x)),
            lambda x: ad.reduce_mean(ad.tanh(x)),
            lambda x: ad.reduce_sum(ad.square(ad.shift2d(x, -1, 1))),
        ]
        # magnitudes bounded away from 0: near-zero coordinates make the
        # central difference ill-conditioned (tiny true gradient under the
        # rounding noise of f), which would test the probe rather than the op
        x0 = rng.uniform(0.5, 2.0, size=(3, 4)) * rng.choice([-1.0, 1.0], size=(3, 4))
        for f in checks:
            assert ad.grad_check(f, x0) < 1e-5

    @pytest.mark.parametrize("seed", SEEDS)
    def test_div_as_denominator(self, seed):
        rng = np.random.default_rng(100 + seed)
        a = rng.standard_normal((2, 3))
        x0 = rng.standard_normal((2, 3)) * 0.2 + 2.0
        assert ad.grad_check(lambda x: ad.reduce_sum(ad.div(a, x)), x0) < 1e-5

    @pytest.mark.parametrize("seed", SEEDS)
    def test_conv2d_wrt_input_kernel_bias(self, seed):
        rng = np.random.default_rng(200 + seed)
        x0 = rng.standard_normal((2, 2, 5, 4))
        k0 = rng.standard_normal((3, 2, 3, 3)) * 0.5
        b0 = rng.standard_normal(3)

        def wrt_x(x):
            return ad.reduce_mean(ad.square(ad.conv2d(x, k0, b0)))

        def wrt_k(k):
            return ad.reduce_mean(ad.square(ad.conv2d(x0, k, b0)))

        def wrt_b(bias):
            return ad.reduce_mean(ad.square(ad.conv2d(x0, k0, bias)))

        assert ad.grad_check(wrt_x, x0) < 1e-5
        assert ad.grad_check(wrt_k, k0) < 1e-5
        assert ad.grad_check(wrt_b, b0) < 1e-5

    @pytest.mark.parametrize("seed", SEEDS)
    def test_concat_and_narrow(self, seed):
        rng = np.random.default_rng(300 + seed)
        other = rng.standard_normal((1, 2, 3, 3))

        def f(x):
            tape = x.tape
            cat = ad.concat_channels(x, tape.leaf(other))
            return ad.reduce_mean(ad.square(ad.narrow(cat, 1, 1, 2)))

        assert ad.grad_check(f, rng.standard_normal((1, 2, 3, 3))) < 1e-5

    def test_composite_graph(self):
        """Deeper mixed graph exercising fanout through conv and activations."""
        rng = np.random.default_rng(404)
        k = rng.standard_normal((2, 1, 3, 3)) * 0.7

        def f(x):
            h = ad.tanh(ad.conv2d(x, k))
            g = ad.sigmoid(ad.scale(x, 2.0))
            merged = ad.mul(ad.narrow(h, 1, 0, 1), g)
            return ad.reduce_mean(ad.square(ad.add(merged, ad.square(x))))

        assert ad.grad_check(f, rng.standard_normal((1, 1, 6, 5))) < 1e-5

    def test_sampled_coordinates_above_threshold(self):
        rng = np.random.default_rng(9)
        x0 = rng.standard_normal((40, 40))  # 1600 coords, sample 64
        err = ad.grad_check(
            lambda x: ad.reduce_mean(ad.square(x)), x0, rng=rng, max_coords=64
        )
        assert err < 1e-5
