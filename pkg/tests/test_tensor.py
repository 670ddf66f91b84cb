"""Tensor op oracles, per-op gradient checks, and tape semantics."""

import math

import numpy as np
import pytest

from slimvit import tensor as T


def fd_grad(fn, x, h=1e-6):
    """Central finite differences of scalar fn over every coordinate of x."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        orig = x[idx]
        x[idx] = orig + h
        fp = fn()
        x[idx] = orig - h
        fm = fn()
        x[idx] = orig
        g[idx] = (fp - fm) / (2 * h)
    return g


def check_grads(build, *arrays, tol=1e-5):
    """Compare analytic grads of scalar build(*tensors) against central FD."""
    tensors = [T.Tensor(a, requires_grad=True) for a in arrays]
    loss = build(*tensors)
    T.backward(loss)
    for t, a in zip(tensors, arrays):
        fd = fd_grad(lambda: float(build(*[T.Tensor(x.data) for x in tensors]).data), a)
        denom = np.maximum(np.maximum(np.abs(fd), np.abs(t.grad)), 1e-4)
        rel = np.abs(fd - t.grad) / denom
        assert rel.max() <= tol, f"rel err {rel.max():.2e}"


class TestMatmul:
    def test_identity(self):
        a = np.arange(9, dtype=np.float64).reshape(3, 3)
        out = T.matmul(T.Tensor(np.eye(3)), T.Tensor(a))
        np.testing.assert_array_equal(out.data, a)

    def test_zeros(self):
        rng = np.random.default_rng(0)
        a = rng.standard_normal((3, 4))
        out = T.matmul(T.Tensor(a), T.Tensor(np.zeros((4, 2))))
        np.testing.assert_array_equal(out.data, np.zeros((3, 2)))

    def test_against_scalar_loop(self):
        rng = np.random.default_rng(7)
        a = rng.standard_normal((4, 4))
        b = rng.standard_normal((4, 4))
        expected = np.zeros((4, 4))
        for i in range(4):
            for j in range(4):
                acc = 0.0
                for k in range(4):
                    acc += a[i, k] * b[k, j]
                expected[i, j] = acc
        out = T.matmul(T.Tensor(a), T.Tensor(b))
        assert np.abs(out.data - expected).max() <= 1e-6

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            T.matmul(T.Tensor(np.zeros((2, 3))), T.Tensor(np.zeros((4, 2))))

    def test_stacked_against_loop(self):
        rng = np.random.default_rng(8)
        a = rng.standard_normal((2, 3, 4, 5))
        b = rng.standard_normal((2, 3, 5, 6))
        out = T.matmul(T.Tensor(a), T.Tensor(b))
        for i in range(2):
            for j in range(3):
                np.testing.assert_allclose(out.data[i, j], a[i, j] @ b[i, j], atol=1e-12)

    def test_grads(self):
        rng = np.random.default_rng(1)
        w = rng.standard_normal((3, 2))
        check_grads(lambda a, b: T.sum_all(T.matmul(a, b) * w),
                    rng.standard_normal((3, 4)), rng.standard_normal((4, 2)))

    def test_grads_stacked_times_2d(self):
        rng = np.random.default_rng(2)
        w = rng.standard_normal((2, 3, 2))
        check_grads(lambda a, b: T.sum_all(T.matmul(a, b) * w),
                    rng.standard_normal((2, 3, 4)), rng.standard_normal((4, 2)))


class TestSoftmax:
    def test_uniform(self):
        out = T.softmax(T.Tensor(np.zeros(4)), axis=-1)
        np.testing.assert_allclose(out.data, 0.25, atol=1e-12)

    def test_shift_invariance(self):
        rng = np.random.default_rng(3)
        x = rng.standard_normal((5, 7))
        a = T.softmax(T.Tensor(x), axis=-1).data
        b = T.softmax(T.Tensor(x + 13.7), axis=-1).data
        np.testing.assert_allclose(a, b, atol=1e-12)

    def test_oracle_123(self):
        # independent oracle: mpmath exp/normalize at 50 digits
        import mpmath

        mpmath.mp.dps = 50
        es = [mpmath.e ** v for v in (1, 2, 3)]
        total = sum(es)
        expected = np.array([float(e / total) for e in es])
        out = T.softmax(T.Tensor(np.array([1.0, 2.0, 3.0])), axis=-1)
        assert np.abs(out.data - expected).max() <= 1e-12
        # the spec-level rounded values
        np.testing.assert_allclose(out.data, [0.09003, 0.24473, 0.66524], atol=5e-6)

    def test_rows_sum_to_one(self):
        rng = np.random.default_rng(4)
        x = rng.standard_normal((20, 9)) * 10
        out = T.softmax(T.Tensor(x), axis=-1)
        np.testing.assert_allclose(out.data.sum(axis=-1), 1.0, atol=1e-6)
        assert (out.data > 0).all() and (out.data < 1).all()

    def test_grads(self):
        rng = np.random.default_rng(5)
        w = rng.standard_normal((3, 5))
        check_grads(lambda x: T.sum_all(T.softmax(x, axis=-1) * w),
                    rng.standard_normal((3, 5)))


class TestLayerNorm:
    def test_constant_row(self):
        x = np.full((2, 6), 3.5)
        out = T.layer_norm(T.Tensor(x), T.Tensor(np.ones(6)), T.Tensor(np.zeros(6)), 1e-6)
        np.testing.assert_allclose(out.data, 0.0, atol=1e-3)  # eps-dominated

    def test_gamma_zero_broadcasts_beta(self):
        rng = np.random.default_rng(6)
        x = rng.standard_normal((3, 4))
        beta = rng.standard_normal(4)
        out = T.layer_norm(T.Tensor(x), T.Tensor(np.zeros(4)), T.Tensor(beta), 1e-6)
        np.testing.assert_allclose(out.data, np.broadcast_to(beta, (3, 4)), atol=1e-12)

    def test_oracle_1234(self):
        import mpmath

        mpmath.mp.dps = 50
        vals = [mpmath.mpf(v) for v in (1, 2, 3, 4)]
        mean = sum(vals) / 4
        var = sum((v - mean) ** 2 for v in vals) / 4
        inv = 1 / mpmath.sqrt(var + mpmath.mpf("1e-6"))
        expected = np.array([float((v - mean) * inv) for v in vals])
        out = T.layer_norm(T.Tensor(np.array([1.0, 2.0, 3.0, 4.0]).reshape(1, 4)),
                           T.Tensor(np.ones(4)), T.Tensor(np.zeros(4)), 1e-6)
        assert np.abs(out.data[0] - expected).max() <= 1e-12
        np.testing.assert_allclose(out.data[0], [-1.3416, -0.4472, 0.4472, 1.3416], atol=5e-5)

    def test_normalization_invariant(self):
        rng = np.random.default_rng(7)
        x = rng.standard_normal((50, 16)) * 3 + 2
        out = T.layer_norm(T.Tensor(x), T.Tensor(np.ones(16)), T.Tensor(np.zeros(16)), 1e-6)
        mu = out.data.mean(axis=-1)
        var = out.data.var(axis=-1)
        assert np.abs(mu).max() <= 1e-5
        assert np.abs(var - 1.0).max() <= 1e-4

    def test_grads(self):
        rng = np.random.default_rng(8)
        w = rng.standard_normal((4, 6))
        check_grads(lambda x, g, b: T.sum_all(T.layer_norm(x, g, b, 1e-6) * w),
                    rng.standard_normal((4, 6)),
                    rng.standard_normal(6),
                    rng.standard_normal(6))


class TestGelu:
    def test_zero(self):
        assert float(T.gelu(T.Tensor(np.array(0.0))).data) == 0.0

    def test_asymptote(self):
        assert abs(float(T.gelu(T.Tensor(np.array(10.0))).data) - 10.0) <= 1e-6

    def test_erf_oracle(self):
        import mpmath

        mpmath.mp.dps = 50
        expected = float(mpmath.mpf(1) * mpmath.mpf("0.5")
                         * (1 + mpmath.erf(1 / mpmath.sqrt(2))))
        out = float(T.gelu(T.Tensor(np.array(1.0))).data)
        assert abs(out - expected) <= 1e-12
        assert abs(out - 0.841345) <= 1e-6

    def test_grads(self):
        rng = np.random.default_rng(9)
        w = rng.standard_normal(11)
        check_grads(lambda x: T.sum_all(T.gelu(x) * w),
                    np.linspace(-3, 3, 11))


class TestSliceView:
    def test_full_range_matches_plain(self):
        rng = np.random.default_rng(10)
        a = rng.standard_normal((4, 4))
        w = rng.standard_normal((4, 4))

        t1 = T.Tensor(a.copy(), requires_grad=True)
        T.backward(T.sum_all(T.slice_view(t1, ((0, 4), (0, 4))) * w))
        t2 = T.Tensor(a.copy(), requires_grad=True)
        T.backward(T.sum_all(t2 * w))
        np.testing.assert_array_equal(t1.grad, t2.grad)

    def test_disjoint_rows(self):
        rng = np.random.default_rng(11)
        a = rng.standard_normal((8, 8))
        t = T.Tensor(a, requires_grad=True)
        T.backward(T.sum_all(T.slice_view(t, ((6, 8), (0, 8)))))
        assert np.array_equal(t.grad[:6], np.zeros((6, 8)))  # exact zeros outside
        np.testing.assert_array_equal(t.grad[6:], np.ones((2, 8)))

    def test_overlapping_slices_fd(self):
        rng = np.random.default_rng(12)
        a = rng.standard_normal((6, 6))
        w1 = rng.standard_normal((4, 4))
        w2 = rng.standard_normal((4, 4))

        def build(t):
            lo = T.slice_view(t, ((0, 4), (0, 4)))
            hi = T.slice_view(t, ((2, 6), (2, 6)))
            return T.sum_all(lo * lo * w1) + T.sum_all(hi * w2)

        check_grads(build, a)

    def test_out_of_range(self):
        t = T.Tensor(np.zeros((3, 3)))
        with pytest.raises(IndexError):
            T.slice_view(t, ((0, 4), (0, 3)))


class TestBackward:
    def test_product_rule(self):
        x = T.Tensor(np.array(2.0), requires_grad=True)
        y = T.Tensor(np.array(3.0), requires_grad=True)
        T.backward(x * y)
        assert float(x.grad) == 3.0
        assert float(y.grad) == 2.0

    def test_accumulation_doubles(self):
        x = T.Tensor(np.array(2.0), requires_grad=True)
        y = T.Tensor(np.array(3.0), requires_grad=True)
        loss = x * y
        T.backward(loss)
        T.backward(loss)
        assert float(x.grad) == 6.0

    def test_non_scalar_rejected(self):
        with pytest.raises(ValueError):
            T.backward(T.Tensor(np.zeros(3)))

    def test_shared_input_two_paths(self):
        # d/dx (x*x + 3x) = 2x + 3
        x = T.Tensor(np.array(5.0), requires_grad=True)
        T.backward(x * x + 3.0 * x)
        assert float(x.grad) == 13.0

    def test_log_softmax_grads(self):
        rng = np.random.default_rng(13)
        w = rng.standard_normal((2, 5))
        check_grads(lambda x: T.sum_all(T.log_softmax(x, axis=-1) * w),
                    rng.standard_normal((2, 5)))

    def test_concat_broadcast_permute_reshape_grads(self):
        rng = np.random.default_rng(14)
        w = rng.standard_normal((2, 6, 3))

        def build(a, b):
            bb = T.broadcast_to(T.reshape(b, (1, 2, 3)), (2, 2, 3))
            cat = T.concat([T.permute(a, (0, 2, 1)), bb], axis=1)
            return T.sum_all(cat * w)

        check_grads(build, rng.standard_normal((2, 4, 3)).transpose(0, 2, 1).copy(),
                    rng.standard_normal((2, 3)))

    def test_log_floor(self):
        x = T.Tensor(np.array([1.0, 1e-20]), requires_grad=True)
        out = T.log(x)
        assert out.data[1] == math.log(T.LOG_FLOOR)
        T.backward(T.sum_all(out))
        assert x.grad[0] == 1.0
        assert x.grad[1] == 0.0  # floored region passes no gradient

    def test_determinism(self):
        def run():
            rng = np.random.default_rng(99)
            a = T.Tensor(rng.standard_normal((6, 6)), requires_grad=True)
            b = T.Tensor(rng.standard_normal((6, 6)), requires_grad=True)
            h = T.gelu(T.matmul(a, b))
            loss = T.sum_all(T.softmax(h, axis=-1) * rng.standard_normal((6, 6)))
            T.backward(loss)
            return loss.data.copy(), a.grad.copy(), b.grad.copy()

        l1, ga1, gb1 = run()
        l2, ga2, gb2 = run()
        assert np.array_equal(l1, l2)
        assert np.array_equal(ga1, ga2)
        assert np.array_equal(gb1, gb2)

    def test_untracked_inputs_build_no_tape(self):
        a = T.Tensor(np.zeros((2, 2)))
        out = T.matmul(a, T.Tensor(np.zeros((2, 2))))
        assert out._backward is None
