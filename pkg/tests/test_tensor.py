import numpy as np
import pytest

from leugan import tensor as T
from leugan.errors import ConfigError, ShapeError


def conv2d_naive(x, k, stride=1, padding=0):
    """Six-nested-loop cross-correlation oracle."""
    n, c, h, w = x.shape
    f, _, kh, kw = k.shape
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (w + 2 * padding - kw) // stride + 1
    out = np.zeros((n, f, ho, wo))
    for ni in range(n):
        for fi in range(f):
            for yi in range(ho):
                for xi in range(wo):
                    acc = 0.0
                    for ci in range(c):
                        for i in range(kh):
                            for j in range(kw):
                                acc += xp[ni, ci, yi * stride + i, xi * stride + j] * k[fi, ci, i, j]
                    out[ni, fi, yi, xi] = acc
    return out


class TestConv2d:
    def test_identity_kernel(self):
        x = T.Tensor(np.arange(9.0).reshape(1, 1, 3, 3))
        k = T.Tensor(np.ones((1, 1, 1, 1)))
        out = T.conv2d(x, k, stride=1, padding=0)
        np.testing.assert_array_equal(out.data, x.data)

    def test_counting_case(self):
        x = T.Tensor(np.ones((1, 1, 3, 3)))
        k = T.Tensor(np.ones((1, 1, 3, 3)))
        out = T.conv2d(x, k)
        assert out.shape == (1, 1, 1, 1)
        assert out.item() == 9.0

    def test_matches_naive_oracle(self):
        rng = np.random.default_rng(0)
        x = T.Tensor(rng.normal(size=(1, 2, 5, 5)))
        k = T.Tensor(rng.normal(size=(3, 2, 3, 3)))
        out = T.conv2d(x, k)
        expected = conv2d_naive(x.data, k.data)
        np.testing.assert_allclose(out.data, expected, atol=1e-12)

    def test_twenty_random_shapes_against_oracle(self):
        rng = np.random.default_rng(42)
        for _ in range(20):
            n = int(rng.integers(1, 3))
            c = int(rng.integers(1, 4))
            f = int(rng.integers(1, 4))
            kh = int(rng.integers(1, 4))
            kw = int(rng.integers(1, 4))
            stride = int(rng.integers(1, 3))
            padding = int(rng.integers(0, 2))
            h = kh + stride * int(rng.integers(1, 4)) - 2 * padding
            w = kw + stride * int(rng.integers(1, 4)) - 2 * padding
            if h < 1 or w < 1:
                continue
            x = T.Tensor(rng.normal(size=(n, c, h, w)))
            k = T.Tensor(rng.normal(size=(f, c, kh, kw)))
            out = T.conv2d(x, k, stride=stride, padding=padding)
            np.testing.assert_allclose(
                out.data, conv2d_naive(x.data, k.data, stride, padding), atol=1e-12)

    def test_channel_mismatch_raises(self):
        x = T.Tensor(np.zeros((1, 2, 4, 4)))
        k = T.Tensor(np.zeros((1, 3, 3, 3)))
        with pytest.raises(ShapeError):
            T.conv2d(x, k)

    def test_non_integral_output_raises(self):
        x = T.Tensor(np.zeros((1, 1, 5, 5)))
        k = T.Tensor(np.zeros((1, 1, 2, 2)))
        with pytest.raises(ConfigError):
            T.conv2d(x, k, stride=2)


class TestPoolGlobal:
    def test_constant_input(self):
        x = T.Tensor(np.full((2, 3, 4, 4), 0.5))
        for mode in ("avg", "max"):
            out = T.pool_global(x, mode)
            assert out.shape == (2, 3, 1, 1)
            np.testing.assert_array_equal(out.data, np.full((2, 3, 1, 1), 0.5))

    def test_enumerated_values(self):
        x = T.Tensor(np.array([0.0, 1.0, 2.0, 3.0]).reshape(1, 1, 2, 2))
        assert T.pool_global(x, "avg").item() == 1.5
        assert T.pool_global(x, "max").item() == 3.0

    def test_avg_matches_sum_oracle(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=(2, 3, 5, 7))
        out = T.pool_global(T.Tensor(x), "avg")
        np.testing.assert_allclose(
            out.data[:, :, 0, 0], x.sum(axis=(2, 3)) / (5 * 7), atol=1e-12)

    def test_bad_mode(self):
        with pytest.raises(ConfigError):
            T.pool_global(T.Tensor(np.zeros((1, 1, 2, 2))), "median")


class TestBackward:
    def test_identity(self):
        x = T.Tensor(np.array([3.0]), requires_grad=True)
        y = T.tsum(x)
        y.backward()
        np.testing.assert_array_equal(x.grad, np.array([1.0]))

    def test_sum_of_squares(self):
        x = T.Tensor(np.array([1.0, 2.0, 3.0]), requires_grad=True)
        y = T.tsum(x * x)
        y.backward()
        np.testing.assert_allclose(x.grad, [2.0, 4.0, 6.0])

    def test_non_scalar_seed_rejected(self):
        x = T.Tensor(np.ones(3), requires_grad=True)
        y = x * 2.0
        with pytest.raises(ShapeError):
            y.backward()

    def test_double_replay_rejected(self):
        x = T.Tensor(np.ones(3), requires_grad=True)
        y = T.tsum(x * x)
        y.backward()
        with pytest.raises(RuntimeError):
            y.backward()

    def test_diamond_graph_accumulates(self):
        # y = sum(a*a + a*b) shares `a` across two branches
        def f(a):
            b = a * 2.0
            left = a * a
            right = a * b
            return T.tsum(left + right)

        point = T.Tensor(np.array([0.7, -1.3, 2.1]))
        assert T.grad_check(f, point) < 1e-6

    def test_gradients_populated_for_interior_nodes(self):
        x = T.Tensor(np.array([1.0, 2.0]), requires_grad=True)
        mid = x * 3.0
        out = T.tsum(mid)
        out.backward()
        assert mid.grad is not None
        np.testing.assert_allclose(mid.grad, [1.0, 1.0])


class TestGradCheck:
    def test_sum_is_exact(self):
        # dyadic point and eps keep the central difference exact in IEEE
        err = T.grad_check(lambda t: T.tsum(t), T.Tensor(np.array([0.25, -2.0, 5.0])),
                           eps=2.0 ** -13)
        assert err == 0.0
        err_random = T.grad_check(lambda t: T.tsum(t), T.Tensor(np.array([0.3, -2.0, 5.0])))
        assert err_random < 1e-9

    @pytest.mark.parametrize("name,fn", [
        ("add", lambda t: T.tsum(t + t * 0.5)),
        ("sub", lambda t: T.tsum(1.0 - t)),
        ("mul", lambda t: T.tsum(t * t)),
        ("div", lambda t: T.tsum(t / (t * t + 2.0))),
        ("neg", lambda t: T.tsum(-t)),
        ("power", lambda t: T.tsum((t * t + 1.0) ** 1.5)),
        ("square", lambda t: T.tsum(T.square(t))),
        ("sqrt", lambda t: T.tsum(T.sqrt(t * t + 1.0))),
        ("abs", lambda t: T.tsum(T.absolute(t))),
        ("exp", lambda t: T.tsum(T.exp(t))),
        ("log", lambda t: T.tsum(T.log(t * t + 1.5))),
        ("relu", lambda t: T.tsum(T.relu(t))),
        ("leaky_relu", lambda t: T.tsum(T.leaky_relu(t, 0.2))),
        ("sigmoid", lambda t: T.tsum(T.sigmoid(t))),
        ("tanh", lambda t: T.tsum(T.tanh(t))),
        ("softmax", lambda t: T.tsum(T.square(T.softmax(t, axis=0)))),
        ("mean", lambda t: T.tmean(t * t)),
        ("max", lambda t: T.tmax(t * t)),
        ("clamp", lambda t: T.tsum(T.clamp(t, -0.5, 0.5) * t)),
        ("reshape", lambda t: T.tsum(T.reshape(t * t, (t.size,)))),
    ])
    def test_elementwise_ops_five_random_points(self, name, fn):
        rng = np.random.default_rng(abs(hash(name)) % 2 ** 32)
        for _ in range(5):
            point = T.Tensor(rng.normal(size=6) + 0.1 * rng.normal(size=6))
            assert T.grad_check(fn, point) < 1e-4, name

    def test_matmul(self):
        rng = np.random.default_rng(7)
        w = T.Tensor(rng.normal(size=(4, 3)))

        def f(t):
            return T.tsum(T.square(T.reshape(t, (2, 4)) @ w))

        for _ in range(5):
            assert T.grad_check(f, T.Tensor(rng.normal(size=8))) < 1e-4

    def test_conv2d_grads(self):
        rng = np.random.default_rng(8)
        k = T.Tensor(rng.normal(size=(2, 3, 3, 3)))
        x0 = rng.normal(size=(1, 3, 6, 6))

        def f_input(t):
            return T.tsum(T.square(T.conv2d(t, k, stride=1, padding=1)))

        assert T.grad_check(f_input, T.Tensor(x0)) < 1e-4

        x = T.Tensor(x0)

        def f_kernel(t):
            return T.tsum(T.square(T.conv2d(x, t, stride=1, padding=1)))

        assert T.grad_check(f_kernel, T.Tensor(rng.normal(size=(2, 3, 3, 3)))) < 1e-4

    def test_strided_conv_grad(self):
        rng = np.random.default_rng(9)
        k = T.Tensor(rng.normal(size=(2, 1, 4, 4)))

        def f(t):
            return T.tsum(T.square(T.conv2d(t, k, stride=2, padding=1)))

        assert T.grad_check(f, T.Tensor(rng.normal(size=(1, 1, 8, 8)))) < 1e-4

    def test_pool_grads(self):
        rng = np.random.default_rng(10)

        def favg(t):
            return T.tsum(T.square(T.pool_global(t, "avg")))

        def fmax(t):
            return T.tsum(T.square(T.pool_global(t, "max")))

        point = T.Tensor(rng.normal(size=(1, 2, 3, 3)))
        assert T.grad_check(favg, point) < 1e-4
        assert T.grad_check(fmax, point) < 1e-4

    def test_concat_upsample_pad_grads(self):
        rng = np.random.default_rng(11)

        def f(t):
            a = T.reshape(t, (1, 2, 3, 3))
            both = T.concat([a, a * 2.0], axis=1)
            up = T.upsample_nearest2(both)
            padded = T.pad_reflect2d(up, 1)
            return T.tsum(T.square(padded))

        for _ in range(5):
            assert T.grad_check(f, T.Tensor(rng.normal(size=18))) < 1e-4

    def test_axis_reductions_grads(self):
        rng = np.random.default_rng(12)

        def f(t):
            a = T.reshape(t, (2, 3, 2, 2))
            m = T.tmean(a, axis=(2, 3), keepdims=True)
            mx = T.tmax(a, axis=1, keepdims=True)
            return T.tsum(T.square(a - m)) + T.tsum(mx)

        assert T.grad_check(f, T.Tensor(rng.normal(size=24))) < 1e-4

    def test_broadcast_patterns(self):
        rng = np.random.default_rng(13)
        spatial = T.Tensor(rng.normal(size=(2, 1, 4, 4)))
        channel = T.Tensor(rng.normal(size=(2, 3, 1, 1)))

        def f(t):
            a = T.reshape(t, (2, 3, 4, 4))
            return T.tsum(T.square(a * spatial + channel * a + 0.5 * a))

        assert T.grad_check(f, T.Tensor(rng.normal(size=96))) < 1e-4

    def test_broadcast_to_scalar_param(self):
        rng = np.random.default_rng(14)
        x = T.Tensor(rng.normal(size=(2, 3, 2, 2)))

        def f(lam):
            return T.tsum(T.square(lam * x + 1.0))

        assert T.grad_check(f, T.Tensor(np.array([0.37]))) < 1e-4


class TestDtype:
    def test_default_dtype_switch(self):
        T.set_default_dtype(np.float32)
        try:
            t = T.Tensor(np.zeros(3))
            assert t.dtype == np.float32
        finally:
            T.set_default_dtype(np.float64)
        assert T.Tensor(np.zeros(3)).dtype == np.float64

    def test_scalar_ops_preserve_float32(self):
        t = T.Tensor(np.zeros(3), dtype=np.float32)
        assert (t + 1.0).dtype == np.float32
        assert (t * 2.5).dtype == np.float32

    def test_invalid_dtype_rejected(self):
        with pytest.raises(ConfigError):
            T.set_default_dtype(np.int32)


class TestNoGrad:
    def test_no_grad_blocks_taping(self):
        x = T.Tensor(np.ones(3), requires_grad=True)
        with T.no_grad():
            y = x * 2.0
        assert not y.requires_grad
        assert y._backward is None

    def test_constants_are_not_taped(self):
        y = T.Tensor(np.ones(3)) * 2.0
        assert not y.requires_grad
