import numpy as np
import pytest

from fewshotcc.nn import autograd as ag
from fewshotcc.nn.autograd import Tensor


def numeric_grad(fn, x, eps=1e-6):
    """Central finite differences of a scalar-valued fn over array x."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = grad.reshape(-1)
    xf = x.reshape(-1)
    for i in range(xf.size):
        xp = x.copy().reshape(-1)
        xm = x.copy().reshape(-1)
        xp[i] += eps
        xm[i] -= eps
        flat[i] = (fn(xp.reshape(x.shape)) - fn(xm.reshape(x.shape))) / (2 * eps)
    return grad


def check_gradients(build, x, rtol=1e-6, atol=1e-9):
    """Compare engine gradients of scalar build(Tensor) against finite differences."""
    leaf = Tensor(np.asarray(x, dtype=np.float64), requires_grad=True)
    out = build(leaf)
    (grad,) = ag.backward(out, wrt=[leaf])
    numeric = numeric_grad(lambda v: float(build(Tensor(v)).data), x)
    np.testing.assert_allclose(grad.data, numeric, rtol=rtol, atol=atol)


rng = np.random.default_rng(0)


class TestPrimitiveGradients:
    def test_add_broadcast(self):
        b = Tensor(rng.normal(size=(3,)))
        check_gradients(lambda x: ag.tsum(ag.add(x, b) * 2.0), rng.normal(size=(4, 3)))

    def test_sub(self):
        b = Tensor(rng.normal(size=(4, 3)))
        check_gradients(lambda x: ag.tsum(ag.sub(x, b) ** 2.0), rng.normal(size=(4, 3)))

    def test_mul_broadcast_both_sides(self):
        b = Tensor(rng.normal(size=(1, 3)))
        check_gradients(lambda x: ag.tsum(ag.mul(x, b)), rng.normal(size=(4, 3)))

    def test_div(self):
        b = Tensor(rng.uniform(0.5, 2.0, size=(4, 3)))
        check_gradients(lambda x: ag.tsum(ag.div(b, x)), rng.uniform(0.5, 2.0, (4, 3)))

    def test_pow(self):
        check_gradients(lambda x: ag.tsum(x**1.7), rng.uniform(0.2, 2.0, (5,)))

    def test_matmul(self):
        b = Tensor(rng.normal(size=(3, 2)))
        check_gradients(lambda x: ag.tsum(ag.matmul(x, b) ** 2.0), rng.normal(size=(4, 3)))

    def test_bmm(self):
        b = Tensor(rng.normal(size=(2, 3, 2)))
        check_gradients(lambda x: ag.tsum(ag.bmm(x, b) ** 2.0), rng.normal(size=(2, 4, 3)))

    def test_transpose_reshape_broadcast(self):
        def build(x):
            t = ag.transpose(x, (1, 0))
            r = ag.reshape(t, (6,))
            return ag.tsum(ag.broadcast_to(ag.reshape(r, (1, 6)), (3, 6)) ** 2.0)

        check_gradients(build, rng.normal(size=(2, 3)))

    def test_sum_axes_keepdims(self):
        check_gradients(
            lambda x: ag.tsum(ag.tsum(x, axis=(1, 2), keepdims=True) ** 2.0),
            rng.normal(size=(2, 3, 4)),
        )

    def test_mean_negative_axis(self):
        check_gradients(lambda x: ag.tsum(ag.tmean(x, axis=-1) ** 2.0), rng.normal(size=(3, 5)))

    def test_relu(self):
        x = rng.normal(size=(4, 4))
        x[np.abs(x) < 0.05] += 0.2  # keep away from the kink
        check_gradients(lambda t: ag.tsum(ag.relu(t) * 3.0), x)

    def test_clip(self):
        x = rng.uniform(-2, 2, size=(20,))
        x = x[np.abs(np.abs(x) - 1.0) > 0.05]  # keep away from the clamp edges
        check_gradients(lambda t: ag.tsum(ag.clip(t, -1.0, 1.0) ** 2.0), x)

    def test_arccos(self):
        check_gradients(lambda t: ag.tsum(ag.arccos(t)), rng.uniform(-0.9, 0.9, (6,)))


class TestConvFamily:
    def test_conv_forward_matches_direct_sum(self):
        x = rng.normal(size=(1, 2, 4, 4, 3))
        w = rng.normal(size=(1, 3, 3, 3, 2))
        out = ag.conv3x3(Tensor(x), Tensor(w)).data
        xp = np.zeros((2, 6, 6, 3))
        xp[:, 1:5, 1:5, :] = x[0]
        expected = np.zeros((2, 4, 4, 2))
        for i in range(4):
            for j in range(4):
                for u in range(3):
                    for v in range(3):
                        expected[:, i, j, :] += xp[:, i + u, j + v, :] @ w[0, u, v]
        np.testing.assert_allclose(out[0], expected, atol=1e-12)

    def test_conv_gradients(self):
        w = Tensor(rng.normal(size=(2, 3, 3, 2, 3)))
        check_gradients(
            lambda x: ag.tsum(ag.conv3x3(x, w) ** 2.0), rng.normal(size=(2, 2, 4, 4, 2))
        )

    def test_conv_weight_gradients(self):
        x = Tensor(rng.normal(size=(1, 2, 5, 5, 2)))
        check_gradients(
            lambda w: ag.tsum(ag.conv3x3(x, w) ** 2.0), rng.normal(size=(1, 3, 3, 2, 2))
        )

    def test_flipswap_is_involution(self):
        w = Tensor(rng.normal(size=(2, 3, 3, 4, 5)))
        np.testing.assert_array_equal(ag.flipswap(ag.flipswap(w)).data, w.data)

    def test_second_order_through_conv(self):
        # d/dw of sum((conv(x, w))^2) is itself differentiable
        x = Tensor(rng.normal(size=(1, 1, 4, 4, 2)))
        w = Tensor(rng.normal(size=(1, 3, 3, 2, 2)), requires_grad=True)
        out = ag.tsum(ag.conv3x3(x, w) ** 2.0)
        (gw,) = ag.backward(out, wrt=[w], create_graph=True)
        scalar = ag.tsum(gw * gw)
        (ggw,) = ag.backward(scalar, wrt=[w])

        def f(wv):
            o = ag.tsum(ag.conv3x3(x, Tensor(wv)) ** 2.0)
            return o

        def g_fn(wv):
            wt = Tensor(wv, requires_grad=True)
            (g,) = ag.backward(ag.tsum(ag.conv3x3(x, wt) ** 2.0), wrt=[wt])
            return float(np.sum(g.data**2))

        numeric = numeric_grad(g_fn, w.data)
        np.testing.assert_allclose(ggw.data, numeric, rtol=1e-5, atol=1e-8)


class TestEngine:
    def test_shared_subexpression_accumulates(self):
        x = Tensor(np.array(3.0), requires_grad=True)
        y = ag.mul(x, x)  # x^2
        z = ag.add(y, ag.mul(x, Tensor(np.array(5.0))))  # x^2 + 5x
        (g,) = ag.backward(z, wrt=[x])
        assert g.data == pytest.approx(2 * 3.0 + 5.0)

    def test_unused_wrt_gets_zeros(self):
        x = Tensor(np.ones(3), requires_grad=True)
        other = Tensor(np.ones(4), requires_grad=True)
        (g1, g2) = ag.backward(ag.tsum(x), wrt=[x, other])
        np.testing.assert_array_equal(g2.data, np.zeros(4))
        np.testing.assert_array_equal(g1.data, np.ones(3))

    def test_scalar_root_required(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with pytest.raises(ValueError):
            ag.backward(ag.mul(x, x), wrt=[x])

    def test_no_grad_suppresses_graph(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with ag.no_grad():
            y = ag.mul(x, x)
        assert not y.requires_grad and y._rule is None

    def test_double_backward_cubic(self):
        # f = sum(x^3): df/dx = 3x^2, d/dx sum(df/dx) = 6x
        x = Tensor(rng.uniform(0.5, 2.0, 5), requires_grad=True)
        (g,) = ag.backward(ag.tsum(x**3.0), wrt=[x], create_graph=True)
        (gg,) = ag.backward(ag.tsum(g), wrt=[x])
        np.testing.assert_allclose(gg.data, 6 * x.data, rtol=1e-12)

    def test_debug_checks_flag(self):
        ag.debug_checks = True
        try:
            with np.errstate(divide="ignore"), pytest.raises(FloatingPointError):
                ag.div(Tensor(np.ones(2)), Tensor(np.zeros(2)))
        finally:
            ag.debug_checks = False

    def test_float32_stays_float32(self):
        x = Tensor(np.ones(3, dtype=np.float32), requires_grad=True)
        y = ag.tsum((x * 2.0 + 1.0) ** 2.0)
        assert y.data.dtype == np.float32
        (g,) = ag.backward(y, wrt=[x])
        assert g.data.dtype == np.float32
