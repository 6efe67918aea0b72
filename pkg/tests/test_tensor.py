import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from swinfir import tensor as T
from swinfir.errors import NumericError, ShapeError
from swinfir.tensor import Tensor, Tape, backward, finite_diff_grad


def t64(a, grad=True):
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=grad)


def rel_err(a, n):
    return float(np.max(np.abs(a - n) / (np.abs(n) + 1e-8)))


def conv_loops(x, w, b, pad):
    n, cin, h, wd = x.shape
    cout, _, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    ho, wo = h + 2 * pad - kh + 1, wd + 2 * pad - kw + 1
    out = np.zeros((n, cout, ho, wo))
    for b_ in range(n):
        for o in range(cout):
            for i in range(ho):
                for j in range(wo):
                    acc = b[o]
                    for c in range(cin):
                        for p in range(kh):
                            for q in range(kw):
                                acc += xp[b_, c, i + p, j + q] * w[o, c, p, q]
                    out[b_, o, i, j] = acc
    return out


class TestConv:
    def test_box_sum_of_ones(self):
        y = T.conv2d(t64(np.ones((1, 1, 3, 3))), t64(np.ones((1, 1, 3, 3))), t64(np.zeros(1)), padding=1).data
        assert y[0, 0, 1, 1] == 9
        assert y[0, 0, 0, 0] == y[0, 0, 2, 2] == y[0, 0, 0, 2] == 4

    def test_identity_kernel(self):
        x = np.random.default_rng(0).normal(size=(2, 1, 5, 4))
        k = np.zeros((1, 1, 3, 3))
        k[0, 0, 1, 1] = 1
        np.testing.assert_array_equal(T.conv2d(t64(x), t64(k), padding=1).data, x)

    @pytest.mark.parametrize("seed", range(3))
    def test_matches_loop_oracle(self, seed):
        rng = np.random.default_rng(seed)
        x, w, b = rng.normal(size=(1, 2, 5, 5)), rng.normal(size=(3, 2, 3, 3)), rng.normal(size=3)
        y = T.conv2d(t64(x), t64(w), t64(b), padding=1).data
        np.testing.assert_allclose(y, conv_loops(x, w, b, 1), atol=1e-12, rtol=0)

    def test_stride_two(self):
        rng = np.random.default_rng(3)
        x, w = rng.normal(size=(1, 2, 7, 7)), rng.normal(size=(2, 2, 3, 3))
        y = T.conv2d(t64(x), t64(w), stride=2, padding=1).data
        full = conv_loops(x, w, np.zeros(2), 1)
        np.testing.assert_allclose(y, full[:, :, ::2, ::2], atol=1e-12)

    def test_rejects_even_kernel(self):
        with pytest.raises(ShapeError):
            T.conv2d(t64(np.ones((1, 1, 4, 4))), t64(np.ones((1, 1, 2, 2))))


class TestPixelShuffle:
    def test_placement(self):
        x = t64(np.array([1.0, 2.0, 3.0, 4.0]).reshape(1, 4, 1, 1))
        np.testing.assert_array_equal(T.pixel_shuffle(x, 2).data, [[[[1, 2], [3, 4]]]])

    def test_r1_identity(self):
        x = np.random.default_rng(0).normal(size=(1, 3, 4, 4))
        np.testing.assert_array_equal(T.pixel_shuffle(t64(x), 1).data, x)

    def test_bijection(self):
        x = np.random.default_rng(1).normal(size=(2, 8, 3, 3))
        y = T.pixel_shuffle(t64(x), 2)
        assert y.shape == (2, 2, 6, 6)
        np.testing.assert_array_equal(np.sort(y.data, axis=None), np.sort(x, axis=None))
        np.testing.assert_array_equal(T.pixel_unshuffle(y, 2).data, x)


class TestPrimitives:
    def test_leaky_relu(self):
        assert T.leaky_relu(t64([-1.0]), 0.2).data[0] == pytest.approx(-0.2)

    @given(st.integers(1, 40))
    def test_softmax_uniform(self, k):
        np.testing.assert_allclose(T.softmax(t64(np.full(k, 3.7)), axis=-1).data, 1.0 / k, rtol=1e-14)

    def test_layer_norm_moments(self):
        x = np.random.default_rng(0).normal(3.0, 5.0, size=(4, 17))
        y = T.layer_norm(t64(x), t64(np.ones(17)), t64(np.zeros(17)), eps=0.0).data
        np.testing.assert_allclose(y.mean(axis=-1), 0, atol=1e-10)
        np.testing.assert_allclose(y.var(axis=-1), 1, atol=1e-10)

    def test_non_finite_output_is_an_error(self):
        with pytest.raises(NumericError):
            T.sqrt(t64([-1.0]))

    def test_float32_is_preserved(self):
        x = Tensor(np.ones((2, 3), dtype=np.float32), requires_grad=True)
        assert (x * 2.0 + x).dtype == np.float32


class TestBackward:
    def test_sum_gives_ones(self):
        x = t64(np.random.default_rng(0).normal(size=(3, 4)))
        backward(T.tsum(x))
        np.testing.assert_array_equal(x.grad, np.ones((3, 4)))

    def test_square_gives_2x(self):
        x = t64(np.random.default_rng(1).normal(size=(5,)))
        backward(T.tsum(x * x))
        np.testing.assert_allclose(x.grad, 2 * x.data, rtol=1e-15)

    def test_sum_of_losses_is_sum_of_grads(self):
        rng = np.random.default_rng(2)
        x = t64(rng.normal(size=(4,)))
        f = lambda: T.tsum(T.gelu(x) * x)  # noqa: E731
        g = lambda: T.tsum(T.softmax(x, axis=-1) * x)  # noqa: E731
        backward(f())
        gf = x.grad.copy()
        x.zero_grad()
        backward(g())
        gg = x.grad.copy()
        x.zero_grad()
        backward(f() + g())
        np.testing.assert_allclose(x.grad, gf + gg, rtol=1e-13)

    def test_tape_is_topological(self):
        x = t64([1.0, 2.0])
        y = x * x
        loss = T.tsum(y + x)
        order = Tape.from_loss(loss).nodes
        assert order.index(y) < order.index(loss)

    def test_no_grad_records_nothing(self):
        x = t64([1.0])
        with T.no_grad():
            y = x * 3.0
        assert y.is_leaf and not y.requires_grad


class TestFiniteDiff:
    def test_sum_is_ones(self):
        g = finite_diff_grad(lambda t: T.tsum(t), np.random.default_rng(0).normal(size=(2, 3)))
        np.testing.assert_allclose(g.data, 1.0, atol=1e-9)

    def test_cube(self):
        g = finite_diff_grad(lambda t: T.tsum(t * t * t), np.array([2.0]))
        assert g.data[0] == pytest.approx(12.0, abs=1e-6)


PRIMITIVE_CASES = {
    "leaky_relu": lambda x: T.leaky_relu(x, 0.2),
    "gelu": T.gelu,
    "softmax": lambda x: T.softmax(x, axis=-1),
    "layer_norm": lambda x: T.layer_norm(x, t64(np.linspace(0.5, 1.5, 6), False), t64(np.arange(6.0), False)),
    "matmul": lambda x: x @ t64(np.random.default_rng(9).normal(size=(6, 3)), False),
    "transpose": lambda x: x.transpose(1, 0),
    "reshape": lambda x: x.reshape(3, 8),
    "concat": lambda x: T.concat([x, x * 2.0], axis=0),
    "roll": lambda x: T.roll(x, (1, -2), (0, 1)),
    "getitem": lambda x: x[1:3, ::2],
    "pad_reflect": lambda x: T.pad_reflect(x.reshape(1, 1, 4, 6), ((0, 0), (0, 0), (1, 2), (2, 1))),
    "sqrt": lambda x: T.sqrt(x * x + 1.0),
}


@pytest.mark.parametrize("name", sorted(PRIMITIVE_CASES))
@pytest.mark.parametrize("seed", range(5))
def test_primitive_gradients(name, seed):
    rng = np.random.default_rng(seed)
    op = PRIMITIVE_CASES[name]
    x0 = rng.normal(size=(4, 6))
    x0[np.abs(x0) < 1e-3] = 0.5  # keep leaky_relu away from its kink
    w = rng.normal(size=op(t64(x0, False)).shape)

    def f(t):
        return T.tsum(T.mul_const(op(t), w))

    x = t64(x0)
    backward(f(x))
    assert rel_err(x.grad, finite_diff_grad(f, x0).data) < 1e-4


def test_conv_and_shuffle_gradients():
    rng = np.random.default_rng(4)
    x0, w0, b0 = rng.normal(size=(1, 2, 5, 5)), rng.normal(size=(8, 2, 3, 3)), rng.normal(size=8)
    proj = rng.normal(size=(1, 2, 10, 10))

    def f(x, w, b):
        return T.tsum(T.mul_const(T.pixel_shuffle(T.conv2d(x, w, b, padding=1), 2), proj))

    x, w, b = t64(x0), t64(w0), t64(b0)
    backward(f(x, w, b))
    assert rel_err(x.grad, finite_diff_grad(lambda t: f(t, t64(w0, False), t64(b0, False)), x0).data) < 1e-4
    assert rel_err(w.grad, finite_diff_grad(lambda t: f(t64(x0, False), t, t64(b0, False)), w0).data) < 1e-4
    assert rel_err(b.grad, finite_diff_grad(lambda t: f(t64(x0, False), t64(w0, False), t), b0).data) < 1e-4


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 3), st.integers(1, 4), st.integers(1, 5), st.integers(1, 5))
def test_pixel_unshuffle_inverts_shuffle(n, c, h, w):
    x = np.random.default_rng(n * 1000 + c * 100 + h * 10 + w).normal(size=(n, c * 4, h, w))
    np.testing.assert_array_equal(T.pixel_unshuffle(T.pixel_shuffle(t64(x), 2), 2).data, x)
