import numpy as np
import pytest

from c2fvit import diffcore as dc
from c2fvit.diffcore import Tensor, backprop, grad_check


def rng(seed=0):
    return np.random.default_rng(seed)


def test_softmax_symmetric():
    np.testing.assert_array_equal(dc.softmax([0.0, 0.0]).data, [0.5, 0.5])


def test_tanh_zero():
    assert dc.tanh(0.0).data == 0.0


def test_matmul_triple_loop_oracle():
    r = rng(1)
    a, b = r.normal(size=(2, 3)), r.normal(size=(3, 4))
    ref = np.zeros((2, 4))
    for i in range(2):
        for j in range(4):
            for k in range(3):
                ref[i, j] += a[i, k] * b[k, j]
    np.testing.assert_allclose(dc.matmul(a, b).data, ref, atol=1e-12, rtol=0)


def test_backprop_sum_of_squares():
    x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
    g = backprop(dc.sum(x * x))
    np.testing.assert_array_equal(g[x], [2.0, 4.0, 6.0])


def test_unreached_leaf_gets_zero():
    x = Tensor([1.0, 2.0], requires_grad=True)
    c = Tensor([3.0], requires_grad=True)
    g = backprop(dc.sum(c * 2.0), wrt=[x, c])
    np.testing.assert_array_equal(g[x], [0.0, 0.0])
    np.testing.assert_array_equal(g[c], [2.0])


def test_backprop_rejects_non_scalar():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ValueError, match="scalar"):
        backprop(x * 2.0)


def test_mean_tanh_linear_against_differences():
    r = rng(2)
    W, x = r.normal(size=(4, 4)), r.normal(size=(4, 1))
    err = grad_check(lambda w: dc.mean(dc.tanh(w @ Tensor(x))), W)
    assert err < 1e-6


def test_quadratic_grad_check_is_tight():
    assert grad_check(lambda x: dc.sum(x * x), np.array([3.0])) < 1e-9


def test_grad_check_reports_non_finite():
    with pytest.raises(FloatingPointError):
        grad_check(lambda x: dc.sum(dc.sqrt(x)), np.array([-1.0]))


def test_shape_errors_name_primitive():
    with pytest.raises(ValueError, match=r"matmul: shapes \(2, 3\) and \(2, 3\)"):
        dc.matmul(np.ones((2, 3)), np.ones((2, 3)))
    with pytest.raises(ValueError, match="add"):
        dc.add(np.ones(3), np.ones(4))
    with pytest.raises(ValueError, match="unknown primitive"):
        dc.forward_primitive("fft", np.ones(2))


def test_no_grad_records_nothing():
    x = Tensor(np.ones(2), requires_grad=True)
    with dc.no_grad():
        y = x * 2.0
    assert not y.requires_grad and y.is_leaf


def test_backprop_deterministic():
    r = rng(3)
    W = r.normal(size=(5, 5))
    x = r.normal(size=(5, 3))

    def run():
        w = Tensor(W.copy(), requires_grad=True)
        out = dc.sum(dc.softmax(w @ Tensor(x)) * dc.tanh(w @ Tensor(x)))
        return backprop(out)[w]

    np.testing.assert_array_equal(run(), run())


def test_adjoint_linearity():
    r = rng(4)
    X = r.normal(size=(3, 4))
    a, b = 0.7, -2.3

    def f(t):
        return dc.sum(dc.tanh(t) * dc.tanh(t))

    def g(t):
        return dc.mean(dc.softmax(t))

    def grad(fn):
        t = Tensor(X.copy(), requires_grad=True)
        return backprop(fn(t))[t]

    combo = grad(lambda t: f(t) * a + g(t) * b)
    np.testing.assert_allclose(combo, a * grad(f) + b * grad(g), atol=1e-12, rtol=0)


# ---- primitive gradient checks on at least three shapes each

SHAPES = [(3,), (2, 5), (2, 3, 4)]


@pytest.mark.parametrize("shape", SHAPES)
@pytest.mark.parametrize(
    "fn",
    [
        lambda x: dc.tanh(x),
        lambda x: dc.relu(x),
        lambda x: dc.sqrt(x * x + 1.0),
        lambda x: dc.exp(x * 0.3),
        lambda x: dc.sin(x),
        lambda x: dc.cos(x),
        lambda x: dc.softmax(x),
        lambda x: x * x - x / (x * x + 2.0),
        lambda x: -x + 3.0,
        lambda x: dc.mean(x, axis=-1),
        lambda x: dc.sum(x, axis=0, keepdims=True),
        lambda x: dc.reshape(x, (-1,)),
        lambda x: dc.transpose(x),
        lambda x: dc.concat([x, x * 2.0], axis=-1),
        lambda x: dc.stack([x, x * x], axis=0),
        lambda x: x[..., 1:],
    ],
    ids=[
        "tanh", "relu", "sqrt", "exp", "sin", "cos", "softmax", "arith", "neg", "mean",
        "sum", "reshape", "transpose", "concat", "stack", "getitem",
    ],
)
def test_elementwise_and_shape_primitives(fn, shape):
    x = rng(5).normal(size=shape)
    weights = rng(6).normal(size=np.shape(fn(Tensor(x)).data))
    err = grad_check(lambda t: dc.sum(fn(t) * Tensor(weights)), x)
    assert err < 1e-5


@pytest.mark.parametrize("sa,sb", [((2, 3), (3, 4)), ((5, 1), (1, 2)), ((2, 3, 4), (4, 2))])
def test_matmul_gradients(sa, sb):
    r = rng(7)
    a, b = r.normal(size=sa), r.normal(size=sb)
    err = grad_check(lambda x, y: dc.sum(dc.tanh(x @ y)), [a, b])
    assert err < 1e-5


def naive_conv3d(x, w, b, s, p):
    C, H, W, D = x.shape
    O, _, k1, k2, k3 = w.shape
    xp = np.pad(x, ((0, 0), (p, p), (p, p), (p, p)))
    T = [(n + 2 * p - k) // s + 1 for n, k in zip((H, W, D), (k1, k2, k3))]
    out = np.zeros(tuple(T) + (O,))
    for i in range(T[0]):
        for j in range(T[1]):
            for k in range(T[2]):
                patch = xp[:, i * s:i * s + k1, j * s:j * s + k2, k * s:k * s + k3]
                for o in range(O):
                    out[i, j, k, o] = (patch * w[o]).sum() + b[o]
    return out


@pytest.mark.parametrize(
    "xs,k,s",
    [((2, 8, 8, 8), 3, 2), ((1, 6, 7, 5), 3, 1), ((2, 8, 8, 8), 7, 4)],
)
def test_conv3d_matches_loop_oracle_and_gradients(xs, k, s):
    r = rng(8)
    x = r.normal(size=xs)
    w = r.normal(size=(3, xs[0], k, k, k)) * 0.2
    b = r.normal(size=3)
    p = k // 2
    np.testing.assert_allclose(dc.conv3d(x, w, b, s, p).data, naive_conv3d(x, w, b, s, p), atol=1e-12)
    err = grad_check(lambda a, c, d: dc.sum(dc.tanh(dc.conv3d(a, c, d, s, p))), [x, w, b])
    assert err < 1e-5


def test_conv3d_col2im_both_paths_agree():
    # few positions + large kernel uses the per-position path; the reverse uses per-offset
    r = rng(9)
    for xs, k, s in [((2, 16, 16, 16), 15, 8), ((1, 9, 9, 9), 3, 1)]:
        x = r.normal(size=xs)
        w = r.normal(size=(2, xs[0], k, k, k))
        g = grad_check(lambda a: dc.sum(dc.tanh(dc.conv3d(a, Tensor(w), None, s, k // 2))), x, samples=40)
        assert g < 1e-5


def naive_depthwise(x, w, b):
    T1, T2, T3, C = x.shape
    k = w.shape[1]
    r = k // 2
    out = np.zeros_like(x)
    for i in range(T1):
        for j in range(T2):
            for l in range(T3):
                for c in range(C):
                    acc = b[c]
                    for a in range(k):
                        for e in range(k):
                            for f in range(k):
                                ii, jj, ll = i + a - r, j + e - r, l + f - r
                                if 0 <= ii < T1 and 0 <= jj < T2 and 0 <= ll < T3:
                                    acc += w[c, a, e, f] * x[ii, jj, ll, c]
                    out[i, j, l, c] = acc
    return out


@pytest.mark.parametrize("xs", [(3, 3, 3, 2), (4, 2, 3, 3), (2, 2, 2, 1)])
def test_depthwise_conv3d(xs):
    r = rng(10)
    x = r.normal(size=xs)
    w = r.normal(size=(xs[3], 3, 3, 3))
    b = r.normal(size=xs[3])
    np.testing.assert_allclose(dc.depthwise_conv3d(x, w, b).data, naive_depthwise(x, w, b), atol=1e-12)
    assert grad_check(lambda a, c, d: dc.sum(dc.tanh(dc.depthwise_conv3d(a, c, d))), [x, w, b]) < 1e-5


def scalar_trilinear(vol, u):
    """Zero-padded trilinear interpolation at one index-space point."""
    H, W, D = vol.shape
    f = np.floor(u).astype(int)
    t = u - f
    acc = 0.0
    for a in (0, 1):
        for b in (0, 1):
            for c in (0, 1):
                i, j, k = f[0] + a, f[1] + b, f[2] + c
                if 0 <= i < H and 0 <= j < W and 0 <= k < D:
                    w = (t[0] if a else 1 - t[0]) * (t[1] if b else 1 - t[1]) * (t[2] if c else 1 - t[2])
                    acc += w * vol[i, j, k]
    return acc


@pytest.mark.parametrize("dims", [(4, 5, 6), (3, 3, 3), (7, 2, 4)])
def test_grid_sample_oracle_and_gradients(dims):
    r = rng(11)
    vol = r.normal(size=dims)
    coords = r.uniform(-1.2, 1.2, size=(30, 3))
    half = (np.array(dims) - 1) / 2
    ref = [scalar_trilinear(vol, (c + 1) * half) for c in coords]
    np.testing.assert_allclose(dc.grid_sample(vol, coords).data, ref, atol=1e-12)
    err = grad_check(lambda v, c: dc.sum(dc.tanh(dc.grid_sample(v, c))), [vol, coords])
    assert err < 1e-5


def test_grid_sample_multichannel_matches_per_channel():
    r = rng(12)
    vol = r.normal(size=(3, 5, 5, 5))
    coords = r.uniform(-1, 1, size=(20, 3))
    multi = dc.grid_sample(vol, coords).data
    for c in range(3):
        np.testing.assert_array_equal(multi[c], dc.grid_sample(vol[c], coords).data)


@pytest.mark.parametrize("dims,w", [((5, 6, 7), 3), ((9, 9, 9), 5), ((2, 4, 4, 4), 3)])
def test_box_sum_brute_force_and_adjoint(dims, w):
    r = rng(13)
    x = r.normal(size=dims)
    ref = np.zeros_like(x)
    rad = w // 2
    H, W, D = dims[-3:]
    for i in range(H):
        for j in range(W):
            for k in range(D):
                ref[..., i, j, k] = x[
                    ..., max(i - rad, 0):i + rad + 1, max(j - rad, 0):j + rad + 1, max(k - rad, 0):k + rad + 1
                ].sum(axis=(-3, -2, -1))
    np.testing.assert_allclose(dc.box_sum(x, w).data, ref, atol=1e-12)
    assert grad_check(lambda t: dc.sum(dc.tanh(dc.box_sum(t, w))), x) < 1e-5


@pytest.mark.parametrize("shape", [(4, 4, 4), (2, 5, 3, 4), (3, 6, 2)])
def test_resample_axes_gradients(shape):
    r = rng(14)
    x = r.normal(size=shape)
    mats = [r.normal(size=(2, n)) for n in shape[-3:]]
    assert grad_check(lambda t: dc.sum(dc.tanh(dc.resample_axes(t, mats))), x) < 1e-5
