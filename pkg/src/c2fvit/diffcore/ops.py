"""Primitive catalog with forward values and adjoint rules.

Every function accepts tensors or array-likes and returns a :class:`Tensor`.
Shape errors are raised as ``ValueError`` naming the primitive.
"""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .. import kernels
from .tensor import Tensor, as_tensor, make_node


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _broadcast_check(name, a, b):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ValueError(f"{name}: shapes {a.shape} and {b.shape} do not broadcast") from None


# ---------------------------------------------------------------- elementwise


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check("add", a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return make_node(a.data + b.data, (a, b), backward, "add")


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check("sub", a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return make_node(a.data - b.data, (a, b), backward, "sub")


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check("mul", a, b)

    def backward(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return make_node(a.data * b.data, (a, b), backward, "mul")


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check("div", a, b)
    out = a.data / b.data

    def backward(g):
        ga = _unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None
        return ga, gb

    return make_node(out, (a, b), backward, "div")


def neg(a):
    a = as_tensor(a)
    return make_node(-a.data, (a,), lambda g: (-g,), "neg")


def tanh(a):
    a = as_tensor(a)
    out = np.tanh(a.data)
    return make_node(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def relu(a):
    a = as_tensor(a)
    mask = a.data > 0
    return make_node(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,), "relu")


def sqrt(a):
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return make_node(out, (a,), lambda g: (0.5 * g / out,), "sqrt")


def exp(a):
    a = as_tensor(a)
    out = np.exp(a.data)
    return make_node(out, (a,), lambda g: (g * out,), "exp")


def sin(a):
    a = as_tensor(a)
    return make_node(np.sin(a.data), (a,), lambda g: (g * np.cos(a.data),), "sin")


def cos(a):
    a = as_tensor(a)
    return make_node(np.cos(a.data), (a,), lambda g: (-g * np.sin(a.data),), "cos")


# ---------------------------------------------------------------- reductions


def sum(a, axis=None, keepdims=False):  # noqa: A001
    a = as_tensor(a)
    out = np.sum(a.data, axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return make_node(out, (a,), backward, "sum")


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    out = np.mean(a.data, axis=axis, keepdims=keepdims)
    count = a.data.size / max(out.size, 1) if axis is not None else a.data.size

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / count, a.shape).copy(),)

    return make_node(out, (a,), backward, "mean")


def softmax(a):
    """Softmax over the last axis."""
    a = as_tensor(a)
    z = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return make_node(out, (a,), backward, "softmax")


# ---------------------------------------------------------------- linear algebra


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul: shapes {a.shape} and {b.shape} are not aligned")

    def backward(g):
        ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape) if a.requires_grad else None
        gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape) if b.requires_grad else None
        return ga, gb

    return make_node(a.data @ b.data, (a, b), backward, "matmul")


# ---------------------------------------------------------------- shape


def reshape(a, shape):
    a = as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ValueError(f"reshape: cannot reshape {a.shape} into {tuple(shape)}") from None
    return make_node(out, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a, axes=None):
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = np.argsort(axes)
    return make_node(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),), "transpose")


def concat(tensors, axis=0):
    ts = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError:
        shapes = " and ".join(str(t.shape) for t in ts)
        raise ValueError(f"concat: shapes {shapes} do not join along axis {axis}") from None
    bounds = np.cumsum([t.shape[axis] for t in ts])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return make_node(out, ts, backward, "concat")


def stack(tensors, axis=0):
    ts = [as_tensor(t) for t in tensors]
    try:
        out = np.stack([t.data for t in ts], axis=axis)
    except ValueError:
        shapes = " and ".join(str(t.shape) for t in ts)
        raise ValueError(f"stack: shapes {shapes} differ") from None

    def backward(g):
        return tuple(np.moveaxis(g, axis, 0))

    return make_node(out, ts, backward, "stack")


def getitem(a, index):
    a = as_tensor(a)
    out = a.data[index]

    def backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, index, g)
        return (full,)

    return make_node(np.array(out, copy=True), (a,), backward, "getitem")


# ---------------------------------------------------------------- convolution


def conv3d(x, w, b=None, stride=1, padding=0):
    """Strided 3D convolution.

    ``x`` is channels-first (C, H, W, D), ``w`` is (O, C, k1, k2, k3) and the
    result is channels-last (T1, T2, T3, O) so it flattens directly to tokens.
    """
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 4 or w.ndim != 5 or w.shape[1] != x.shape[0]:
        raise ValueError(f"conv3d: input {x.shape} and kernel {w.shape} are incompatible")
    parents = [x, w]
    if b is not None:
        b = as_tensor(b)
        if b.shape != (w.shape[0],):
            raise ValueError(f"conv3d: bias {b.shape} and kernel {w.shape} are incompatible")
        parents.append(b)
    C = x.shape[0]
    O, _, k1, k2, k3 = w.shape
    s, p = int(stride), int(padding)
    xp = np.pad(x.data, ((0, 0), (p, p), (p, p), (p, p)))
    if any(n < k for n, k in zip(xp.shape[1:], (k1, k2, k3))):
        raise ValueError(f"conv3d: padded input {xp.shape} smaller than kernel {w.shape}")
    win = sliding_window_view(xp, (k1, k2, k3), axis=(1, 2, 3))[:, ::s, ::s, ::s]
    T = win.shape[1:4]
    P = T[0] * T[1] * T[2]
    cols = np.ascontiguousarray(win.transpose(1, 2, 3, 0, 4, 5, 6)).reshape(P, -1)
    wm = w.data.reshape(O, -1)
    out = cols @ wm.T
    if b is not None:
        out = out + b.data

    def backward(g):
        gm = g.reshape(P, O)
        gw = (gm.T @ cols).reshape(w.shape) if w.requires_grad else None
        gx = None
        if x.requires_grad:
            gcols = (gm @ wm).reshape(T + (C, k1, k2, k3))
            gxp = np.zeros_like(xp)
            if P <= k1 * k2 * k3:
                for i in range(T[0]):
                    for j in range(T[1]):
                        for k in range(T[2]):
                            gxp[:, i * s:i * s + k1, j * s:j * s + k2, k * s:k * s + k3] += gcols[i, j, k]
            else:
                gc = np.moveaxis(gcols, 3, 0)  # (C, T1, T2, T3, k1, k2, k3)
                for a in range(k1):
                    for c in range(k2):
                        for e in range(k3):
                            gxp[:, a:a + s * T[0]:s, c:c + s * T[1]:s, e:e + s * T[2]:s] += gc[..., a, c, e]
            gx = gxp[:, p:p + x.shape[1], p:p + x.shape[2], p:p + x.shape[3]]
        grads = [gx, gw]
        if b is not None:
            grads.append(gm.sum(axis=0))
        return tuple(grads)

    return make_node(out.reshape(T + (O,)), parents, backward, "conv3d")


def depthwise_conv3d(x, w, b=None):
    """Per-channel 3D convolution, stride 1, zero padding k//2.

    ``x`` is channels-last (T1, T2, T3, C); ``w`` is (C, k, k, k) with odd k.
    """
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 4 or w.ndim != 4 or w.shape[0] != x.shape[3] or w.shape[1] % 2 == 0:
        raise ValueError(f"depthwise_conv3d: input {x.shape} and kernel {w.shape} are incompatible")
    parents = [x, w]
    if b is not None:
        b = as_tensor(b)
        parents.append(b)
    k = w.shape[1]
    r = k // 2
    T1, T2, T3, _ = x.shape
    xp = np.pad(x.data, ((r, r), (r, r), (r, r), (0, 0)))
    out = np.zeros(x.shape, dtype=x.dtype)
    for a in range(k):
        for c in range(k):
            for e in range(k):
                out += xp[a:a + T1, c:c + T2, e:e + T3] * w.data[:, a, c, e]
    if b is not None:
        out += b.data

    def backward(g):
        gw = np.zeros_like(w.data) if w.requires_grad else None
        gxp = np.zeros_like(xp) if x.requires_grad else None
        for a in range(k):
            for c in range(k):
                for e in range(k):
                    if gw is not None:
                        gw[:, a, c, e] = (xp[a:a + T1, c:c + T2, e:e + T3] * g).sum(axis=(0, 1, 2))
                    if gxp is not None:
                        gxp[a:a + T1, c:c + T2, e:e + T3] += g * w.data[:, a, c, e]
        gx = gxp[r:r + T1, r:r + T2, r:r + T3] if gxp is not None else None
        grads = [gx, gw]
        if b is not None:
            grads.append(g.sum(axis=(0, 1, 2)))
        return tuple(grads)

    return make_node(out, parents, backward, "depthwise_conv3d")


# ---------------------------------------------------------------- resampling


def grid_sample(vol, coords):
    """Trilinear sampling at normalized coordinates with zero padding.

    ``vol`` is (H, W, D) or (C, H, W, D); ``coords`` is (P, 3) in [-1, 1]
    per axis (voxel i of an n-voxel axis sits at 2i/(n-1) - 1).  Returns (P,)
    or (C, P).  Corners outside the grid contribute zero.
    """
    vol, coords = as_tensor(vol), as_tensor(coords)
    squeeze = vol.ndim == 3
    if vol.ndim not in (3, 4) or coords.ndim != 2 or coords.shape[1] != 3:
        raise ValueError(f"grid_sample: volume {vol.shape} and coordinates {coords.shape} are incompatible")
    v4 = vol.data[None] if squeeze else vol.data
    v4 = np.ascontiguousarray(v4)
    dims = np.array(v4.shape[1:], dtype=v4.dtype)
    half = (dims - 1) / 2.0
    idx = np.ascontiguousarray((coords.data.astype(v4.dtype, copy=False) + 1.0) * half)
    out = kernels.trilinear_forward(v4, idx)

    def backward(g):
        g4 = np.ascontiguousarray(g[None] if squeeze else g, dtype=v4.dtype)
        gvol, gidx = kernels.trilinear_backward(v4, idx, g4, vol.requires_grad)
        if gvol is not None and squeeze:
            gvol = gvol[0]
        return gvol, (gidx * half if coords.requires_grad else None)

    return make_node(out[0] if squeeze else out, (vol, coords), backward, "grid_sample")


def resample_axes(x, mats):
    """Apply one linear 1D resampling matrix per trailing spatial axis.

    ``mats`` are constant arrays (n_out, n_in) for the last three axes of
    ``x``; trilinear resampling onto an axis-aligned grid factorizes this way.
    """
    x = as_tensor(x)
    m0, m1, m2 = (np.asarray(m, dtype=x.dtype) for m in mats)
    if x.ndim < 3 or x.shape[-3:] != (m0.shape[1], m1.shape[1], m2.shape[1]):
        raise ValueError(
            f"resample_axes: input {x.shape} and matrices {m0.shape}, {m1.shape}, {m2.shape} are incompatible"
        )
    out = np.einsum("...ijk,ai,bj,ck->...abc", x.data, m0, m1, m2, optimize=True)

    def backward(g):
        return (np.einsum("...abc,ai,bj,ck->...ijk", g, m0, m1, m2, optimize=True),)

    return make_node(out, (x,), backward, "resample_axes")


def _box1d(a, r, axis):
    n = a.shape[axis]
    c = np.cumsum(a, axis=axis)
    zero_shape = list(a.shape)
    zero_shape[axis] = 1
    c = np.concatenate([np.zeros(zero_shape, dtype=a.dtype), c], axis=axis)
    hi = np.minimum(np.arange(n) + r + 1, n)
    lo = np.maximum(np.arange(n) - r, 0)
    return np.take(c, hi, axis=axis) - np.take(c, lo, axis=axis)


def box_sum_array(a, w):
    r = w // 2
    for axis in (-3, -2, -1):
        a = _box1d(a, r, a.ndim + axis)
    return a


def box_sum(x, w):
    """Sum over the w³ window centred on each voxel, clipped at the borders.

    The operator is symmetric, so its adjoint is itself.
    """
    x = as_tensor(x)
    if x.ndim < 3 or w < 1 or w % 2 == 0:
        raise ValueError(f"box_sum: input {x.shape} with window {w} is invalid (window must be odd)")
    return make_node(box_sum_array(x.data, w), (x,), lambda g: (box_sum_array(g, w),), "box_sum")
