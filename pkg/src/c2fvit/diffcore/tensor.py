"""Tensor type and the reverse-mode tape."""
import threading
from contextlib import contextmanager

import numpy as np

_local = threading.local()


def is_recording():
    return getattr(_local, "recording", True)


@contextmanager
def no_grad():
    """Evaluate without recording tape nodes."""
    prev = is_recording()
    _local.recording = False
    try:
        yield
    finally:
        _local.recording = prev


class Tensor:
    """A dense float array that may carry a tape node.

    Leaves created with ``requires_grad=True`` are the differentiable inputs;
    every primitive applied to them while recording produces a non-leaf
    tensor holding its parents and an adjoint closure.
    """

    __slots__ = ("data", "requires_grad", "parents", "backward_fn", "op", "name")
    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, name=None):
        arr = np.asarray(data)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.parents = ()
        self.backward_fn = None
        self.op = "leaf"
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self):
        return not self.parents

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0])

    def detach(self):
        return Tensor(self.data)

    def __repr__(self):
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, op={self.op}{tag})"

    def __len__(self):
        return self.data.shape[0]

    # arithmetic is routed through the primitive catalog in ops.py
    def __add__(self, other):
        return _ops.add(self, other)

    def __radd__(self, other):
        return _ops.add(other, self)

    def __sub__(self, other):
        return _ops.sub(self, other)

    def __rsub__(self, other):
        return _ops.sub(other, self)

    def __mul__(self, other):
        return _ops.mul(self, other)

    def __rmul__(self, other):
        return _ops.mul(other, self)

    def __truediv__(self, other):
        return _ops.div(self, other)

    def __rtruediv__(self, other):
        return _ops.div(other, self)

    def __neg__(self):
        return _ops.neg(self)

    def __matmul__(self, other):
        return _ops.matmul(self, other)

    def __rmatmul__(self, other):
        return _ops.matmul(other, self)

    def __getitem__(self, index):
        return _ops.getitem(self, index)

    @property
    def T(self):
        return _ops.transpose(self)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return _ops.reshape(self, shape)

    def sum(self, axis=None, keepdims=False):
        return _ops.sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return _ops.mean(self, axis, keepdims)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def make_node(data, parents, backward_fn, op):
    """Wrap a primitive's forward value, recording a node when needed."""
    out = Tensor(data)
    if is_recording() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.parents = tuple(parents)
        out.backward_fn = backward_fn
        out.op = op
    return out


def _topo_order(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in reversed(node.parents):
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backprop(output, wrt=None):
    """Reverse sweep from a scalar ``output``.

    Returns a dict mapping each leaf tensor (by identity) to its gradient
    array.  Leaves listed in ``wrt`` that the output does not depend on are
    reported with zero gradients.
    """
    output = as_tensor(output)
    if output.data.size != 1 or output.ndim > 1:
        raise ValueError(f"backprop: output must be a scalar, got shape {output.shape}")
    grads = {}
    if output.requires_grad:
        pending = {id(output): np.ones_like(output.data)}
        for node in reversed(_topo_order(output)):
            g = pending.pop(id(node), None)
            if g is None:
                continue
            if node.is_leaf:
                grads[node] = g
                continue
            for parent, gp in zip(node.parents, node.backward_fn(g)):
                if gp is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in pending:
                    pending[key] = pending[key] + gp
                else:
                    pending[key] = gp
    if wrt is not None:
        grads = {t: grads.get(t, np.zeros_like(t.data)) for t in wrt}
    return grads


from . import ops as _ops  # noqa: E402  (circular: ops builds on Tensor)
