"""Minimal reverse-mode differentiation over numpy arrays."""
from .gradcheck import grad_check
from .ops import (
    add,
    box_sum,
    concat,
    conv3d,
    cos,
    depthwise_conv3d,
    div,
    exp,
    getitem,
    grid_sample,
    matmul,
    mean,
    mul,
    neg,
    relu,
    resample_axes,
    reshape,
    sin,
    softmax,
    sqrt,
    stack,
    sub,
    sum,
    tanh,
    transpose,
)
from .tensor import Tensor, as_tensor, backprop, is_recording, no_grad

PRIMITIVES = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "div": div,
    "neg": neg,
    "matmul": matmul,
    "conv3d": conv3d,
    "depthwise_conv3d": depthwise_conv3d,
    "softmax": softmax,
    "tanh": tanh,
    "relu": relu,
    "sqrt": sqrt,
    "exp": exp,
    "sin": sin,
    "cos": cos,
    "sum": sum,
    "mean": mean,
    "concat": concat,
    "stack": stack,
    "reshape": reshape,
    "transpose": transpose,
    "getitem": getitem,
    "grid_sample": grid_sample,
    "resample_axes": resample_axes,
    "box_sum": box_sum,
}


def forward_primitive(kind, *inputs, **kwargs):
    """Dispatch a primitive by name."""
    try:
        fn = PRIMITIVES[kind]
    except KeyError:
        raise ValueError(f"unknown primitive {kind!r}") from None
    return fn(*inputs, **kwargs)


__all__ = ["Tensor", "as_tensor", "backprop", "grad_check", "no_grad", "is_recording", "forward_primitive"] + list(
    PRIMITIVES
)
