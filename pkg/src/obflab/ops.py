"""Optimized per-operator evaluation.

Every evaluator accumulates in float64 and stores float32, matching the
nested-loop reference path in ``naive``. The fused activation is applied
inside the node, after its linear part, before the float32 cast.
"""

from __future__ import annotations

import numpy as np

from .ir import (
    Activation,
    BoundParams,
    ConvParams,
    DEFAULT_BOUND,
    OperatorKind,
    OperatorNode,
    PoolParams,
    ReshapeParams,
)

__all__ = [
    "relu_bounded_scalar",
    "relu_array",
    "relu_bounded_array",
    "softmax_array",
    "conv2d",
    "depthwise_conv2d",
    "fully_connected",
    "obf_linear",
    "max_pool",
    "avg_pool",
    "eval_node",
]


def relu_bounded_scalar(x, beta):
    """Three-case bounded ReLU; works on floats and exact rationals alike."""
    if x >= beta:
        return beta
    if x > 0:
        return x
    return x * 0  # preserves the operand's numeric type


def relu_array(x: np.ndarray) -> np.ndarray:
    return np.where(x > 0, x, 0.0)


def relu_bounded_array(x: np.ndarray, beta: float) -> np.ndarray:
    return np.where(x >= beta, beta, np.where(x > 0, x, 0.0))


def softmax_array(x: np.ndarray) -> np.ndarray:
    shifted = x - np.max(x, axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=-1, keepdims=True)


def _windows(x: np.ndarray, kernel_hw, stride, dilation) -> np.ndarray:
    """(h_out, w_out, kh, kw, c) view over a padded rank-3 HWC array."""
    kh, kw = kernel_hw
    sh, sw = stride
    dh, dw = dilation
    h = (x.shape[0] - dh * (kh - 1) - 1) // sh + 1
    w = (x.shape[1] - dw * (kw - 1) - 1) // sw + 1
    s0, s1, s2 = x.strides
    return np.lib.stride_tricks.as_strided(
        x,
        shape=(h, w, kh, kw, x.shape[2]),
        strides=(s0 * sh, s1 * sw, s0 * dh, s1 * dw, s2),
        writeable=False,
    )


def _pad_hwc(x: np.ndarray, padding) -> np.ndarray:
    ph, pw = padding
    if ph == 0 and pw == 0:
        return x
    return np.pad(x, ((ph, ph), (pw, pw), (0, 0)))


def conv2d(x: np.ndarray, kernel: np.ndarray, bias: np.ndarray | None, params: ConvParams) -> np.ndarray:
    x64 = _pad_hwc(x[0].astype(np.float64), params.padding)
    k64 = kernel.astype(np.float64)  # (c_out, kh, kw, c_in)
    win = _windows(x64, (k64.shape[1], k64.shape[2]), params.stride, params.dilation)
    out = np.einsum("hwkli,okli->hwo", win, k64)
    if bias is not None:
        out = out + bias.astype(np.float64)
    return out[np.newaxis]


def depthwise_conv2d(x: np.ndarray, kernel: np.ndarray, bias: np.ndarray | None, params: ConvParams) -> np.ndarray:
    x64 = _pad_hwc(x[0].astype(np.float64), params.padding)
    k64 = kernel.astype(np.float64)  # (mult, kh, kw, c_in)
    win = _windows(x64, (k64.shape[1], k64.shape[2]), params.stride, params.dilation)
    out = np.einsum("hwkli,mkli->hwim", win, k64)  # channel index c_in * mult + m
    h, w = out.shape[0], out.shape[1]
    out = out.reshape(h, w, -1)
    if bias is not None:
        out = out + bias.astype(np.float64)
    return out[np.newaxis]


def fully_connected(x: np.ndarray, weights: np.ndarray, bias: np.ndarray | None) -> np.ndarray:
    out = x.astype(np.float64) @ weights.astype(np.float64)
    if bias is not None:
        out = out + bias.astype(np.float64)
    return out


def obf_linear(x: np.ndarray, weights: np.ndarray, bias: np.ndarray | None) -> np.ndarray:
    # Pointwise matrix multiply along the trailing (channel/feature) axis.
    out = np.tensordot(x.astype(np.float64), weights.astype(np.float64), axes=([-1], [0]))
    if bias is not None:
        out = out + bias.astype(np.float64)
    return out


def max_pool(x: np.ndarray, params: PoolParams) -> np.ndarray:
    win = _windows(x[0].astype(np.float64), params.window, params.stride, (1, 1))
    return win.max(axis=(2, 3))[np.newaxis]


def avg_pool(x: np.ndarray, params: PoolParams) -> np.ndarray:
    win = _windows(x[0].astype(np.float64), params.window, params.stride, (1, 1))
    return win.mean(axis=(2, 3))[np.newaxis]


def _apply_fused(out: np.ndarray, fused: Activation | None) -> np.ndarray:
    if fused is None:
        return out
    if fused.kind == "relu":
        return relu_array(out)
    return relu_bounded_array(out, fused.beta)


def eval_node(
    node: OperatorNode,
    inputs: list[np.ndarray],
    weights: np.ndarray | None,
    bias: np.ndarray | None,
) -> np.ndarray:
    kind = node.kind
    x = inputs[0]
    if kind is OperatorKind.CONV2D:
        out = conv2d(x, weights, bias, node.params)
    elif kind is OperatorKind.DEPTHWISE_CONV2D:
        out = depthwise_conv2d(x, weights, bias, node.params)
    elif kind is OperatorKind.FULLY_CONNECTED:
        out = fully_connected(x, weights, bias)
    elif kind is OperatorKind.OBF_LINEAR:
        out = obf_linear(x, weights, bias)
    elif kind is OperatorKind.RELU:
        out = relu_array(x.astype(np.float64))
    elif kind is OperatorKind.RELU_BOUNDED:
        beta = node.params.beta if isinstance(node.params, BoundParams) else DEFAULT_BOUND
        out = relu_bounded_array(x.astype(np.float64), beta)
    elif kind is OperatorKind.SOFTMAX:
        out = softmax_array(x.astype(np.float64))
    elif kind is OperatorKind.ADD:
        out = x.astype(np.float64) + inputs[1].astype(np.float64)
    elif kind is OperatorKind.MAX_POOL:
        out = max_pool(x, node.params)
    elif kind is OperatorKind.AVG_POOL:
        out = avg_pool(x, node.params)
    elif kind is OperatorKind.RESHAPE:
        assert isinstance(node.params, ReshapeParams)
        out = x.astype(np.float64).reshape(node.params.shape)
    else:  # pragma: no cover - validate() rejects unknown kinds
        raise ValueError(f"unknown kind {kind!r}")
    out = _apply_fused(out, node.fused_activation)
    # Overflow may surface only at the float32 cast; the interpreter's
    # finiteness check is the reporting point, so keep the cast quiet.
    with np.errstate(over="ignore"):
        return np.asarray(out, dtype=np.float32)
