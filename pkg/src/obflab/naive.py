"""Reference operator evaluation with explicit nested loops.

Deliberately slow and obvious. The optimized path in ``ops`` must agree
with these implementations to 1e-6 absolute on random cases; the test
suite holds both paths to that.
"""

from __future__ import annotations

import math

import numpy as np

from .ir import (
    BoundParams,
    ConvParams,
    DEFAULT_BOUND,
    OperatorKind,
    OperatorNode,
    PoolParams,
    ReshapeParams,
)
from .ops import relu_bounded_scalar

__all__ = [
    "conv2d_naive",
    "depthwise_conv2d_naive",
    "fully_connected_naive",
    "obf_linear_naive",
    "max_pool_naive",
    "avg_pool_naive",
    "softmax_naive",
    "eval_node_naive",
]


def _pad_naive(x: np.ndarray, ph: int, pw: int) -> np.ndarray:
    h, w, c = x.shape
    out = np.zeros((h + 2 * ph, w + 2 * pw, c), dtype=np.float64)
    for i in range(h):
        for j in range(w):
            for k in range(c):
                out[i + ph, j + pw, k] = x[i, j, k]
    return out


def conv2d_naive(x: np.ndarray, kernel: np.ndarray, bias, params: ConvParams) -> np.ndarray:
    xp = _pad_naive(x[0].astype(np.float64), params.padding[0], params.padding[1])
    c_out, kh, kw, c_in = kernel.shape
    sh, sw = params.stride
    dh, dw = params.dilation
    h_out = (xp.shape[0] - dh * (kh - 1) - 1) // sh + 1
    w_out = (xp.shape[1] - dw * (kw - 1) - 1) // sw + 1
    out = np.zeros((1, h_out, w_out, c_out), dtype=np.float64)
    for i in range(h_out):
        for j in range(w_out):
            for o in range(c_out):
                acc = 0.0
                for a in range(kh):
                    for b in range(kw):
                        for c in range(c_in):
                            acc += xp[i * sh + a * dh, j * sw + b * dw, c] * float(kernel[o, a, b, c])
                if bias is not None:
                    acc += float(bias[o])
                out[0, i, j, o] = acc
    return out


def depthwise_conv2d_naive(x: np.ndarray, kernel: np.ndarray, bias, params: ConvParams) -> np.ndarray:
    xp = _pad_naive(x[0].astype(np.float64), params.padding[0], params.padding[1])
    mult, kh, kw, c_in = kernel.shape
    sh, sw = params.stride
    dh, dw = params.dilation
    h_out = (xp.shape[0] - dh * (kh - 1) - 1) // sh + 1
    w_out = (xp.shape[1] - dw * (kw - 1) - 1) // sw + 1
    out = np.zeros((1, h_out, w_out, c_in * mult), dtype=np.float64)
    for i in range(h_out):
        for j in range(w_out):
            for c in range(c_in):
                for m in range(mult):
                    acc = 0.0
                    for a in range(kh):
                        for b in range(kw):
                            acc += xp[i * sh + a * dh, j * sw + b * dw, c] * float(kernel[m, a, b, c])
                    o = c * mult + m
                    if bias is not None:
                        acc += float(bias[o])
                    out[0, i, j, o] = acc
    return out


def fully_connected_naive(x: np.ndarray, weights: np.ndarray, bias) -> np.ndarray:
    d_in, d_out = weights.shape
    out = np.zeros(d_out, dtype=np.float64)
    for j in range(d_out):
        acc = 0.0
        for i in range(d_in):
            acc += float(x[i]) * float(weights[i, j])
        if bias is not None:
            acc += float(bias[j])
        out[j] = acc
    return out


def obf_linear_naive(x: np.ndarray, weights: np.ndarray, bias) -> np.ndarray:
    d = weights.shape[0]
    flat = x.reshape(-1, d).astype(np.float64)
    out = np.zeros_like(flat)
    for r in range(flat.shape[0]):
        for j in range(d):
            acc = 0.0
            for i in range(d):
                acc += flat[r, i] * float(weights[i, j])
            if bias is not None:
                acc += float(bias[j])
            out[r, j] = acc
    return out.reshape(x.shape)


def max_pool_naive(x: np.ndarray, params: PoolParams) -> np.ndarray:
    xin = x[0].astype(np.float64)
    wh, ww = params.window
    sh, sw = params.stride
    h_out = (xin.shape[0] - wh) // sh + 1
    w_out = (xin.shape[1] - ww) // sw + 1
    c = xin.shape[2]
    out = np.zeros((1, h_out, w_out, c), dtype=np.float64)
    for i in range(h_out):
        for j in range(w_out):
            for k in range(c):
                best = -math.inf
                for a in range(wh):
                    for b in range(ww):
                        v = xin[i * sh + a, j * sw + b, k]
                        if v > best:
                            best = v
                out[0, i, j, k] = best
    return out


def avg_pool_naive(x: np.ndarray, params: PoolParams) -> np.ndarray:
    xin = x[0].astype(np.float64)
    wh, ww = params.window
    sh, sw = params.stride
    h_out = (xin.shape[0] - wh) // sh + 1
    w_out = (xin.shape[1] - ww) // sw + 1
    c = xin.shape[2]
    out = np.zeros((1, h_out, w_out, c), dtype=np.float64)
    for i in range(h_out):
        for j in range(w_out):
            for k in range(c):
                acc = 0.0
                for a in range(wh):
                    for b in range(ww):
                        acc += xin[i * sh + a, j * sw + b, k]
                out[0, i, j, k] = acc / (wh * ww)
    return out


def softmax_naive(x: np.ndarray) -> np.ndarray:
    flat = x.reshape(-1, x.shape[-1]).astype(np.float64)
    out = np.zeros_like(flat)
    for r in range(flat.shape[0]):
        m = max(float(v) for v in flat[r])
        exps = [math.exp(float(v) - m) for v in flat[r]]
        total = sum(exps)
        for j, e in enumerate(exps):
            out[r, j] = e / total
    return out.reshape(x.shape)


def _fused_naive(out: np.ndarray, node: OperatorNode) -> np.ndarray:
    fused = node.fused_activation
    if fused is None:
        return out
    beta = fused.beta if fused.kind == "relu_bounded" else math.inf
    flat = out.reshape(-1)
    for i in range(flat.shape[0]):
        flat[i] = relu_bounded_scalar(float(flat[i]), beta)
    return out


def eval_node_naive(node: OperatorNode, inputs, weights, bias) -> np.ndarray:
    kind = node.kind
    x = inputs[0]
    if kind is OperatorKind.CONV2D:
        out = conv2d_naive(x, weights, bias, node.params)
    elif kind is OperatorKind.DEPTHWISE_CONV2D:
        out = depthwise_conv2d_naive(x, weights, bias, node.params)
    elif kind is OperatorKind.FULLY_CONNECTED:
        out = fully_connected_naive(x, weights, bias)
    elif kind is OperatorKind.OBF_LINEAR:
        out = obf_linear_naive(x, weights, bias)
    elif kind is OperatorKind.RELU:
        out = x.astype(np.float64).copy()
        flat = out.reshape(-1)
        for i in range(flat.shape[0]):
            flat[i] = flat[i] if flat[i] > 0 else 0.0
    elif kind is OperatorKind.RELU_BOUNDED:
        beta = node.params.beta if isinstance(node.params, BoundParams) else DEFAULT_BOUND
        out = x.astype(np.float64).copy()
        flat = out.reshape(-1)
        for i in range(flat.shape[0]):
            flat[i] = relu_bounded_scalar(float(flat[i]), beta)
    elif kind is OperatorKind.SOFTMAX:
        out = softmax_naive(x)
    elif kind is OperatorKind.ADD:
        a = x.astype(np.float64)
        b = inputs[1].astype(np.float64)
        out = np.zeros_like(a)
        fa, fb, fo = a.reshape(-1), b.reshape(-1), out.reshape(-1)
        for i in range(fa.shape[0]):
            fo[i] = fa[i] + fb[i]
    elif kind is OperatorKind.MAX_POOL:
        out = max_pool_naive(x, node.params)
    elif kind is OperatorKind.AVG_POOL:
        out = avg_pool_naive(x, node.params)
    elif kind is OperatorKind.RESHAPE:
        assert isinstance(node.params, ReshapeParams)
        out = x.astype(np.float64).reshape(node.params.shape).copy()
    else:  # pragma: no cover
        raise ValueError(f"unknown kind {kind!r}")
    out = _fused_naive(out, node)
    return np.asarray(out, dtype=np.float32)
