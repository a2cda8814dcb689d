"""Convolution and activation primitives with hand-derived backward passes.

Layout is NHWC (channels innermost) so im2col window extraction copies
contiguous runs. Convolutions are stride-1 with zero 'same' padding and odd
kernels, lowered to BLAS matmuls: one GEMM forward, two backward. Kernels
are stored as (k, k, c_in, c_out). All ops are dtype-generic: they compute
in the dtype of their inputs (float32 in training, float64 in gradient
checks).
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

__all__ = ["conv2d_forward", "conv2d_backward", "gelu_forward", "gelu_backward"]

_GELU_C = 0.7978845608028654  # sqrt(2/pi)
_GELU_A = 0.044715


def _im2col(x: np.ndarray, k: int) -> np.ndarray:
    # (N, H, W, C) -> (N*H*W, k*k*C) with (u, v, c) column order, zero 'same'
    # padding; channels-innermost keeps the gather copy cheap
    n, h, w, c = x.shape
    p = k // 2
    xp = np.pad(x, ((0, 0), (p, p), (p, p), (0, 0)))
    win = sliding_window_view(xp, (k, k), axis=(1, 2))  # (N, H, W, C, k, k)
    return np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3)).reshape(n * h * w, k * k * c)


def conv2d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray):
    """y[n,.,.,o] = sum_{u,v,c} w[u,v,c,o] * x[n,.+u,.+v,c] + b[o].

    Returns (y, cache); cache holds the im2col matrix for the backward pass.
    """
    n, h, wd, c = x.shape
    k, _, cin, cout = w.shape
    if cin != c:
        raise ValueError(f"input has {c} channels, kernel expects {cin}")
    cols = _im2col(x, k)
    y = cols @ w.reshape(k * k * cin, cout) + b
    return y.reshape(n, h, wd, cout), (cols, x.shape, w)


def conv2d_backward(dy: np.ndarray, cache):
    """Gradients w.r.t. input, kernel and bias for conv2d_forward."""
    cols, x_shape, w = cache
    n, h, wd, c = x_shape
    k, _, cin, cout = w.shape
    dy_mat = dy.reshape(n * h * wd, cout)
    dw = (cols.T @ dy_mat).reshape(k, k, cin, cout)
    db = dy_mat.sum(axis=0)
    # dx: 'same' correlation of dy with the flipped kernel, summed over cout
    wback = np.ascontiguousarray(w[::-1, ::-1].transpose(0, 1, 3, 2)).reshape(k * k * cout, cin)
    dx = (_im2col(dy, k) @ wback).reshape(n, h, wd, cin)
    return dx, dw, db


def gelu_forward(x: np.ndarray):
    """Tanh-approximation GELU: 0.5*x*(1 + tanh(c*(x + a*x^3)))."""
    u = np.tanh(_GELU_C * (x + _GELU_A * x * x * x))
    return 0.5 * x * (1.0 + u), (x, u)


def gelu_backward(dy: np.ndarray, cache):
    x, u = cache
    du = _GELU_C * (1.0 + 3.0 * _GELU_A * x * x) * (1.0 - u * u)
    return dy * (0.5 * (1.0 + u) + 0.5 * x * du)
