"""Forward and backward passes for the few layers the mini autoencoder uses.

Each ``*_forward`` returns ``(out, cache)``; the matching ``*_backward``
takes the upstream gradient and the cache. Batches are ``(B, C, H, W)``.
"""

from __future__ import annotations

import numpy as np

from ..tensor import circ_windows, conv_from_windows


def conv_forward(w, x, b=None):
    """Circular 2D convolution (taps address ``x[i + a, j + d]``) plus optional bias."""
    cols = circ_windows(x, w.shape[2:])
    out = conv_from_windows(w, cols)
    if b is not None:
        out = out + b[None, :, None, None]
    return out, cols


def _windows_adjoint(dcols, kernel_shape):
    # transpose of circ_windows: shift every tap's slice back and sum
    kh, kw = kernel_shape
    sh, sw = (kh - 1) // 2, (kw - 1) // 2
    dx = np.zeros(dcols.shape[:2] + dcols.shape[3:])
    k = 0
    for a in range(-sh, sh + 1):
        for d in range(-sw, sw + 1):
            dx += np.roll(dcols[:, :, k], (a, d), axis=(2, 3))
            k += 1
    return dx


def conv_backward(dout, w, cols, need_dx=True, need_dw=True):
    """Gradients of :func:`conv_forward` w.r.t. weights, bias and input."""
    c_out, c_in = w.shape[:2]
    K = int(np.prod(w.shape[2:]))
    B, _, H, W = dout.shape
    dw = db = dx = None
    if need_dw:
        flat = cols.reshape(B, c_in * K, H * W)
        dw = np.einsum("bop,bfp->of", dout.reshape(B, c_out, H * W), flat, optimize=True).reshape(w.shape)
        db = dout.sum(axis=(0, 2, 3))
    if need_dx:
        wk = w.reshape(c_out, c_in * K)
        dcols = np.tensordot(wk, dout, axes=([0], [1]))  # (c_in*K, B, H, W)
        dcols = np.moveaxis(dcols, 0, 1).reshape(B, c_in, K, H, W)
        dx = _windows_adjoint(dcols, w.shape[2:])
    return dw, db, dx


def relu_forward(x):
    return np.maximum(x, 0.0), x > 0


def relu_backward(dout, active):
    # derivative at exactly 0 is taken as 0
    return dout * active


def pool2_forward(x):
    B, C, H, W = x.shape
    if H % 2 or W % 2:
        raise ValueError(f"2x average pooling needs even sizes, got {H}x{W}")
    return x.reshape(B, C, H // 2, 2, W // 2, 2).mean(axis=(3, 5))


def pool2_backward(dout):
    return np.repeat(np.repeat(dout, 2, axis=2), 2, axis=3) * 0.25


def upsample_forward(x, factor: int = 2):
    return np.repeat(np.repeat(x, factor, axis=2), factor, axis=3)


def upsample_backward(dout, factor: int = 2):
    B, C, H, W = dout.shape
    return dout.reshape(B, C, H // factor, factor, W // factor, factor).sum(axis=(3, 5))


def gap_forward(x):
    return x.mean(axis=(2, 3))


def gap_backward(dout, shape):
    H, W = shape[2:]
    return np.broadcast_to(dout[:, :, None, None] / (H * W), shape).copy()


def linear_forward(w, b, z):
    return z @ w.T + b


def linear_backward(dout, w, z):
    return dout.T @ z, dout.sum(axis=0), dout @ w


def log_softmax(logits, axis=-1):
    shifted = logits - logits.max(axis=axis, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))


def cross_entropy(logits, labels):
    """Mean cross-entropy over rows of ``(B, K)`` logits and its gradient."""
    B = logits.shape[0]
    logp = log_softmax(logits)
    loss = -logp[np.arange(B), labels].mean()
    grad = np.exp(logp)
    grad[np.arange(B), labels] -= 1.0
    return float(loss), grad / B


def pixel_cross_entropy(logits, labels):
    """Mean cross-entropy over every pixel of ``(B, K, H, W)`` logits."""
    B, K, H, W = logits.shape
    flat = np.moveaxis(logits, 1, -1).reshape(-1, K)
    loss, g = cross_entropy(flat, labels.reshape(-1))
    return loss, np.moveaxis(g.reshape(B, H, W, K), -1, 1)


def sum_squared_error(pred, target):
    """``(1/N) sum_i ||pred_i - target_i||^2`` with ``N`` the batch size."""
    diff = pred - target
    N = pred.shape[0]
    return float(np.sum(diff * diff) / N), 2.0 * diff / N
