"""Circular convolution, pooling, patch windows and the normalized distance.

Arrays are channel-first. A 1D feature map has shape ``(c, D)`` and a 2D map
``(c, H, W)``; any number of leading batch axes is allowed. Spatial indices
wrap modulo the axis length, so ``x[..., j + D] == x[..., j]``.

A convolution tensor has shape ``(c_out, c_in, *kernel)`` with every kernel
extent odd (``2s + 1``), the tap at position ``l`` addressing ``x[j + l]`` for
``l = -s..s``.
"""

from __future__ import annotations

import itertools

import numpy as np

__all__ = [
    "ShapeError",
    "circ_windows",
    "circ_conv",
    "conv_from_windows",
    "avg_pool",
    "extract_patch",
    "circ_shift",
    "normalized_l2_distance",
]


class ShapeError(ValueError):
    """Operand shapes are incompatible."""


def _half_widths(kernel_shape):
    halves = []
    for k in kernel_shape:
        if k < 1 or k % 2 == 0:
            raise ShapeError(f"kernel extent must be odd and positive, got {k}")
        halves.append((k - 1) // 2)
    return halves


def circ_windows(x: np.ndarray, kernel_shape) -> np.ndarray:
    """Stack every circularly shifted copy of ``x`` a kernel can address.

    Returns an array of shape ``(..., c, K, *spatial)`` with ``K`` the number
    of kernel taps, ordered like ``w.reshape(c_out, c_in, K)`` (row-major over
    the kernel axes). Wrapping is done with modular index arrays.
    """
    kernel_shape = tuple(kernel_shape)
    nd = len(kernel_shape)
    x = np.asarray(x)
    if x.ndim < nd + 1:
        raise ShapeError(f"input needs a channel axis and {nd} spatial axes, got shape {x.shape}")
    spatial = x.shape[x.ndim - nd:]
    if any(n < 1 for n in spatial):
        raise ValueError(f"spatial length must be >= 1, got {spatial}")
    halves = _half_widths(kernel_shape)
    offsets = [range(-s, s + 1) for s in halves]
    shifted = []
    for combo in itertools.product(*offsets):
        y = x
        for axis_from_end, (off, n) in enumerate(zip(combo, spatial)):
            if off == 0:
                continue
            idx = (np.arange(n) + off) % n
            y = np.take(y, idx, axis=x.ndim - nd + axis_from_end)
        shifted.append(y)
    return np.stack(shifted, axis=x.ndim - nd)


def _check_conv_shapes(w, x):
    if w.ndim < 3:
        raise ShapeError(f"convolution tensor needs >= 3 axes, got shape {w.shape}")
    nd = w.ndim - 2
    if x.ndim < nd + 1:
        raise ShapeError(f"input rank {x.ndim} too small for a {nd}D kernel")
    c_in = x.shape[x.ndim - nd - 1]
    if c_in != w.shape[1]:
        raise ShapeError(f"kernel expects {w.shape[1]} input channels, input has {c_in}")
    return nd


def circ_conv(w: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Circular convolution ``(W*x)[i, j] = sum_k sum_l w[i, k, l] x[k, j + l]``.

    Works for 1D and 2D kernels alike; leading batch axes of ``x`` pass
    through. The output keeps the input's spatial size.
    """
    w = np.asarray(w, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    _check_conv_shapes(w, x)
    cols = circ_windows(x, w.shape[2:])
    return conv_from_windows(w, cols)


def conv_from_windows(w: np.ndarray, cols: np.ndarray) -> np.ndarray:
    """Contract precomputed windows (see :func:`circ_windows`) with a kernel."""
    nd = w.ndim - 2
    c_out, c_in = w.shape[:2]
    wk = w.reshape(c_out, c_in * int(np.prod(w.shape[2:])))
    lead = cols.shape[: cols.ndim - nd - 2]
    spatial = cols.shape[cols.ndim - nd:]
    flat = cols.reshape(lead + (wk.shape[1],) + spatial)
    # contract the fused (channel, tap) axis
    out = np.tensordot(wk, flat, axes=([1], [len(lead)]))
    # tensordot puts c_out first; move it behind the batch axes
    return np.moveaxis(out, 0, len(lead))


def avg_pool(v: np.ndarray, spatial_ndim: int = 1) -> np.ndarray:
    """Mean over the trailing ``spatial_ndim`` axes (one value per channel)."""
    v = np.asarray(v, dtype=np.float64)
    if v.size == 0:
        raise ShapeError("cannot pool an empty feature map")
    axes = tuple(range(v.ndim - spatial_ndim, v.ndim))
    return v.mean(axis=axes)


def extract_patch(x: np.ndarray, k: int, s: int) -> np.ndarray:
    """Window ``phi_k(x)``: columns ``k-s .. k+s`` of a ``(c, D)`` map, 1-based ``k``.

    Satisfies ``circ_conv(W, x)[r, k-1] == sum(W[r] * extract_patch(x, k, s))``.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError(f"expected a (c, D) feature map, got shape {x.shape}")
    D = x.shape[1]
    if not 1 <= k <= D:
        raise IndexError(f"patch position {k} outside 1..{D}")
    idx = (np.arange(-s, s + 1) + (k - 1)) % D
    return x[:, idx]


def circ_shift(x: np.ndarray, shift: int = 1, axis: int = -1) -> np.ndarray:
    """Circularly shift along ``axis`` so that ``out[j] = x[j - shift]``."""
    return np.roll(x, shift, axis=axis)


def normalized_l2_distance(a, b) -> float:
    """``||A - B|| / sqrt(||A|| * ||B||)``; undefined when either norm is zero."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch {a.shape} vs {b.shape}")
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise ValueError("normalized distance undefined for a zero-norm operand")
    return float(np.linalg.norm(a - b) / np.sqrt(na * nb))
