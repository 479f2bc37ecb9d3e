"""Channelwise DFT and the Fourier form of linear circular CNNs.

Convention (fixed throughout the package)::

    forward   xt[i, k] = (1/D) * sum_s x[i, s] * exp(-2*pi*J*s*k/D)
    inverse   x[i, s]  = sum_k xt[i, k] * exp(+2*pi*J*s*k/D)

so that ``||x||^2 == D * sum_k |xt[:, k]|^2`` and the zero-frequency
coefficient equals the average pool. With taps addressing ``x[j + l]`` the
convolution theorem reads ``dft(W*x)[:, k] = Wt(k) @ xt[:, k]`` where
``Wt(k)[i, j] = sum_l w[i, j, l] * exp(+2*pi*J*l*k/D)``.
"""

from __future__ import annotations

import numpy as np

from .tensor import ShapeError

__all__ = [
    "dft_forward",
    "dft_inverse",
    "spectral_kernel",
    "spectral_kernels",
    "lcnn_spectral_eval",
]

def _dft_matrix(D: int, sign: int) -> np.ndarray:
    s = np.arange(D)
    return np.exp(sign * 2j * np.pi * np.outer(s, s) / D)


def dft_forward(x, fast: bool = False) -> np.ndarray:
    """Forward transform along the last axis with the ``1/D`` factor."""
    x = np.asarray(x)
    D = x.shape[-1]
    if D < 1:
        raise ValueError("signal length must be >= 1")
    if fast:
        return np.fft.fft(x, axis=-1) / D
    return (x @ _dft_matrix(D, -1)) / D


def dft_inverse(xt, fast: bool = False, real: bool = True) -> np.ndarray:
    """Inverse of :func:`dft_forward`; drops the imaginary part when ``real``."""
    xt = np.asarray(xt, dtype=np.complex128)
    D = xt.shape[-1]
    if fast:
        out = np.fft.ifft(xt, axis=-1) * D
    else:
        out = xt @ _dft_matrix(D, +1)
    return out.real if real else out


def _tap_offsets(width: int) -> np.ndarray:
    if width % 2 == 0:
        raise ShapeError(f"kernel width must be odd, got {width}")
    s = (width - 1) // 2
    return np.arange(-s, s + 1)


def spectral_kernel(w, k: int, D: int) -> np.ndarray:
    """``Wt(k)``, the ``c_out x c_in`` complex matrix at frequency ``k``."""
    if not 0 <= k < D:
        raise IndexError(f"frequency {k} outside 0..{D - 1}")
    w = np.asarray(w, dtype=np.float64)
    phase = np.exp(2j * np.pi * _tap_offsets(w.shape[2]) * k / D)
    return w @ phase


def spectral_kernels(w, D: int) -> np.ndarray:
    """All ``D`` spectral kernels stacked as ``(D, c_out, c_in)``."""
    w = np.asarray(w, dtype=np.float64)
    offs = _tap_offsets(w.shape[2])
    phase = np.exp(2j * np.pi * np.outer(offs, np.arange(D)) / D)
    return np.moveaxis(w @ phase, -1, 0)


def lcnn_spectral_eval(layers, x) -> np.ndarray:
    """Evaluate ``W^L * ... * W^0 * x`` frequency by frequency."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError(f"expected a (c, D) feature map, got shape {x.shape}")
    D = x.shape[1]
    v = dft_forward(x).T[:, :, None]  # (D, c, 1)
    c = x.shape[0]
    for depth, w in enumerate(layers):
        w = np.asarray(w)
        if w.shape[1] != c:
            raise ShapeError(f"layer {depth} expects {w.shape[1]} channels, chain carries {c}")
        v = spectral_kernels(w, D) @ v
        c = w.shape[0]
    return dft_inverse(v[:, :, 0].T)
