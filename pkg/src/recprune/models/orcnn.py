"""One-hidden-layer ReLU circular CNN with average pooling and a frozen sign head.

Output for a ``(c, D)`` input::

    f(x) = scale * sum_r a_r * sum_k relu(<W_r, phi_k(x)>)

with ``scale = 1 / (sqrt(m) * D)`` for the dense network and
``scale = sqrt(q) / (sqrt(M) * D)`` for a network whose ``m`` filters were
cut down to ``M = q * m`` by structured pruning. The two agree at ``q = 1``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..tensor import ShapeError


@dataclass
class Orcnn:
    a: np.ndarray
    W: np.ndarray
    q: float = 1.0
    scale_mode: str = "dense"

    def __post_init__(self):
        self.a = np.asarray(self.a, dtype=np.float64)
        self.W = np.asarray(self.W, dtype=np.float64)
        if self.W.ndim != 3:
            raise ShapeError(f"W must be (m, c, 2s+1), got {self.W.shape}")
        if self.a.shape != (self.W.shape[0],):
            raise ShapeError(f"a has shape {self.a.shape}, expected ({self.W.shape[0]},)")
        if self.scale_mode not in ("dense", "pruned"):
            raise ValueError(f"unknown scale mode {self.scale_mode!r}")
        if not 0.0 < self.q <= 1.0:
            raise ValueError(f"retained fraction must lie in (0, 1], got {self.q}")

    @classmethod
    def random(cls, m: int, c: int, s: int, rng: np.random.Generator) -> "Orcnn":
        """Standard Gaussian filters and uniform random signs."""
        W = rng.standard_normal((m, c, 2 * s + 1))
        a = rng.choice(np.array([-1.0, 1.0]), size=m)
        return cls(a=a, W=W)

    @property
    def width(self) -> int:
        return self.W.shape[0]

    @property
    def half_width(self) -> int:
        return (self.W.shape[2] - 1) // 2

    def scale(self, D: int) -> float:
        if self.scale_mode == "dense":
            return 1.0 / (np.sqrt(self.width) * D)
        return np.sqrt(self.q) / (np.sqrt(self.width) * D)

    def copy(self) -> "Orcnn":
        return Orcnn(self.a.copy(), self.W.copy(), self.q, self.scale_mode)


def patch_stack(X, s: int) -> np.ndarray:
    """All windows ``phi_k(x_i)`` as an ``(n, D, c, 2s+1)`` array.

    ``X`` is ``(n, c, D)`` or a single ``(c, D)`` map.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 2:
        X = X[None]
    D = X.shape[-1]
    idx = (np.arange(D)[:, None] + np.arange(-s, s + 1)[None, :]) % D  # (D, 2s+1)
    # X[:, :, idx] -> (n, c, D, 2s+1)
    return np.moveaxis(X[:, :, idx], 2, 1)


def preactivations(W, patches) -> np.ndarray:
    """``<W_r, phi_k(x_i)>`` laid out as ``(M, n, D)``."""
    M = W.shape[0]
    n, D = patches.shape[:2]
    flat = patches.reshape(n * D, -1)
    return (W.reshape(M, -1) @ flat.T).reshape(M, n, D)


def _check_input(model: Orcnn, patches):
    if patches.shape[2:] != model.W.shape[1:]:
        raise ShapeError(f"patch shape {patches.shape[2:]} does not match filters {model.W.shape[1:]}")


def orcnn_outputs(model: Orcnn, patches) -> np.ndarray:
    """Network outputs for a precomputed patch stack, one per sample."""
    _check_input(model, patches)
    H = preactivations(model.W, patches)
    D = patches.shape[1]
    return model.scale(D) * np.einsum("r,rik->i", model.a, np.maximum(H, 0.0))


def orcnn_forward(model: Orcnn, x) -> float:
    """``f(x)`` for a single ``(c, D)`` input."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] != model.W.shape[1]:
        raise ShapeError(f"expected input with {model.W.shape[1]} channels, got shape {x.shape}")
    return float(orcnn_outputs(model, patch_stack(x, model.half_width))[0])


def orcnn_loss_and_grad(model: Orcnn, X, y, patches=None):
    """Squared loss ``0.5 * sum_i (f(x_i) - y_i)^2`` and its gradient in ``W``.

    The sign head ``a`` is frozen, so only the filter gradient is returned.
    ReLU's derivative at exactly zero is taken as 0.
    """
    y = np.asarray(y, dtype=np.float64)
    if patches is None:
        X = np.asarray(X, dtype=np.float64)
        if len(X) == 0:
            raise ValueError("empty dataset")
        patches = patch_stack(X, model.half_width)
    if patches.shape[0] == 0:
        raise ValueError("empty dataset")
    _check_input(model, patches)
    H = preactivations(model.W, patches)
    D = patches.shape[1]
    scale = model.scale(D)
    F = scale * np.einsum("r,rik->i", model.a, np.maximum(H, 0.0))
    resid = F - y
    active = (H > 0).astype(np.float64)
    # sum_i resid_i sum_k 1{H_rik > 0} phi_k(x_i)
    coeff = active * resid[None, :, None]
    n = patches.shape[0]
    grad = coeff.reshape(model.width, n * D) @ patches.reshape(n * D, -1)
    grad = (scale * model.a)[:, None] * grad
    loss = 0.5 * float(resid @ resid)
    return loss, grad.reshape(model.W.shape), F
