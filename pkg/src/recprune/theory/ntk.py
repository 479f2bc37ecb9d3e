"""Gram matrices, least eigenvalues and gradient-descent dynamics of the ReLU CNN."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..models.orcnn import Orcnn, orcnn_loss_and_grad, preactivations


class DegenerateDataset(ValueError):
    """The infinite-width Gram matrix is not positive definite."""


class TrainingDiverged(RuntimeError):
    pass


def _windowed_sums(active, patches):
    # Z[r, i] = sum_k 1{...} phi_k(x_i), flattened per filter/sample
    n, D = patches.shape[:2]
    return np.einsum("rik,ikf->rif", active, patches.reshape(n, D, -1))


def gram_empirical(model: Orcnn, patches) -> np.ndarray:
    """``G_ij = q/(M D^2) sum_r sum_{k,l} <phi_k(x_i), phi_l(x_j)> 1{..>=0} 1{..>=0}``."""
    H = preactivations(model.W, patches)
    Z = _windowed_sums((H >= 0).astype(np.float64), patches)
    D = patches.shape[1]
    M = model.width
    Zf = Z.transpose(1, 0, 2).reshape(Z.shape[1], -1)
    G = (model.q / (M * D * D)) * (Zf @ Zf.T)
    # the product is symmetric in exact arithmetic; make it so bitwise
    return np.triu(G) + np.triu(G, 1).T


def gram_infty(patches, q: float = 1.0, exact: bool = True) -> np.ndarray:
    """Expectation of :func:`gram_empirical` over standard Gaussian filters.

    Uses ``E[1{w.u>=0} 1{w.v>=0}] = (pi - theta) / (2 pi)`` with ``theta`` the
    angle between ``u`` and ``v``. In exact mode every patch must have unit
    norm; otherwise cosines are formed from the recorded norms.
    """
    patches = np.asarray(patches, dtype=np.float64)
    n, D = patches.shape[:2]
    U = patches.reshape(n * D, -1)
    inner = U @ U.T
    if exact:
        if np.max(np.abs(inner)) > 1.0 + 1e-9:
            raise ValueError("patch inner product exceeds 1; patches are not unit-norm")
        cos = np.clip(inner, -1.0, 1.0)
    else:
        norms = np.linalg.norm(U, axis=1)
        denom = np.outer(norms, norms)
        with np.errstate(invalid="ignore", divide="ignore"):
            cos = np.where(denom > 0, inner / np.where(denom > 0, denom, 1.0), 0.0)
        cos = np.clip(cos, -1.0, 1.0)
    K = inner * (np.pi - np.arccos(cos)) / (2 * np.pi)
    G = (q / (D * D)) * K.reshape(n, D, n, D).sum(axis=(1, 3))
    return np.triu(G) + np.triu(G, 1).T


def patch_norm_ratio(patches) -> float:
    """``max ||phi_k(x_i)|| / min ||phi_k(x_i)||``, the constant general-D bounds pick up."""
    norms = np.linalg.norm(np.asarray(patches).reshape(-1, np.prod(patches.shape[2:])), axis=1)
    return float(norms.max() / norms.min())


def lambda0(G, tol: float | None = None) -> float:
    """Least eigenvalue of a symmetric Gram matrix; rejects non-positive values.

    By default anything below ``1e-12 * max|G|`` counts as zero, since a
    rank-deficient matrix's smallest eigenvalue comes out as rounding noise
    of either sign.
    """
    G = np.asarray(G, dtype=np.float64)
    if not np.allclose(G, G.T, rtol=0, atol=1e-12):
        raise ValueError("Gram matrix is not symmetric")
    if tol is None:
        tol = 1e-12 * float(np.max(np.abs(G)))
    lam = float(np.linalg.eigvalsh(G)[0])
    if lam <= tol:
        raise DegenerateDataset(f"least eigenvalue {lam:.3e} is not positive")
    return lam


def min_rotation_distance(A, B) -> float:
    """Minimum over orthogonal ``Q`` of the normalized distance between ``QA`` and ``B``.

    Orthogonal maps act transitively on spheres, so the minimum is
    ``|‖A‖ - ‖B‖| / sqrt(‖A‖ ‖B‖)``. Operands with fewer filters are
    zero-embedded along the first axis (norm-preserving).
    """
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    if A.shape[1:] != B.shape[1:]:
        raise ValueError(f"filter shapes differ: {A.shape[1:]} vs {B.shape[1:]}")
    if A.shape[0] < B.shape[0]:
        A = np.concatenate([A, np.zeros((B.shape[0] - A.shape[0],) + A.shape[1:])])
    elif B.shape[0] < A.shape[0]:
        B = np.concatenate([B, np.zeros((A.shape[0] - B.shape[0],) + B.shape[1:])])
    na, nb = np.linalg.norm(A), np.linalg.norm(B)
    if na == 0 or nb == 0:
        raise ValueError("rotation distance undefined for a zero-norm operand")
    return float(abs(na - nb) / np.sqrt(na * nb))


def closed_form_distance(p: float) -> float:
    """Lazy-regime prediction ``(1-p)^(-1/4) - (1-p)^(1/4)``."""
    q = 1.0 - p
    return q ** -0.25 - q ** 0.25


def movement_bound(q: float, n: int, M: int, lam0: float, init_residual: float) -> float:
    """Per-filter drift cap ``4 sqrt(q n) / (sqrt(M) lam0) * ||F(W(0)) - y||``."""
    return 4.0 * np.sqrt(q * n) / (np.sqrt(M) * lam0) * init_residual


def grad_bound(q: float, n: int, M: int, residual: float) -> float:
    """Per-filter gradient cap ``sqrt(q n) / sqrt(M) * ||F - y||``."""
    return np.sqrt(q * n) / np.sqrt(M) * residual


@dataclass
class GDTrace:
    losses: list[float] = field(default_factory=list)  # ||F(W(t)) - y||^2
    movement: list[float] = field(default_factory=list)  # max_r ||W_r(t) - W_r(0)||
    grad_ratio: list[float] = field(default_factory=list)  # max_r ||dL/dW_r|| / bound
    eta: float = 0.0
    lam0: float = 0.0
    movement_cap: float = 0.0
    steps: int = 0

    def envelope(self) -> np.ndarray:
        t = np.arange(len(self.losses))
        return (1.0 - self.eta * self.lam0 / 2.0) ** t * self.losses[0]

    @property
    def envelope_ok(self) -> bool:
        # relative slack covers rounding in the recorded losses only
        return bool(np.all(np.asarray(self.losses) <= self.envelope() * (1 + 1e-9) + 1e-15))

    @property
    def movement_ok(self) -> bool:
        return bool(np.all(np.asarray(self.movement) <= self.movement_cap))

    @property
    def grad_ok(self) -> bool:
        return bool(np.all(np.asarray(self.grad_ratio) <= 1.0 + 1e-12))

    @property
    def strictly_decreasing(self) -> bool:
        return bool(np.all(np.diff(self.losses) < 0))


def train_orcnn_gd(model: Orcnn, patches, y, eta: float, iterations: int, lam0: float,
                   stop_loss: float = 1e-10) -> GDTrace:
    """Full-batch gradient descent on ``W`` with ``a`` frozen; mutates ``model``.

    Records the squared residual, the largest per-filter drift from the start,
    and the largest per-filter gradient norm relative to its analytic cap.
    """
    y = np.asarray(y, dtype=np.float64)
    n = len(y)
    M = model.width
    W0 = model.W.copy()
    trace = GDTrace(eta=eta, lam0=lam0)

    loss, grad, F = orcnn_loss_and_grad(model, None, y, patches=patches)
    r0 = float(np.linalg.norm(F - y))
    trace.movement_cap = movement_bound(model.q, n, M, lam0, r0)

    def record(loss, grad, residual):
        trace.losses.append(2.0 * loss)
        trace.movement.append(float(np.max(np.linalg.norm((model.W - W0).reshape(M, -1), axis=1))))
        cap = grad_bound(model.q, n, M, residual)
        gmax = float(np.max(np.linalg.norm(grad.reshape(M, -1), axis=1)))
        trace.grad_ratio.append(gmax / cap if cap > 0 else (0.0 if gmax == 0 else np.inf))

    record(loss, grad, r0)
    for t in range(1, iterations + 1):
        if 2.0 * loss < stop_loss:
            break
        model.W = model.W - eta * grad
        prev = loss
        loss, grad, F = orcnn_loss_and_grad(model, None, y, patches=patches)
        if not np.isfinite(loss) or loss > prev * (1 + 1e-9) + 1e-15:
            raise TrainingDiverged(f"loss rose from {2 * prev:.6g} to {2 * loss:.6g} at step {t}")
        trace.steps = t
        record(loss, grad, float(np.linalg.norm(F - y)))
    return trace
