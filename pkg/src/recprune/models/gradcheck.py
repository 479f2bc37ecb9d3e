"""Central-difference gradient checking with ReLU-kink filtering."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class GradCheckResult:
    max_rel_error: float
    per_param: dict[str, float] = field(default_factory=dict)
    checked: int = 0
    skipped: int = 0


def _rel(a, b, floor):
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), floor))


def grad_check(params: dict, loss_fn, epsilon: float = 1e-6, names=None, samples: int = 12,
               rng=None, kink_tol: float = 1e-3, floor: float = 1e-10) -> GradCheckResult:
    """Compare ``loss_fn``'s analytic gradients with central differences.

    ``loss_fn(params) -> (loss, grads)`` is evaluated on ``params`` mutated in
    place. For each checked tensor, ``samples`` entries are perturbed. An
    entry is skipped as sitting on a kink when its forward and backward
    one-sided slopes disagree by more than ``kink_tol`` relative; away from
    kinks they agree to ``O(epsilon)``. Errors are vector-relative per tensor.
    """
    if not 1e-7 <= epsilon <= 1e-3:
        raise ValueError(f"epsilon {epsilon} outside [1e-7, 1e-3]")
    rng = rng if rng is not None else np.random.default_rng(0)
    loss0, grads = loss_fn(params)
    if not np.isfinite(loss0):
        raise ValueError("loss is not finite")
    names = sorted(grads) if names is None else list(names)
    result = GradCheckResult(0.0)
    for name in names:
        p = params[name]
        flat = p.reshape(-1)
        g = np.asarray(grads[name]).reshape(-1)
        k = min(samples, flat.size)
        idx = rng.choice(flat.size, size=k, replace=False)
        analytic, numeric = [], []
        for j in idx:
            orig = flat[j]
            flat[j] = orig + epsilon
            up = loss_fn(params)[0]
            flat[j] = orig - epsilon
            down = loss_fn(params)[0]
            flat[j] = orig
            if not (np.isfinite(up) and np.isfinite(down)):
                raise ValueError(f"loss became non-finite perturbing {name}[{j}]")
            fwd, bwd = (up - loss0) / epsilon, (loss0 - down) / epsilon
            scale = max(abs(fwd), abs(bwd), 1e-6)
            if abs(fwd - bwd) > kink_tol * scale and abs(fwd - bwd) > 1e-6:
                result.skipped += 1
                continue
            analytic.append(g[j])
            numeric.append((up - down) / (2 * epsilon))
            result.checked += 1
        if analytic:
            err = _rel(np.array(analytic), np.array(numeric), floor)
            result.per_param[name] = err
            result.max_rel_error = max(result.max_rel_error, err)
    return result
