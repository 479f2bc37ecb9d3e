"""Masks, tickets and the three pruning criteria."""

from __future__ import annotations

import math
from fractions import Fraction
from dataclasses import dataclass, field

import numpy as np

from ..models.orcnn import Orcnn


class PruneError(ValueError):
    """A pruning request cannot be honoured."""


@dataclass
class PruneMask:
    """Per-group keep bits (``True`` = live weight)."""

    bits: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def dense(cls, params: dict[str, np.ndarray]) -> "PruneMask":
        return cls({name: np.ones(np.shape(w), dtype=bool) for name, w in params.items()})

    @property
    def names(self) -> list[str]:
        return sorted(self.bits)

    @property
    def total(self) -> int:
        return sum(int(b.size) for b in self.bits.values())

    @property
    def zeros(self) -> int:
        return sum(int(b.size - np.count_nonzero(b)) for b in self.bits.values())

    @property
    def live(self) -> int:
        return self.total - self.zeros

    @property
    def sparsity(self) -> float:
        return self.zeros / self.total if self.total else 0.0

    def apply(self, params: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
        """Return copies of ``params`` with masked entries set to exactly zero."""
        out = dict(params)
        for name, b in self.bits.items():
            out[name] = np.where(b, params[name], 0.0)
        return out

    def apply_(self, params: dict[str, np.ndarray]) -> None:
        for name, b in self.bits.items():
            params[name][~b] = 0.0

    def is_nested_in(self, other: "PruneMask") -> bool:
        """True when every weight pruned by ``other`` is pruned here too."""
        if set(self.bits) != set(other.bits):
            return False
        return all(not np.any(self.bits[k] & ~other.bits[k]) for k in self.bits)

    def copy(self) -> "PruneMask":
        return PruneMask({k: v.copy() for k, v in self.bits.items()})

    def __eq__(self, other) -> bool:
        if not isinstance(other, PruneMask) or set(self.bits) != set(other.bits):
            return False
        return all(np.array_equal(self.bits[k], other.bits[k]) for k in self.bits)


@dataclass
class Ticket:
    round: int
    sparsity: float
    mask: PruneMask
    rewind_ref: str

    @property
    def realized_sparsity(self) -> float:
        return self.mask.sparsity


def ladder_sparsity(keep_rate: float, round_index: int) -> float:
    """Nominal cumulative sparsity ``1 - r**i`` after ``i`` rounds, correctly rounded."""
    if round_index < 0:
        raise ValueError("round index must be non-negative")
    return float(1 - Fraction(str(keep_rate)) ** round_index)


# whole kernels by |sum of taps| (linear CNN sweep)


def kernel_sum_prune(W, p: float):
    """Zero the ``floor(p * c_out * c_in)`` kernels with the smallest ``|sum_s w|``.

    Ties are broken in row-major ``(i, j)`` order. Returns the pruned copy and
    the number of kernels removed.
    """
    if not 0.0 <= p < 1.0:
        raise PruneError(f"pruning fraction must lie in [0, 1), got {p}")
    W = np.asarray(W, dtype=np.float64)
    sums = np.abs(W.sum(axis=2)).ravel()
    count = math.floor(p * sums.size)
    out = W.copy()
    if count:
        order = np.argsort(sums, kind="stable")[:count]
        flat = out.reshape(-1, W.shape[2])
        flat[order] = 0.0
    return out, count


def kernel_sum_cut(W, p: float) -> float:
    """Largest ``|sum_s w|`` among the kernels :func:`kernel_sum_prune` removes."""
    sums = np.sort(np.abs(np.asarray(W).sum(axis=2)).ravel())
    count = math.floor(p * sums.size)
    return float(sums[count - 1]) if count else 0.0


# Algorithm-1 style: global unstructured magnitude


def global_magnitude_prune(params: dict[str, np.ndarray], mask: PruneMask, p: float,
                           count: int | None = None) -> PruneMask:
    """Prune the smallest-magnitude live weights, pooled across all groups.

    By default ``floor(p * live)`` weights go; ``count`` overrides that number
    (drivers use it to track a cumulative sparsity target). Groups are pooled
    in name order, flattened row-major; equal magnitudes fall in that order.
    """
    if set(params) != set(mask.bits):
        raise PruneError("mask groups do not match parameter groups")
    names = mask.names
    for name in names:
        if np.shape(params[name]) != mask.bits[name].shape:
            raise PruneError(f"mask for {name!r} has the wrong shape")
    live = mask.live
    if live == 0:
        raise PruneError("every weight is already masked")
    if count is None:
        if not 0.0 < p < 1.0:
            raise PruneError(f"pruning fraction must lie in (0, 1), got {p}")
        count = math.floor(p * live)
    if count <= 0:
        raise PruneError(f"pruning round would remove no weights (live={live}, p={p})")
    if count > live:
        raise PruneError(f"cannot prune {count} of {live} live weights")

    mags = np.concatenate([np.abs(np.asarray(params[n], dtype=np.float64)).ravel() for n in names])
    keep = np.concatenate([mask.bits[n].ravel() for n in names])
    live_idx = np.flatnonzero(keep)
    order = np.argsort(mags[live_idx], kind="stable")
    keep = keep.copy()
    keep[live_idx[order[:count]]] = False

    out, start = {}, 0
    for n in names:
        size = mask.bits[n].size
        out[n] = keep[start:start + size].reshape(mask.bits[n].shape)
        start += size
    return PruneMask(out)


# whole filters of the one-hidden-layer network


def retained_width(m: int, p: float) -> int:
    M = m * (1.0 - p)
    if abs(M - round(M)) > 1e-9 or round(M) < 1:
        raise PruneError(f"m * (1 - p) = {M} is not a positive integer")
    return int(round(M))


def select_filters(W, p: float, criterion: str = "norm", rng: np.random.Generator | None = None) -> np.ndarray:
    """Indices of the filters that survive, in ascending order."""
    m = W.shape[0]
    M = retained_width(m, p)
    if criterion == "norm":
        norms = np.linalg.norm(np.asarray(W).reshape(m, -1), axis=1)
        removed = np.argsort(norms, kind="stable")[: m - M]
    elif criterion == "random":
        if rng is None:
            raise PruneError("random filter selection needs a generator")
        removed = rng.permutation(m)[: m - M]
    else:
        raise PruneError(f"unknown filter criterion {criterion!r}")
    keep = np.ones(m, dtype=bool)
    keep[removed] = False
    return np.flatnonzero(keep)


def structured_filter_prune(model: Orcnn, p: float, criterion: str = "norm",
                            rng: np.random.Generator | None = None, kept=None) -> Orcnn:
    """Drop whole filters and their output signs, keeping ``M = m (1 - p)``.

    The result uses the pruned output scale ``sqrt(q) / (sqrt(M) D)``.
    ``kept`` bypasses the criterion with an explicit survivor list.
    """
    if kept is None:
        kept = select_filters(model.W, p, criterion, rng)
    else:
        kept = np.asarray(kept)
        if len(kept) != retained_width(model.width, p):
            raise PruneError("explicit survivor list has the wrong length")
    return Orcnn(a=model.a[kept].copy(), W=model.W[kept].copy(), q=1.0 - p, scale_mode="pruned")
