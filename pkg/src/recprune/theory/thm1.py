"""Kernel-sum pruning of random linear CNNs: pooled vs feature-map damage.

Pruning the kernels whose tap sums are closest to zero barely moves the
zero-frequency (pooled) response but removes a fixed share of every other
frequency. The pooled relative change should scale like ``p**1.5`` and the
full-map relative change like ``p**0.5``; this module measures both slopes.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from ..data.rng import stream
from ..models.lcnn import Lcnn, lcnn_forward
from ..parallel import run_trials
from ..pruning.masks import kernel_sum_cut, kernel_sum_prune
from ..tensor import avg_pool

P_UPPER = 0.11

POOLED_SLOPE_RANGE = (1.3, 1.7)
MAP_SLOPE_RANGE = (0.35, 0.65)


@dataclass
class Thm1Config:
    n_layers: int = 3
    width: int = 64
    in_channels: int = 64
    s: int = 2
    D: int = 64
    init_std: float = 1.0
    n_inputs: int = 4
    p_grid: tuple[float, ...] = (0.01, 0.02, 0.03, 0.04, 0.05, 0.06, 0.07, 0.08, 0.09, 0.10)
    seeds: int = 20

    def validate(self):
        for p in self.p_grid:
            if not 0.0 < p < P_UPPER:
                raise ValueError(f"p={p} outside the supported range (0, {P_UPPER})")
        if self.n_layers < 1 or self.width < 1 or self.D < 1 or self.seeds < 1:
            raise ValueError("n_layers, width, D and seeds must be positive")
        if self.init_std <= 0:
            raise ValueError("init_std must be positive")


@dataclass
class ScalingPoint:
    seed: int
    p: float
    pooled_ratio: float
    map_ratio: float
    cut: float


@dataclass
class ScalingReport:
    points: list[ScalingPoint]
    pooled_slope: float
    pooled_intercept: float
    map_slope: float
    map_intercept: float
    seeds: list[int]
    config: dict = field(default_factory=dict)

    @property
    def pooled_ok(self) -> bool:
        lo, hi = POOLED_SLOPE_RANGE
        return lo <= self.pooled_slope <= hi

    @property
    def map_ok(self) -> bool:
        lo, hi = MAP_SLOPE_RANGE
        return lo <= self.map_slope <= hi

    def mean_curve(self, column: str) -> tuple[np.ndarray, np.ndarray]:
        ps = np.array(sorted({pt.p for pt in self.points}))
        vals = np.array([np.mean([getattr(pt, column) for pt in self.points if pt.p == p]) for p in ps])
        return ps, vals

    def monotone(self, column: str) -> bool:
        return bool(np.all(np.diff(self.mean_curve(column)[1]) >= 0))


def pruning_ratios(model: Lcnn, X, p: float):
    """Relative pooled and full-map change after kernel-sum pruning every layer."""
    pruned = Lcnn([kernel_sum_prune(w, p)[0] for w in model.layers], model.init_std)
    out = lcnn_forward(model, X)
    out_p = lcnn_forward(pruned, X)
    pooled, pooled_p = avg_pool(out), avg_pool(out_p)
    pooled_ratio = np.linalg.norm(pooled - pooled_p) / np.linalg.norm(pooled)
    map_ratio = np.linalg.norm(out - out_p) / np.linalg.norm(out)
    return float(pooled_ratio), float(map_ratio)


def _trial(cfg: Thm1Config, seed: int) -> list[ScalingPoint]:
    rng = stream("thm1", seed)
    widths = [cfg.in_channels] + [cfg.width] * cfg.n_layers
    model = Lcnn.random(widths, cfg.s, cfg.init_std, rng)
    X = rng.normal(size=(cfg.n_inputs, cfg.in_channels, cfg.D))
    points = []
    for p in cfg.p_grid:
        pooled, fmap = pruning_ratios(model, X, p)
        points.append(ScalingPoint(seed, p, pooled, fmap, kernel_sum_cut(model.layers[0], p)))
    return points


def loglog_fit(ps, values) -> tuple[float, float]:
    """Least-squares line through ``(log p, log value)``; returns (slope, intercept)."""
    slope, intercept = np.polyfit(np.log(ps), np.log(values), 1)
    return float(slope), float(intercept)


def theorem1_experiment(cfg: Thm1Config, threads: int = 1, seed_offset: int = 0) -> ScalingReport:
    cfg.validate()
    seeds = list(range(seed_offset, seed_offset + cfg.seeds))
    results = run_trials(lambda s: _trial(cfg, s), seeds, threads)
    points = [pt for _, pts in results for pt in pts]
    ps = np.array([pt.p for pt in points])
    pooled_slope, pooled_icpt = loglog_fit(ps, [pt.pooled_ratio for pt in points])
    map_slope, map_icpt = loglog_fit(ps, [pt.map_ratio for pt in points])
    return ScalingReport(points, pooled_slope, pooled_icpt, map_slope, map_icpt, seeds, asdict(cfg))
