"""Structured pruning then rewind-and-finetune of the ReLU CNN.

Pipeline per seed: draw ``W(0) ~ N(0, 1)`` and signs ``a``; train ``W`` by
gradient descent to ``W_pre``; drop a fraction ``p`` of filters; reset the
survivors to their ``W(0)`` values; finetune to ``W_fin``; compare ``W_fin``
against ``W_pre`` with the rotation-invariant distance. In the lazy regime the
distance tracks ``(1-p)^(-1/4) - (1-p)^(1/4)``, which is at least ``p/2``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from ..data.rng import stream
from ..data.synthetic import gen_dataset
from ..models.orcnn import Orcnn, patch_stack
from ..parallel import run_trials
from ..pruning.masks import select_filters, structured_filter_prune
from .ntk import (
    closed_form_distance,
    gram_empirical,
    gram_infty,
    lambda0,
    min_rotation_distance,
    train_orcnn_gd,
)

REL_TOL = 0.25
ZERO_P_TOL = 1e-2


@dataclass
class Thm2Config:
    m: int = 2048
    c: int = 4
    s: int = 2
    n: int = 8
    labels: str = "sign"
    p_grid: tuple[float, ...] = (0.2, 0.36, 0.5)
    seeds: int = 10
    eta_factor: float = 0.25
    iterations: int = 5000
    stop_loss: float = 1e-10
    criterion: str = "random"

    def validate(self):
        if self.m < 1 or self.n < 1 or self.c < 1 or self.seeds < 1:
            raise ValueError("m, n, c and seeds must be positive")
        if not 0 < self.eta_factor <= 0.5:
            raise ValueError("eta_factor must lie in (0, 0.5] (eta <= 0.5 lambda0 / n^2)")
        for p in self.p_grid:
            if not 0.0 <= p < 1.0:
                raise ValueError(f"pruning rate {p} outside [0, 1)")
            if round(self.m * (1 - p)) < 1:
                raise ValueError(f"p={p} leaves no filters at m={self.m}")
        if self.criterion not in ("random", "norm"):
            raise ValueError(f"unknown criterion {self.criterion!r}")


@dataclass
class Thm2Record:
    seed: int
    p: float
    p_eff: float
    m: int
    M: int
    lambda0: float
    lambda_min_g0: float
    eta: float
    loss_initial: float
    loss_final: float
    steps: int
    max_movement: float
    movement_bound: float
    envelope_ok: bool
    movement_ok: bool
    grad_ok: bool
    distance: float
    bound: float
    closed_form: float

    @property
    def rel_err(self) -> float:
        if self.closed_form == 0:
            return 0.0 if self.distance == 0 else float("inf")
        return abs(self.distance - self.closed_form) / self.closed_form

    @property
    def bound_ok(self) -> bool:
        if self.p == 0:
            return self.distance < ZERO_P_TOL
        return self.distance >= self.bound

    @property
    def closed_form_ok(self) -> bool:
        return self.p == 0 or self.rel_err <= REL_TOL

    def row(self) -> dict:
        d = asdict(self)
        d.update(rel_err=self.rel_err, bound_ok=self.bound_ok, closed_form_ok=self.closed_form_ok)
        return d


@dataclass
class Thm2Report:
    records: list[Thm2Record]
    pretrain: list[dict] = field(default_factory=list)
    config: dict = field(default_factory=dict)

    def by_p(self, p: float) -> list[Thm2Record]:
        return [r for r in self.records if r.p == p]

    def bound_fraction(self, p: float) -> float:
        rows = self.by_p(p)
        return sum(r.bound_ok for r in rows) / len(rows)

    def closed_form_fraction(self, p: float) -> float:
        rows = self.by_p(p)
        return sum(r.closed_form_ok for r in rows) / len(rows)

    @property
    def dynamics_ok(self) -> bool:
        fin = all(r.envelope_ok and r.movement_ok and r.grad_ok for r in self.records)
        pre = all(d["envelope_ok"] and d["movement_ok"] and d["grad_ok"] for d in self.pretrain)
        return fin and pre

    def passed(self, min_fraction: float = 0.9) -> bool:
        ps = sorted({r.p for r in self.records})
        return self.dynamics_ok and all(
            self.bound_fraction(p) >= min_fraction and self.closed_form_fraction(p) >= min_fraction for p in ps
        )


def _seed_trial(cfg: Thm2Config, seed: int):
    data = gen_dataset("orcnn-normalized", {"n": cfg.n, "c": cfg.c, "s": cfg.s, "labels": cfg.labels}, seed)
    patches = patch_stack(data.inputs, cfg.s)
    y = data.labels
    lam0_full = lambda0(gram_infty(patches, 1.0))
    rng = stream("thm2/init", seed)
    init = Orcnn.random(cfg.m, cfg.c, cfg.s, rng)

    pre = init.copy()
    eta_pre = cfg.eta_factor * lam0_full / cfg.n ** 2
    trace_pre = train_orcnn_gd(pre, patches, y, eta_pre, cfg.iterations, lam0_full, cfg.stop_loss)
    pre_info = {
        "seed": seed,
        "lambda0": lam0_full,
        "eta": eta_pre,
        "loss_initial": trace_pre.losses[0],
        "loss_final": trace_pre.losses[-1],
        "steps": trace_pre.steps,
        "envelope_ok": trace_pre.envelope_ok,
        "movement_ok": trace_pre.movement_ok,
        "grad_ok": trace_pre.grad_ok,
    }

    records = []
    for idx, p in enumerate(cfg.p_grid):
        M = int(round(cfg.m * (1 - p)))
        p_eff = 1.0 - M / cfg.m
        kept = select_filters(pre.W, p_eff, cfg.criterion, stream("thm2/prune", seed, idx))
        # survivors restart from their initial values, not from W_pre
        model = structured_filter_prune(init, p_eff, kept=kept)
        lam0_q = model.q * lam0_full  # G_inf scales linearly with q
        lam_g0 = float(np.linalg.eigvalsh(gram_empirical(model, patches))[0])
        eta = cfg.eta_factor * lam0_q / cfg.n ** 2
        trace = train_orcnn_gd(model, patches, y, eta, cfg.iterations, lam0_q, cfg.stop_loss)
        records.append(Thm2Record(
            seed=seed, p=p, p_eff=p_eff, m=cfg.m, M=M,
            lambda0=lam0_q, lambda_min_g0=lam_g0, eta=eta,
            loss_initial=trace.losses[0], loss_final=trace.losses[-1], steps=trace.steps,
            max_movement=max(trace.movement), movement_bound=trace.movement_cap,
            envelope_ok=trace.envelope_ok, movement_ok=trace.movement_ok, grad_ok=trace.grad_ok,
            distance=min_rotation_distance(model.W, pre.W),
            bound=p / 2.0, closed_form=closed_form_distance(p_eff),
        ))
    return pre_info, records


def theorem2_experiment(cfg: Thm2Config, threads: int = 1, seed_offset: int = 0) -> Thm2Report:
    cfg.validate()
    seeds = range(seed_offset, seed_offset + cfg.seeds)
    results = run_trials(lambda s: _seed_trial(cfg, s), seeds, threads)
    pretrain = [info for _, (info, _) in results]
    records = [rec for _, (_, recs) in results for rec in recs]
    records.sort(key=lambda r: (r.seed, r.p))
    return Thm2Report(records, pretrain, asdict(cfg))


@dataclass
class GramTrials:
    lambda0: float
    lambda_min: list[float]
    threshold: float

    @property
    def successes(self) -> int:
        return sum(v >= self.threshold for v in self.lambda_min)


def g0_eigen_trials(M: int = 4096, trials: int = 20, n: int = 8, c: int = 4, s: int = 2,
                    data_seed: int = 0, ratio: float = 0.75) -> GramTrials:
    """Least eigenvalue of the initial Gram matrix over independent filter draws."""
    data = gen_dataset("orcnn-normalized", {"n": n, "c": c, "s": s}, data_seed)
    patches = patch_stack(data.inputs, s)
    lam = lambda0(gram_infty(patches))
    mins = []
    for t in range(trials):
        model = Orcnn.random(M, c, s, stream("gram-trials", data_seed, t))
        mins.append(float(np.linalg.eigvalsh(gram_empirical(model, patches))[0]))
    return GramTrials(lam, mins, ratio * lam)
