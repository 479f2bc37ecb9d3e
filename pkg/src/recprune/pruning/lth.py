"""Iterative pruning drivers: rewind-to-pretrained LTH and plain IMP.

Each round finetunes the masked encoder with the combined loss (decoder
frozen), prunes the smallest live weights globally, then either rewinds the
survivors to the pretrained values (``modified-lth``) or carries the
finetuned values forward (``imp``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from ..autoenc import LossWeights, TrainConfig, finetune
from .masks import PruneError, PruneMask, Ticket, global_magnitude_prune, ladder_sparsity

METHODS = ("modified-lth", "imp")


@dataclass
class LthConfig:
    rate: float = 0.2  # fraction of live weights removed per round
    rounds: int = 7
    method: str = "modified-lth"
    finetune: TrainConfig = field(default_factory=lambda: TrainConfig(epochs=1, lr=1e-3, clip_norm=10.0))
    weights: LossWeights = field(default_factory=LossWeights)

    @property
    def keep_rate(self) -> float:
        return float(1 - Fraction(str(self.rate)))

    def validate(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if not 0.0 < self.rate < 1.0:
            raise ValueError(f"per-round rate must lie in (0, 1), got {self.rate}")
        if self.rounds < 1:
            raise ValueError("need at least one round")


def target_zeros(total: int, rate: float, round_index: int) -> int:
    """``floor(total * (1 - (1 - rate)^i))`` computed in exact rationals."""
    keep = 1 - Fraction(str(rate))
    return math.floor(total * (1 - keep ** round_index))


@dataclass
class RoundLog:
    round: int
    sparsity: float
    realized_sparsity: float
    loss: float
    class_loss: float
    recon_loss: float
    matches_theta_pre: bool  # every surviving encoder weight equals its theta_pre value


@dataclass
class LthResult:
    tickets: list[Ticket]
    logs: list[RoundLog]
    trained: list[dict] = field(default_factory=list)  # masked weights just before each rewind


def run_lth(model, theta_pre: dict[str, np.ndarray], images, labels, cfg: LthConfig,
            rewind_ref: str = "theta_pre", mask: PruneMask | None = None, start_round: int = 1,
            keep_trained: bool = False) -> LthResult:
    """Run rounds ``start_round..cfg.rounds`` and return one ticket per round.

    ``theta_pre`` is a full model state; the model is loaded from it first,
    masked by ``mask`` if given. After the call the model holds the state the
    next round would start from.
    """
    cfg.validate()
    if theta_pre is None:
        raise PruneError("missing pretrained state theta_pre")
    model.load_state(theta_pre)
    mask = PruneMask.dense(model.encoder_weights()) if mask is None else mask.copy()
    mask.apply_(model.params)
    total = mask.total
    tickets, logs, trained = [], [], []
    for i in range(start_round, cfg.rounds + 1):
        ft = TrainConfig(**{**cfg.finetune.__dict__, "seed": cfg.finetune.seed * 1000 + i})
        curve = finetune(model, images, labels, ft, cfg.weights, mask)
        if keep_trained:
            trained.append(model.state())
        count = target_zeros(total, cfg.rate, i) - mask.zeros
        new = global_magnitude_prune(model.encoder_weights(), mask, cfg.rate, count=count)
        if cfg.method == "modified-lth":
            # theta <- theta_pre for every parameter the finetune touched
            for name in model.names("encoder") + model.names("head"):
                model.params[name] = np.array(theta_pre[name], dtype=np.float64, copy=True)
        new.apply_(model.params)
        if not new.is_nested_in(mask):
            raise PruneError(f"round {i}: mask is not nested in the previous one")
        mask = new
        same = all(np.array_equal(model.params[n][mask.bits[n]], np.asarray(theta_pre[n])[mask.bits[n]])
                   for n in mask.names)
        last = curve[-1] if curve else {"loss": float("nan"), "class_loss": float("nan"), "recon_loss": float("nan")}
        logs.append(RoundLog(i, ladder_sparsity(cfg.keep_rate, i), mask.sparsity,
                             float(last["loss"]), float(last["class_loss"]), float(last["recon_loss"]), same))
        tickets.append(Ticket(i, ladder_sparsity(cfg.keep_rate, i), mask.copy(), rewind_ref))
    return LthResult(tickets, logs, trained)


def modified_lth(model, theta_pre, images, labels, cfg: LthConfig, **kw) -> LthResult:
    cfg = LthConfig(**{**cfg.__dict__, "method": "modified-lth"})
    return run_lth(model, theta_pre, images, labels, cfg, **kw)


def imp(model, theta_pre, images, labels, cfg: LthConfig, **kw) -> LthResult:
    cfg = LthConfig(**{**cfg.__dict__, "method": "imp"})
    return run_lth(model, theta_pre, images, labels, cfg, **kw)
