"""End-to-end pipeline: pretrain, decoder, iterative pruning, transfer.

``prepare_upstream`` trains the original classifier and the hinted decoder
once per seed; ``run_pipeline`` then runs an LTH or IMP schedule with a given
reconstruction weight and evaluates tickets. ``universal_ticket_study``
compares reconstruction weights at one sparsity over several seeds, and
``ablate_hints`` reruns the pipeline for different hint-stage sets.
"""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, field, replace

import numpy as np

from .autoenc import (
    LossWeights,
    TrainConfig,
    eval_losses,
    finetune,
    mean_image_baseline,
    predict,
    pretrain_classifier,
    top_features,
    train_decoder,
)
from .data.rng import stream
from .data.synthetic import DOWNSTREAM_CLASSES, UPSTREAM_CLASSES, gen_dataset, split
from .models.autoencoder import MiniAutoencoder
from .pruning.lth import LthConfig, run_lth
from .tensor import normalized_l2_distance
from .transfer import TransferConfig, accuracy, ticket_model, transfer_classification, transfer_pixel


@dataclass
class DataConfig:
    n_train: int = 2000
    n_test: int = 500
    size: int = 32
    channels: int = 1
    noise: float = 0.05


@dataclass
class StudyConfig:
    data: DataConfig = field(default_factory=DataConfig)
    channels: tuple[int, ...] = (8, 16, 32, 64)
    hint_stages: tuple[int, ...] = (3, 4)
    pretrain: TrainConfig = field(default_factory=lambda: TrainConfig(
        epochs=12, lr=0.1, batch_size=32, clip_norm=5.0, milestones=(0.7,)))
    decoder: TrainConfig = field(default_factory=lambda: TrainConfig(
        epochs=6, lr=3e-3, batch_size=32, clip_norm=10.0, milestones=(0.5, 0.8)))
    lth: LthConfig = field(default_factory=LthConfig)
    transfer: TransferConfig = field(default_factory=TransferConfig)
    eval_rounds: tuple[int, ...] | None = None  # None: every round

    def validate(self):
        self.lth.validate()
        self.transfer.validate()
        if self.eval_rounds is not None:
            for r in self.eval_rounds:
                if not 1 <= r <= self.lth.rounds:
                    raise ValueError(f"eval round {r} outside 1..{self.lth.rounds}")


def data_seed(seed: int, role: str) -> int:
    return zlib.crc32(f"{role}:{seed}".encode())


@dataclass
class Upstream:
    seed: int
    model: MiniAutoencoder
    theta_pre: dict
    train: object
    test: object
    curves: list[dict]
    baseline: float


def load_upstream_data(cfg: StudyConfig, seed: int):
    d = cfg.data
    ds = gen_dataset("toy-class", {"n": d.n_train + d.n_test, "size": d.size, "channels": d.channels,
                                   "noise": d.noise, "classes": UPSTREAM_CLASSES}, data_seed(seed, "upstream"))
    return split(ds, d.n_test)


def prepare_upstream(cfg: StudyConfig, seed: int, hint_stages=None) -> Upstream:
    """Original classifier (encoder + head) and its hinted decoder for one seed."""
    stages = cfg.hint_stages if hint_stages is None else tuple(hint_stages)
    train, test = load_upstream_data(cfg, seed)
    model = MiniAutoencoder(cfg.data.channels, cfg.data.size, cfg.channels, len(UPSTREAM_CLASSES),
                            hint_stages=stages, rng=stream("model/init", seed))
    pre = pretrain_classifier(model, train.inputs, train.labels, replace(cfg.pretrain, seed=seed))
    dec = train_decoder(model, train.inputs, replace(cfg.decoder, seed=seed), cfg.lth.weights.hint_t, stages)
    curves = [{"stage": "pretrain", "epoch": i, "loss": v, "class_loss": v, "recon_loss": ""} for i, v in enumerate(pre)]
    curves += [{"stage": "decoder", "epoch": i, "loss": v, "class_loss": "", "recon_loss": v} for i, v in enumerate(dec)]
    return Upstream(seed, model, model.state(), train, test, curves, mean_image_baseline(train.inputs))


def load_downstream(cfg: StudyConfig, seed: int):
    d, t = cfg.data, cfg.transfer
    common = {"n": t.n_train + t.n_test, "size": d.size, "channels": d.channels, "noise": d.noise,
              "classes": DOWNSTREAM_CLASSES}
    out = {}
    if "class" in t.tasks:
        out["class"] = split(gen_dataset("toy-class", common, data_seed(seed, "downstream-class")), t.n_test)
    if "pixel" in t.tasks:
        pix = {**common, "size": t.pixel_size, "scale": tuple(t.pixel_scale)}
        out["pixel"] = split(gen_dataset("toy-pixel", pix, data_seed(seed, "downstream-pixel")), t.n_test)
    return out


@dataclass
class PipelineResult:
    seed: int
    method: str
    lam: float
    rows: list[dict]
    rounds: list[dict]
    curves: list[dict]
    tickets: list


def _feature_distance(model, images, dense_feats) -> float:
    return normalized_l2_distance(top_features(model, images), dense_feats)


def run_pipeline(cfg: StudyConfig, seed: int, method: str | None = None, lam: float | None = None,
                 upstream: Upstream | None = None, hint_stages=None) -> PipelineResult:
    cfg.validate()
    stages = cfg.hint_stages if hint_stages is None else tuple(hint_stages)
    weights = LossWeights(cfg.lth.weights.lam if lam is None else lam, cfg.lth.weights.hint_t, stages)
    lth_cfg = replace(cfg.lth, method=method or cfg.lth.method, weights=weights,
                      finetune=replace(cfg.lth.finetune, seed=seed))
    up = upstream if upstream is not None else prepare_upstream(cfg, seed, stages)
    model = MiniAutoencoder(up.model.in_channels, up.model.size, up.model.channels, up.model.n_classes,
                            hint_stages=stages)
    result = run_lth(model, up.theta_pre, up.train.inputs, up.train.labels, lth_cfg)

    dense = MiniAutoencoder(up.model.in_channels, up.model.size, up.model.channels, up.model.n_classes,
                            hint_stages=stages)
    dense.load_state(up.theta_pre)
    dense_feats = top_features(dense, up.test.inputs)
    down = load_downstream(cfg, seed)
    wanted = set(range(1, lth_cfg.rounds + 1)) if cfg.eval_rounds is None else set(cfg.eval_rounds)

    rows = []
    for ticket in result.tickets:
        if ticket.round not in wanted:
            continue
        # the ticket itself: theta_pre on the surviving weights
        raw = MiniAutoencoder(up.model.in_channels, up.model.size, up.model.channels, up.model.n_classes,
                              hint_stages=stages)
        raw.load_state(up.theta_pre)
        ticket.mask.apply_(raw.params)
        dist_ticket = _feature_distance(raw, up.test.inputs, dense_feats)
        # the pruned model: ticket trained once more under the same strategy
        trained = replace(lth_cfg.finetune, seed=lth_cfg.finetune.seed * 1000 + 999)
        finetune(raw, up.train.inputs, up.train.labels, trained, weights, ticket.mask, stream_name="ticket-train")
        losses = eval_losses(raw, up.test.inputs, up.test.labels, weights)
        row = {
            "round": ticket.round,
            "sparsity": ticket.sparsity,
            "realized_sparsity": ticket.realized_sparsity,
            "upstream_loss": losses["loss"],
            "upstream_acc": accuracy(predict(raw, up.test.inputs), up.test.labels),
            "feature_distance": _feature_distance(raw, up.test.inputs, dense_feats),
            "feature_distance_ticket": dist_ticket,
            "downstream_class_acc": "",
            "downstream_pixel_acc": "",
        }
        topt = replace(cfg.transfer, optim=replace(cfg.transfer.optim, seed=seed))
        if "class" in down:
            tr, te = down["class"]
            tm = ticket_model(up.model, up.theta_pre, ticket.mask, len(DOWNSTREAM_CLASSES), seed)
            row["downstream_class_acc"] = transfer_classification(tm, ticket.mask, tr, te, topt)
        if "pixel" in down:
            tr, te = down["pixel"]
            tm = ticket_model(up.model, up.theta_pre, ticket.mask, len(DOWNSTREAM_CLASSES), seed,
                              size=cfg.transfer.pixel_size)
            row["downstream_pixel_acc"] = transfer_pixel(tm, ticket.mask, tr, te, topt, len(DOWNSTREAM_CLASSES) + 1)
        rows.append(row)
    rounds = [vars(log).copy() for log in result.logs]
    return PipelineResult(seed, lth_cfg.method, weights.lam, rows, rounds, list(up.curves), result.tickets)


# universal-ticket comparison


def sign_test(wins: int, losses: int) -> float:
    """One-sided sign-test p-value for ``wins`` out of ``wins + losses`` (ties dropped)."""
    n = wins + losses
    if n == 0:
        return 1.0
    return sum(math.comb(n, k) for k in range(wins, n + 1)) / 2 ** n


@dataclass
class StudyReport:
    round: int
    sparsity: float
    lambdas: tuple[float, float]
    per_seed: list[dict]

    def mean(self, key: str, lam: float) -> float:
        return float(np.mean([r[key] for r in self.per_seed if r["lambda"] == lam]))

    def paired(self, key: str):
        lo, hi = self.lambdas
        by = {}
        for r in self.per_seed:
            by.setdefault(r["seed"], {})[r["lambda"]] = r[key]
        return [(v[lo], v[hi]) for _, v in sorted(by.items())]

    @property
    def distance_ok(self) -> bool:
        lo, hi = self.lambdas
        return self.mean("feature_distance", hi) < self.mean("feature_distance", lo)

    @property
    def pixel_ok(self) -> bool:
        lo, hi = self.lambdas
        return self.mean("downstream_pixel_acc", hi) >= self.mean("downstream_pixel_acc", lo)

    @property
    def pixel_sign_p(self) -> float:
        pairs = self.paired("downstream_pixel_acc")
        wins = sum(b > a for a, b in pairs)
        losses = sum(b < a for a, b in pairs)
        return sign_test(wins, losses)

    def summary(self) -> dict:
        lo, hi = self.lambdas
        return {
            "round": self.round, "sparsity": self.sparsity, "lambda_low": lo, "lambda_high": hi,
            "seeds": sorted({r["seed"] for r in self.per_seed}),
            "feature_distance": {str(lo): self.mean("feature_distance", lo), str(hi): self.mean("feature_distance", hi)},
            "downstream_pixel_acc": {str(lo): self.mean("downstream_pixel_acc", lo),
                                     str(hi): self.mean("downstream_pixel_acc", hi)},
            "distance_ok": self.distance_ok, "pixel_ok": self.pixel_ok, "pixel_sign_test_p": self.pixel_sign_p,
        }


def universal_ticket_study(cfg: StudyConfig, seeds, lambdas=(0.0, 10.0), round_index: int = 7,
                           method: str = "modified-lth") -> StudyReport:
    cfg = replace(cfg, lth=replace(cfg.lth, rounds=round_index), eval_rounds=(round_index,),
                  transfer=replace(cfg.transfer, tasks=("pixel",)))
    per_seed = []
    sparsity = None
    for seed in seeds:
        up = prepare_upstream(cfg, seed)
        for lam in lambdas:
            res = run_pipeline(cfg, seed, method, lam, upstream=up)
            row = res.rows[0]
            sparsity = row["sparsity"]
            per_seed.append({"seed": seed, "lambda": lam, **row})
    return StudyReport(round_index, sparsity, tuple(lambdas), per_seed)


# hint-stage ablation


def stage_label(stages) -> str:
    return "-".join(map(str, sorted(stages))) or "none"


def ablate_hints(cfg: StudyConfig, stage_sets=((), (4,), (3, 4), (2, 3, 4), (1, 2, 3, 4)), seeds=(0,)) -> list[dict]:
    """Rerun decoder training and the pruning pipeline for each hint-stage set.

    Reports the mean train reconstruction loss after decoder training, the
    mean downstream pixel accuracy of the last ticket and its feature
    distance; ``best`` marks the set with the highest pixel accuracy.
    """
    last = cfg.lth.rounds
    cfg = replace(cfg, eval_rounds=(last,), transfer=replace(cfg.transfer, tasks=("pixel",)))
    rows = []
    for stages in stage_sets:
        rec, acc, dist = [], [], []
        for seed in seeds:
            up = prepare_upstream(cfg, seed, stages)
            probe = LossWeights(0.0, cfg.lth.weights.hint_t, stages)
            rec.append(eval_losses(up.model, up.train.inputs, up.train.labels, probe)["recon_loss"])
            res = run_pipeline(cfg, seed, upstream=up, hint_stages=stages)
            acc.append(res.rows[0]["downstream_pixel_acc"])
            dist.append(res.rows[0]["feature_distance"])
        rows.append({"stages": stage_label(stages), "recon_loss": float(np.mean(rec)),
                     "downstream_pixel_acc": float(np.mean(acc)), "feature_distance": float(np.mean(dist)),
                     "best": False})
    best = max(range(len(rows)), key=lambda i: rows[i]["downstream_pixel_acc"])
    rows[best]["best"] = True
    return rows
