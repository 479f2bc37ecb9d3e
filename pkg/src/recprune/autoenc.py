"""Training stages around the mini autoencoder.

* pretraining of encoder + classifier (the "original model"),
* decoder training against a frozen encoder with feature-map hints,
* the combined classification + reconstruction finetune used in every
  pruning round, with the decoder frozen and an optional encoder mask.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

import numpy as np

from .data.rng import stream
from .models import layers as L
from .models.autoencoder import MiniAutoencoder


class TrainingError(RuntimeError):
    pass


@dataclass
class LossWeights:
    lam: float = 10.0
    hint_t: float = 0.1
    hint_stages: tuple[int, ...] = (3, 4)

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError(f"reconstruction weight must be >= 0, got {self.lam}")
        if not 0.0 <= self.hint_t <= 1.0:
            raise ValueError(f"hint proportion must lie in [0, 1], got {self.hint_t}")
        self.hint_stages = tuple(sorted(set(self.hint_stages)))


@dataclass
class TrainConfig:
    epochs: int = 5
    batch_size: int = 64
    lr: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 0.0
    milestones: tuple[float, ...] = ()  # fractions of ``epochs`` where lr drops
    gamma: float = 0.1
    clip_norm: float | None = None  # global gradient-norm clip over trainable tensors
    seed: int = 0

    def lr_at(self, epoch: int) -> float:
        drops = sum(epoch >= math.ceil(m * self.epochs) for m in self.milestones)
        return self.lr * self.gamma ** drops


class SGD:
    """Momentum SGD over a model's trainable groups, honouring an encoder mask."""

    def __init__(self, model: MiniAutoencoder, cfg: TrainConfig, mask=None):
        self.model = model
        self.cfg = cfg
        self.mask = mask
        self.velocity = {}

    def step(self, grads: dict[str, np.ndarray], epoch: int) -> None:
        lr = self.cfg.lr_at(epoch)
        params = self.model.params
        names = [n for n in sorted(grads) if self.model.trainable(n)]
        factor = 1.0
        if self.cfg.clip_norm is not None:
            norm = math.sqrt(sum(float(np.sum(grads[n] * grads[n])) for n in names))
            if norm > self.cfg.clip_norm:
                factor = self.cfg.clip_norm / norm
        for name in names:
            g = grads[name] * factor if factor != 1.0 else grads[name]
            if self.cfg.weight_decay:
                g = g + self.cfg.weight_decay * params[name]
            if self.mask is not None and name in self.mask.bits:
                g = np.where(self.mask.bits[name], g, 0.0)
            v = self.velocity.get(name)
            v = g if v is None else self.cfg.momentum * v + g
            self.velocity[name] = v
            params[name] = params[name] - lr * v
            if self.mask is not None and name in self.mask.bits:
                params[name][~self.mask.bits[name]] = 0.0


def group_digest(model: MiniAutoencoder, group: str) -> str:
    h = hashlib.sha256()
    for name in model.names(group):
        h.update(name.encode())
        h.update(np.ascontiguousarray(model.params[name]).tobytes())
    return h.hexdigest()


def batches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


# losses


def recon_loss(model: MiniAutoencoder, x, hint_t: float = 0.1, hint_stages=None) -> float:
    """Mean over the batch of the squared reconstruction error."""
    x = np.asarray(x, dtype=np.float64)
    if len(x) == 0:
        raise ValueError("empty batch")
    feats, _ = model.encode(x)
    recon, _ = model.decode(feats, hint_t, hint_stages)
    return L.sum_squared_error(recon, x)[0]


def classification_loss(model: MiniAutoencoder, x, labels) -> float:
    feats, _ = model.encode(np.asarray(x, dtype=np.float64))
    logits, _ = model.classify(feats[-1])
    return L.cross_entropy(logits, np.asarray(labels))[0]


def combined_loss(model: MiniAutoencoder, x, labels, weights: LossWeights) -> float:
    """Cross-entropy plus ``lam`` times the reconstruction loss."""
    if labels is None:
        raise ValueError("combined loss needs class labels")
    return combined_loss_and_grads(model, x, labels, weights, grads=False)[0]


def combined_loss_and_grads(model: MiniAutoencoder, x, labels, weights: LossWeights, grads: bool = True):
    """Return ``(total, class_loss, recon_loss, grads)``.

    Gradients are produced for trainable groups only; a frozen decoder still
    passes gradients through to the encoder.
    """
    x = np.asarray(x, dtype=np.float64)
    labels = np.asarray(labels)
    feats, enc_cache = model.encode(x)
    logits, head_cache = model.classify(feats[-1])
    ce, dlogits = L.cross_entropy(logits, labels)
    rec = 0.0
    use_rec = weights.lam > 0
    if use_rec:
        recon, dec_cache = model.decode(feats, weights.hint_t, weights.hint_stages)
        rec, drecon = L.sum_squared_error(recon, x)
    total = ce + weights.lam * rec
    if not grads:
        return total, ce, rec, None

    out = {}
    head_grads, dtop = model.classify_backward(dlogits, head_cache)
    if model.trainable("head.w"):
        out.update(head_grads)
    dfeats = [None] * model.n_stages
    dfeats[-1] = dtop
    if use_rec:
        dec_grads, dhint = model.decode_backward(weights.lam * drecon, dec_cache,
                                                 param_grads="decoder" not in model.frozen)
        out.update(dec_grads)
        for i, d in enumerate(dhint):
            if d is not None:
                dfeats[i] = d if dfeats[i] is None else dfeats[i] + d
    if "encoder" not in model.frozen:
        out.update(model.encode_backward(dfeats, enc_cache))
    return total, ce, rec, out


def mean_image_baseline(images) -> float:
    """Reconstruction loss of always predicting the per-pixel dataset mean."""
    images = np.asarray(images, dtype=np.float64)
    return L.sum_squared_error(np.broadcast_to(images.mean(axis=0), images.shape), images)[0]


# training loops


def _check_finite(value, what):
    if not np.isfinite(value):
        raise TrainingError(f"{what} became non-finite")


def pretrain_classifier(model: MiniAutoencoder, images, labels, cfg: TrainConfig) -> list[float]:
    """Train encoder and head on cross-entropy; the decoder is left untouched."""
    saved = set(model.frozen)
    model.frozen = {"decoder"}
    opt = SGD(model, cfg)
    rng = stream("pretrain", cfg.seed)
    weights = LossWeights(lam=0.0, hint_t=0.0, hint_stages=())
    curve = []
    try:
        for epoch in range(cfg.epochs):
            total = 0.0
            for idx in batches(len(images), cfg.batch_size, rng):
                loss, _, _, grads = combined_loss_and_grads(model, images[idx], labels[idx], weights)
                _check_finite(loss, "classification loss")
                opt.step(grads, epoch)
                total += loss * len(idx)
            curve.append(total / len(images))
    finally:
        model.frozen = saved
    return curve


def train_decoder(model: MiniAutoencoder, images, cfg: TrainConfig, hint_t: float = 0.1,
                  hint_stages=None) -> list[float]:
    """Fit the decoder to reconstruct ``images`` while encoder and head stay frozen."""
    saved = set(model.frozen)
    model.frozen = {"encoder", "head"}
    before = group_digest(model, "encoder")
    opt = SGD(model, cfg)
    rng = stream("decoder", cfg.seed)
    curve = []
    try:
        for epoch in range(cfg.epochs):
            total = 0.0
            for idx in batches(len(images), cfg.batch_size, rng):
                x = images[idx]
                feats, _ = model.encode(x)
                recon, cache = model.decode(feats, hint_t, hint_stages)
                loss, drecon = L.sum_squared_error(recon, x)
                _check_finite(loss, "reconstruction loss")
                grads, _ = model.decode_backward(drecon, cache)
                opt.step(grads, epoch)
                total += loss * len(idx)
            curve.append(total / len(images))
    finally:
        model.frozen = saved
    if group_digest(model, "encoder") != before:
        raise TrainingError("encoder changed during decoder training")
    return curve


def finetune(model: MiniAutoencoder, images, labels, cfg: TrainConfig, weights: LossWeights,
             mask=None, stream_name: str = "finetune") -> list[dict]:
    """Combined-loss training of encoder and head with the decoder frozen.

    ``mask`` (a :class:`~recprune.pruning.PruneMask` over encoder weights) is
    enforced after every step, so pruned weights stay exactly zero.
    """
    saved = set(model.frozen)
    model.frozen = {"decoder"}
    if mask is not None:
        mask.apply_(model.params)
    opt = SGD(model, cfg, mask)
    rng = stream(stream_name, cfg.seed)
    curve = []
    try:
        for epoch in range(cfg.epochs):
            sums = np.zeros(3)
            for idx in batches(len(images), cfg.batch_size, rng):
                total, ce, rec, grads = combined_loss_and_grads(model, images[idx], labels[idx], weights)
                _check_finite(total, "combined loss")
                opt.step(grads, epoch)
                sums += np.array([total, ce, rec]) * len(idx)
            sums /= len(images)
            curve.append({"epoch": epoch, "loss": sums[0], "class_loss": sums[1], "recon_loss": sums[2]})
    finally:
        model.frozen = saved
    return curve


def predict(model: MiniAutoencoder, images, batch_size: int = 256):
    out = []
    for start in range(0, len(images), batch_size):
        feats, _ = model.encode(images[start:start + batch_size])
        out.append(model.classify(feats[-1])[0])
    return np.concatenate(out)


def top_features(model: MiniAutoencoder, images, batch_size: int = 256) -> np.ndarray:
    """Final encoder feature maps ``f_4`` for a set of images."""
    out = []
    for start in range(0, len(images), batch_size):
        feats, _ = model.encode(images[start:start + batch_size])
        out.append(feats[-1])
    return np.concatenate(out)


def eval_losses(model: MiniAutoencoder, images, labels, weights: LossWeights, batch_size: int = 256) -> dict:
    sums = np.zeros(3)
    for start in range(0, len(images), batch_size):
        sl = slice(start, start + batch_size)
        total, ce, rec, _ = combined_loss_and_grads(model, images[sl], labels[sl], weights, grads=False)
        if weights.lam == 0:
            rec = recon_loss(model, images[sl], weights.hint_t, weights.hint_stages)
        sums += np.array([total, ce, rec]) * len(images[sl])
    sums /= len(images)
    return {"loss": sums[0], "class_loss": sums[1], "recon_loss": sums[2]}
