"""Downstream probes for tickets: image classification and pixel labelling.

A ticket's encoder starts from ``theta_pre * mask`` with a freshly drawn
head. The mask stays fixed during the short finetune; the ``frozen`` probe
additionally freezes the encoder so only the head learns.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autoenc import SGD, LossWeights, TrainConfig, batches, finetune, predict, top_features
from .data.rng import stream
from .models import layers as L
from .models.autoencoder import MiniAutoencoder

PROBES = ("mask-fixed", "frozen")
TASKS = ("class", "pixel")


@dataclass
class TransferConfig:
    tasks: tuple[str, ...] = TASKS
    probe: str = "mask-fixed"
    n_train: int = 1000
    n_test: int = 250
    # the pixel task runs on larger images so f_4 keeps a usable grid (4x4 at 64 px)
    pixel_size: int = 64
    pixel_scale: tuple[float, float] = (0.2, 0.4)
    optim: TrainConfig = field(default_factory=lambda: TrainConfig(epochs=4, lr=0.05, batch_size=32, clip_norm=5.0))

    def validate(self):
        if self.probe not in PROBES:
            raise ValueError(f"unknown probe {self.probe!r}; expected one of {PROBES}")
        for t in self.tasks:
            if t not in TASKS:
                raise ValueError(f"unknown transfer task {t!r}; expected one of {TASKS}")


def ticket_model(template: MiniAutoencoder, theta_pre: dict, mask, n_classes: int, seed: int,
                 size: int | None = None) -> MiniAutoencoder:
    """Copy of ``template``'s architecture holding ``theta_pre * mask`` and a new head.

    The convolutions do not depend on the image size, so ``size`` may differ
    from the upstream one.
    """
    model = MiniAutoencoder(template.in_channels, size or template.size, template.channels, n_classes,
                            template.kernel, template.hint_stages, rng=stream("transfer/head", seed))
    fresh_head = {k: model.params[k] for k in model.names("head")}
    model.load_state({k: v for k, v in theta_pre.items() if k in model.params and not k.startswith("head")})
    model.params.update(fresh_head)
    if mask is not None:
        mask.apply_(model.params)
    return model


def accuracy(logits, labels) -> float:
    return float(np.mean(np.argmax(logits, axis=1) == labels))


def transfer_classification(model: MiniAutoencoder, mask, train, test, cfg: TransferConfig) -> float:
    weights = LossWeights(lam=0.0, hint_t=0.0, hint_stages=())
    if cfg.probe == "frozen":
        _train_head_only(model, train, cfg)
    else:
        finetune(model, train.inputs, train.labels, cfg.optim, weights, mask, stream_name="transfer/class")
    return accuracy(predict(model, test.inputs), test.labels)


def _train_head_only(model, train, cfg):
    saved = set(model.frozen)
    model.frozen = {"encoder", "decoder"}
    opt = SGD(model, cfg.optim)
    rng = stream("transfer/class-probe", cfg.optim.seed)
    feats = top_features(model, train.inputs)
    try:
        for epoch in range(cfg.optim.epochs):
            for idx in batches(len(feats), cfg.optim.batch_size, rng):
                logits, cache = model.classify(feats[idx])
                _, dlogits = L.cross_entropy(logits, train.labels[idx])
                grads, _ = model.classify_backward(dlogits, cache)
                opt.step(grads, epoch)
    finally:
        model.frozen = saved


# pixel labelling: 1x1 conv on f_4, nearest upsample to input size


def _seg_init(model: MiniAutoencoder, n_labels: int, seed: int):
    rng = stream("transfer/seg-head", seed)
    c = model.channels[-1]
    model.params["head_seg.w"] = rng.normal(0.0, np.sqrt(1.0 / c), size=(n_labels, c, 1, 1))
    model.params["head_seg.b"] = np.zeros(n_labels)


def _seg_forward(model, x):
    feats, enc_cache = model.encode(x)
    z, cols = L.conv_forward(model.params["head_seg.w"], feats[-1], model.params["head_seg.b"])
    factor = x.shape[-1] // z.shape[-1]
    return L.upsample_forward(z, factor), (enc_cache, cols, factor)


def _seg_backward(model, dlogits, cache):
    enc_cache, cols, factor = cache
    dz = L.upsample_backward(dlogits, factor)
    need_enc = model.trainable("enc1.w")
    dw, db, df = L.conv_backward(dz, model.params["head_seg.w"], cols, need_dx=need_enc)
    grads = {"head_seg.w": dw, "head_seg.b": db}
    if need_enc:
        dfeats = [None] * model.n_stages
        dfeats[-1] = df
        grads.update(model.encode_backward(dfeats, enc_cache))
    return grads


def seg_loss_and_grads(model, x, labels):
    logits, cache = _seg_forward(model, x)
    loss, dlogits = L.pixel_cross_entropy(logits, labels)
    return loss, _seg_backward(model, dlogits, cache)


def transfer_pixel(model: MiniAutoencoder, mask, train, test, cfg: TransferConfig, n_labels: int) -> float:
    """Pixel accuracy on ``test`` after a fixed-budget finetune on ``train``."""
    _seg_init(model, n_labels, cfg.optim.seed)
    saved = set(model.frozen)
    model.frozen = {"decoder"} | ({"encoder"} if cfg.probe == "frozen" else set())
    if mask is not None:
        mask.apply_(model.params)
    opt = SGD(model, cfg.optim, mask)
    rng = stream("transfer/pixel", cfg.optim.seed)
    try:
        for epoch in range(cfg.optim.epochs):
            for idx in batches(len(train), cfg.optim.batch_size, rng):
                _, grads = seg_loss_and_grads(model, train.inputs[idx], train.labels[idx])
                opt.step(grads, epoch)
    finally:
        model.frozen = saved
    correct = 0
    for start in range(0, len(test), 256):
        logits, _ = _seg_forward(model, test.inputs[start:start + 256])
        correct += int(np.sum(np.argmax(logits, axis=1) == test.labels[start:start + 256]))
    return correct / test.labels.size
