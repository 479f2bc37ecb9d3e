"""Four-stage circular CNN encoder, a classifier head and a mirrored decoder.

Encoder stage ``i`` is ``conv3x3 -> ReLU -> 2x average pool`` and emits
``f_i``. The classifier pools ``f_4`` globally and applies a linear map.
The decoder takes ``f_4`` as its code::

    g_4 = ReLU(conv(f_4))                      # same shape as f_4
    g_i = ReLU(conv(up2(g'_{i+1})))  i = 3..1  # shape of f_i
    recon = conv(up2(g'_1))                    # shape of the input
    g'_i = (1 - t) g_i + t f_i   if stage i is hinted, else g_i

The raw input is never used as a hint. Encoder convolutions carry no bias;
decoder convolutions and the head do.
"""

from __future__ import annotations

import numpy as np

from . import layers as L

GROUPS = ("encoder", "head", "decoder")


def param_group(name: str) -> str:
    if name.startswith("enc"):
        return "encoder"
    if name.startswith("head"):
        return "head"
    if name.startswith("dec"):
        return "decoder"
    raise KeyError(name)


class MiniAutoencoder:
    def __init__(self, in_channels: int = 1, size: int = 32, channels=(8, 16, 32, 64),
                 n_classes: int = 4, kernel: int = 3, hint_stages=(3, 4), rng=None):
        if size % (2 ** len(channels)):
            raise ValueError(f"input size {size} not divisible by 2^{len(channels)}")
        for st in hint_stages:
            if not 1 <= st <= len(channels):
                raise ValueError(f"hint stage {st} outside 1..{len(channels)}")
        self.in_channels = in_channels
        self.size = size
        self.channels = tuple(channels)
        self.n_classes = n_classes
        self.kernel = kernel
        self.hint_stages = tuple(sorted(set(hint_stages)))
        self.frozen: set[str] = set()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.params: dict[str, np.ndarray] = {}
        self._init(rng)

    @property
    def n_stages(self) -> int:
        return len(self.channels)

    def _conv_init(self, rng, c_out, c_in, gain=2.0):
        std = np.sqrt(gain / (c_in * self.kernel * self.kernel))
        return rng.normal(0.0, std, size=(c_out, c_in, self.kernel, self.kernel))

    def _init(self, rng):
        widths = (self.in_channels,) + self.channels
        for i in range(1, self.n_stages + 1):
            self.params[f"enc{i}.w"] = self._conv_init(rng, widths[i], widths[i - 1])
        self.params["head.w"] = rng.normal(0.0, np.sqrt(1.0 / widths[-1]), size=(self.n_classes, widths[-1]))
        self.params["head.b"] = np.zeros(self.n_classes)
        top = self.n_stages
        self.params[f"dec{top}.w"] = self._conv_init(rng, widths[top], widths[top])
        self.params[f"dec{top}.b"] = np.zeros(widths[top])
        for i in range(top - 1, 0, -1):
            self.params[f"dec{i}.w"] = self._conv_init(rng, widths[i], widths[i + 1])
            self.params[f"dec{i}.b"] = np.zeros(widths[i])
        self.params["dec0.w"] = self._conv_init(rng, widths[0], widths[1], gain=1.0)
        self.params["dec0.b"] = np.zeros(widths[0])

    # parameter bookkeeping

    def names(self, group: str | None = None) -> list[str]:
        return sorted(n for n in self.params if group is None or param_group(n) == group)

    def encoder_weights(self) -> dict[str, np.ndarray]:
        """Prunable tensors: the encoder convolutions."""
        return {n: self.params[n] for n in self.names("encoder")}

    def state(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.params.items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for k, v in state.items():
            if k not in self.params:
                raise KeyError(f"unknown parameter {k!r}")
            if v.shape != self.params[k].shape:
                raise ValueError(f"shape mismatch for {k}: {v.shape} vs {self.params[k].shape}")
            self.params[k] = np.array(v, dtype=np.float64, copy=True)

    def freeze(self, *groups: str) -> None:
        for g in groups:
            if g not in GROUPS:
                raise KeyError(g)
        self.frozen.update(groups)

    def unfreeze(self, *groups: str) -> None:
        self.frozen.difference_update(groups)

    def trainable(self, name: str) -> bool:
        return param_group(name) not in self.frozen

    # encoder

    def encode(self, x):
        feats, cache = [], []
        h = np.asarray(x, dtype=np.float64)
        for i in range(1, self.n_stages + 1):
            z, cols = L.conv_forward(self.params[f"enc{i}.w"], h)
            r, active = L.relu_forward(z)
            h = L.pool2_forward(r)
            feats.append(h)
            cache.append((cols, active))
        return feats, cache

    def encode_backward(self, dfeats, cache):
        """Accumulate encoder weight gradients from gradients on each ``f_i``."""
        grads = {}
        carry = None
        for i in range(self.n_stages, 0, -1):
            df = dfeats[i - 1]
            if carry is not None:
                df = carry if df is None else df + carry
            if df is None:
                carry = None
                continue
            cols, active = cache[i - 1]
            dz = L.relu_backward(L.pool2_backward(df), active)
            dw, _, dx = L.conv_backward(dz, self.params[f"enc{i}.w"], cols, need_dx=i > 1)
            grads[f"enc{i}.w"] = dw
            carry = dx
        for i in range(1, self.n_stages + 1):
            grads.setdefault(f"enc{i}.w", np.zeros_like(self.params[f"enc{i}.w"]))
        return grads

    # classifier head

    def classify(self, top):
        z = L.gap_forward(top)
        return L.linear_forward(self.params["head.w"], self.params["head.b"], z), (z, top.shape)

    def classify_backward(self, dlogits, cache):
        z, shape = cache
        dw, db, dz = L.linear_backward(dlogits, self.params["head.w"], z)
        return {"head.w": dw, "head.b": db}, L.gap_backward(dz, shape)

    # decoder

    def decode(self, feats, hint_t: float = 0.0, hint_stages=None):
        if not 0.0 <= hint_t <= 1.0:
            raise ValueError(f"hint proportion must lie in [0, 1], got {hint_t}")
        stages = self.hint_stages if hint_stages is None else tuple(hint_stages)
        top = self.n_stages
        cache = {"t": hint_t, "stages": stages}
        h = feats[top - 1]
        gs = {}
        for i in range(top, 0, -1):
            if i < top:
                h = L.upsample_forward(h)
            z, cols = L.conv_forward(self.params[f"dec{i}.w"], h, self.params[f"dec{i}.b"])
            g, active = L.relu_forward(z)
            cache[i] = (cols, active)
            if i in stages:
                f = feats[i - 1]
                if f.shape != g.shape:
                    raise ValueError(f"hint stage {i}: feature {f.shape} vs decoder {g.shape}")
                g = (1.0 - hint_t) * g + hint_t * f
            gs[i] = g
            h = g
        u = L.upsample_forward(h)
        recon, cols = L.conv_forward(self.params["dec0.w"], u, self.params["dec0.b"])
        cache[0] = cols
        cache["mixed"] = gs
        return recon, cache

    def decode_backward(self, drecon, cache, param_grads: bool = True):
        """Gradients w.r.t. decoder parameters (optional) and each ``f_i``."""
        top = self.n_stages
        t, stages = cache["t"], cache["stages"]
        grads = {}
        dfeats: list = [None] * top
        dw, db, du = L.conv_backward(drecon, self.params["dec0.w"], cache[0], need_dw=param_grads)
        if param_grads:
            grads["dec0.w"], grads["dec0.b"] = dw, db
        dh = L.upsample_backward(du)
        for i in range(1, top + 1):
            if i in stages:
                dfeats[i - 1] = t * dh
                dg = (1.0 - t) * dh
            else:
                dg = dh
            cols, active = cache[i]
            dz = L.relu_backward(dg, active)
            dw, db, dh_in = L.conv_backward(dz, self.params[f"dec{i}.w"], cols, need_dw=param_grads)
            if param_grads:
                grads[f"dec{i}.w"], grads[f"dec{i}.b"] = dw, db
            dh = dh_in if i == top else L.upsample_backward(dh_in)
        dfeats[top - 1] = dh if dfeats[top - 1] is None else dfeats[top - 1] + dh
        return grads, dfeats

    def forward(self, x, hint_t: float = 0.0):
        feats, _ = self.encode(x)
        logits, _ = self.classify(feats[-1])
        recon, _ = self.decode(feats, hint_t)
        return logits, recon, feats
