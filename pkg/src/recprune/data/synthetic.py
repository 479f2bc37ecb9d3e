"""Seeded synthetic datasets.

``orcnn-normalized``
    1D signals ``(n, c, D)`` with ``D = 2s + 1`` and unit Frobenius norm, so
    every circular window ``phi_k(x_i)`` (a column rotation of the whole
    signal) has norm exactly 1. Labels are random signs or Gaussian reals.
``toy-class`` / ``toy-pixel`` / ``toy-denoise``
    Square images holding one filled parametric shape on a noisy background.
    ``toy-class`` labels the shape class, ``toy-pixel`` gives a per-pixel map
    (0 = background, ``1 + class`` on the shape), ``toy-denoise`` pairs a
    heavily noised image with its clean rendering.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .rng import stream

SHAPES = ("square", "circle", "triangle", "cross", "hbar", "vbar", "ring", "diamond")
UPSTREAM_CLASSES = ("square", "circle", "triangle", "cross")
DOWNSTREAM_CLASSES = ("hbar", "vbar", "ring", "diamond")

KINDS = ("orcnn-normalized", "toy-class", "toy-pixel", "toy-denoise")


@dataclass
class Dataset:
    inputs: np.ndarray
    labels: np.ndarray
    task: str  # classification | regression | pixel | denoise
    provenance: dict = field(default_factory=dict)
    meta: list = field(default_factory=list)

    def __post_init__(self):
        if len(self.inputs) != len(self.labels):
            raise ValueError(f"{len(self.inputs)} inputs but {len(self.labels)} labels")

    def __len__(self) -> int:
        return len(self.inputs)

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        meta = [self.meta[i] for i in idx] if self.meta else []
        return Dataset(self.inputs[idx], self.labels[idx], self.task, dict(self.provenance), meta)


def shape_mask(shape: str, cx: float, cy: float, h: float, size: int) -> np.ndarray:
    """Boolean ``(size, size)`` coverage of pixel centres by a shape."""
    coords = np.arange(size) + 0.5
    py, px = np.meshgrid(coords, coords, indexing="ij")
    dx, dy = px - cx, py - cy
    adx, ady = np.abs(dx), np.abs(dy)
    t = h / 3.0
    if shape == "square":
        return (adx <= h) & (ady <= h)
    if shape == "circle":
        return dx * dx + dy * dy <= h * h
    if shape == "ring":
        r2 = dx * dx + dy * dy
        return (r2 <= h * h) & (r2 >= (0.5 * h) ** 2)
    if shape == "diamond":
        return adx + ady <= h
    if shape == "cross":
        return ((adx <= t) & (ady <= h)) | ((ady <= t) & (adx <= h))
    if shape == "hbar":
        return (adx <= h) & (ady <= t)
    if shape == "vbar":
        return (adx <= t) & (ady <= h)
    if shape == "triangle":
        # apex up at (cx, cy - h), base from (cx - h, cy + h) to (cx + h, cy + h)
        return (dy <= h) & (2.0 * adx <= dy + h)
    raise ValueError(f"unknown shape {shape!r}")


def _render(classes, n, size, channels, noise, rng, scale=(0.15, 0.3)):
    images = np.empty((n, channels, size, size))
    masks = np.empty((n, size, size), dtype=bool)
    labels = np.empty(n, dtype=np.int64)
    meta = []
    for i in range(n):
        label = int(rng.integers(len(classes)))
        h = float(rng.uniform(scale[0] * size, scale[1] * size))
        cx = float(rng.uniform(h + 1, size - h - 1))
        cy = float(rng.uniform(h + 1, size - h - 1))
        intensity = rng.uniform(0.5, 1.0, size=channels)
        m = shape_mask(classes[label], cx, cy, h, size)
        images[i] = intensity[:, None, None] * m[None] + noise * rng.standard_normal((channels, size, size))
        masks[i] = m
        labels[i] = label
        meta.append({"shape": classes[label], "cx": cx, "cy": cy, "h": h})
    return images, masks, labels, meta


def gen_dataset(kind: str, cfg: dict | None = None, seed: int = 0) -> Dataset:
    """Build a dataset that is a pure function of ``(kind, cfg, seed)``."""
    cfg = dict(cfg or {})
    if kind not in KINDS:
        raise ValueError(f"unknown dataset kind {kind!r}; expected one of {KINDS}")
    rng = stream(f"dataset/{kind}", seed)
    provenance = {"generator": kind, "seed": seed, "cfg": dict(cfg)}

    if kind == "orcnn-normalized":
        n = int(cfg.pop("n", 8))
        c = int(cfg.pop("c", 4))
        s = int(cfg.pop("s", 2))
        label_kind = cfg.pop("labels", "sign")
        if cfg:
            raise ValueError(f"unknown keys for {kind}: {sorted(cfg)}")
        if n < 1 or c < 1 or s < 0:
            raise ValueError("need n >= 1, c >= 1, s >= 0")
        D = 2 * s + 1
        X = rng.standard_normal((n, c, D))
        X /= np.linalg.norm(X, axis=(1, 2), keepdims=True)
        if label_kind == "sign":
            y = rng.choice(np.array([-1.0, 1.0]), size=n)
        elif label_kind == "real":
            y = rng.standard_normal(n)
        else:
            raise ValueError(f"unknown label kind {label_kind!r}")
        return Dataset(X, y, "regression", provenance)

    n = int(cfg.pop("n", 2000))
    size = int(cfg.pop("size", 32))
    channels = int(cfg.pop("channels", 1))
    classes = tuple(cfg.pop("classes", UPSTREAM_CLASSES))
    noise = float(cfg.pop("noise", 0.2 if kind == "toy-denoise" else 0.05))
    scale = tuple(float(v) for v in cfg.pop("scale", (0.15, 0.3)))
    if cfg:
        raise ValueError(f"unknown keys for {kind}: {sorted(cfg)}")
    if n < 0 or size < 4 or channels < 1 or not classes:
        raise ValueError("invalid toy image configuration")
    # half-size h as a fraction of the image; the shape must fit with a 1-pixel margin
    if len(scale) != 2 or not 0 < scale[0] <= scale[1] or scale[1] * size >= size / 2 - 1:
        raise ValueError(f"shape scale {scale} must satisfy 0 < lo <= hi < 1/2 - 1/size")
    for c in classes:
        if c not in SHAPES:
            raise ValueError(f"unknown shape {c!r}")

    if kind == "toy-denoise":
        images, _, _, meta = _render(classes, n, size, channels, 0.0, rng, scale)
        noisy = images + noise * rng.standard_normal(images.shape)
        return Dataset(noisy, images, "denoise", provenance, meta)

    images, masks, labels, meta = _render(classes, n, size, channels, noise, rng, scale)
    if kind == "toy-class":
        return Dataset(images, labels, "classification", provenance, meta)
    pixel = np.where(masks, labels[:, None, None] + 1, 0).astype(np.int64)
    return Dataset(images, pixel, "pixel", provenance, meta)


def split(ds: Dataset, n_test: int) -> tuple[Dataset, Dataset]:
    """Deterministic head/tail split (generators already shuffle)."""
    if not 0 <= n_test <= len(ds):
        raise ValueError("test size out of range")
    cut = len(ds) - n_test
    return ds.subset(np.arange(cut)), ds.subset(np.arange(cut, len(ds)))
