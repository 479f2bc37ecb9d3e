"""Reader for the IDX image/label container (MNIST layout).

Header: two zero bytes, a dtype byte (only 0x08 unsigned byte is accepted),
a dimension-count byte, then one big-endian uint32 per dimension.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .synthetic import Dataset

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801


class IdxError(ValueError):
    def __init__(self, message: str, path, offset: int):
        super().__init__(f"{path}: {message} (at byte offset {offset})")
        self.path = str(path)
        self.offset = offset


class IdxMagicError(IdxError):
    pass


class IdxTruncatedError(IdxError):
    pass


class IdxCountMismatchError(IdxError):
    pass


def _read(path, magic: int) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 4:
        raise IdxTruncatedError(f"file holds {len(raw)} bytes, shorter than the 4-byte magic", path, len(raw))
    got = struct.unpack(">I", raw[:4])[0]
    if got != magic:
        raise IdxMagicError(f"magic number 0x{got:08x} (bytes {raw[:4].hex(' ')}), expected 0x{magic:08x}", path, 0)
    ndim = raw[3]
    head = 4 + 4 * ndim
    if len(raw) < head:
        raise IdxTruncatedError(f"header needs {head} bytes, file has {len(raw)}", path, len(raw))
    dims = struct.unpack(f">{ndim}I", raw[4:head])
    need = int(np.prod(dims, dtype=np.int64))
    if len(raw) - head < need:
        raise IdxTruncatedError(f"payload needs {need} bytes, found {len(raw) - head}", path, len(raw))
    return np.frombuffer(raw, dtype=np.uint8, count=need, offset=head).reshape(dims)


def load_idx(images_path, labels_path) -> Dataset:
    """Load an image/label pair; images become ``(N, 1, H, W)`` floats in [0, 1]."""
    images = _read(images_path, IMAGES_MAGIC)
    labels = _read(labels_path, LABELS_MAGIC)
    if images.shape[0] != labels.shape[0]:
        # both count fields live at offset 4
        raise IdxCountMismatchError(
            f"{images.shape[0]} images but {labels.shape[0]} labels in {labels_path}", images_path, 4)
    x = images.astype(np.float64)[:, None] / 255.0
    provenance = {"images": str(images_path), "labels": str(labels_path)}
    return Dataset(x, labels.astype(np.int64), "classification", provenance)
