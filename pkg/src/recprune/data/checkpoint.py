"""Binary checkpoints for parameter states and pruning masks.

Layout::

    b"RPCKPT\\0\\n"            8-byte magic
    uint32 little-endian      header length H
    H bytes                   UTF-8 JSON header (sorted keys)
    payload                   float arrays, then bit-packed masks

Float groups are stored as little-endian float64 in lexicographic name
order; each mask is ``numpy.packbits`` output, so every group starts on a
byte boundary. The header records shapes, byte offsets, the frozen groups,
the seed, a config echo and the SHA-256 of the payload. Writes go to a
temporary file in the target directory and are renamed into place.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..pruning.masks import PruneMask

MAGIC = b"RPCKPT\x00\n"
VERSION = 1


class CheckpointError(ValueError):
    pass


class CheckpointFormatError(CheckpointError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointShapeError(CheckpointError):
    pass


class CheckpointTruncatedError(CheckpointError):
    pass


class CheckpointChecksumError(CheckpointError):
    pass


@dataclass
class Checkpoint:
    params: dict[str, np.ndarray]
    mask: PruneMask | None = None
    frozen: list[str] = field(default_factory=list)
    seed: int | None = None
    config: dict = field(default_factory=dict)


def encode_checkpoint(ckpt: Checkpoint) -> bytes:
    chunks, groups, masks = [], [], []
    offset = 0
    for name in sorted(ckpt.params):
        arr = np.ascontiguousarray(ckpt.params[name], dtype="<f8")
        data = arr.tobytes()
        groups.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": len(data)})
        chunks.append(data)
        offset += len(data)
    if ckpt.mask is not None:
        for name in ckpt.mask.names:
            bits = ckpt.mask.bits[name]
            data = np.packbits(bits.astype(bool).ravel()).tobytes()
            masks.append({"name": name, "shape": list(bits.shape), "offset": offset, "nbytes": len(data)})
            chunks.append(data)
            offset += len(data)
    payload = b"".join(chunks)
    header = {
        "format": "recprune-checkpoint",
        "version": VERSION,
        "dtype": "<f8",
        "groups": groups,
        "masks": masks,
        "has_mask": ckpt.mask is not None,
        "frozen": sorted(ckpt.frozen),
        "seed": ckpt.seed,
        "config": ckpt.config,
        "payload_bytes": len(payload),
        "sha256": hashlib.sha256(payload).hexdigest(),
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return MAGIC + struct.pack("<I", len(head)) + head + payload


def decode_checkpoint(raw: bytes, expected_shapes: dict | None = None) -> Checkpoint:
    if len(raw) < len(MAGIC) + 4:
        raise CheckpointTruncatedError(f"file holds {len(raw)} bytes, too short for a header")
    if raw[:len(MAGIC)] != MAGIC:
        raise CheckpointFormatError(f"bad magic {raw[:len(MAGIC)]!r}")
    (hlen,) = struct.unpack("<I", raw[len(MAGIC):len(MAGIC) + 4])
    start = len(MAGIC) + 4
    if len(raw) < start + hlen:
        raise CheckpointTruncatedError(f"header needs {hlen} bytes, file has {len(raw) - start}")
    try:
        header = json.loads(raw[start:start + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointFormatError(f"unreadable header: {exc}") from exc
    if header.get("version") != VERSION:
        raise CheckpointVersionError(f"checkpoint version {header.get('version')!r}, this build reads {VERSION}")
    payload = raw[start + hlen:]
    if len(payload) < header["payload_bytes"]:
        raise CheckpointTruncatedError(f"payload has {len(payload)} of {header['payload_bytes']} bytes")
    if len(payload) > header["payload_bytes"]:
        raise CheckpointFormatError("trailing bytes after payload")
    if hashlib.sha256(payload).hexdigest() != header["sha256"]:
        raise CheckpointChecksumError("payload checksum mismatch")

    params = {}
    for g in header["groups"]:
        shape = tuple(g["shape"])
        if int(np.prod(shape, dtype=np.int64)) * 8 != g["nbytes"]:
            raise CheckpointShapeError(f"group {g['name']}: shape {shape} does not match {g['nbytes']} bytes")
        arr = np.frombuffer(payload, dtype="<f8", count=g["nbytes"] // 8, offset=g["offset"])
        params[g["name"]] = arr.astype(np.float64).reshape(shape)
    mask = None
    if header["has_mask"]:
        bits = {}
        for g in header["masks"]:
            shape = tuple(g["shape"])
            size = int(np.prod(shape, dtype=np.int64))
            if (size + 7) // 8 != g["nbytes"]:
                raise CheckpointShapeError(f"mask {g['name']}: shape {shape} does not match {g['nbytes']} bytes")
            packed = np.frombuffer(payload, dtype=np.uint8, count=g["nbytes"], offset=g["offset"])
            bits[g["name"]] = np.unpackbits(packed, count=size).astype(bool).reshape(shape)
        mask = PruneMask(bits)
    if expected_shapes is not None:
        for name, shape in expected_shapes.items():
            if name not in params:
                raise CheckpointShapeError(f"missing group {name!r}")
            if tuple(params[name].shape) != tuple(shape):
                raise CheckpointShapeError(f"group {name}: stored {params[name].shape}, expected {tuple(shape)}")
    return Checkpoint(params, mask, list(header["frozen"]), header["seed"], header["config"])


def atomic_write(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    atomic_write(path, encode_checkpoint(ckpt))


def load_checkpoint(path, expected_shapes: dict | None = None) -> Checkpoint:
    return decode_checkpoint(Path(path).read_bytes(), expected_shapes)
