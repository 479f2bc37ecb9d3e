import json
import struct

import numpy as np
import pytest
from shapely.geometry import Point, Polygon, box
from shapely.ops import unary_union

from recprune.autoenc import LossWeights, TrainConfig
from recprune.data.checkpoint import (
    MAGIC,
    Checkpoint,
    CheckpointChecksumError,
    CheckpointFormatError,
    CheckpointShapeError,
    CheckpointTruncatedError,
    CheckpointVersionError,
    decode_checkpoint,
    encode_checkpoint,
    load_checkpoint,
    save_checkpoint,
)
from recprune.data.csvio import SCHEMAS, format_value, read_csv, render_csv, write_csv
from recprune.data.idx import IdxCountMismatchError, IdxMagicError, IdxTruncatedError, load_idx
from recprune.data.rng import stream
from recprune.data.synthetic import SHAPES, gen_dataset, split
from recprune.models.autoencoder import MiniAutoencoder
from recprune.models.orcnn import patch_stack
from recprune.pruning import PruneMask, global_magnitude_prune
from recprune.pruning.lth import LthConfig, modified_lth

# generators


@pytest.mark.parametrize("kind", ["orcnn-normalized", "toy-class", "toy-pixel", "toy-denoise"])
def test_generators_deterministic(kind):
    cfg = {} if kind == "orcnn-normalized" else {"n": 20, "size": 16}
    a, b = gen_dataset(kind, cfg, 3), gen_dataset(kind, cfg, 3)
    assert a.inputs.tobytes() == b.inputs.tobytes()
    assert a.labels.tobytes() == b.labels.tobytes()
    assert gen_dataset(kind, cfg, 4).inputs.tobytes() != a.inputs.tobytes()
    assert len(a.inputs) == len(a.labels)


def test_orcnn_patches_unit_norm():
    for s in (0, 1, 2, 4):
        d = gen_dataset("orcnn-normalized", {"n": 6, "c": 3, "s": s, "labels": "real"}, 0)
        norms = np.linalg.norm(patch_stack(d.inputs, s).reshape(-1, 3 * (2 * s + 1)), axis=1)
        np.testing.assert_allclose(norms, 1.0, atol=1e-12)


def test_generator_errors():
    with pytest.raises(ValueError):
        gen_dataset("imagenet")
    with pytest.raises(ValueError):
        gen_dataset("toy-class", {"bogus": 1})
    with pytest.raises(ValueError):
        gen_dataset("toy-class", {"size": 32, "scale": (0.3, 0.6)})
    with pytest.raises(ValueError):
        gen_dataset("orcnn-normalized", {"labels": "weird"})


def reference_shape(shape, cx, cy, h):
    t = h / 3.0
    if shape == "square":
        return box(cx - h, cy - h, cx + h, cy + h)
    if shape == "circle":
        return Point(cx, cy).buffer(h, quad_segs=256)
    if shape == "ring":
        return Point(cx, cy).buffer(h, quad_segs=256).difference(Point(cx, cy).buffer(0.5 * h, quad_segs=256))
    if shape == "diamond":
        return Polygon([(cx - h, cy), (cx, cy - h), (cx + h, cy), (cx, cy + h)])
    if shape == "cross":
        return unary_union([box(cx - t, cy - h, cx + t, cy + h), box(cx - h, cy - t, cx + h, cy + t)])
    if shape == "hbar":
        return box(cx - h, cy - t, cx + h, cy + t)
    if shape == "vbar":
        return box(cx - t, cy - h, cx + t, cy + h)
    if shape == "triangle":
        return Polygon([(cx, cy - h), (cx - h, cy + h), (cx + h, cy + h)])
    raise KeyError(shape)


def test_pixel_labels_match_geometry_oracle():
    size = 24
    for classes in (("square", "circle", "triangle", "cross"), ("hbar", "vbar", "ring", "diamond")):
        d = gen_dataset("toy-pixel", {"n": 24, "size": size, "classes": classes}, 5)
        for img_labels, meta in zip(d.labels, d.meta):
            label = classes.index(meta["shape"]) + 1
            geom = reference_shape(meta["shape"], meta["cx"], meta["cy"], meta["h"])
            for yy in range(size):
                for xx in range(size):
                    p = Point(xx + 0.5, yy + 0.5)
                    inside = geom.covers(p)
                    got = img_labels[yy, xx] == label
                    if got != inside:
                        # only pixel centres on the boundary (up to the polygonised circle) may disagree
                        assert geom.boundary.distance(p) < 0.01 * meta["h"]
                    else:
                        assert img_labels[yy, xx] in (0, label)
    assert set(SHAPES) >= set(classes)


def test_denoise_pairs():
    d = gen_dataset("toy-denoise", {"n": 5, "size": 16}, 0)
    assert d.task == "denoise" and d.labels.shape == d.inputs.shape
    assert 0.1 < np.std(d.inputs - d.labels) < 0.3


def test_split():
    d = gen_dataset("toy-class", {"n": 10, "size": 16}, 0)
    tr, te = split(d, 3)
    assert len(tr) == 7 and len(te) == 3
    np.testing.assert_array_equal(te.inputs, d.inputs[7:])


def test_rng_streams_independent_and_stable():
    a = stream("x", 1, 2).standard_normal(4)
    np.testing.assert_array_equal(a, stream("x", 1, 2).standard_normal(4))
    assert not np.array_equal(a, stream("x", 1, 3).standard_normal(4))
    assert not np.array_equal(a, stream("y", 1, 2).standard_normal(4))
    with pytest.raises(ValueError):
        stream("x", -1)


# IDX


def write_idx(path, magic_type, dims, payload: bytes, magic=None):
    # byte layout spelled out independently of the reader
    head = bytes([0, 0, magic_type, len(dims)]) if magic is None else magic
    head += b"".join(struct.pack(">I", d) for d in dims)
    path.write_bytes(head + payload)


def test_idx_round_trip(tmp_path):
    pixels = bytes(range(0, 256, 8))  # 32 bytes = 2 images of 4x4
    write_idx(tmp_path / "img", 0x08, (2, 4, 4), pixels)
    write_idx(tmp_path / "lab", 0x08, (2,), bytes([7, 3]))
    ds = load_idx(tmp_path / "img", tmp_path / "lab")
    assert ds.inputs.shape == (2, 1, 4, 4)
    assert ds.inputs[0, 0, 0, 1] == 8 / 255 and ds.inputs[1, 0, 3, 3] == 248 / 255
    np.testing.assert_array_equal(ds.labels, [7, 3])
    assert ds.labels.dtype == np.int64


def test_idx_empty(tmp_path):
    write_idx(tmp_path / "img", 0x08, (0, 28, 28), b"")
    write_idx(tmp_path / "lab", 0x08, (0,), b"")
    ds = load_idx(tmp_path / "img", tmp_path / "lab")
    assert len(ds) == 0 and ds.inputs.shape == (0, 1, 28, 28)


def test_idx_bad_magic(tmp_path):
    write_idx(tmp_path / "img", 0x08, (1, 2, 2), bytes(4))
    write_idx(tmp_path / "lab", 0x08, (1,), bytes(1), magic=bytes([0, 0, 0x09, 1]))
    with pytest.raises(IdxMagicError) as err:
        load_idx(tmp_path / "img", tmp_path / "lab")
    assert "00 00 09 01" in str(err.value) and err.value.offset == 0


def test_idx_truncated(tmp_path):
    write_idx(tmp_path / "img", 0x08, (2, 2, 2), bytes(7))
    write_idx(tmp_path / "lab", 0x08, (2,), bytes(2))
    with pytest.raises(IdxTruncatedError) as err:
        load_idx(tmp_path / "img", tmp_path / "lab")
    assert err.value.offset == 16 + 7
    (tmp_path / "short").write_bytes(b"\x00\x00")
    with pytest.raises(IdxTruncatedError):
        load_idx(tmp_path / "short", tmp_path / "lab")


def test_idx_count_mismatch(tmp_path):
    write_idx(tmp_path / "img", 0x08, (2, 2, 2), bytes(8))
    write_idx(tmp_path / "lab", 0x08, (3,), bytes(3))
    with pytest.raises(IdxCountMismatchError) as err:
        load_idx(tmp_path / "img", tmp_path / "lab")
    assert err.value.offset == 4


# checkpoints


def sample_checkpoint():
    rng = np.random.default_rng(0)
    params = {"b.w": rng.standard_normal((3, 5)), "a.w": rng.standard_normal(7), "c": np.array([np.pi])}
    mask = global_magnitude_prune({"a.w": params["a.w"], "b.w": params["b.w"]},
                                  PruneMask.dense({"a.w": params["a.w"], "b.w": params["b.w"]}), 0.3)
    return Checkpoint(params, mask, ["decoder"], 42, {"note": "x", "rate": 0.2})


def test_checkpoint_round_trip(tmp_path):
    ck = sample_checkpoint()
    save_checkpoint(tmp_path / "a.ckpt", ck)
    back = load_checkpoint(tmp_path / "a.ckpt")
    for k, v in ck.params.items():
        assert back.params[k].tobytes() == v.tobytes()
    assert back.mask == ck.mask
    assert back.frozen == ["decoder"] and back.seed == 42 and back.config == ck.config
    save_checkpoint(tmp_path / "b.ckpt", back)
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()


def test_checkpoint_payload_order():
    raw = encode_checkpoint(sample_checkpoint())
    (hlen,) = struct.unpack("<I", raw[len(MAGIC):len(MAGIC) + 4])
    header = json.loads(raw[len(MAGIC) + 4:len(MAGIC) + 4 + hlen])
    assert [g["name"] for g in header["groups"]] == ["a.w", "b.w", "c"]
    offsets = [g["offset"] for g in header["groups"]]
    assert offsets == sorted(offsets)


def test_checkpoint_corruption():
    raw = bytearray(encode_checkpoint(sample_checkpoint()))
    raw[-3] ^= 0x01
    with pytest.raises(CheckpointChecksumError):
        decode_checkpoint(bytes(raw))


def test_checkpoint_truncation_and_magic():
    raw = encode_checkpoint(sample_checkpoint())
    with pytest.raises(CheckpointTruncatedError):
        decode_checkpoint(raw[:-10])
    with pytest.raises(CheckpointTruncatedError):
        decode_checkpoint(raw[:6])
    with pytest.raises(CheckpointFormatError):
        decode_checkpoint(b"NOTACKPT" + raw[8:])


def test_checkpoint_version():
    raw = encode_checkpoint(sample_checkpoint())
    bad = raw.replace(b'"version":1', b'"version":9')
    assert bad != raw
    with pytest.raises(CheckpointVersionError):
        decode_checkpoint(bad)


def test_checkpoint_expected_shapes():
    raw = encode_checkpoint(sample_checkpoint())
    decode_checkpoint(raw, {"a.w": (7,)})
    with pytest.raises(CheckpointShapeError):
        decode_checkpoint(raw, {"a.w": (8,)})
    with pytest.raises(CheckpointShapeError):
        decode_checkpoint(raw, {"missing": (1,)})


def test_reloaded_theta_pre_reproduces_tickets(tmp_path):
    data = gen_dataset("toy-class", {"n": 32, "size": 16}, 0)
    model = MiniAutoencoder(size=16, channels=(4, 4, 6, 8), rng=np.random.default_rng(0))
    theta_pre = model.state()
    cfg = LthConfig(rounds=3, finetune=TrainConfig(epochs=1, batch_size=16, lr=0.01, clip_norm=10.0),
                    weights=LossWeights(lam=1.0))
    full = modified_lth(model, theta_pre, data.inputs, data.labels, cfg)

    save_checkpoint(tmp_path / "theta_pre.ckpt", Checkpoint(theta_pre, full.tickets[0].mask, seed=0))
    ck = load_checkpoint(tmp_path / "theta_pre.ckpt")
    resumed = modified_lth(model, ck.params, data.inputs, data.labels, cfg, mask=ck.mask, start_round=2)
    assert [t.mask for t in resumed.tickets] == [t.mask for t in full.tickets[1:]]
    assert [t.sparsity for t in resumed.tickets] == [t.sparsity for t in full.tickets[1:]]


# CSV


def test_format_value():
    assert format_value(True) == "true"
    assert format_value(np.float64(0.1)) == "0.1"
    assert format_value(np.int64(3)) == "3"
    assert format_value(float("nan")) == "nan"
    assert float(format_value(1 / 3)) == 1 / 3


def test_csv_quoting_and_header(tmp_path):
    rows = [{"stages": "3,4", "recon_loss": 1.5, "downstream_pixel_acc": 0.5, "feature_distance": 0.25, "best": True},
            {"stages": 'say "hi"', "recon_loss": 2.0}]
    text = render_csv("ablation", rows)
    lines = text.split("\n")
    assert lines[0] == ",".join(SCHEMAS["ablation"])
    assert lines[1] == '"3,4",1.5,0.5,0.25,true'
    assert lines[2] == '"say ""hi""",2.0,,,'
    assert "\r" not in text and text.endswith("\n")
    write_csv(tmp_path / "a.csv", "ablation", rows)
    back = read_csv(tmp_path / "a.csv")
    assert back[0]["stages"] == "3,4" and back[1]["stages"] == 'say "hi"'


def test_csv_rejects_unknown():
    with pytest.raises(KeyError):
        render_csv("nope", [])
    with pytest.raises(KeyError):
        render_csv("thm1", [{"seed": 0, "extra": 1}])
