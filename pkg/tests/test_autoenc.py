import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from recprune.autoenc import (
    SGD,
    LossWeights,
    TrainConfig,
    TrainingError,
    classification_loss,
    combined_loss,
    combined_loss_and_grads,
    finetune,
    group_digest,
    mean_image_baseline,
    pretrain_classifier,
    recon_loss,
    train_decoder,
)
from recprune.data.synthetic import gen_dataset
from recprune.models.autoencoder import MiniAutoencoder
from recprune.pruning import PruneMask, global_magnitude_prune


def tiny_model(seed=0):
    return MiniAutoencoder(size=16, channels=(4, 4, 6, 8), rng=np.random.default_rng(seed))


@pytest.fixture(scope="module")
def toy16():
    return gen_dataset("toy-class", {"n": 32, "size": 16}, seed=1)


def constant_decoder(value):
    # one stage on a 2x2 image; zero weights make the output the dec0 bias
    m = MiniAutoencoder(size=2, channels=(4,), hint_stages=(), rng=np.random.default_rng(0))
    m.params["dec0.w"][:] = 0.0
    m.params["dec0.b"][:] = value
    return m


def test_recon_example():
    x = np.zeros((1, 1, 2, 2))
    assert recon_loss(constant_decoder(1.0), x) == 4.0
    assert recon_loss(constant_decoder(2.0), x) == 16.0  # doubled residual
    assert recon_loss(constant_decoder(0.0), x) == 0.0


def test_recon_is_batch_mean():
    x = np.zeros((3, 1, 2, 2))
    x[1] = -1.0
    # residuals 1, 2, 1 per pixel -> (4 + 16 + 4) / 3
    assert recon_loss(constant_decoder(1.0), x) == pytest.approx(8.0, rel=1e-15)


def test_recon_empty_batch():
    with pytest.raises(ValueError):
        recon_loss(constant_decoder(1.0), np.zeros((0, 1, 2, 2)))


def test_loss_weights_validation():
    with pytest.raises(ValueError):
        LossWeights(lam=-1.0)
    with pytest.raises(ValueError):
        LossWeights(hint_t=1.5)
    assert LossWeights(hint_stages=(4, 3, 4)).hint_stages == (3, 4)


def test_missing_labels():
    with pytest.raises(ValueError):
        combined_loss(tiny_model(), np.zeros((1, 1, 16, 16)), None, LossWeights())


@settings(max_examples=15, deadline=None)
@given(st.floats(0.0, 50.0), st.floats(0.0, 1.0), st.integers(0, 1000))
def test_lambda_additivity(lam, t, seed):
    rng = np.random.default_rng(seed)
    m = tiny_model(seed % 3)
    x = rng.standard_normal((2, 1, 16, 16))
    y = rng.integers(0, 4, 2)
    w = LossWeights(lam=lam, hint_t=t)
    base = combined_loss(m, x, y, LossWeights(lam=0.0, hint_t=t))
    rec = recon_loss(m, x, t, w.hint_stages)
    assert base == classification_loss(m, x, y)
    assert abs(combined_loss(m, x, y, w) - base - lam * rec) <= 1e-12 * max(1.0, lam * rec)


def test_frozen_decoder_gets_no_gradient():
    m = tiny_model()
    m.freeze("decoder")
    x = np.random.default_rng(0).standard_normal((2, 1, 16, 16))
    _, _, _, g = combined_loss_and_grads(m, x, np.array([0, 1]), LossWeights())
    assert set(g) == set(m.names("encoder")) | set(m.names("head"))


def test_zero_epochs_change_nothing(toy16):
    m = tiny_model()
    before = m.state()
    assert train_decoder(m, toy16.inputs, TrainConfig(epochs=0)) == []
    assert pretrain_classifier(m, toy16.inputs, toy16.labels, TrainConfig(epochs=0)) == []
    for k, v in before.items():
        np.testing.assert_array_equal(m.params[k], v)


def test_decoder_training_freezes_encoder_and_head(toy16):
    m = tiny_model()
    enc, head = group_digest(m, "encoder"), group_digest(m, "head")
    dec = group_digest(m, "decoder")
    train_decoder(m, toy16.inputs, TrainConfig(epochs=2, lr=1e-3, batch_size=8, clip_norm=10.0))
    assert group_digest(m, "encoder") == enc and group_digest(m, "head") == head
    assert group_digest(m, "decoder") != dec
    assert m.frozen == set()


def test_finetune_freezes_decoder_and_honours_mask(toy16):
    m = tiny_model()
    dec = group_digest(m, "decoder")
    mask = global_magnitude_prune(m.encoder_weights(), PruneMask.dense(m.encoder_weights()), 0.5)
    curve = finetune(m, toy16.inputs, toy16.labels, TrainConfig(epochs=2, lr=0.01, batch_size=8, clip_norm=5.0),
                     LossWeights(), mask)
    assert len(curve) == 2 and all(np.isfinite(c["loss"]) for c in curve)
    assert group_digest(m, "decoder") == dec
    for n, b in mask.bits.items():
        assert np.all(m.params[n][~b] == 0.0)
        assert np.any(m.params[n][b] != 0.0)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_raises(toy16):
    m = tiny_model()
    with pytest.raises(TrainingError):
        train_decoder(m, toy16.inputs * 1e200, TrainConfig(epochs=1, lr=1.0, batch_size=8))


def test_sgd_momentum_and_schedule():
    cfg = TrainConfig(lr=0.1, momentum=0.5, epochs=10, milestones=(0.5,), gamma=0.1)
    assert cfg.lr_at(4) == 0.1 and cfg.lr_at(5) == pytest.approx(0.01)
    m = tiny_model()
    w0 = m.params["head.b"].copy()
    opt = SGD(m, cfg)
    g = {"head.b": np.ones_like(w0)}
    opt.step(g, 0)
    opt.step(g, 0)
    # v1 = g, v2 = 0.5 g + g
    np.testing.assert_allclose(m.params["head.b"], w0 - 0.1 * 1.0 - 0.1 * 1.5, atol=1e-15)


def test_sgd_clip():
    m = tiny_model()
    w0 = m.params["head.b"].copy()
    SGD(m, TrainConfig(lr=1.0, momentum=0.0, clip_norm=1.0)).step({"head.b": np.full_like(w0, 10.0)}, 0)
    assert np.linalg.norm(m.params["head.b"] - w0) == pytest.approx(1.0, rel=1e-12)


def test_mean_image_baseline():
    x = np.stack([np.zeros((1, 2, 2)), 2 * np.ones((1, 2, 2))])
    assert mean_image_baseline(x) == 4.0


def test_decoder_beats_mean_image():
    data = gen_dataset("toy-class", {"n": 256, "size": 32}, seed=0)
    m = MiniAutoencoder(rng=np.random.default_rng(0))
    pretrain_classifier(m, data.inputs, data.labels, TrainConfig(epochs=3, lr=0.1, batch_size=32, clip_norm=5.0))
    curve = train_decoder(m, data.inputs, TrainConfig(epochs=4, lr=3e-3, batch_size=32, clip_norm=10.0))
    assert curve[-1] < curve[0]
    assert recon_loss(m, data.inputs) < mean_image_baseline(data.inputs)
