import json
from math import comb

import numpy as np
import pytest
import yaml

from recprune.autoenc import TrainConfig
from recprune.cli import main
from recprune.data.csvio import read_csv
from recprune.data.synthetic import gen_dataset
from recprune.models.autoencoder import MiniAutoencoder
from recprune.models.gradcheck import grad_check
from recprune.pruning import PruneMask, global_magnitude_prune
from recprune.study import StudyReport, data_seed, sign_test
from recprune.transfer import TransferConfig, _seg_init, seg_loss_and_grads, ticket_model, transfer_pixel

from test_cli import TINY


def test_sign_test_values():
    assert sign_test(5, 0) == 1 / 32
    assert sign_test(0, 0) == 1.0
    assert sign_test(3, 2) == sum(comb(5, k) for k in range(3, 6)) / 32
    assert sign_test(0, 4) == 1.0


def test_data_seed_roles_differ():
    assert data_seed(0, "upstream") != data_seed(0, "downstream-pixel")
    assert data_seed(1, "upstream") == data_seed(1, "upstream")


def test_report_logic():
    rows = [{"seed": s, "lambda": lam, "feature_distance": d, "downstream_pixel_acc": a}
            for s, lam, d, a in [(0, 0.0, 0.5, 0.8), (0, 10.0, 0.4, 0.81), (1, 0.0, 0.6, 0.7), (1, 10.0, 0.5, 0.7)]]
    rep = StudyReport(7, 0.7902848, (0.0, 10.0), rows)
    assert rep.distance_ok and rep.pixel_ok
    assert rep.pixel_sign_p == 0.5  # one win, one tie
    assert rep.summary()["feature_distance"]["10.0"] == pytest.approx(0.45)


def test_ticket_model_holds_masked_theta_pre():
    src = MiniAutoencoder(size=16, channels=(4, 4, 6, 8), rng=np.random.default_rng(0))
    theta = src.state()
    mask = global_magnitude_prune(src.encoder_weights(), PruneMask.dense(src.encoder_weights()), 0.5)
    m = ticket_model(src, theta, mask, n_classes=3, seed=1, size=32)
    assert m.size == 32 and m.params["head.w"].shape == (3, 8)
    for n, b in mask.bits.items():
        np.testing.assert_array_equal(m.params[n][b], theta[n][b])
        assert np.all(m.params[n][~b] == 0)


def test_pixel_head_gradient():
    m = MiniAutoencoder(size=16, channels=(4, 4, 6, 8), rng=np.random.default_rng(0))
    _seg_init(m, 3, 0)
    rng = np.random.default_rng(1)
    x = rng.standard_normal((2, 1, 32, 32))
    labels = rng.integers(0, 3, size=(2, 32, 32))
    m.freeze("decoder")
    res = grad_check(m.params, lambda p: seg_loss_and_grads(m, x, labels), samples=8)
    assert res.max_rel_error <= 1e-4, res.per_param


def test_pixel_transfer_keeps_mask():
    src = MiniAutoencoder(size=16, channels=(4, 4, 6, 8), rng=np.random.default_rng(0))
    mask = global_magnitude_prune(src.encoder_weights(), PruneMask.dense(src.encoder_weights()), 0.6)
    m = ticket_model(src, src.state(), mask, 4, 0, size=32)
    data = gen_dataset("toy-pixel", {"n": 24, "size": 32, "scale": (0.2, 0.4)}, 0)
    cfg = TransferConfig(optim=TrainConfig(epochs=1, batch_size=8, lr=0.05, clip_norm=5.0))
    acc = transfer_pixel(m, mask, data.subset(range(16)), data.subset(range(16, 24)), cfg, 5)
    assert 0.0 <= acc <= 1.0
    for n, b in mask.bits.items():
        assert np.all(m.params[n][~b] == 0)


def test_study_and_ablate_cli(tmp_path):
    data = {**TINY, "study": {"seeds": [0, 1], "round": 2}, "ablation": {"stage_sets": [[], [3, 4]]}}
    cfg = tmp_path / "cfg.yaml"
    cfg.write_text(yaml.safe_dump(data))
    code = main(["study", "--config", str(cfg), "--seed", "0", "--out", str(tmp_path / "st")])
    summary = json.loads((tmp_path / "st" / "summary.json").read_text())
    assert code == (0 if summary["passed"] else 1)
    assert set(summary["checks"]) == {"feature_distance_lower"}
    rows = read_csv(tmp_path / "st" / "study.csv")
    assert len(rows) == 4 and all(float(r["sparsity"]) == 0.36 for r in rows)

    assert main(["ablate", "--config", str(cfg), "--seed", "0", "--out", str(tmp_path / "ab")]) == 0
    rows = read_csv(tmp_path / "ab" / "ablation.csv")
    assert [r["stages"] for r in rows] == ["none", "3-4"]
    assert sum(r["best"] == "true" for r in rows) == 1
