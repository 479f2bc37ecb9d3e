import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from recprune.autoenc import LossWeights, TrainConfig
from recprune.data.synthetic import gen_dataset
from recprune.models.autoencoder import MiniAutoencoder
from recprune.models.orcnn import Orcnn, orcnn_outputs, patch_stack
from recprune.pruning import (
    PruneError,
    PruneMask,
    global_magnitude_prune,
    kernel_sum_cut,
    kernel_sum_prune,
    ladder_sparsity,
    retained_width,
    select_filters,
    structured_filter_prune,
)
from recprune.pruning.lth import LthConfig, imp, modified_lth, run_lth, target_zeros


# kernel-sum pruning


def test_kernel_sum_example():
    W = np.array([[[0.1], [-0.05]], [[2.0], [-3.0]]])
    out, count = kernel_sum_prune(W, 0.25)
    assert count == 1
    expected = W.copy()
    expected[0, 1] = 0.0
    np.testing.assert_array_equal(out, expected)
    assert kernel_sum_cut(W, 0.25) == 0.05


def test_kernel_sum_p0_and_errors():
    W = np.random.default_rng(0).standard_normal((3, 3, 5))
    out, count = kernel_sum_prune(W, 0.0)
    assert count == 0 and np.array_equal(out, W)
    with pytest.raises(PruneError):
        kernel_sum_prune(W, 1.0)


def test_kernel_sum_exact_fraction():
    W = np.random.default_rng(1).standard_normal((16, 16, 5))
    for p in (0.01, 0.05, 0.1, 0.33):
        out, count = kernel_sum_prune(W, p)
        zero_kernels = int(np.sum(np.all(out == 0, axis=2)))
        assert zero_kernels == count == math.floor(p * 256)


def test_kernel_sum_two_sided_rate():
    # sum of 2s+1 N(0, d^2) taps is N(0, (2s+1) d^2); P(|sum| < eps) = erf(eps / (d sqrt(2(2s+1))))
    rng = np.random.default_rng(2)
    delta, s, K = 0.7, 2, 200 * 200
    W = rng.normal(0.0, delta, size=(200, 200, 2 * s + 1))
    for p in (0.02, 0.05, 0.1):
        eps = kernel_sum_cut(W, p)
        implied = math.erf(eps / (delta * math.sqrt(2 * (2 * s + 1))))
        se = math.sqrt(p * (1 - p) / K)
        assert abs(implied - p) < 4 * se
        # the one-sided rate would be half of this
        assert abs(implied / 2 - p) > 10 * se


# global magnitude pruning


def test_tie_break_lower_index_first():
    params = {"a": np.array([1.0, -0.5, 0.5, 2.0])}
    mask = global_magnitude_prune(params, PruneMask.dense(params), 0.25)
    np.testing.assert_array_equal(mask.bits["a"], [True, False, True, True])


def test_pooled_across_groups():
    params = {"a": np.array([5.0, 0.1]), "b": np.array([0.2, 3.0])}
    mask = global_magnitude_prune(params, PruneMask.dense(params), 0.5)
    np.testing.assert_array_equal(mask.bits["a"], [True, False])
    np.testing.assert_array_equal(mask.bits["b"], [False, True])


def test_two_rounds_live_fraction():
    params = {"w": np.random.default_rng(3).standard_normal(1000)}
    m1 = global_magnitude_prune(params, PruneMask.dense(params), 0.2)
    m2 = global_magnitude_prune(params, m1, 0.2)
    assert m1.zeros == 200 and m2.live == 640
    assert m2.live / m2.total == 0.64
    assert m2.is_nested_in(m1)


def test_global_errors():
    params = {"w": np.ones(4)}
    dead = PruneMask({"w": np.zeros(4, dtype=bool)})
    with pytest.raises(PruneError):
        global_magnitude_prune(params, dead, 0.2)
    with pytest.raises(PruneError):
        global_magnitude_prune(params, PruneMask.dense(params), 0.1)  # floor(0.4) = 0
    with pytest.raises(PruneError):
        global_magnitude_prune({"v": np.ones(4)}, PruneMask.dense(params), 0.5)


@settings(max_examples=40, deadline=None)
@given(st.integers(10, 300), st.floats(0.05, 0.9), st.integers(0, 2**31 - 1))
def test_mask_properties(n, p, seed):
    rng = np.random.default_rng(seed)
    params = {"a": rng.standard_normal(n), "b": rng.standard_normal((3, n))}
    dense = PruneMask.dense(params)
    if math.floor(p * dense.live) == 0:
        return
    mask = global_magnitude_prune(params, dense, p)
    assert mask.zeros == math.floor(p * dense.live)
    assert mask.sparsity == mask.zeros / mask.total
    once = mask.apply(params)
    twice = mask.apply(once)
    for k in params:
        np.testing.assert_array_equal(once[k], twice[k])
        assert np.all(once[k][~mask.bits[k]] == 0.0)
    # every survivor is at least as large as every pruned weight
    mags = np.concatenate([np.abs(params[k]).ravel() for k in sorted(params)])
    keep = np.concatenate([mask.bits[k].ravel() for k in sorted(params)])
    assert mags[keep].min() >= mags[~keep].max()


# ladder


def test_ladder_reference_values():
    got = [round(100 * ladder_sparsity(0.8, i), 2) for i in range(7, 12)]
    assert got == [79.03, 83.22, 86.58, 89.26, 91.41]


def test_ladder_exact():
    assert ladder_sparsity(0.8, 1) == 0.2
    assert ladder_sparsity(0.8, 7) == 0.7902848
    for i in range(1, 12):
        assert ladder_sparsity(0.8, i) == float(1 - Fraction(4, 5) ** i)
    with pytest.raises(ValueError):
        ladder_sparsity(0.8, -1)


def test_target_zeros_floor():
    assert target_zeros(1000, 0.2, 1) == 200
    assert target_zeros(1000, 0.2, 2) == 360
    assert target_zeros(7, 0.2, 1) == 1


# structured pruning


def test_retained_width():
    assert retained_width(10, 0.2) == 8
    assert retained_width(10, 0.0) == 10
    with pytest.raises(PruneError):
        retained_width(10, 0.25)


def test_structured_norm_example():
    W = np.zeros((10, 1, 1))
    order = np.random.default_rng(4).permutation(10)
    W[order, 0, 0] = np.arange(1.0, 11.0)
    kept = select_filters(W, 0.2, "norm")
    removed = sorted(set(range(10)) - set(kept.tolist()))
    assert removed == sorted(order[:2].tolist())
    model = structured_filter_prune(Orcnn(np.ones(10), W), 0.2)
    assert model.a.shape == (8,) and model.width == 8
    assert np.sort(np.abs(model.W.ravel())).tolist() == list(np.arange(3.0, 11.0))


def test_structured_p0_identity():
    m = Orcnn.random(6, 2, 1, np.random.default_rng(5))
    out = structured_filter_prune(m, 0.0)
    np.testing.assert_array_equal(out.W, m.W)
    np.testing.assert_array_equal(out.a, m.a)


def test_structured_random_needs_rng():
    with pytest.raises(PruneError):
        select_filters(np.zeros((10, 1, 1)), 0.2, "random")


def test_pruned_forward_equivalence():
    rng = np.random.default_rng(6)
    m = Orcnn.random(20, 3, 1, rng)
    X = rng.standard_normal((5, 3, 7))
    patches = patch_stack(X, 1)
    kept = select_filters(m.W, 0.2, "norm")
    shrunk = structured_filter_prune(m, 0.2, kept=kept)
    masked = m.copy()
    drop = np.setdiff1d(np.arange(20), kept)
    masked.W[drop] = 0.0
    np.testing.assert_allclose(orcnn_outputs(shrunk, patches), orcnn_outputs(masked, patches), rtol=1e-12, atol=1e-12)


# lottery-ticket drivers


@pytest.fixture(scope="module")
def toy():
    data = gen_dataset("toy-class", {"n": 48, "size": 16}, seed=0)
    model = MiniAutoencoder(size=16, channels=(4, 4, 6, 8), rng=np.random.default_rng(0))
    cfg = LthConfig(rate=0.2, rounds=3, finetune=TrainConfig(epochs=1, batch_size=16, lr=0.01, clip_norm=10.0),
                    weights=LossWeights(lam=1.0))
    return model, model.state(), data, cfg


def test_modified_lth_mechanics(toy):
    model, theta_pre, data, cfg = toy
    res = modified_lth(model, theta_pre, data.inputs, data.labels, cfg)
    total = res.tickets[0].mask.total
    prev = None
    for i, t in enumerate(res.tickets, start=1):
        assert t.sparsity == ladder_sparsity(0.8, i)
        assert abs(t.realized_sparsity - t.sparsity) < 1 / total
        if prev is not None:
            assert t.mask.is_nested_in(prev)
        prev = t.mask
    assert all(log.matches_theta_pre for log in res.logs)
    # decoder never moves
    for n in model.names("decoder"):
        np.testing.assert_array_equal(model.params[n], theta_pre[n])
    for n, b in prev.bits.items():
        np.testing.assert_array_equal(model.params[n][b], theta_pre[n][b])
        assert np.all(model.params[n][~b] == 0.0)


def test_imp_round1_matches_and_diverges(toy):
    model, theta_pre, data, cfg = toy
    a = modified_lth(model, theta_pre, data.inputs, data.labels, cfg)
    b = imp(model, theta_pre, data.inputs, data.labels, cfg)
    assert a.tickets[0].mask == b.tickets[0].mask
    assert [t.sparsity for t in a.tickets] == [t.sparsity for t in b.tickets]
    assert not b.logs[1].matches_theta_pre
    assert any(not np.array_equal(model.params[n], theta_pre[n]) for n in model.names("encoder"))


def test_lth_deterministic(toy):
    model, theta_pre, data, cfg = toy
    a = modified_lth(model, theta_pre, data.inputs, data.labels, cfg)
    b = modified_lth(model, theta_pre, data.inputs, data.labels, cfg)
    assert all(x.mask == y.mask for x, y in zip(a.tickets, b.tickets))
    assert [x.loss for x in a.logs] == [y.loss for y in b.logs]


def test_lth_missing_theta_pre(toy):
    model, _, data, cfg = toy
    with pytest.raises(PruneError):
        run_lth(model, None, data.inputs, data.labels, cfg)
