import math

import numpy as np
import pytest

from owcl.errors import DomainError, ShapeError, StateError
from owcl.memory import EnergyStats
from owcl.model import ArchConfig, MultimodalNet
from owcl.numcore import make_rng
from owcl.score import (
    ScoringContext,
    Strategy,
    combine_logits,
    energy,
    modality_weights,
    reliability,
    score,
    score_batch,
)

FIXED = (Strategy.MAIN_ONLY, Strategy.UNIFORM_SUM, Strategy.UNIFORM_AVERAGE)


def test_energy_examples():
    assert energy([0.0, 0.0, 0.0, 0.0]) == pytest.approx(-math.log(4), abs=1e-12)
    assert energy([5.0]) == -5.0
    assert energy([1.0, 2.0, 3.0]) == pytest.approx(-(3 + math.log(1 + math.exp(-1) + math.exp(-2))), abs=1e-12)
    assert math.isfinite(energy([1000.0, 999.0]))
    with pytest.raises(DomainError):
        energy([])


def test_reliability_examples():
    assert reliability(-3.0, -2.0, 0.5) == 2.0
    assert reliability(-2.0, -2.0, 1.0) == 0.0
    with pytest.raises(DomainError):
        reliability(0.0, 0.0, 0.0)


def test_weight_examples():
    np.testing.assert_allclose(modality_weights([0.0, 0.0], Strategy.MOAS_ADAPTIVE), [0.5, 0.5])
    a = modality_weights([math.log(3), 0.0], Strategy.MOAS_ADAPTIVE)
    np.testing.assert_allclose(a, [0.75, 0.25], atol=1e-12)
    assert modality_weights([1.0, 2.0, 3.0], Strategy.UNIFORM_SUM).tolist() == [1, 1, 1]
    np.testing.assert_allclose(modality_weights([1.0, 2.0], Strategy.UNIFORM_AVERAGE), [0.5, 0.5])
    assert not modality_weights([9.0], Strategy.MAIN_ONLY).any()
    with pytest.raises(DomainError):
        modality_weights([float("nan")], Strategy.MOAS_ADAPTIVE)
    with pytest.raises(DomainError):
        modality_weights([0.0], Strategy.BASELINE_MSP)


def test_combine_example():
    out = combine_logits(np.array([1.0, 0.0]), {"a": np.array([2.0, 2.0])}, {"a": 0.5})
    assert out.tolist() == [2.0, 1.0]
    with pytest.raises(ShapeError):
        combine_logits(np.zeros(2), {"a": np.zeros(3)}, {"a": 1.0})


def net_and_feats(seed=0, mods=("m0", "m1", "m2"), n=6):
    rng = make_rng(seed)
    dims = tuple(range(3, 3 + len(mods)))
    net = MultimodalNet(mods, dims, 4, rng, ArchConfig(hidden=5, embed=3, fusion=4))
    feats = {m: rng.normal(size=(n, d)) for m, d in zip(mods, dims)}
    stats = EnergyStats({m: float(rng.normal()) for m in mods}, {m: float(rng.uniform(0.5, 2)) for m in mods}, 10)
    return net, feats, stats


def test_main_only_equals_maxlogit_bitwise():
    net, feats, stats = net_and_feats()
    a = score_batch(ScoringContext(net, stats, Strategy.MAIN_ONLY), feats).s
    b = score_batch(ScoringContext(net, None, Strategy.BASELINE_MAXLOGIT), feats).s
    assert np.array_equal(a, b)


def test_single_modality_adaptive_weight_is_one():
    net, feats, stats = net_and_feats(mods=("m0",))
    res = score_batch(ScoringContext(net, stats, Strategy.MOAS_ADAPTIVE), feats)
    assert np.all(res.alpha == 1.0)
    out = net.forward(feats)
    np.testing.assert_allclose(res.s, (out.z_main + out.z_m["m0"]).max(axis=1), atol=1e-12)


def test_adaptive_needs_stats():
    net, _, _ = net_and_feats()
    with pytest.raises(StateError):
        ScoringContext(net, None, Strategy.MOAS_ADAPTIVE)


@pytest.mark.parametrize("strategy", [Strategy.MOAS_ADAPTIVE, *FIXED])
def test_weight_sums_and_combination(strategy):
    net, feats, stats = net_and_feats(1)
    ctx = ScoringContext(net, stats, strategy)
    res = score_batch(ctx, feats)
    np.testing.assert_allclose(res.alpha.sum(axis=1), strategy.alpha_total(3), atol=1e-12)
    assert np.all(res.alpha >= 0)
    out = net.forward(feats)
    for i in range(len(res.s)):
        comb = out.z_main[i] + sum(res.alpha[i, j] * out.z_m[m][i] for j, m in enumerate(net.modalities))
        assert abs(res.s[i] - comb.max()) <= 1e-10


def test_baselines_against_formulas():
    net, feats, _ = net_and_feats(2)
    z = net.forward(feats).z_main
    p = np.exp(z) / np.exp(z).sum(axis=1, keepdims=True)
    expected = {
        Strategy.BASELINE_MSP: p.max(axis=1),
        Strategy.BASELINE_MAXLOGIT: z.max(axis=1),
        Strategy.BASELINE_ENTROPY: (p * np.log(p)).sum(axis=1),
        Strategy.BASELINE_ENERGY: np.log(np.exp(z).sum(axis=1)),
    }
    for strat, want in expected.items():
        np.testing.assert_allclose(score_batch(ScoringContext(net, None, strat), feats).s, want, atol=1e-12)


def test_single_sample_trace_on_hand_set_net():
    """Identity-like net with two 2-d modalities and two classes, traced by hand."""
    arch = ArchConfig(hidden=2, embed=2, fusion=2)
    net = MultimodalNet(("a", "b"), (2, 2), 2, make_rng(0), arch)
    for p in net.params().values():
        p[...] = 0.0
    for m in ("a", "b"):
        net.encoders[m][0].weights[...] = np.eye(2)
        net.encoders[m][1].weights[...] = np.eye(2)
        net.heads[m].weights[...] = np.eye(2)
    net.fusion.weights[...] = np.hstack([np.eye(2), np.eye(2)])
    net.classifier.weights[...] = np.eye(2)
    stats = EnergyStats({"a": -2.0, "b": -2.0}, {"a": 1.0, "b": 1.0}, 4)

    from owcl.datagen import MultimodalSample

    sample = MultimodalSample({"a": np.array([2.0, 0.0], np.float32), "b": np.array([0.0, 0.0], np.float32)}, 0, 0)
    res = score(ScoringContext(net, stats, Strategy.MOAS_ADAPTIVE), sample)
    e_a = -math.log(math.exp(2) + 1)
    e_b = -math.log(2)
    assert res.energy["a"] == pytest.approx(e_a, abs=1e-12)
    assert res.energy["b"] == pytest.approx(e_b, abs=1e-12)
    r_a, r_b = -(e_a + 2), -(e_b + 2)
    assert res.reliability["a"] == pytest.approx(r_a, abs=1e-12)
    w_a = math.exp(r_a) / (math.exp(r_a) + math.exp(r_b))
    assert res.alpha["a"] == pytest.approx(w_a, abs=1e-12)
    np.testing.assert_allclose(res.combined, [2 + 2 * w_a, 0.0], atol=1e-12)
    assert res.s == pytest.approx(2 + 2 * w_a, abs=1e-12)


def test_score_matches_batch_row():
    net, feats, stats = net_and_feats(3)
    from owcl.datagen import MultimodalSample

    sample = MultimodalSample({m: v[0].astype(np.float32) for m, v in feats.items()}, 0, 0)
    one = score(ScoringContext(net, stats, Strategy.UNIFORM_AVERAGE), sample)
    batch = score_batch(ScoringContext(net, stats, Strategy.UNIFORM_AVERAGE),
                        {m: v[:1].astype(np.float32).astype(np.float64) for m, v in feats.items()})
    assert one.s == batch.s[0]
