import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from owcl.errors import InputError
from owcl.evaluation import (
    aggregate,
    auc,
    evaluate_task,
    fpr_at_95_tpr,
    paired_wilcoxon,
    wilcoxon_normal,
    wilcoxon_signed_rank,
)
from owcl.model import MultimodalNet
from owcl.numcore import make_rng
from owcl.score import Strategy


def test_auc_examples():
    assert auc([2, 3], [0, 1]) == 1.0
    assert auc([0, 1], [2, 3]) == 0.0
    assert auc([1, 1], [1, 1]) == 0.5
    assert auc([1, 3], [2]) == 0.5
    with pytest.raises(InputError):
        auc([], [1])


scores = st.lists(st.integers(-50, 50).map(lambda i: i / 10), min_size=1, max_size=15)


@settings(max_examples=60, deadline=None)
@given(scores, scores)
def test_auc_properties(k, v):
    a = auc(k, v)
    assert 0.0 <= a <= 1.0
    assert auc(v, k) == pytest.approx(1.0 - a, abs=1e-12)
    assert auc([3 * x + 1 for x in k], [3 * x + 1 for x in v]) == pytest.approx(a, abs=1e-12)


def fpr95_sweep(known, novel):
    """Scan every candidate threshold; keep the smallest FPR among those with TPR >= 0.95."""
    best = 1.0
    for tau in sorted(set(known) | set(novel)):
        tpr = sum(k >= tau for k in known) / len(known)
        if tpr >= 0.95:
            best = min(best, sum(v >= tau for v in novel) / len(novel))
    return best


def test_fpr95_matches_threshold_sweep():
    rng = make_rng(0)
    for _ in range(30):
        known = np.round(rng.normal(1.0, 1.0, size=20), 1).tolist()
        novel = np.round(rng.normal(0.0, 1.0, size=20), 1).tolist()
        assert fpr_at_95_tpr(known, novel) == fpr95_sweep(known, novel)


def test_fpr95_examples():
    known = list(range(1, 21))
    assert fpr_at_95_tpr(known, [0.5]) == 0.0
    # threshold is the 19th largest known score, 2
    assert fpr_at_95_tpr(known, [2, 1.5]) == 0.5
    assert fpr_at_95_tpr(known, [2, 3]) == 1.0


def test_aggregate_examples():
    agg = aggregate([0.8], [0.2], [[0.9], [0.6, 0.8]])
    assert agg.acc_T == pytest.approx(0.7)
    assert agg.fgt_T == pytest.approx(0.3)
    assert agg.auc_T == 0.8 and agg.auc_final == 0.8
    single = aggregate([], [], [[0.5]])
    assert math.isnan(single.fgt_T) and math.isnan(single.auc_T)
    with pytest.raises(InputError):
        aggregate([0.5], [0.5], [[0.5, 0.5]])


def test_aggregate_averages_and_uses_best_accuracy():
    acc = [[0.9], [0.95, 0.7], [0.6, 0.8, 0.85]]
    agg = aggregate([0.7, 0.9], [0.4, 0.2], acc)
    assert agg.auc_T == pytest.approx(0.8)
    assert agg.fpr95_final == 0.2
    assert agg.fgt_T == pytest.approx(((0.95 - 0.6) + (0.7 - 0.8)) / 2)


def test_wilcoxon_all_positive_five():
    res = wilcoxon_signed_rank([1, 2, 3, 4, 5])
    assert res.p_value == pytest.approx(0.0625)
    assert res.method == "exact" and res.statistic == 15


def test_wilcoxon_symmetric_and_degenerate():
    assert wilcoxon_signed_rank([1, -1, 2, -2]).p_value == 1.0
    res = wilcoxon_signed_rank([0, 0, 0])
    assert res.n == 0 and res.p_value == 1.0


def enumerated_p(diffs):
    from scipy.stats import rankdata

    x = np.asarray([d for d in diffs if d != 0], dtype=float)
    ranks = rankdata(np.abs(x))
    w = ranks[x > 0].sum()
    sums = [sum(r for r, s in zip(ranks, signs) if s) for signs in itertools.product((0, 1), repeat=len(x))]
    lo = sum(s <= w + 1e-9 for s in sums) / len(sums)
    hi = sum(s >= w - 1e-9 for s in sums) / len(sums)
    return min(1.0, 2 * min(lo, hi))


def test_wilcoxon_exact_matches_enumeration_with_ties():
    rng = make_rng(1)
    for n in range(1, 11):
        d = np.round(rng.normal(0.3, 1.0, size=n), 1)
        assert wilcoxon_signed_rank(d).p_value == pytest.approx(enumerated_p(d), abs=1e-12)


def test_wilcoxon_exact_and_normal_agree_at_ten():
    rng = make_rng(2)
    for _ in range(10):
        d = rng.normal(0.2, 1.0, size=10)
        assert abs(wilcoxon_signed_rank(d).p_value - wilcoxon_normal(d)) <= 0.05


def test_wilcoxon_large_sample_uses_normal():
    res = wilcoxon_signed_rank(np.arange(1, 31))
    assert res.method == "normal" and res.p_value < 1e-4


def test_paired_direction():
    _, d = paired_wilcoxon([2, 3, 4, 5], [1, 1, 1, 1])
    assert d == 1
    _, d = paired_wilcoxon([1, 1, 1], [2, 3, 4])
    assert d == -1
    _, d = paired_wilcoxon([1, 2], [1, 2])
    assert d == 0


def test_untrained_net_auc_near_chance():
    from dataclasses import replace

    from owcl.datagen import GenSpec, generate, split_tasks

    stream = split_tasks(generate(replace(GenSpec(), train_per_class=2, test_per_class=60)), 8, 0)
    aucs = []
    for seed in range(5):
        net = MultimodalNet(stream.modalities, stream.dims, 8, make_rng(seed))
        res = evaluate_task(net, None, stream, 0, strategies=(Strategy.BASELINE_MAXLOGIT,))
        aucs.append(res.auc["baseline_maxlogit"])
    assert abs(np.mean(aucs) - 0.5) <= 0.1


def test_oracle_scorer_is_perfect(small_stream):
    net = MultimodalNet(small_stream.modalities, small_stream.dims, 4, make_rng(0))
    known = len(small_stream.seen_classes(1))

    def oracle(_, labels):
        return (labels < known).astype(float)

    res = evaluate_task(net, None, small_stream, 1, strategies=(oracle,))
    assert res.auc["oracle"] == 1.0 and res.fpr95["oracle"] == 0.0
    assert len(res.accuracies) == 2


def test_last_task_reports_accuracy_only(small_stream):
    net = MultimodalNet(small_stream.modalities, small_stream.dims, 6, make_rng(0))
    res = evaluate_task(net, None, small_stream, 2, strategies=(Strategy.BASELINE_ENERGY,))
    assert res.auc == {} and len(res.accuracies) == 3
    with pytest.raises(IndexError):
        evaluate_task(net, None, small_stream, 3)


def test_evaluation_does_not_mutate_snapshot(small_stream):
    net = MultimodalNet(small_stream.modalities, small_stream.dims, 2, make_rng(0))
    fp = net.fingerprint()
    evaluate_task(net, None, small_stream, 0, strategies=(Strategy.BASELINE_MSP,), keep_scores=True)
    assert net.fingerprint() == fp
