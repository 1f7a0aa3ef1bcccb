"""Novelty and continual-learning metrics plus the paired significance test.

ROC polarity: known samples are positives and higher scores mean "known".
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from . import kernels
from .errors import InputError
from .score import ScoringContext, Strategy, score_outputs

TPR_LEVEL_PERCENT = 95


def auc(known_scores, novel_scores):
    """Probability a known score beats a novel one, ties counted half."""
    known = np.asarray(known_scores, dtype=np.float64)
    novel = np.asarray(novel_scores, dtype=np.float64)
    if known.size == 0 or novel.size == 0:
        raise InputError("AUC needs at least one known and one novel score")
    return kernels.mann_whitney_count(known, novel) / (known.size * novel.size)


def fpr_at_95_tpr(known_scores, novel_scores):
    """Fraction of novel scores at or above the threshold that keeps 95% of known ones.

    The threshold is the largest value with at least 95% of known scores
    at or above it, i.e. the ceil(0.95 n)-th largest known score.
    """
    known = np.sort(np.asarray(known_scores, dtype=np.float64))[::-1]
    novel = np.asarray(novel_scores, dtype=np.float64)
    if known.size == 0 or novel.size == 0:
        raise InputError("FPR95 needs at least one known and one novel score")
    k = (TPR_LEVEL_PERCENT * known.size + 99) // 100
    tau = known[k - 1]
    return float(np.count_nonzero(novel >= tau)) / novel.size


@dataclass
class TaskEval:
    task: int
    auc: dict = field(default_factory=dict)
    fpr95: dict = field(default_factory=dict)
    accuracies: list = field(default_factory=list)
    scores: dict = field(default_factory=dict)
    is_novel: np.ndarray = None
    labels: np.ndarray = None
    ids: np.ndarray = None


def _test_pool(stream, tasks):
    from .datagen import concat_batches

    pool = None
    for i in tasks:
        b = stream.tasks[i].test_batch
        pool = b if pool is None else concat_batches(pool, b)
    return pool


def evaluate_task(snapshot, stats, stream, t, strategies=(Strategy.MOAS_ADAPTIVE,), keep_scores=False):
    """Known-vs-novel metrics and per-task accuracies after training task ``t`` (0-based).

    ``strategies`` may mix Strategy values and callables mapping a
    ``(forward_output, labels)`` pair to a score array. The last task has no
    novel classes, so only accuracies are reported for it.
    """
    n_tasks = len(stream.tasks)
    if not 0 <= t < n_tasks:
        raise IndexError(f"task {t} outside 0..{n_tasks - 1}")
    pool = _test_pool(stream, range(n_tasks))
    out = snapshot.forward(pool.features)
    n_known_cls = len(stream.seen_classes(t))
    is_novel = pool.labels >= n_known_cls
    res = TaskEval(t)
    pred = np.argmax(out.z_main, axis=1)
    for i in range(t + 1):
        sel = np.isin(pool.labels, stream.tasks[i].classes)
        res.accuracies.append(float(np.mean(pred[sel] == pool.labels[sel])))
    if keep_scores:
        res.is_novel, res.labels, res.ids = is_novel, pool.labels, pool.ids
    for strat in strategies:
        if callable(strat) and not isinstance(strat, Strategy):
            name, s = getattr(strat, "__name__", "custom"), np.asarray(strat(out, pool.labels))
            diag = None
        else:
            strat = Strategy(strat)
            diag = score_outputs(ScoringContext(snapshot, stats, strat), out)
            name, s = strat.value, diag.s
        if keep_scores:
            res.scores[name] = diag if diag is not None else s
        if t < n_tasks - 1:
            res.auc[name] = auc(s[~is_novel], s[is_novel])
            res.fpr95[name] = fpr_at_95_tpr(s[~is_novel], s[is_novel])
    return res


@dataclass(frozen=True)
class Aggregate:
    auc_T: float
    fpr95_T: float
    acc_T: float
    fgt_T: float
    auc_final: float
    fpr95_final: float


def aggregate(per_task_auc, per_task_fpr, acc_matrix):
    """Stream-level summary.

    ``acc_matrix[t][i]`` is accuracy on task ``i`` after training task ``t``.
    Novelty metrics average the tasks that had novel classes (all but the
    last). Forgetting is the mean drop from each earlier task's best
    accuracy to its final accuracy, and is NaN for single-task streams.
    """
    n = len(acc_matrix)
    if n == 0 or any(len(row) != t + 1 for t, row in enumerate(acc_matrix)):
        raise InputError("accuracy matrix must be lower triangular with one row per task")
    if len(per_task_auc) not in (n - 1, n) or len(per_task_fpr) != len(per_task_auc):
        raise InputError("novelty metrics must cover the first T-1 tasks")
    auc_vals = list(per_task_auc)[: n - 1]
    fpr_vals = list(per_task_fpr)[: n - 1]
    final = acc_matrix[-1]
    acc_T = float(np.mean(final))
    if n < 2:
        fgt_T = float("nan")
    else:
        drops = [max(acc_matrix[t][i] for t in range(i, n - 1)) - final[i] for i in range(n - 1)]
        fgt_T = float(np.mean(drops))
    nan = float("nan")
    return Aggregate(
        float(np.mean(auc_vals)) if auc_vals else nan,
        float(np.mean(fpr_vals)) if fpr_vals else nan,
        acc_T,
        fgt_T,
        float(auc_vals[-1]) if auc_vals else nan,
        float(fpr_vals[-1]) if fpr_vals else nan,
    )


@dataclass(frozen=True)
class WilcoxonResult:
    statistic: float
    p_value: float
    n: int
    method: str


EXACT_MAX_N = 20


def _signed_ranks(diffs):
    x = np.asarray(diffs, dtype=np.float64)
    x = x[x != 0]
    ranks = rankdata(np.abs(x))
    return x, ranks, float(ranks[x > 0].sum())


def _normal_p(x, w_plus):
    n = x.size
    mean = n * (n + 1) / 4.0
    _, tie_sizes = np.unique(np.abs(x), return_counts=True)
    var = n * (n + 1) * (2 * n + 1) / 24.0 - np.sum(tie_sizes ** 3 - tie_sizes) / 48.0
    z = max(abs(w_plus - mean) - 0.5, 0.0) / math.sqrt(var)
    return min(1.0, math.erfc(z / math.sqrt(2.0)))


def wilcoxon_signed_rank(diffs):
    """Two-sided Wilcoxon signed-rank test on paired differences.

    Zeros are dropped and tied magnitudes get mid-ranks. For n <= 20 the
    null distribution of the positive-rank sum is counted exactly over all
    2^n sign assignments; larger samples use the normal approximation with
    tie and continuity corrections.
    """
    x, ranks, w_plus = _signed_ranks(diffs)
    n = x.size
    if n == 0:
        return WilcoxonResult(0.0, 1.0, 0, "degenerate")
    if n > EXACT_MAX_N:
        return WilcoxonResult(w_plus, _normal_p(x, w_plus), n, "normal")
    counts = kernels.signed_rank_counts(np.rint(2 * ranks).astype(np.int64))
    total = counts.sum()
    w2 = int(round(2 * w_plus))
    lower = counts[: w2 + 1].sum() / total
    upper = counts[w2:].sum() / total
    return WilcoxonResult(w_plus, min(1.0, 2.0 * min(lower, upper)), n, "exact")


def wilcoxon_normal(diffs):
    """Normal-approximation p-value regardless of sample size."""
    x, _, w_plus = _signed_ranks(diffs)
    return 1.0 if x.size == 0 else _normal_p(x, w_plus)


def paired_wilcoxon(a, b):
    """Test on ``a - b``; direction is +1 if ``a`` tends higher, -1 if lower, 0 otherwise."""
    d = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    res = wilcoxon_signed_rank(d)
    if res.n == 0:
        return res, 0
    mean_rank = res.n * (res.n + 1) / 4.0
    return res, int(np.sign(res.statistic - mean_rank))
