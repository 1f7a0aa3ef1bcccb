"""Novelty scores. Every strategy returns higher values for more familiar inputs.

Adaptive scoring turns each head's energy into a buffer-normalised
reliability, softmaxes reliabilities into modality weights, adds the weighted
head logits to the main logits and takes the max. The fixed-weight strategies
replace the softmax with constant weights; the baselines only look at the
main logits.
"""

from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import kernels
from .errors import DomainError, ShapeError, StateError
from .memory import SIGMA_FLOOR
from .numcore import logsumexp, softmax


class Strategy(str, Enum):
    MOAS_ADAPTIVE = "moas_adaptive"
    MAIN_ONLY = "main_only"
    UNIFORM_SUM = "uniform_sum"
    UNIFORM_AVERAGE = "uniform_average"
    BASELINE_MSP = "baseline_msp"
    BASELINE_MAXLOGIT = "baseline_maxlogit"
    BASELINE_ENTROPY = "baseline_entropy"
    BASELINE_ENERGY = "baseline_energy"

    @property
    def is_baseline(self):
        return self.value.startswith("baseline_")

    def alpha_total(self, n_modalities):
        """What the modality weights must sum to under this strategy."""
        return {
            Strategy.MOAS_ADAPTIVE: 1.0,
            Strategy.UNIFORM_AVERAGE: 1.0,
            Strategy.UNIFORM_SUM: float(n_modalities),
            Strategy.MAIN_ONLY: 0.0,
        }.get(self)


def energy(z):
    z = np.asarray(z, dtype=np.float64)
    if z.size == 0:
        raise DomainError("energy of empty logits")
    return -float(logsumexp(z))


def reliability(e, mu, sigma):
    if not sigma >= SIGMA_FLOOR:
        raise DomainError(f"sigma {sigma} below floor {SIGMA_FLOOR}")
    return -(e - mu) / sigma


def modality_weights(r, strategy):
    r = np.asarray(r, dtype=np.float64)
    if not np.all(np.isfinite(r)):
        raise DomainError("non-finite reliability")
    strategy = Strategy(strategy)
    if strategy is Strategy.MOAS_ADAPTIVE:
        return softmax(r)
    if strategy is Strategy.MAIN_ONLY:
        return np.zeros_like(r)
    if strategy is Strategy.UNIFORM_SUM:
        return np.ones_like(r)
    if strategy is Strategy.UNIFORM_AVERAGE:
        return np.full_like(r, 1.0 / len(r))
    raise DomainError(f"{strategy.value} does not weight modalities")


def combine_logits(z_main, z_m, alpha):
    """``z_main + sum_m alpha[m] * z_m[m]`` for dict-valued ``z_m`` and ``alpha``."""
    out = np.array(z_main, dtype=np.float64, copy=True)
    for m, z in z_m.items():
        z = np.asarray(z, dtype=np.float64)
        if z.shape != out.shape:
            raise ShapeError(f"modality {m!r} logits {z.shape} vs main {out.shape}")
        out = out + alpha[m] * z
    return out


@dataclass(frozen=True)
class ScoringContext:
    snapshot: object
    stats: object
    strategy: Strategy

    def __post_init__(self):
        object.__setattr__(self, "strategy", Strategy(self.strategy))
        if self.strategy is Strategy.MOAS_ADAPTIVE and self.stats is None:
            raise StateError("adaptive scoring needs buffer energy statistics")


@dataclass(frozen=True)
class NoveltyScore:
    s: float
    energy: dict
    reliability: dict
    alpha: dict
    combined: np.ndarray


@dataclass(frozen=True)
class BatchScores:
    """Scores plus per-modality diagnostics; 2-D arrays are (B, M)."""

    s: np.ndarray
    z_main: np.ndarray
    energy: np.ndarray
    reliability: np.ndarray
    alpha: np.ndarray
    modalities: tuple

    def row(self, i):
        mods = self.modalities
        return NoveltyScore(
            float(self.s[i]),
            {m: float(self.energy[i, j]) for j, m in enumerate(mods)},
            {m: float(self.reliability[i, j]) for j, m in enumerate(mods)} if self.reliability is not None else {},
            {m: float(self.alpha[i, j]) for j, m in enumerate(mods)} if self.alpha is not None else {},
            None,
        )


def baseline_scores(z_main, strategy):
    z = np.asarray(z_main, dtype=np.float64)
    if strategy is Strategy.BASELINE_MAXLOGIT:
        return z.max(axis=1)
    if strategy is Strategy.BASELINE_ENERGY:
        return kernels.logsumexp_rows(z)
    p = softmax(z, axis=1)
    if strategy is Strategy.BASELINE_MSP:
        return p.max(axis=1)
    if strategy is Strategy.BASELINE_ENTROPY:
        logp = z - kernels.logsumexp_rows(z)[:, None]
        return np.sum(p * logp, axis=1)
    raise DomainError(f"{strategy.value} is not a baseline")


def score_outputs(ctx, out, keep_combined=False):
    """Score a batch from an already computed forward pass."""
    mods = ctx.snapshot.modalities
    z_mod = np.stack([out.z_m[m] for m in mods])
    strategy = ctx.strategy
    e = r = alpha = combined = None
    if ctx.stats is not None:
        mu, sd = ctx.stats.arrays(mods)
        e, r, a_adapt, c_adapt, s_adapt = kernels.moas_batch(out.z_main, z_mod, mu, sd)
    else:
        e = -np.stack([kernels.logsumexp_rows(out.z_m[m]) for m in mods], axis=1)
    if strategy is Strategy.MOAS_ADAPTIVE:
        alpha, combined, s = a_adapt, c_adapt, s_adapt
    elif strategy.is_baseline:
        s = baseline_scores(out.z_main, strategy)
    else:
        n = len(out.z_main)
        alpha = np.tile(modality_weights(np.zeros(len(mods)), strategy), (n, 1))
        combined, s = kernels.combine_batch(out.z_main, z_mod, alpha)
    result = BatchScores(s, out.z_main, e, r, alpha, mods)
    return (result, combined) if keep_combined else result


def score_batch(ctx, features):
    return score_outputs(ctx, ctx.snapshot.forward(features))


def score(ctx, sample):
    feats = {m: np.asarray(v, dtype=np.float64)[None, :] for m, v in sample.features.items()}
    res, combined = score_outputs(ctx, ctx.snapshot.forward(feats), keep_combined=True)
    row = res.row(0)
    comb = combined[0] if combined is not None else np.array(res.z_main[0])
    return NoveltyScore(row.s, row.energy, row.reliability, row.alpha, comb)
