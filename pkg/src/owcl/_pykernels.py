"""Pure-numpy versions of the compiled kernels in ``_kernels.pyx``."""

import numpy as np


def logsumexp_rows(z):
    z = np.asarray(z, dtype=np.float64)
    mx = z.max(axis=1)
    return mx + np.log(np.exp(z - mx[:, None]).sum(axis=1))


def moas_batch(z_main, z_mod, mu, sigma):
    z_main = np.asarray(z_main, dtype=np.float64)
    z_mod = np.asarray(z_mod, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    mx = z_mod.max(axis=2, keepdims=True)
    lse = mx[..., 0] + np.log(np.exp(z_mod - mx).sum(axis=2))
    energy = -lse.T  # (B, M)
    rel = -(energy - mu) / sigma
    w = np.exp(rel - rel.max(axis=1, keepdims=True))
    alpha = w / w.sum(axis=1, keepdims=True)
    combined, score = combine_batch(z_main, z_mod, alpha)
    return energy, rel, alpha, combined, score


def combine_batch(z_main, z_mod, alpha):
    combined = np.array(z_main, dtype=np.float64, copy=True)
    alpha = np.asarray(alpha, dtype=np.float64)
    for m in range(z_mod.shape[0]):
        combined = combined + alpha[:, m:m + 1] * z_mod[m]
    return combined, combined.max(axis=1)


def signed_rank_counts(twice_ranks):
    rk = np.asarray(twice_ranks, dtype=np.int64)
    counts = np.zeros(int(rk.sum()) + 1, dtype=np.float64)
    counts[0] = 1.0
    upto = 0
    for r in rk:
        r = int(r)
        upto += r
        if r == 0:
            counts *= 2.0
            continue
        counts[r:upto + 1] = counts[r:upto + 1] + counts[:upto + 1 - r]
    return counts


def mann_whitney_count(known, novel):
    k = np.asarray(known, dtype=np.float64)
    v = np.sort(np.asarray(novel, dtype=np.float64))
    below = np.searchsorted(v, k, side="left")
    at_or_below = np.searchsorted(v, k, side="right")
    return float(below.sum() + 0.5 * (at_or_below - below).sum())
