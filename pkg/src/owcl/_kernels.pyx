# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops. Semantics mirror ``_pykernels`` exactly."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log

cnp.import_array()


cdef inline double _lse(const double[:, ::1] z, Py_ssize_t i) noexcept nogil:
    cdef Py_ssize_t c, n = z.shape[1]
    cdef double mx = z[i, 0], acc = 0.0
    for c in range(1, n):
        if z[i, c] > mx:
            mx = z[i, c]
    for c in range(n):
        acc += exp(z[i, c] - mx)
    return mx + log(acc)


def logsumexp_rows(z):
    cdef const double[:, ::1] zv = np.ascontiguousarray(z, dtype=np.float64)
    cdef Py_ssize_t b, nb = zv.shape[0]
    out = np.empty(nb, dtype=np.float64)
    cdef double[::1] ov = out
    with nogil:
        for b in range(nb):
            ov[b] = _lse(zv, b)
    return out


def moas_batch(z_main, z_mod, mu, sigma):
    """Adaptive scoring for a batch.

    z_main is (B, C), z_mod is (M, B, C); returns energies (B, M),
    reliabilities (B, M), weights (B, M), combined logits (B, C), scores (B,).
    """
    cdef const double[:, ::1] zm = np.ascontiguousarray(z_main, dtype=np.float64)
    cdef const double[:, :, ::1] zk = np.ascontiguousarray(z_mod, dtype=np.float64)
    cdef const double[::1] mu_v = np.ascontiguousarray(mu, dtype=np.float64)
    cdef const double[::1] sd_v = np.ascontiguousarray(sigma, dtype=np.float64)
    cdef Py_ssize_t nm = zk.shape[0], nb = zm.shape[0], nc = zm.shape[1]
    cdef Py_ssize_t b, m, c
    energy = np.empty((nb, nm), dtype=np.float64)
    rel = np.empty((nb, nm), dtype=np.float64)
    alpha = np.empty((nb, nm), dtype=np.float64)
    combined = np.empty((nb, nc), dtype=np.float64)
    score = np.empty(nb, dtype=np.float64)
    cdef double[:, ::1] ev = energy, rv = rel, av = alpha, cv = combined
    cdef double[::1] sv = score
    cdef double mx, tot, best, e, acc, emax
    with nogil:
        for b in range(nb):
            for m in range(nm):
                # log-sum-exp of row b of modality m
                emax = zk[m, b, 0]
                for c in range(1, nc):
                    if zk[m, b, c] > emax:
                        emax = zk[m, b, c]
                acc = 0.0
                for c in range(nc):
                    acc += exp(zk[m, b, c] - emax)
                e = -(emax + log(acc))
                ev[b, m] = e
                rv[b, m] = -(e - mu_v[m]) / sd_v[m]
            mx = rv[b, 0]
            for m in range(1, nm):
                if rv[b, m] > mx:
                    mx = rv[b, m]
            tot = 0.0
            for m in range(nm):
                av[b, m] = exp(rv[b, m] - mx)
                tot += av[b, m]
            for m in range(nm):
                av[b, m] = av[b, m] / tot
            for c in range(nc):
                acc = zm[b, c]
                for m in range(nm):
                    acc = acc + av[b, m] * zk[m, b, c]
                cv[b, c] = acc
            best = cv[b, 0]
            for c in range(1, nc):
                if cv[b, c] > best:
                    best = cv[b, c]
            sv[b] = best
    return energy, rel, alpha, combined, score


def combine_batch(z_main, z_mod, alpha):
    """Combined logits z_main + sum_m alpha[b, m] * z_mod[m] and their row max."""
    cdef const double[:, ::1] zm = np.ascontiguousarray(z_main, dtype=np.float64)
    cdef const double[:, :, ::1] zk = np.ascontiguousarray(z_mod, dtype=np.float64)
    cdef const double[:, ::1] av = np.ascontiguousarray(alpha, dtype=np.float64)
    cdef Py_ssize_t nm = zk.shape[0], nb = zm.shape[0], nc = zm.shape[1]
    cdef Py_ssize_t b, m, c
    combined = np.empty((nb, nc), dtype=np.float64)
    score = np.empty(nb, dtype=np.float64)
    cdef double[:, ::1] cv = combined
    cdef double[::1] sv = score
    cdef double acc, best
    with nogil:
        for b in range(nb):
            for c in range(nc):
                acc = zm[b, c]
                for m in range(nm):
                    acc = acc + av[b, m] * zk[m, b, c]
                cv[b, c] = acc
            best = cv[b, 0]
            for c in range(1, nc):
                if cv[b, c] > best:
                    best = cv[b, c]
            sv[b] = best
    return combined, score


def signed_rank_counts(twice_ranks):
    """Number of sign assignments giving each positive-rank sum.

    ``twice_ranks`` holds 2x the (mid-)ranks as non-negative integers; entry k
    of the result counts subsets whose doubled-rank sum equals k.
    """
    cdef const cnp.int64_t[::1] rk = np.ascontiguousarray(twice_ranks, dtype=np.int64)
    cdef Py_ssize_t n = rk.shape[0], i, s, total = 0, r
    for i in range(n):
        total += rk[i]
    counts = np.zeros(total + 1, dtype=np.float64)
    cdef double[::1] cv = counts
    cv[0] = 1.0
    cdef Py_ssize_t upto = 0
    with nogil:
        for i in range(n):
            r = rk[i]
            upto += r
            s = upto
            while s >= r:
                cv[s] += cv[s - r]
                s -= 1
    return counts


def mann_whitney_count(known, novel):
    """Pairs with known > novel plus half the ties, via one merged sort."""
    cdef const double[::1] k = np.sort(np.asarray(known, dtype=np.float64))
    cdef const double[::1] v = np.sort(np.asarray(novel, dtype=np.float64))
    cdef Py_ssize_t nk = k.shape[0], nv = v.shape[0]
    cdef Py_ssize_t i = 0, lo = 0, hi = 0
    cdef double wins = 0.0
    with nogil:
        for i in range(nk):
            while lo < nv and v[lo] < k[i]:
                lo += 1
            if hi < lo:
                hi = lo
            while hi < nv and v[hi] <= k[i]:
                hi += 1
            wins += lo + 0.5 * (hi - lo)
    return wins
