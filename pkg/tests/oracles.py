"""Naive reference implementations used as test oracles.

Everything here is written as plain loops over genes, masks and null
values so it shares no code path with the vectorized library.
"""

import itertools
import math

import numpy as np


def all_masks(K):
    return list(range(1, 2**K))


def U(prow, mask):
    return sum(-math.log(prow[k]) for k in range(len(prow)) if mask >> k & 1)


def afp_naive(obs, null_pool):
    """obs: p x K, null_pool: N x K. Returns (T, p_T, mask) per gene."""
    N, K = len(null_pool), len(obs[0])
    masks = all_masks(K)
    t_null = [math.inf] * N
    res = []
    per_mask = {}
    for m in masks:
        nu = [U(r, m) for r in null_pool]
        per_mask[m] = nu
        for i in range(N):
            c = sum(1 for v in nu if v >= nu[i])
            t_null[i] = min(t_null[i], c / N)
    for row in obs:
        best = None
        for m in masks:
            nu = per_mask[m]
            u = U(row, m)
            c = sum(1 for v in nu if v >= u)
            gap = u - max(nu) if c == 0 else 0.0
            key = (c, -gap, -u, m)
            if best is None or key < best[0]:
                best = (key, m, c / N)
        T = best[2]
        pT = sum(1 for t in t_null if t <= T) / N
        res.append((T, pT, best[1]))
    return res


def afz_naive(obs, null_pool):
    N, K = len(null_pool), len(obs[0])
    t_null = [-math.inf] * N
    stats = {}
    for m in all_masks(K):
        nu = [U(r, m) for r in null_pool]
        mean = sum(nu) / N
        sd = math.sqrt(sum((v - mean) ** 2 for v in nu) / N)
        stats[m] = (mean, sd)
        for i in range(N):
            t_null[i] = max(t_null[i], (nu[i] - mean) / sd)
    res = []
    for row in obs:
        best = None
        for m in all_masks(K):
            mean, sd = stats[m]
            u = U(row, m)
            z = (u - mean) / sd
            key = (-z, -u, m)
            if best is None or key < best[0]:
                best = (key, m, z)
        T = best[2]
        pT = sum(1 for t in t_null if t >= T) / N
        res.append((T, pT, best[1]))
    return res


def fisher_naive(obs, null_pool):
    N = len(null_pool)
    out = []
    for row in obs:
        t = -2 * sum(math.log(v) for v in row)
        ref = [-2 * sum(math.log(v) for v in r) for r in null_pool]
        out.append((t, sum(1 for r in ref if r >= t) / N))
    return out


def minp_naive(obs, null_pool):
    N = len(null_pool)
    out = []
    for row in obs:
        t = min(row)
        out.append((t, sum(1 for r in null_pool if min(r) <= t) / N))
    return out


def hypergeom_upper(N, K, n, k):
    """P(X >= k) for X ~ Hypergeom(population N, K successes, n draws) by counting."""
    total = math.comb(N, n)
    return sum(math.comb(K, i) * math.comb(N - K, n - i) for i in range(k, min(K, n) + 1)) / total


def perm_counts(orders):
    counts = {}
    for o in orders:
        counts[tuple(o)] = counts.get(tuple(o), 0) + 1
    return counts, list(itertools.permutations(range(len(orders[0]))))
