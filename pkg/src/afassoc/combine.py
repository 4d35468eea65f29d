"""Adaptive weighted p-value combination (AFp, AFz) and the Fisher/minP baselines.

All four methods compare an observed per-gene statistic against the pooled
permutation null of B*p values.  The weighted statistic of a 0/1 weight
mask is ``U(w) = -sum_k w_k ln p_k``.

Masks are visited in Gray-code order so each step adds or removes a single
phenotype column.  ``-ln p`` is held in fixed point (2**-48 resolution) as
int64, which makes the incremental update exact and order-free; ties
between genes with identical p-value subsets therefore compare equal.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .data import MAX_PHENOTYPES, PValueMatrix
from .errors import DegenerateNull, ResolutionWarning, ValidationError
from .permnull import NullStore

FIXED_POINT_BITS = 48
_SCALE = float(2**FIXED_POINT_BITS)

METHODS = ("afp", "afz", "fisher", "minp")


# --------------------------------------------------------------------------
# weight space


def enumerate_weights(K: int) -> np.ndarray:
    """All 2^K - 1 nonzero masks in reflected Gray-code order.

    Bit ``k`` of a mask selects phenotype ``k`` (0-based).  Consecutive
    masks differ in exactly one bit.
    """
    if not 1 <= K <= MAX_PHENOTYPES:
        raise ValidationError(f"K must lie in [1, {MAX_PHENOTYPES}], got {K}")
    i = np.arange(1, 2**K, dtype=np.int64)
    return i ^ (i >> 1)


def mask_to_bits(mask: int, K: int) -> np.ndarray:
    return (int(mask) >> np.arange(K)) & 1


def bits_to_mask(bits) -> int:
    bits = np.asarray(bits).astype(np.int64)
    if bits.ndim != 1 or not np.all((bits == 0) | (bits == 1)) or not bits.any():
        raise ValidationError("weight vector must be a nonzero 0/1 vector")
    return int((bits << np.arange(bits.size)).sum())


def weighted_stat(logp_row, w) -> float:
    """``sum_k w_k * logp_row[k]`` where ``logp_row`` holds ``-ln p``.

    ``w`` may be a 0/1 sequence or an integer mask.
    """
    logp_row = np.asarray(logp_row, dtype=float)
    if np.any(logp_row < 0):
        raise ValidationError("logp_row must hold -ln p >= 0")
    bits = mask_to_bits(w, logp_row.size) if np.isscalar(w) else np.asarray(w)
    return float(np.sum(logp_row[bits.astype(bool)]))


def neglog_fixed(p: np.ndarray) -> np.ndarray:
    """``-ln p`` rounded to the fixed-point grid, as int64."""
    return np.rint(-np.log(p) * _SCALE).astype(np.int64)


def gray_scan(L_obs: np.ndarray, L_null: np.ndarray, masks: np.ndarray | None = None):
    """Yield ``(mask, U_obs, U_null)`` per mask with integer weighted sums.

    With the default Gray order every step touches one column.  A custom
    ``masks`` sequence is evaluated by direct summation.
    """
    K = L_obs.shape[1]
    if masks is None:
        masks = enumerate_weights(K)
        u_obs = np.zeros(L_obs.shape[0], dtype=np.int64)
        u_null = np.zeros(L_null.shape[0], dtype=np.int64)
        prev = 0
        for m in masks.tolist():
            flip = m ^ prev
            k = flip.bit_length() - 1
            if m & flip:
                u_obs += L_obs[:, k]
                u_null += L_null[:, k]
            else:
                u_obs -= L_obs[:, k]
                u_null -= L_null[:, k]
            prev = m
            yield m, u_obs, u_null
    else:
        for m in np.asarray(masks).tolist():
            sel = mask_to_bits(m, K).astype(bool)
            if not sel.any():
                raise ValidationError("mask 0 is not a valid weight")
            yield m, L_obs[:, sel].sum(axis=1), L_null[:, sel].sum(axis=1)


def full_weighted_stats(L: np.ndarray, masks: np.ndarray) -> np.ndarray:
    """Reference (rows x masks) matrix of weighted sums, recomputed per mask."""
    bits = ((masks[None, :] >> np.arange(L.shape[1])[:, None]) & 1).astype(bool)
    return np.stack([L[:, bits[:, i]].sum(axis=1) for i in range(len(masks))], axis=1)


# --------------------------------------------------------------------------
# results


@dataclass
class AdaptiveResult:
    """Per-gene output of one combination method.

    ``mask`` is the selected weight (int bitmask) for AFp/AFz and ``None``
    for the baselines.  ``p_raw`` follows the permutation formula exactly
    and may be 0; ``p_floored`` replaces such zeros with ``1/(B*p + 1)``.
    """

    method: str
    statistic: np.ndarray
    p_raw: np.ndarray
    mask: np.ndarray | None
    u_at_weight: np.ndarray | None
    n_null: int

    @property
    def floor_flag(self) -> np.ndarray:
        return self.p_raw == 0

    @property
    def p_floored(self) -> np.ndarray:
        return np.maximum(self.p_raw, 1.0 / (self.n_null + 1))

    def weights(self, K: int) -> np.ndarray:
        """Selected weights as a p x K 0/1 matrix."""
        if self.mask is None:
            raise ValidationError(f"{self.method} does not select weights")
        return ((self.mask[:, None] >> np.arange(K)[None, :]) & 1).astype(np.int8)


def _check(pm: PValueMatrix, null: NullStore):
    B, p, K = null.pvals.shape
    if pm.values.shape != (p, K):
        raise ValidationError(
            f"observed p-values {pm.values.shape} do not match null store p x K = {(p, K)}"
        )
    if B * p < 2:
        raise ValidationError("pooled null needs at least 2 values")
    return B * p


def _resolution_check(alpha, N):
    if alpha is not None and alpha < 1.0 / N:
        warnings.warn(
            f"threshold {alpha:.3g} is below the permutation resolution 1/(B*p)={1.0 / N:.3g}",
            ResolutionWarning, stacklevel=3,
        )


def _ge_counts(u_null: np.ndarray, u_obs: np.ndarray):
    """``#{null >= v}`` for every null value and every observed value."""
    N = u_null.size
    order = np.argsort(u_null)
    s = u_null[order]
    start = np.empty(N, dtype=bool)
    start[0] = True
    np.not_equal(s[1:], s[:-1], out=start[1:])
    first = np.maximum.accumulate(np.where(start, np.arange(N), 0))
    c_null = np.empty(N, dtype=np.int64)
    c_null[order] = N - first
    c_obs = N - np.searchsorted(s, u_obs, side="left")
    return c_null, c_obs, s[-1]


def _prefer(better_primary, tie_primary, u, best_u, mask, best_mask):
    return better_primary | (tie_primary & ((u > best_u) | ((u == best_u) & (mask < best_mask))))


def afp(pm: PValueMatrix, null: NullStore, masks=None, alpha: float | None = None) -> AdaptiveResult:
    """Minimum over weights of the pooled-null p-value of ``U(w)``.

    ``p_U(u) = #{null U >= u} / N`` is evaluated for observed genes and for
    every pooled null value; the gene statistic ``T`` is its minimum over
    masks and ``p_T = #{T_null <= T} / N``.

    Ties in ``p_U`` are broken in three steps.  When ``U`` lies beyond every
    pooled null value (``p_U = 0``) the mask clearing the null maximum by
    the widest margin wins; remaining ties prefer the larger ``U``, then
    the smaller mask integer.
    """
    N = _check(pm, null)
    _resolution_check(alpha, N)
    L_obs = neglog_fixed(pm.values)
    L_null = neglog_fixed(null.pooled())
    G = L_obs.shape[0]
    best_c = np.full(G, N + 1, dtype=np.int64)
    best_gap = np.full(G, -1, dtype=np.int64)
    best_u = np.zeros(G, dtype=np.int64)
    best_m = np.zeros(G, dtype=np.int64)
    t_null = np.full(N, N + 1, dtype=np.int64)
    for m, u_obs, u_null in gray_scan(L_obs, L_null, masks):
        c_null, c_obs, top = _ge_counts(u_null, u_obs)
        np.minimum(t_null, c_null, out=t_null)
        gap = np.where(c_obs == 0, u_obs - top, 0)
        tie = c_obs == best_c
        take = _prefer((c_obs < best_c) | (tie & (gap > best_gap)), tie & (gap == best_gap),
                       u_obs, best_u, m, best_m)
        best_c[take], best_gap[take] = c_obs[take], gap[take]
        best_u[take], best_m[take] = u_obs[take], m
    t_sorted = np.sort(t_null)
    p_count = np.searchsorted(t_sorted, best_c, side="right")
    return AdaptiveResult(
        method="afp", statistic=best_c / N, p_raw=p_count / N, mask=best_m,
        u_at_weight=best_u / _SCALE, n_null=N,
    )


def afz(pm: PValueMatrix, null: NullStore, masks=None, alpha: float | None = None) -> AdaptiveResult:
    """Maximum over weights of ``U(w)`` standardized by the pooled null.

    Mean and standard deviation use population formulas over the N pooled
    values; ``p_T = #{T_null >= T} / N``.
    """
    N = _check(pm, null)
    _resolution_check(alpha, N)
    L_obs = neglog_fixed(pm.values)
    L_null = neglog_fixed(null.pooled())
    G = L_obs.shape[0]
    best_z = np.full(G, -np.inf)
    best_u = np.zeros(G, dtype=np.int64)
    best_m = np.zeros(G, dtype=np.int64)
    t_null = np.full(N, -np.inf)
    for m, u_obs, u_null in gray_scan(L_obs, L_null, masks):
        un = u_null / _SCALE
        mean = un.mean()
        sd = np.sqrt(np.mean((un - mean) ** 2))
        if not sd > 0:
            raise DegenerateNull(f"pooled null for mask {m:#x} has zero standard deviation")
        z_obs = (u_obs / _SCALE - mean) / sd
        np.maximum(t_null, (un - mean) / sd, out=t_null)
        take = _prefer(z_obs > best_z, z_obs == best_z, u_obs, best_u, m, best_m)
        best_z[take], best_u[take], best_m[take] = z_obs[take], u_obs[take], m
    t_sorted = np.sort(t_null)
    p_count = N - np.searchsorted(t_sorted, best_z, side="left")
    return AdaptiveResult(
        method="afz", statistic=best_z, p_raw=p_count / N, mask=best_m,
        u_at_weight=best_u / _SCALE, n_null=N,
    )


def fisher_perm(pm: PValueMatrix, null: NullStore, alpha: float | None = None) -> AdaptiveResult:
    """``-2 sum ln p`` against pooled null Fisher statistics (count >=)."""
    N = _check(pm, null)
    _resolution_check(alpha, N)
    u_obs = neglog_fixed(pm.values).sum(axis=1)
    u_null = np.sort(neglog_fixed(null.pooled()).sum(axis=1))
    count = N - np.searchsorted(u_null, u_obs, side="left")
    stat = -2.0 * np.log(pm.values).sum(axis=1)
    return AdaptiveResult(method="fisher", statistic=stat, p_raw=count / N, mask=None,
                          u_at_weight=None, n_null=N)


def minp_perm(pm: PValueMatrix, null: NullStore, alpha: float | None = None) -> AdaptiveResult:
    """``min_k p_k`` against pooled null minima (count <=)."""
    N = _check(pm, null)
    _resolution_check(alpha, N)
    obs = pm.values.min(axis=1)
    ref = np.sort(null.pooled().min(axis=1))
    count = np.searchsorted(ref, obs, side="right")
    return AdaptiveResult(method="minp", statistic=obs, p_raw=count / N, mask=None,
                          u_at_weight=None, n_null=N)


_DISPATCH = {"afp": afp, "afz": afz, "fisher": fisher_perm, "minp": minp_perm}


def run_method(method: str, pm: PValueMatrix, null: NullStore, **kw) -> AdaptiveResult:
    try:
        fn = _DISPATCH[method.lower()]
    except KeyError:
        raise ValidationError(f"unknown method {method!r}; choose from {METHODS}") from None
    return fn(pm, null, **kw)


def bonferroni_select(p_values, alpha: float = 0.05, p: int | None = None,
                      B: int | None = None, gene_ids=None) -> set:
    """Genes with ``p < alpha / p``.

    Returns gene ids when ``gene_ids`` is given, otherwise indices.  With
    ``B`` supplied a :class:`ResolutionWarning` is raised when the threshold
    is finer than ``1/(B*p)``.
    """
    if not 0 < alpha < 1:
        raise ValidationError("alpha must lie in (0, 1)")
    pv = np.asarray(p_values, dtype=float)
    p = pv.size if p is None else p
    thr = alpha / p
    if B is not None and thr < 1.0 / (B * p):
        warnings.warn(
            f"Bonferroni threshold {thr:.3g} is below the permutation resolution "
            f"1/(B*p)={1.0 / (B * p):.3g}; use B >= {int(np.ceil(1 / alpha))}",
            ResolutionWarning, stacklevel=2,
        )
    hits = np.flatnonzero(pv < thr)
    if gene_ids is None:
        return set(hits.tolist())
    return {gene_ids[i] for i in hits}
