"""Per gene x phenotype regression fits and Wald p-values.

Continuous phenotypes use ordinary least squares with a two-sided t test;
count phenotypes use Poisson regression (log link) fitted by iteratively
reweighted least squares with step halving and a two-sided normal test.
An intercept is always part of the design.

The batched kernels (:func:`ols_batch`, :func:`poisson_batch`) fit one
response against many gene columns at once and are shared by the observed
association scan and the permutation null.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .data import Dataset, PValueMatrix
from .errors import PreconditionError, RankDeficient

P_FLOOR = 1e-300
SEPARATION_THETA = 30.0
POISSON_TOL = 1e-8
POISSON_MAXITER = 25
_MAX_HALVINGS = 30
_CHUNK = 2048

# cell flags
FLAG_OK = 0
FLAG_RANK = 1         # gene column collinear with the covariate design
FLAG_PERFECT = 2      # zero residual sum of squares
FLAG_SEPARATION = 3   # |theta| beyond SEPARATION_THETA
FLAG_NOT_CONVERGED = 4
FLAG_DEGENERATE_Y = 5  # constant or all-zero response


@dataclass
class GlmFit:
    theta: float
    se: float
    wald_p: float
    sign: int
    alpha_coefs: np.ndarray
    converged: bool = True
    iterations: int = 0
    flag: str | None = None
    deviances: list[float] = field(default_factory=list)


def design_basis(covariates: np.ndarray | None, n: int) -> np.ndarray:
    """Orthonormal basis of span{1, Z}; raises RankDeficient on collinearity."""
    cols = [np.ones(n)]
    if covariates is not None and np.size(covariates):
        Z = np.asarray(covariates, dtype=float).reshape(n, -1)
        cols.extend(Z.T)
    C = np.column_stack(cols)
    Q, R = np.linalg.qr(C)
    diag = np.abs(np.diag(R))
    scale = np.linalg.norm(C, axis=0)
    if np.any(diag <= 1e-10 * np.maximum(scale, 1e-300)):
        raise RankDeficient("covariate design [1, Z] is rank deficient")
    return Q


def residualize(gene_vector, covariates=None) -> np.ndarray:
    """Residual of ``gene_vector`` after projecting out the intercept and covariates."""
    x = np.asarray(gene_vector, dtype=float)
    n = x.shape[-1]
    if covariates is not None and np.size(covariates) and n <= np.shape(covariates)[-1] + 1:
        raise PreconditionError("need n > M + 1 to residualize")
    Q = design_basis(covariates, n)
    return x - (x @ Q) @ Q.T


def _wald_t_p(t: np.ndarray, df: float) -> np.ndarray:
    return 2.0 * special.stdtr(df, -np.abs(t))


def _wald_z_p(z: np.ndarray) -> np.ndarray:
    return special.erfc(np.abs(z) / np.sqrt(2.0))


def ols_batch(X: np.ndarray, Y: np.ndarray, Q: np.ndarray):
    """Least-squares fits of every column of ``Y`` on each gene row of ``X``.

    ``Q`` is an orthonormal basis of the nuisance design (intercept first).
    By Frisch-Waugh-Lovell the gene coefficient equals the slope between the
    nuisance-residualized gene and response.

    Returns ``(theta, se, p, flags)``, each ``(G, K)``.
    """
    X = np.atleast_2d(X)
    Y = Y.reshape(Y.shape[0], -1)
    n, c = Q.shape
    df = n - c - 1
    ex = X - (X @ Q) @ Q.T
    ey = Y - Q @ (Q.T @ Y)
    sxx = np.einsum("gn,gn->g", ex, ex)
    xx_raw = np.einsum("gn,gn->g", X, X)
    sxy = ex @ ey
    syy = np.einsum("nk,nk->k", ey, ey)
    G, K = sxy.shape

    rank_bad = sxx <= 1e-12 * np.maximum(xx_raw, 1e-300)
    y_bad = syy <= 1e-24 * np.maximum(np.einsum("nk,nk->k", Y, Y), 1e-300)
    with np.errstate(divide="ignore", invalid="ignore"):
        theta = sxy / sxx[:, None]
        rss = np.maximum(syy[None, :] - theta * sxy, 0.0)
        se = np.sqrt(rss / df / sxx[:, None])
        t = theta / se
    perfect = rss <= 1e-12 * syy[None, :]
    p = _wald_t_p(t, df)

    flags = np.zeros((G, K), dtype=np.int8)
    flags[perfect] = FLAG_PERFECT
    p = np.where(perfect, P_FLOOR, p)
    flags[:, y_bad] = FLAG_DEGENERATE_Y
    flags[rank_bad, :] = FLAG_RANK
    bad = rank_bad[:, None] | y_bad[None, :] | ~np.isfinite(theta)
    theta = np.where(bad, 0.0, theta)
    p = np.where(bad, 1.0, p)
    p = np.clip(np.nan_to_num(p, nan=1.0), P_FLOOR, 1.0)
    return theta, se, p, flags


def _poisson_dev(y, eta):
    # 2 * sum(y log(y/mu) - (y - mu)) with y*log(mu) written as y*eta
    mu = np.exp(eta)
    return 2.0 * np.sum(special.xlogy(y, y) - y * eta - (y - mu), axis=-1)


def _gram(D, w):
    """Batched ``D' diag(w) D``."""
    return np.matmul(D.transpose(0, 2, 1) * w[:, None, :], D)


def _lin(D, b):
    return np.matmul(D, b[:, :, None])[:, :, 0]


def _poisson_chunk(y, D, trace):
    G, n, d = D.shape
    beta = np.zeros((G, d))
    beta[:, 0] = np.log(y.mean())
    eta = _lin(D, beta)
    dev = _poisson_dev(y, eta)
    active = np.ones(G, dtype=bool)
    converged = np.zeros(G, dtype=bool)
    iters = np.zeros(G, dtype=np.int64)
    devs = [dev.copy()] if trace else None
    for _ in range(POISSON_MAXITER):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        Da, ba, ea, da = D[idx], beta[idx], eta[idx], dev[idx]
        mu = np.exp(ea)
        z = ea + (y - mu) / mu
        A = _gram(Da, mu)
        rhs = np.matmul((mu * z)[:, None, :], Da)[:, 0, :]
        try:
            new = np.linalg.solve(A, rhs[..., None])[..., 0]
        except np.linalg.LinAlgError:
            new = np.stack([np.linalg.lstsq(a, r, rcond=None)[0] for a, r in zip(A, rhs)])
        new_eta = _lin(Da, new)
        new_eta = np.minimum(new_eta, 700.0)
        new_dev = _poisson_dev(y, new_eta)
        worse = ~(new_dev <= da + 1e-12 * np.abs(da))
        h = 0
        while np.any(worse) and h < _MAX_HALVINGS:
            new[worse] = 0.5 * (ba[worse] + new[worse])
            new_eta[worse] = np.minimum(_lin(Da[worse], new[worse]), 700.0)
            new_dev[worse] = _poisson_dev(y, new_eta[worse])
            worse = ~(new_dev <= da + 1e-12 * np.abs(da))
            h += 1
        # a step that cannot be made non-increasing is rejected
        new[worse], new_eta[worse], new_dev[worse] = ba[worse], ea[worse], da[worse]
        beta[idx], eta[idx], dev[idx] = new, new_eta, new_dev
        iters[idx] += 1
        done = np.abs(new_dev - da) < POISSON_TOL
        converged[idx[done]] = True
        active[idx[done]] = False
        if trace:
            devs.append(dev.copy())
    mu = np.exp(eta)
    A = _gram(D, mu)
    with np.errstate(invalid="ignore", divide="ignore"):
        try:
            cov = np.linalg.inv(A)
            var = cov[:, -1, -1]
        except np.linalg.LinAlgError:
            var = np.array([np.linalg.pinv(a)[-1, -1] for a in A])
        se = np.sqrt(var)
    return beta, se, converged, iters, devs


def poisson_batch(y: np.ndarray, X: np.ndarray, Z: np.ndarray | None = None, trace: bool = False):
    """Poisson log-link fits of count response ``y`` on each gene row of ``X``.

    Every design is ``[1, Z, x_g]`` with ``Z`` and ``x_g`` centered (the
    gene coefficient is unaffected by centering).  Returns a dict of arrays
    keyed ``theta, se, p, flags, converged, iterations, alpha`` and, when
    ``trace`` is set, ``deviances`` of shape ``(iterations + 1, G)``.
    """
    y = np.asarray(y, dtype=float)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    G, n = X.shape
    Zc = np.zeros((n, 0)) if Z is None else np.asarray(Z, dtype=float).reshape(n, -1)
    Zc = Zc - Zc.mean(axis=0)
    Xc = X - X.mean(axis=1, keepdims=True)
    d = Zc.shape[1] + 2
    out = {
        "theta": np.zeros(G), "se": np.full(G, np.inf), "p": np.ones(G),
        "flags": np.zeros(G, dtype=np.int8), "converged": np.zeros(G, dtype=bool),
        "iterations": np.zeros(G, dtype=np.int64), "alpha": np.zeros((G, d - 2)),
    }
    if not np.any(y > 0):
        out["flags"][:] = FLAG_DEGENERATE_Y
        return out
    traces = []
    for s in range(0, G, _CHUNK):
        sl = slice(s, min(G, s + _CHUNK))
        g = sl.stop - sl.start
        D = np.empty((g, n, d))
        D[:, :, 0] = 1.0
        D[:, :, 1:-1] = Zc[None]
        D[:, :, -1] = Xc[sl]
        beta, se, conv, iters, devs = _poisson_chunk(y, D, trace)
        out["theta"][sl] = beta[:, -1]
        out["se"][sl] = se
        out["alpha"][sl] = beta[:, 1:-1]
        out["converged"][sl] = conv
        out["iterations"][sl] = iters
        if trace:
            traces.append(np.array(devs))
    theta, se = out["theta"], out["se"]
    with np.errstate(divide="ignore", invalid="ignore"):
        p = _wald_z_p(theta / se)
    flags = out["flags"]
    raw = np.maximum(np.einsum("gn,gn->g", X, X), 1e-300)
    if Zc.shape[1]:
        Q = design_basis(Zc, n)
        ex = X - (X @ Q) @ Q.T
        rank_bad = np.einsum("gn,gn->g", ex, ex) <= 1e-12 * raw
    else:
        rank_bad = np.einsum("gn,gn->g", Xc, Xc) <= 1e-12 * raw
    flags[~out["converged"]] = FLAG_NOT_CONVERGED
    sep = np.abs(theta) > SEPARATION_THETA
    flags[sep] = FLAG_SEPARATION
    p = np.where(sep, P_FLOOR, p)
    bad = rank_bad | ~np.isfinite(p) | ~np.isfinite(theta)
    flags[bad] = FLAG_RANK
    p = np.where(bad, 1.0, p)
    out["theta"] = np.where(bad, 0.0, theta)
    out["p"] = np.clip(p, P_FLOOR, 1.0)
    if trace:
        out["deviances"] = traces[0] if len(traces) == 1 else traces
    return out


_FLAG_NAMES = {
    FLAG_OK: None, FLAG_RANK: "rank_deficient", FLAG_PERFECT: "degenerate_residual",
    FLAG_SEPARATION: "separation", FLAG_NOT_CONVERGED: "not_converged",
    FLAG_DEGENERATE_Y: "degenerate_response",
}


def _check_single(y, x, covariates, include_covariates):
    y = np.asarray(y, dtype=float).ravel()
    x = np.asarray(x, dtype=float).ravel()
    n = y.size
    if x.size != n:
        raise PreconditionError("y and x differ in length")
    Z = None
    if include_covariates and covariates is not None and np.size(covariates):
        Z = np.asarray(covariates, dtype=float).reshape(n, -1)
    M = 0 if Z is None else Z.shape[1]
    if n <= M + 2:
        raise PreconditionError(f"need n > M + 2 (n={n}, M={M})")
    return y, x, Z


def fit_gaussian(y, x, covariates=None, include_covariates: bool = True) -> GlmFit:
    """OLS of ``y`` on ``[1, Z, x]`` with a t-test on the gene coefficient."""
    y, x, Z = _check_single(y, x, covariates, include_covariates)
    n = y.size
    Q = design_basis(Z, n)
    theta, se, p, flags = ols_batch(x[None], y[:, None], Q)
    if flags[0, 0] == FLAG_RANK:
        raise RankDeficient("gene vector is collinear with the covariate design")
    cols = [np.ones(n)] + ([] if Z is None else list(Z.T)) + [x]
    coef = np.linalg.lstsq(np.column_stack(cols), y, rcond=None)[0]
    th = float(theta[0, 0])
    return GlmFit(
        theta=th, se=float(se[0, 0]), wald_p=float(p[0, 0]), sign=int(np.sign(th)),
        alpha_coefs=coef[1:-1], converged=True, iterations=1,
        flag=_FLAG_NAMES[int(flags[0, 0])],
    )


def fit_poisson(y, x, covariates=None, include_covariates: bool = True) -> GlmFit:
    """Poisson log-link IRLS fit with a Wald z-test on the gene coefficient."""
    y, x, Z = _check_single(y, x, covariates, include_covariates)
    if np.any(y < 0) or np.any(y != np.round(y)):
        raise PreconditionError("Poisson response must hold nonnegative integers")
    if not np.any(y > 0):
        raise PreconditionError("Poisson response is identically zero")
    if Z is not None:
        design_basis(Z, y.size)
    r = poisson_batch(y, x[None], Z, trace=True)
    if r["flags"][0] == FLAG_RANK:
        raise RankDeficient("gene vector is collinear with the covariate design")
    th = float(r["theta"][0])
    return GlmFit(
        theta=th, se=float(r["se"][0]), wald_p=float(r["p"][0]), sign=int(np.sign(th)),
        alpha_coefs=r["alpha"][0], converged=bool(r["converged"][0]),
        iterations=int(r["iterations"][0]), flag=_FLAG_NAMES[int(r["flags"][0])],
        deviances=[float(v) for v in r["deviances"][:, 0]],
    )


def fit_columns(X: np.ndarray, Y: np.ndarray, kinds, Z: np.ndarray | None):
    """Fit every phenotype column of ``Y`` against every gene row of ``X``.

    Returns ``(p, theta, flags)`` with shape ``(G, K)``.  Cells whose fit
    is unusable get ``p = 1`` and ``theta = 0``; the whole matrix is always
    produced.
    """
    G, n = X.shape
    K = Y.shape[1]
    p = np.ones((G, K))
    theta = np.zeros((G, K))
    flags = np.zeros((G, K), dtype=np.int8)
    Q = design_basis(Z, n)
    cont = [k for k in range(K) if kinds[k] == "continuous"]
    if cont:
        th, _, pv, fl = ols_batch(X, Y[:, cont], Q)
        p[:, cont], theta[:, cont], flags[:, cont] = pv, th, fl
    for k in range(K):
        if kinds[k] != "count":
            continue
        r = poisson_batch(Y[:, k], X, Z)
        p[:, k], theta[:, k], flags[:, k] = r["p"], r["theta"], r["flags"]
    return p, theta, flags


def assoc_pvalues(ds: Dataset) -> PValueMatrix:
    """Observed p-value and sign matrix: phenotype k regressed on gene j plus covariates."""
    Z = ds.covariates if ds.n_covariates else None
    p, theta, flags = fit_columns(ds.expression, ds.phenotypes, ds.kinds, Z)
    signs = np.sign(theta).astype(np.int8)
    return PValueMatrix(values=p, signs=signs, gene_ids=ds.gene_ids,
                        phenotype_names=ds.phenotype_names, flags=flags != FLAG_OK)
