"""Simulation settings I/II/III (A and B variants) and benchmark metrics.

Every setting draws 150 genes and 10 phenotypes for N1 samples from three
shared random effects u1, u2, u3 ~ N(0, sigma_mu^2):

* genes 1-50 follow u1, genes 51-100 follow u2, genes 101-150 follow u3;
* phenotypes 1-4 follow u1, phenotypes 5-9 follow u1 + u2, phenotype 10
  follows u3.

Setting II adds a confounder z to genes 1-50 and phenotypes 1-9 and
exposes it as the single covariate.  Setting III makes phenotypes 1-4
Poisson counts.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from joblib import Parallel, delayed

from .combine import METHODS, run_method
from .data import Dataset
from .errors import AfAssocError, ValidationError
from .glm import assoc_pvalues
from .permnull import DOMAIN_REPLICATE, build_null, derive_seed, keyed_rng

log = logging.getLogger(__name__)

SETTINGS = ("IA", "IB", "IIA", "IIB", "IIIA", "IIIB")
N_GENES = 150
N_PHENOTYPES = 10
BLOCKS = ((0, 50), (50, 100), (100, 150))

_NULL_DOMAIN = DOMAIN_REPLICATE + 1


def sigma_table(setting: str) -> np.ndarray:
    """Residual sd of the ten phenotypes (NaN for count phenotypes)."""
    s = np.full(N_PHENOTYPES, 2.0)
    s[9] = 1.0
    if setting in ("IB", "IIB"):
        s[0] = s[4] = 0.05
    elif setting == "IIIA":
        s[:4] = np.nan
    elif setting == "IIIB":
        s[:4] = np.nan
        s[4] = 0.01
    elif setting not in ("IA", "IIA"):
        raise ValidationError(f"unknown setting {setting!r}; choose from {SETTINGS}")
    return s


@dataclass
class SimConfig:
    setting: str = "IA"
    sigma_mu: float = 0.6
    seed: int = 0
    n_samples: int = 100
    sigma_x: float = 0.5
    sigma_c: float = 0.5
    poisson_rate: str = "exp"
    sigma_k: np.ndarray = field(init=False)

    def __post_init__(self):
        self.setting = self.setting.upper()
        self.sigma_k = sigma_table(self.setting)
        if self.sigma_mu < 0 or self.sigma_x <= 0 or self.sigma_c < 0:
            raise ValidationError("sigma parameters must be nonnegative (sigma_x positive)")
        if self.poisson_rate not in ("exp", "identity"):
            raise ValidationError("poisson_rate must be 'exp' or 'identity'")


def truth_weights(setting: str, sigma_mu: float = 1.0) -> np.ndarray:
    """150 x 10 matrix of true 0/1 gene-phenotype associations."""
    sigma_table(setting.upper())
    w = np.zeros((N_GENES, N_PHENOTYPES), dtype=np.int8)
    if sigma_mu == 0:
        return w
    w[0:50, 0:9] = 1
    w[50:100, 4:9] = 1
    w[100:150, 9] = 1
    return w


def simulate(cfg: SimConfig) -> tuple[Dataset, np.ndarray]:
    """Draw one dataset for ``cfg``; bit-reproducible for a fixed config."""
    rng = keyed_rng(cfg.seed, DOMAIN_REPLICATE, 0)
    n = cfg.n_samples
    u = rng.normal(0.0, cfg.sigma_mu, size=(n, 3))
    u1, u2, u3 = u.T
    confounded = cfg.setting.startswith("II") and not cfg.setting.startswith("III")
    z = rng.normal(0.0, cfg.sigma_c, size=n) if confounded else np.zeros(n)

    means = np.empty((n, N_PHENOTYPES))
    means[:, 0:4] = (u1 + z)[:, None]
    means[:, 4:9] = (u1 + u2 + z)[:, None]
    means[:, 9] = u3
    Y = np.empty((n, N_PHENOTYPES))
    kinds = ["continuous"] * N_PHENOTYPES
    for k in range(N_PHENOTYPES):
        if cfg.setting.startswith("III") and k < 4:
            kinds[k] = "count"
            rate = np.exp(u1) if cfg.poisson_rate == "exp" else np.maximum(u1, 0.01)
            Y[:, k] = rng.poisson(rate)
        else:
            Y[:, k] = rng.normal(means[:, k], cfg.sigma_k[k])

    gmeans = np.empty((N_GENES, n))
    gmeans[0:50] = u1 + z
    gmeans[50:100] = u2
    gmeans[100:150] = u3
    X = rng.normal(gmeans, cfg.sigma_x)

    ds = Dataset(
        expression=X,
        phenotypes=Y,
        kinds=kinds,
        covariates=z[:, None] if confounded else np.zeros((n, 0)),
        gene_ids=[f"gene{j + 1}" for j in range(N_GENES)],
        sample_ids=[f"s{i + 1}" for i in range(n)],
        phenotype_names=[f"Y{k + 1}" for k in range(N_PHENOTYPES)],
        covariate_names=["z"] if confounded else [],
    )
    return ds, truth_weights(cfg.setting, cfg.sigma_mu)


@dataclass
class BenchmarkMetrics:
    """Benchmark summary for one (setting, sigma_mu) cell.

    ``mean_weights[method]`` is 3 gene blocks x 10 phenotypes.
    Sensitivity/specificity are NaN when the truth has no ones/zeros.
    """

    setting: str
    sigma_mu: float
    S: int
    B: int
    alpha: float
    rejection_rate: dict[str, float]
    sensitivity: dict[str, float]
    specificity: dict[str, float]
    mean_weights: dict[str, np.ndarray]
    per_replicate_rate: dict[str, np.ndarray]


def _replicate(setting, sigma_mu, s, B, methods, alpha, seed, sim_kw):
    for attempt in range(10):
        sub = s if attempt == 0 else s + 1_000_003 * attempt
        cfg = SimConfig(setting=setting, sigma_mu=sigma_mu,
                        seed=derive_seed(seed, DOMAIN_REPLICATE, sub), **sim_kw)
        try:
            ds, truth = simulate(cfg)
            pm = assoc_pvalues(ds)
            null = build_null(ds, B, derive_seed(seed, _NULL_DOMAIN, sub))
            out = {}
            for m in methods:
                r = run_method(m, pm, null)
                out[m] = (int(np.sum(r.p_raw < alpha)),
                          r.weights(N_PHENOTYPES) if r.mask is not None else None)
            return out, truth
        except AfAssocError as exc:
            log.warning("replicate %d attempt %d failed (%s); redrawing", s, attempt, exc)
    raise RuntimeError(f"replicate {s} failed 10 times")


def run_benchmark(setting: str, sigma_mu: float, S: int = 100, B: int = 100,
                  methods=METHODS, alpha: float = 0.05, seed: int = 1,
                  n_jobs: int = 1, **sim_kw) -> BenchmarkMetrics:
    """Simulate S datasets and score each method.

    Rejection rate is ``sum_s sum_j 1{p_j < alpha} / (p*S)``.  For weight
    selecting methods sensitivity is the share of true ones estimated as 1
    and specificity the share of true zeros estimated as 0, pooled over
    (replicate, gene, phenotype).
    """
    if S < 1:
        raise ValidationError("S must be at least 1")
    methods = [m.lower() for m in methods]
    for m in methods:
        if m not in METHODS:
            raise ValidationError(f"unknown method {m!r}")
    setting = setting.upper()
    runs = Parallel(n_jobs=n_jobs)(
        delayed(_replicate)(setting, sigma_mu, s, B, methods, alpha, seed, sim_kw)
        for s in range(S)
    )
    rej, sens, spec, mw, per = {}, {}, {}, {}, {}
    truth = runs[0][1].astype(bool)
    n_one, n_zero = truth.sum() * S, (~truth).sum() * S
    for m in methods:
        counts = np.array([r[0][m][0] for r in runs])
        per[m] = counts / N_GENES
        rej[m] = counts.sum() / (N_GENES * S)
        if runs[0][0][m][1] is None:
            continue
        W = np.stack([r[0][m][1] for r in runs]).astype(float)  # S x p x K
        sens[m] = W[:, truth].sum() / n_one if n_one else float("nan")
        spec[m] = (1 - W[:, ~truth]).sum() / n_zero if n_zero else float("nan")
        mw[m] = np.stack([W[:, a:b].mean(axis=(0, 1)) for a, b in BLOCKS])
    return BenchmarkMetrics(setting=setting, sigma_mu=sigma_mu, S=S, B=B, alpha=alpha,
                            rejection_rate=rej, sensitivity=sens, specificity=spec,
                            mean_weights=mw, per_replicate_rate=per)


def benchmark_table(results: list[BenchmarkMetrics]) -> list[dict]:
    """Long-format rows (benchmark, method, setting, sigma_mu, value)."""
    rows = []
    for r in results:
        for m, v in r.rejection_rate.items():
            kind = "type_I_error" if r.sigma_mu == 0 else "power"
            rows.append(dict(benchmark=kind, method=m, setting=r.setting, sigma_mu=r.sigma_mu, value=v))
        for label, d in (("sensitivity", r.sensitivity), ("specificity", r.specificity)):
            for m, v in d.items():
                if r.sigma_mu > 0:
                    rows.append(dict(benchmark=label, method=m, setting=r.setting,
                                     sigma_mu=r.sigma_mu, value=v))
    return rows
