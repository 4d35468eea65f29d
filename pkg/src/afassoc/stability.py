"""Bootstrap stability of adaptive weights.

Each bootstrap replicate resamples samples jointly across expression,
phenotypes and covariates, reruns the full pipeline (observed p-values,
a fresh permutation null, AFp or AFz) and records the signed weights
``v = w * sign(theta)`` for a gene subset.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from joblib import Parallel, delayed

from .combine import run_method
from .data import Dataset
from .errors import DegenerateBootstrap, RankDeficient, ValidationError
from .glm import assoc_pvalues, design_basis
from .permnull import DOMAIN_BOOTSTRAP, build_null, derive_seed, keyed_rng

log = logging.getLogger(__name__)

MAX_REDRAWS = 10


@dataclass
class SignedWeightTensor:
    values: np.ndarray          # L x p' x K in {-1, 0, 1}
    gene_subset: tuple[str, ...]
    phenotype_names: tuple[str, ...]
    method: str

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.int8)
        self.gene_subset = tuple(self.gene_subset)
        self.phenotype_names = tuple(self.phenotype_names)
        if self.values.ndim != 3:
            raise ValidationError("signed weights must be an L x p x K tensor")
        if not np.all(np.isin(self.values, (-1, 0, 1))):
            raise ValidationError("signed weights must lie in {-1, 0, 1}")
        L, p, K = self.values.shape
        if p != len(self.gene_subset) or K != len(self.phenotype_names):
            raise ValidationError("tensor shape does not match gene/phenotype labels")

    @property
    def L(self) -> int:
        return self.values.shape[0]

    def to_tsv(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            fh.write(f"# method={self.method}\n")
            fh.write("l\tgene_id\tk\tv\n")
            for l in range(self.L):
                for j, gid in enumerate(self.gene_subset):
                    for k, name in enumerate(self.phenotype_names):
                        fh.write(f"{l + 1}\t{gid}\t{name}\t{int(self.values[l, j, k])}\n")

    @classmethod
    def from_tsv(cls, path: str | Path) -> "SignedWeightTensor":
        method = "afp"
        rows = []
        with open(path) as fh:
            for line in fh:
                line = line.rstrip("\n")
                if line.startswith("#"):
                    if "method=" in line:
                        method = line.split("method=", 1)[1].strip()
                    continue
                if not line or line.startswith("l\t"):
                    continue
                parts = line.split("\t")
                if len(parts) != 4:
                    raise ValidationError(f"{path}: malformed row {line!r}")
                rows.append(parts)
        if not rows:
            raise ValidationError(f"{path}: no weight rows")
        genes = list(dict.fromkeys(r[1] for r in rows))
        phens = list(dict.fromkeys(r[2] for r in rows))
        ls = sorted({int(r[0]) for r in rows})
        gi = {g: i for i, g in enumerate(genes)}
        ki = {k: i for i, k in enumerate(phens)}
        li = {l: i for i, l in enumerate(ls)}
        vals = np.zeros((len(ls), len(genes), len(phens)), dtype=np.int8)
        for l, g, k, v in rows:
            vals[li[int(l)], gi[g], ki[k]] = int(v)
        return cls(values=vals, gene_subset=genes, phenotype_names=phens, method=method)


def _degenerate(ds: Dataset) -> str | None:
    if ds.n_covariates:
        if np.any(np.ptp(ds.covariates, axis=0) == 0):
            return "a covariate column is constant"
        try:
            design_basis(ds.covariates, ds.n_samples)
        except RankDeficient:
            return "covariate design is rank deficient"
    for k, kind in enumerate(ds.kinds):
        col = ds.phenotypes[:, k]
        if kind == "count" and not np.any(col > 0):
            return f"count phenotype {ds.phenotype_names[k]} is all zero"
        if np.ptp(col) == 0:
            return f"phenotype {ds.phenotype_names[k]} is constant"
    return None


def _one_replicate(ds, l, B_boot, method, seed, idx_subset):
    rng = keyed_rng(seed, DOMAIN_BOOTSTRAP, l)
    for attempt in range(MAX_REDRAWS + 1):
        rows = rng.integers(0, ds.n_samples, size=ds.n_samples)
        boot = ds.take_samples(rows)
        why = _degenerate(boot)
        if why is None:
            break
        log.info("bootstrap %d draw %d degenerate (%s); redrawing", l, attempt, why)
    else:
        raise DegenerateBootstrap(f"bootstrap {l}: {MAX_REDRAWS} redraws all degenerate ({why})")
    pm = assoc_pvalues(boot)
    null = build_null(boot, B_boot, derive_seed(seed, DOMAIN_BOOTSTRAP, l))
    res = run_method(method, pm, null)
    w = res.weights(ds.n_phenotypes)[idx_subset]
    return (w * pm.signs[idx_subset]).astype(np.int8)


def bootstrap_weights(ds: Dataset, L: int, B_boot: int, method: str = "afp", seed: int = 1,
                      gene_subset: Sequence[str] | None = None, n_jobs: int = 1) -> SignedWeightTensor:
    """Signed adaptive weights over ``L`` bootstrap replicates.

    Replicate ``l`` draws its resample from a stream keyed by ``(seed, l)``
    and its permutation null from a child seed of the same key, so the
    result does not depend on ``n_jobs``.
    """
    method = method.lower()
    if method not in ("afp", "afz"):
        raise ValidationError("bootstrap weights need an adaptive method (afp or afz)")
    if L < 2:
        raise ValidationError("L must be at least 2")
    if gene_subset is None:
        gene_subset = ds.gene_ids
    gene_subset = list(gene_subset)
    if not gene_subset:
        raise ValidationError("gene subset is empty")
    pos = {g: i for i, g in enumerate(ds.gene_ids)}
    missing = [g for g in gene_subset if g not in pos]
    if missing:
        raise ValidationError(f"genes not in dataset: {missing[:5]}")
    idx = np.array([pos[g] for g in gene_subset])
    reps = Parallel(n_jobs=n_jobs)(
        delayed(_one_replicate)(ds, l, B_boot, method, seed, idx) for l in range(1, L + 1)
    )
    return SignedWeightTensor(values=np.stack(reps), gene_subset=gene_subset,
                              phenotype_names=ds.phenotype_names, method=method)


def variability_index(t: SignedWeightTensor | np.ndarray) -> np.ndarray:
    """``4 * Var_l(w)`` of the unsigned weights, population variance (divide by L)."""
    v = t.values if isinstance(t, SignedWeightTensor) else np.asarray(t)
    if v.shape[0] < 2:
        raise ValidationError("variability index needs L >= 2")
    w = np.abs(v).astype(float)
    return 4.0 * w.var(axis=0)


def comembership(t: SignedWeightTensor | np.ndarray) -> np.ndarray:
    """Fraction of replicates in which two genes carry identical signed-weight rows."""
    v = t.values if isinstance(t, SignedWeightTensor) else np.asarray(t)
    L, p, _ = v.shape
    V = np.zeros((p, p))
    for l in range(L):
        _, label = np.unique(v[l], axis=0, return_inverse=True)
        label = label.ravel()
        V += label[:, None] == label[None, :]
    return V / L
