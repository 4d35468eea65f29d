"""Residual-permutation null distribution of per-phenotype p-values.

For each gene the covariate-adjusted residual e_j is permuted; every
phenotype is then regressed on the permuted residual and the Wald p-value
kept.  Within permutation ``b`` all genes share one sample order, so the
B x p collection of null p-values forms a single exchangeable pool.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from joblib import Parallel, delayed

from .data import Dataset
from .errors import ValidationError
from .glm import design_basis, fit_columns

SCHEME_RESIDUAL = "residual-permutation"
SCHEME_RESIDUAL_COV = "residual-permutation+covariates"
_SCHEME_CODES = {SCHEME_RESIDUAL: 0, SCHEME_RESIDUAL_COV: 1}

MAGIC = b"AFNULL\x00\x01"
_HEADER = struct.Struct("<8sIIIIq")  # magic, B, p, K, scheme code, seed -> 32 bytes

# stream domains so permutation and bootstrap draws never share a key
DOMAIN_PERMUTATION = 0x5045524D
DOMAIN_BOOTSTRAP = 0x424F4F54
DOMAIN_REPLICATE = 0x53494D55


def keyed_rng(seed: int, domain: int, index: int) -> np.random.Generator:
    """Counter-based generator keyed by ``(seed, domain, index)``."""
    key = np.random.SeedSequence([int(seed) & (2**64 - 1), domain, int(index)]).generate_state(
        2, np.uint64
    )
    return np.random.Generator(np.random.Philox(key=key))


def derive_seed(seed: int, domain: int, index: int) -> int:
    """A 63-bit child seed, stable across runs and worker counts."""
    return int(np.random.SeedSequence([int(seed) & (2**64 - 1), domain, int(index)])
               .generate_state(1, np.uint64)[0] >> np.uint64(1))


def permutation_order(seed: int, b: int, n: int) -> np.ndarray:
    """Sample order used by permutation ``b`` (1-based): ``e_perm = e[order]``."""
    return keyed_rng(seed, DOMAIN_PERMUTATION, b).permutation(n)


@dataclass
class NullStore:
    """B x p x K permutation p-values."""

    pvals: np.ndarray
    seed: int
    scheme: str = SCHEME_RESIDUAL

    def __post_init__(self):
        self.pvals = np.asarray(self.pvals, dtype=np.float64)
        if self.pvals.ndim != 3:
            raise ValidationError("null p-values must be a B x p x K tensor")
        if self.scheme not in _SCHEME_CODES:
            raise ValidationError(f"unknown null scheme {self.scheme!r}")

    @property
    def B(self) -> int:
        return self.pvals.shape[0]

    @property
    def shape(self):
        return self.pvals.shape

    def pooled(self) -> np.ndarray:
        """The null pool as a (B*p) x K matrix, permutation-major."""
        B, p, K = self.pvals.shape
        return self.pvals.reshape(B * p, K)

    def save(self, path: str | Path) -> None:
        B, p, K = self.pvals.shape
        with open(path, "wb") as fh:
            fh.write(_HEADER.pack(MAGIC, B, p, K, _SCHEME_CODES[self.scheme], int(self.seed)))
            fh.write(np.ascontiguousarray(self.pvals, dtype="<f8").tobytes())

    @classmethod
    def load(cls, path: str | Path) -> "NullStore":
        raw = Path(path).read_bytes()
        if len(raw) < _HEADER.size:
            raise ValidationError(f"{path}: truncated null store")
        magic, B, p, K, code, seed = _HEADER.unpack_from(raw)
        if magic != MAGIC:
            raise ValidationError(f"{path}: not a null store (bad magic)")
        body = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size)
        if body.size != B * p * K:
            raise ValidationError(f"{path}: expected {B * p * K} values, found {body.size}")
        scheme = {v: k for k, v in _SCHEME_CODES.items()}.get(code)
        if scheme is None:
            raise ValidationError(f"{path}: unknown scheme code {code}")
        return cls(pvals=body.reshape(B, p, K).astype(np.float64), seed=seed, scheme=scheme)

    def to_tsv(self, path: str | Path, gene_ids, phenotype_names) -> None:
        with open(path, "w") as fh:
            fh.write("\t".join(["b", "gene_id", *phenotype_names]) + "\n")
            for b in range(self.B):
                for gid, row in zip(gene_ids, self.pvals[b].tolist()):
                    fh.write(f"{b + 1}\t{gid}\t" + "\t".join(repr(v) for v in row) + "\n")


def gene_residuals(ds: Dataset) -> np.ndarray:
    """p x n matrix of covariate-adjusted gene residuals."""
    Z = ds.covariates if ds.n_covariates else None
    Q = design_basis(Z, ds.n_samples)
    X = ds.expression
    return X - (X @ Q) @ Q.T


def _null_block(E, Y, Z, kinds, seed, bs):
    n = Y.shape[0]
    out = np.empty((len(bs), E.shape[0], Y.shape[1]))
    for i, b in enumerate(bs):
        inv = np.argsort(permutation_order(seed, b, n))
        out[i], _, _ = fit_columns(E, Y[inv], kinds, None if Z is None else Z[inv])
    return out


def build_null(ds: Dataset, B: int, seed: int, include_covariates_in_null: bool = False,
               progress=None, n_jobs: int = 1) -> NullStore:
    """Residual-permutation null p-values, shape ``(B, p, K)``.

    Permuting the residual by ``order`` pairs sample ``i``'s phenotype with
    ``e[order[i]]``; the identical fit is obtained by applying the inverse
    order to the phenotype (and covariate) rows while keeping the residual
    matrix fixed, which is what is done here.
    """
    if B < 1:
        raise ValidationError("B must be at least 1")
    E = gene_residuals(ds)
    Y = ds.phenotypes
    Z = ds.covariates if (include_covariates_in_null and ds.n_covariates) else None
    if n_jobs == 1:
        out = np.empty((B, ds.n_genes, ds.n_phenotypes))
        for b in range(1, B + 1):
            out[b - 1] = _null_block(E, Y, Z, ds.kinds, seed, [b])[0]
            if progress is not None:
                progress(b)
    else:
        # each permutation is keyed by b alone, so blocking does not change the result
        blocks = np.array_split(np.arange(1, B + 1), min(B, 4 * max(1, n_jobs)))
        parts = Parallel(n_jobs=n_jobs)(
            delayed(_null_block)(E, Y, Z, ds.kinds, seed, bs.tolist()) for bs in blocks if len(bs)
        )
        out = np.concatenate(parts)
    scheme = SCHEME_RESIDUAL_COV if Z is not None else SCHEME_RESIDUAL
    return NullStore(pvals=out, seed=seed, scheme=scheme)
