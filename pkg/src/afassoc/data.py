"""Typed containers and TSV ingestion for expression/phenotype/covariate data.

Three tab-separated files describe a study:

* expression: ``gene_id<TAB>sample1<TAB>...``, one row per gene;
* phenotypes: ``sample_id<TAB>pheno1<TAB>...``, one row per sample;
* covariates (optional): same layout as the phenotype file.

The expression header fixes the sample order; phenotype and covariate rows
are re-aligned to it by sample id.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd

from .errors import (
    KindViolation,
    MissingSample,
    MissingValue,
    NonNumericCell,
    TooManyPhenotypes,
    ValidationError,
)

MAX_PHENOTYPES = 15
ADVISED_PHENOTYPES = 10
KINDS = ("continuous", "count")


def _frozen(a: np.ndarray, dtype=np.float64) -> np.ndarray:
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Dataset:
    """Aligned study data.

    ``expression`` is genes x samples, ``phenotypes`` samples x K and
    ``covariates`` samples x M (M may be 0).  Instances are immutable and
    safe to share between worker processes.
    """

    expression: np.ndarray
    phenotypes: np.ndarray
    kinds: tuple[str, ...]
    covariates: np.ndarray
    gene_ids: tuple[str, ...]
    sample_ids: tuple[str, ...]
    phenotype_names: tuple[str, ...]
    covariate_names: tuple[str, ...] = ()

    def __post_init__(self):
        expr = _frozen(self.expression)
        phen = _frozen(self.phenotypes)
        cov = np.asarray(self.covariates, dtype=np.float64)
        if cov.ndim == 1:
            cov = cov.reshape(-1, 1) if cov.size else cov.reshape(phen.shape[0], 0)
        cov = _frozen(cov)
        object.__setattr__(self, "expression", expr)
        object.__setattr__(self, "phenotypes", phen)
        object.__setattr__(self, "covariates", cov)
        for name in ("kinds", "gene_ids", "sample_ids", "phenotype_names", "covariate_names"):
            object.__setattr__(self, name, tuple(str(v) for v in getattr(self, name)))
        if not self.covariate_names and cov.shape[1]:
            object.__setattr__(
                self, "covariate_names", tuple(f"z{m + 1}" for m in range(cov.shape[1]))
            )
        self._check()

    def _check(self):
        if self.expression.ndim != 2 or self.phenotypes.ndim != 2:
            raise ValidationError("expression and phenotypes must be 2-D")
        p, n = self.expression.shape
        if self.phenotypes.shape[0] != n or self.covariates.shape[0] != n:
            raise ValidationError(
                f"sample counts differ: expression {n}, phenotypes "
                f"{self.phenotypes.shape[0]}, covariates {self.covariates.shape[0]}"
            )
        K = self.phenotypes.shape[1]
        if K < 1:
            raise ValidationError("at least one phenotype is required")
        if K > MAX_PHENOTYPES:
            raise TooManyPhenotypes(f"K={K} exceeds the hard cap of {MAX_PHENOTYPES}")
        if p < 2:
            raise ValidationError(f"need at least 2 genes, got {p}")
        if n < self.n_covariates + 3:
            raise ValidationError(f"n={n} must be at least M+3={self.n_covariates + 3}")
        if len(self.kinds) != K:
            raise ValidationError(f"{len(self.kinds)} phenotype kinds given for K={K}")
        bad = [k for k in self.kinds if k not in KINDS]
        if bad:
            raise ValidationError(f"unknown phenotype kind(s) {bad}; expected one of {KINDS}")
        if len(self.gene_ids) != p or len(self.sample_ids) != n or len(self.phenotype_names) != K:
            raise ValidationError("id/name lists do not match matrix shapes")
        if len(self.covariate_names) != self.n_covariates:
            raise ValidationError("covariate_names does not match covariate columns")
        for arr, what in ((self.expression, "expression"), (self.phenotypes, "phenotypes"),
                          (self.covariates, "covariates")):
            if not np.all(np.isfinite(arr)):
                raise MissingValue(f"{what} contains missing or non-finite values")
        for k, kind in enumerate(self.kinds):
            if kind == "count":
                col = self.phenotypes[:, k]
                if np.any(col < 0) or np.any(col != np.round(col)):
                    raise KindViolation(
                        f"phenotype '{self.phenotype_names[k]}' is typed count but holds "
                        "negative or fractional values"
                    )

    @property
    def n_genes(self) -> int:
        return self.expression.shape[0]

    @property
    def n_samples(self) -> int:
        return self.expression.shape[1]

    @property
    def n_phenotypes(self) -> int:
        return self.phenotypes.shape[1]

    @property
    def n_covariates(self) -> int:
        return self.covariates.shape[1]

    def take_samples(self, idx: np.ndarray) -> "Dataset":
        """Return a dataset restricted (or resampled) to sample indices ``idx``."""
        idx = np.asarray(idx)
        return Dataset(
            expression=self.expression[:, idx],
            phenotypes=self.phenotypes[idx],
            kinds=self.kinds,
            covariates=self.covariates[idx],
            gene_ids=self.gene_ids,
            sample_ids=[self.sample_ids[i] for i in idx],
            phenotype_names=self.phenotype_names,
            covariate_names=self.covariate_names,
        )


@dataclass
class PValueMatrix:
    """Per gene x phenotype Wald p-values with coefficient signs.

    ``flags`` marks cells whose fit was degenerate (rank deficiency,
    separation, perfect fit or non-convergence).
    """

    values: np.ndarray
    signs: np.ndarray
    gene_ids: tuple[str, ...]
    phenotype_names: tuple[str, ...]
    flags: np.ndarray = field(default=None)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.signs = np.asarray(self.signs, dtype=np.int8)
        if self.flags is None:
            self.flags = np.zeros(self.values.shape, dtype=bool)
        self.gene_ids = tuple(self.gene_ids)
        self.phenotype_names = tuple(self.phenotype_names)
        if self.values.shape != self.signs.shape:
            raise ValidationError("p-value and sign matrices differ in shape")
        if self.values.shape != (len(self.gene_ids), len(self.phenotype_names)):
            raise ValidationError("p-value matrix shape does not match ids")
        if np.any(~(self.values > 0)) or np.any(self.values > 1):
            raise ValidationError("p-values must lie in (0, 1]")

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


# --------------------------------------------------------------------------
# TSV reading


def _read_table(path: str | Path, id_label: str) -> tuple[list[str], list[str], np.ndarray]:
    path = Path(path)
    try:
        df = pd.read_csv(path, sep="\t", dtype=str, keep_default_na=False,
                         na_filter=False, index_col=False)
    except (pd.errors.EmptyDataError, pd.errors.ParserError) as exc:
        raise ValidationError(f"{path}: cannot parse TSV ({exc})") from exc
    if df.shape[1] < 2:
        raise ValidationError(f"{path}: expected '{id_label}' plus at least one data column")
    ids = df.iloc[:, 0].tolist()
    cols = [str(c) for c in df.columns[1:]]
    if len(set(ids)) != len(ids):
        raise ValidationError(f"{path}: duplicated {id_label} values")
    if len(set(cols)) != len(cols):
        raise ValidationError(f"{path}: duplicated column names")
    raw = df.iloc[:, 1:].to_numpy(dtype=str)
    empty = np.char.strip(raw) == ""
    na = np.isin(np.char.lower(np.char.strip(raw)), ["na", "nan", "null", "none"])
    if np.any(empty | na):
        i, j = np.argwhere(empty | na)[0]
        raise MissingValue(f"{path}:{i + 2}: missing value in column '{cols[j]}'")
    try:
        values = raw.astype(np.float64)
    except ValueError:
        for i, row in enumerate(raw):
            for j, cell in enumerate(row):
                try:
                    float(cell)
                except ValueError:
                    raise NonNumericCell(
                        f"{path}:{i + 2}: non-numeric cell {cell!r} in column '{cols[j]}'"
                    ) from None
        raise
    if not np.all(np.isfinite(values)):
        i, j = np.argwhere(~np.isfinite(values))[0]
        raise NonNumericCell(f"{path}:{i + 2}: non-finite cell in column '{cols[j]}'")
    return ids, cols, values


def _align(ids: list[str], target: Sequence[str], path) -> np.ndarray:
    pos = {s: i for i, s in enumerate(ids)}
    missing = [s for s in target if s not in pos]
    extra = sorted(set(ids) - set(target))
    if missing:
        raise MissingSample(f"{path}: sample(s) {missing[:5]} present in expression but absent here")
    if extra:
        raise MissingSample(f"{path}: sample(s) {extra[:5]} absent from expression")
    return np.array([pos[s] for s in target], dtype=np.intp)


def parse_kinds(kinds: str | Sequence[str]) -> list[str]:
    """Accept ``"count,continuous"`` or a sequence of kind names."""
    if isinstance(kinds, str):
        kinds = [k.strip() for k in kinds.split(",") if k.strip()]
    out = [str(k).lower() for k in kinds]
    bad = [k for k in out if k not in KINDS]
    if bad:
        raise ValidationError(f"unknown phenotype kind(s) {bad}; expected one of {KINDS}")
    return out


def load_dataset(
    expression_path: str | Path,
    phenotype_path: str | Path,
    covariate_path: str | Path | None = None,
    phenotype_kinds: str | Sequence[str] | None = None,
) -> Dataset:
    """Read and align the three study files.

    ``phenotype_kinds`` defaults to all-continuous when omitted.
    """
    genes, samples, expr = _read_table(expression_path, "gene_id")
    ph_ids, ph_names, phen = _read_table(phenotype_path, "sample_id")
    if len(ph_names) > MAX_PHENOTYPES:
        raise TooManyPhenotypes(f"K={len(ph_names)} exceeds the hard cap of {MAX_PHENOTYPES}")
    phen = phen[_align(ph_ids, samples, phenotype_path)]
    if covariate_path is not None:
        cv_ids, cv_names, cov = _read_table(covariate_path, "sample_id")
        cov = cov[_align(cv_ids, samples, covariate_path)]
    else:
        cv_names, cov = [], np.zeros((len(samples), 0))
    kinds = parse_kinds(phenotype_kinds) if phenotype_kinds is not None else ["continuous"] * len(ph_names)
    if len(kinds) != len(ph_names):
        raise ValidationError(f"{len(kinds)} phenotype kinds given for {len(ph_names)} phenotypes")
    return Dataset(
        expression=expr,
        phenotypes=phen,
        kinds=tuple(kinds),
        covariates=cov,
        gene_ids=genes,
        sample_ids=samples,
        phenotype_names=ph_names,
        covariate_names=cv_names,
    )


# --------------------------------------------------------------------------
# TSV writing


def _fmt(x: float) -> str:
    return repr(float(x))


def _write_matrix(path, id_label, ids, cols, values, fmt=_fmt):
    with open(path, "w", newline="") as fh:
        fh.write("\t".join([id_label, *cols]) + "\n")
        for rid, row in zip(ids, values.tolist()):
            fh.write(rid + "\t" + "\t".join(fmt(v) for v in row) + "\n")


def write_dataset(ds: Dataset, directory: str | Path) -> dict[str, Path]:
    """Write expression/phenotype/(covariate) TSVs plus a kinds file.

    Values are written with ``repr`` so a reload is bit-exact.
    """
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    paths = {
        "expression": d / "expression.tsv",
        "phenotypes": d / "phenotypes.tsv",
        "kinds": d / "phenotype_kinds.txt",
    }
    _write_matrix(paths["expression"], "gene_id", ds.gene_ids, ds.sample_ids, ds.expression)
    _write_matrix(paths["phenotypes"], "sample_id", ds.sample_ids, ds.phenotype_names, ds.phenotypes)
    if ds.n_covariates:
        paths["covariates"] = d / "covariates.tsv"
        _write_matrix(paths["covariates"], "sample_id", ds.sample_ids, ds.covariate_names,
                      ds.covariates)
    paths["kinds"].write_text(",".join(ds.kinds) + "\n")
    return paths


def write_pvalues(pm: PValueMatrix, path: str | Path) -> None:
    """``gene_id``, K p-value columns, then K sign columns."""
    cols = [f"p_{n}" for n in pm.phenotype_names] + [f"sign_{n}" for n in pm.phenotype_names]
    with open(path, "w", newline="") as fh:
        fh.write("\t".join(["gene_id", *cols]) + "\n")
        for gid, pv, sg in zip(pm.gene_ids, pm.values.tolist(), pm.signs.tolist()):
            fh.write("\t".join([gid, *map(_fmt, pv), *map(str, sg)]) + "\n")


def write_signs(pm: PValueMatrix, path: str | Path) -> None:
    _write_matrix(path, "gene_id", pm.gene_ids, list(pm.phenotype_names), pm.signs,
                  fmt=lambda v: str(int(v)))


def read_pvalues(path: str | Path) -> PValueMatrix:
    genes, cols, vals = _read_table(path, "gene_id")
    if len(cols) % 2 or not all(c.startswith("p_") for c in cols[: len(cols) // 2]):
        raise ValidationError(f"{path}: expected K 'p_*' columns followed by K 'sign_*' columns")
    K = len(cols) // 2
    return PValueMatrix(
        values=vals[:, :K],
        signs=vals[:, K:].astype(np.int8),
        gene_ids=genes,
        phenotype_names=[c[2:] for c in cols[:K]],
    )


# --------------------------------------------------------------------------


def validate(ds: Dataset, perms: int | None = None, alpha: float | None = None) -> list[str]:
    """Soft checks; returns human-readable warnings (empty when all is well).

    When both ``perms`` and ``alpha`` are supplied, a warning is emitted if
    the Bonferroni threshold ``alpha/p`` is finer than the permutation
    resolution ``1/(perms*p)``.
    """
    out = []
    var = ds.expression.var(axis=1)
    for gid in np.asarray(ds.gene_ids)[var < 1e-12]:
        out.append(f"zero-variance gene: {gid}")
    K = ds.n_phenotypes
    if K > ADVISED_PHENOTYPES:
        out.append(
            f"K={K} phenotypes: the exhaustive weight search visits 2^K-1={2 ** K - 1} "
            f"subsets; keeping K below {ADVISED_PHENOTYPES} is recommended"
        )
    if perms is not None and alpha is not None:
        p = ds.n_genes
        if alpha / p < 1.0 / (perms * p):
            out.append(
                f"B-resolution mismatch: threshold alpha/p={alpha / p:.3g} is below the "
                f"permutation resolution 1/(B*p)={1.0 / (perms * p):.3g}; increase B to at "
                f"least {int(np.ceil(1 / alpha))}"
            )
    return out
