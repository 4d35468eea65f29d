"""Gene modules from a co-membership matrix, and gene-set enrichment.

Clustering is average-linkage on ``1 - V``.  The tree is cut where the mean
between-part co-membership of a merge drops below ``alpha_tight``, so every
cluster is tight (mean within-cluster co-membership >= ``alpha_tight``).
Small clusters are reported as scattered genes.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
import pandas as pd
from scipy.cluster.hierarchy import linkage
from scipy.spatial.distance import squareform
from scipy.stats import false_discovery_control, hypergeom

from .errors import PreconditionError, ValidationError

log = logging.getLogger(__name__)


@dataclass
class ClusterAssignment:
    modules: list[list[str]]
    scattered: list[str]
    tightness: list[float]
    flags: list[str] = field(default_factory=list)

    @property
    def empty(self) -> bool:
        return not self.modules

    def labels(self) -> dict[str, int]:
        """gene -> 1-based module number (0 for scattered)."""
        out = {g: 0 for g in self.scattered}
        for i, mod in enumerate(self.modules, 1):
            out.update({g: i for g in mod})
        return out


def _check_V(V: np.ndarray, gene_ids: Sequence[str]) -> np.ndarray:
    V = np.asarray(V, dtype=float)
    if V.ndim != 2 or V.shape[0] != V.shape[1] or V.shape[0] != len(gene_ids):
        raise ValidationError("co-membership matrix must be square and match gene ids")
    if not np.allclose(V, V.T) or np.any(V < -1e-12) or np.any(V > 1 + 1e-12):
        raise ValidationError("co-membership matrix must be symmetric with entries in [0, 1]")
    return V


def module_tightness(V: np.ndarray, idx: Sequence[int]) -> float:
    """Mean off-diagonal co-membership within ``idx`` (1 for a single gene)."""
    idx = np.asarray(idx)
    m = idx.size
    if m < 2:
        return 1.0
    sub = V[np.ix_(idx, idx)]
    return float((sub.sum() - np.trace(sub)) / (m * (m - 1)))


def _between(V, a, b) -> float:
    return float(V[np.ix_(a, b)].mean())


def tight_cluster(V: np.ndarray, gene_ids: Sequence[str], min_size: int = 20,
                  alpha_tight: float = 0.7, max_modules: int | None = None) -> ClusterAssignment:
    """Tight gene modules from co-membership ``V``.

    Genes are processed in sorted-id order so the result does not depend on
    the input ordering.  Modules come back largest-tightness first.
    """
    if min_size < 2:
        raise ValidationError("min_size must be at least 2")
    if not 0.5 < alpha_tight <= 1:
        raise ValidationError("alpha_tight must lie in (0.5, 1]")
    V = _check_V(V, gene_ids)
    order = sorted(range(len(gene_ids)), key=lambda i: gene_ids[i])
    V = V[np.ix_(order, order)]
    ids = [gene_ids[i] for i in order]
    n = len(ids)
    if n < 2:
        return ClusterAssignment([], ids, [], ["empty"])

    D = np.clip(1.0 - V, 0.0, None)
    np.fill_diagonal(D, 0.0)
    Z = linkage(squareform(D, checks=False), method="average")

    # A merge is kept only when the mean co-membership between its two parts
    # (1 - average-linkage height) reaches alpha_tight.  Every kept cluster is
    # then tight, and loosely attached genes stay out of the modules.
    limit = 1.0 - alpha_tight + 1e-12
    members = {i: [i] for i in range(n)}
    for i, (a, b, h, _) in enumerate(Z):
        if h > limit:
            break  # heights are monotone under average linkage
        members[n + i] = members.pop(int(a)) + members.pop(int(b))
    clusters = list(members.values())

    mods, scattered = [], []
    for c in clusters:
        t = module_tightness(V, c)
        if len(c) >= min_size and t >= alpha_tight:
            mods.append((t, c))
        else:
            scattered.extend(c)
    mods.sort(key=lambda tc: (-tc[0], -len(tc[1]), min(tc[1])))
    if max_modules is not None and len(mods) > max_modules:
        for _, c in mods[max_modules:]:
            scattered.extend(c)
        mods = mods[:max_modules]
    result = ClusterAssignment(
        modules=[sorted(ids[i] for i in c) for _, c in mods],
        scattered=sorted(ids[i] for i in scattered),
        tightness=[t for t, _ in mods],
    )
    if result.empty:
        result.flags.append("empty")
        log.info("no cluster met min_size=%d and alpha_tight=%.2f", min_size, alpha_tight)
    return result


def merge_modules(assign: ClusterAssignment, V: np.ndarray, gene_ids: Sequence[str],
                  merge_tau: float = 0.5) -> ClusterAssignment:
    """Greedily merge the closest module pair while its mean between-module co-membership >= merge_tau."""
    V = _check_V(V, gene_ids)
    pos = {g: i for i, g in enumerate(gene_ids)}
    mods = [[pos[g] for g in m] for m in assign.modules]
    while len(mods) > 1:
        best, pair = -1.0, None
        for i in range(len(mods)):
            for j in range(i + 1, len(mods)):
                b = _between(V, mods[i], mods[j])
                if b > best:
                    best, pair = b, (i, j)
        if best < merge_tau:
            break
        i, j = pair
        mods[i] = mods[i] + mods[j]
        del mods[j]
    tight = [module_tightness(V, m) for m in mods]
    order = sorted(range(len(mods)), key=lambda i: (-tight[i], -len(mods[i])))
    return ClusterAssignment(
        modules=[sorted(gene_ids[i] for i in mods[k]) for k in order],
        scattered=list(assign.scattered),
        tightness=[tight[k] for k in order],
        flags=list(assign.flags),
    )


# --------------------------------------------------------------------------
# enrichment


def read_gmt(path: str | Path) -> dict[str, tuple[str, list[str]]]:
    """GMT: ``set_id<TAB>description<TAB>gene<TAB>gene...`` per line."""
    sets = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n\r")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) < 2:
                raise ValidationError(f"{path}:{lineno}: GMT line needs an id and a description")
            sets[parts[0]] = (parts[1], [g for g in parts[2:] if g])
    return sets


def enrich(module_genes: Iterable[str], gene_sets: Mapping[str, Sequence[str] | tuple],
           universe: Iterable[str]) -> pd.DataFrame:
    """One-sided hypergeometric (Fisher exact, over-representation) test per gene set.

    ``gene_sets`` maps set id to a gene list or to ``(description, genes)``
    as returned by :func:`read_gmt`.  Sets are restricted to the universe;
    sets left empty are skipped with a warning.  Rows are sorted by p-value
    and carry Benjamini-Hochberg q-values.
    """
    universe = set(universe)
    module = set(module_genes)
    if not module:
        raise PreconditionError("module is empty")
    if not module <= universe:
        raise PreconditionError("module genes must be a subset of the universe")
    if not gene_sets:
        raise PreconditionError("no gene sets supplied")
    N, n = len(universe), len(module)
    rows = []
    for sid, entry in gene_sets.items():
        if isinstance(entry, tuple) and len(entry) == 2 and isinstance(entry[0], str) \
                and not isinstance(entry[1], str):
            desc, genes = entry
        else:
            desc, genes = "", entry
        s = set(genes) & universe
        if not s:
            warnings.warn(f"gene set {sid} has no genes in the universe; skipped", stacklevel=2)
            continue
        k = len(s & module)
        p = float(hypergeom.sf(k - 1, N, len(s), n))
        rows.append((sid, desc, len(s), k, min(1.0, p)))
    df = pd.DataFrame(rows, columns=["set_id", "description", "set_size", "overlap", "p_value"])
    if len(df):
        df["q_value"] = false_discovery_control(df["p_value"].to_numpy(), method="bh")
    else:
        df["q_value"] = []
    return df.sort_values(["p_value", "set_id"], kind="stable").reset_index(drop=True)
