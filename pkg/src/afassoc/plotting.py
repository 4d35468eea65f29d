"""Plot data tables and their static SVG renderings.

The CSV tables carry the numbers; the SVGs are plain cell grids and
boxplots drawn with the Agg backend so they work headless.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402

from .data import PValueMatrix  # noqa: E402

TRUNCATE = 10.0

# fixed salt and no date stamp keep the SVG bytes reproducible
plt.rcParams["svg.hashsalt"] = "afassoc"
_SVG_META = {"Date": None, "Creator": None}


def _rows(pm: PValueMatrix, genes: Sequence[str] | None) -> np.ndarray:
    if genes is None:
        return np.arange(len(pm.gene_ids))
    pos = {g: i for i, g in enumerate(pm.gene_ids)}
    return np.array([pos[g] for g in genes if g in pos], dtype=int)


def boxplot_table(pm: PValueMatrix, genes: Sequence[str] | None = None) -> pd.DataFrame:
    """Long table of -log10 p per (gene, phenotype)."""
    idx = _rows(pm, genes)
    lp = -np.log10(pm.values[idx])
    ids = [pm.gene_ids[i] for i in idx]
    return pd.DataFrame({
        "gene_id": np.repeat(ids, len(pm.phenotype_names)),
        "phenotype": np.tile(pm.phenotype_names, len(ids)),
        "neg_log10_p": lp.ravel(),
    })


def signed_logp_table(pm: PValueMatrix, genes: Sequence[str] | None = None,
                      limit: float = TRUNCATE) -> pd.DataFrame:
    """``-log10 p * sign(theta)`` clipped to ``[-limit, limit]``, gene x phenotype."""
    idx = _rows(pm, genes)
    v = np.clip(-np.log10(pm.values[idx]) * pm.signs[idx], -limit, limit)
    return pd.DataFrame(v, index=pd.Index([pm.gene_ids[i] for i in idx], name="gene_id"),
                        columns=list(pm.phenotype_names))


def _save(fig, path):
    fig.savefig(path, format="svg", metadata=_SVG_META, bbox_inches="tight")
    plt.close(fig)


def render_boxplot(table: pd.DataFrame, path: str | Path, title: str = "") -> None:
    names = list(dict.fromkeys(table["phenotype"]))
    data = [table.loc[table["phenotype"] == k, "neg_log10_p"].to_numpy() for k in names]
    fig, ax = plt.subplots(figsize=(max(4, 0.6 * len(names) + 2), 4))
    ax.boxplot(data, showfliers=False)
    ax.set_xticks(range(1, len(names) + 1), names, rotation=45, ha="right")
    ax.set_ylabel("-log10(p)")
    if title:
        ax.set_title(title)
    _save(fig, path)


def render_heatmap(values: np.ndarray, path: str | Path, rows: Sequence[str] = (),
                   cols: Sequence[str] = (), cmap: str = "viridis", vmin=None, vmax=None,
                   title: str = "", label: str = "") -> None:
    values = np.asarray(values, dtype=float)
    h, w = values.shape
    fig, ax = plt.subplots(figsize=(min(12, 2 + 0.25 * w), min(12, 2 + 0.12 * h)))
    im = ax.imshow(values, aspect="auto", interpolation="nearest", cmap=cmap, vmin=vmin, vmax=vmax)
    # labels only when they stay legible
    if cols and w <= 40:
        ax.set_xticks(range(w), cols, rotation=90, fontsize=7)
    else:
        ax.set_xticks([])
    if rows and h <= 60:
        ax.set_yticks(range(h), rows, fontsize=6)
    else:
        ax.set_yticks([])
    fig.colorbar(im, ax=ax, label=label)
    if title:
        ax.set_title(title)
    _save(fig, path)
