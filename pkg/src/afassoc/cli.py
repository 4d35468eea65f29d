"""Command line front end.

Every stage reads and writes files in a working directory (``--dir``), so
the expensive stages can be rerun or resumed independently:

    afassoc simulate -> assoc -> null -> combine -> bootstrap -> categorize -> plot-data

Option values resolve as: command line flag, then ``AFASSOC_<CMD>_<FLAG>``
environment variable, then the JSON ``--config`` file, then the default.
Each command writes ``<command>.config.json`` with the resolved values
next to its outputs.
"""

from __future__ import annotations

import json
import logging
import os
import sys
import warnings
from pathlib import Path

import click
import numpy as np
import pandas as pd

from . import __version__
from .combine import METHODS, bonferroni_select, run_method
from .data import (
    load_dataset,
    parse_kinds,
    read_pvalues,
    validate,
    write_dataset,
    write_pvalues,
    write_signs,
)
from .errors import (
    AfAssocError,
    ArtifactMissing,
    PreconditionError,
    RankDeficient,
    ValidationError,
)
from .glm import assoc_pvalues

log = logging.getLogger("afassoc")

EXIT_VALIDATION = 2
EXIT_RUNTIME = 3
_USER_ERRORS = (ValidationError, PreconditionError, RankDeficient)


def _load_config(ctx, param, value):
    if value is None:
        return None
    path = Path(value)
    if not path.exists():
        raise click.BadParameter(f"config file {value} not found", ctx=ctx, param=param)
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise click.BadParameter(f"{value}: invalid JSON ({exc})", ctx=ctx, param=param)
    if not isinstance(raw, dict):
        raise click.BadParameter(f"{value}: top level must be an object", ctx=ctx, param=param)
    # top-level scalars are shared by every subcommand; objects are per command
    shared = {k.replace("-", "_"): v for k, v in raw.items() if not isinstance(v, dict)}
    dm = dict(shared)
    for name in cli.commands:
        section = raw.get(name, {})
        if not isinstance(section, dict):
            continue
        dm[name] = {**shared, **{k.replace("-", "_"): v for k, v in section.items()}}
    ctx.default_map = {**(ctx.default_map or {}), **dm}
    return str(path)


class _Group(click.Group):
    def invoke(self, ctx):
        try:
            return super().invoke(ctx)
        except _USER_ERRORS as exc:
            click.echo(f"error: {exc}", err=True)
            ctx.exit(EXIT_VALIDATION)
        except (click.exceptions.Exit, click.ClickException, click.Abort):
            raise
        except (AfAssocError, ArithmeticError, RuntimeError, OSError, ValueError,
                MemoryError) as exc:
            click.echo(f"runtime error: {type(exc).__name__}: {exc}", err=True)
            ctx.exit(EXIT_RUNTIME)


def _threads(ctx) -> int:
    t = ctx.find_root().params.get("threads")
    return t if t else (os.cpu_count() or 1)


def _workdir(ctx) -> Path:
    d = Path(ctx.find_root().params.get("dir") or ".")
    d.mkdir(parents=True, exist_ok=True)
    return d


def _snapshot(ctx, name: str) -> None:
    root = ctx.find_root().params
    conf = {
        "command": name,
        "version": __version__,
        "dir": str(root.get("dir")),
        "options": {k: (list(v) if isinstance(v, tuple) else v) for k, v in ctx.params.items()},
    }
    (_workdir(ctx) / f"{name}.config.json").write_text(json.dumps(conf, indent=2, sort_keys=True) + "\n")


def _need(path: Path, what: str) -> Path:
    if not path.exists():
        raise ArtifactMissing(f"missing {what}: {path} (run the stage that produces it first)")
    return path


def _dataset(ctx, expression, phenotypes, covariates, kinds):
    d = _workdir(ctx)
    expr = _need(Path(expression) if expression else d / "expression.tsv", "expression table")
    phen = _need(Path(phenotypes) if phenotypes else d / "phenotypes.tsv", "phenotype table")
    if covariates:
        cov = _need(Path(covariates), "covariate table")
    else:
        cov = d / "covariates.tsv"
        cov = cov if cov.exists() else None
    if kinds is None and (d / "phenotype_kinds.txt").exists():
        kinds = (d / "phenotype_kinds.txt").read_text().strip()
    return load_dataset(expr, phen, cov, parse_kinds(kinds) if kinds else None)


def _dataset_options(f):
    f = click.option("--kinds", default=None,
                     help="Comma-separated phenotype kinds (continuous|count); default from phenotype_kinds.txt.")(f)
    f = click.option("--covariates", type=click.Path(), default=None, help="Covariate TSV (samples x M).")(f)
    f = click.option("--phenotypes", type=click.Path(), default=None, help="Phenotype TSV (samples x K).")(f)
    f = click.option("--expression", type=click.Path(), default=None, help="Expression TSV (genes x samples).")(f)
    return f


def _methods(values) -> list[str]:
    out = []
    for v in values:
        out.extend(m.strip().lower() for m in v.split(",") if m.strip())
    bad = [m for m in out if m not in METHODS]
    if bad:
        raise ValidationError(f"unknown method(s) {bad}; choose from {list(METHODS)}")
    return list(dict.fromkeys(out))


@click.group(cls=_Group, context_settings={"auto_envvar_prefix": "AFASSOC",
                                           "help_option_names": ["-h", "--help"]})
@click.option("--config", callback=_load_config, is_eager=True, expose_value=True,
              type=click.Path(dir_okay=False), help="JSON config file (flags override it).")
@click.option("--dir", "dir", default=".", show_default=True, type=click.Path(file_okay=False),
              help="Working directory for stage inputs and outputs.")
@click.option("--threads", type=click.IntRange(min=1), default=None,
              help="Worker cap (default: all cores). Results do not depend on it.")
@click.option("-v", "--verbose", count=True, help="More logging (repeatable).")
@click.version_option(__version__, prog_name="afassoc")
def cli(config, dir, threads, verbose):
    """Adaptive weighted association of genes with several phenotypes."""
    logging.basicConfig(level=logging.WARNING - 10 * min(verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


# --------------------------------------------------------------------------


@cli.command()
@click.option("--setting", default="IA", show_default=True,
              type=click.Choice(["IA", "IB", "IIA", "IIB", "IIIA", "IIIB"], case_sensitive=False))
@click.option("--sigma-mu", default=0.6, show_default=True, type=float)
@click.option("--seed", default=1, show_default=True, type=int)
@click.option("--n-samples", default=100, show_default=True, type=int)
@click.option("--sigma-x", default=0.5, show_default=True, type=float)
@click.option("--sigma-c", default=0.5, show_default=True, type=float)
@click.option("--poisson-rate", default="exp", show_default=True, type=click.Choice(["exp", "identity"]))
@click.pass_context
def simulate(ctx, setting, sigma_mu, seed, n_samples, sigma_x, sigma_c, poisson_rate):
    """Write a simulated dataset (expression, phenotypes, covariates, truth)."""
    from .simbench import SimConfig
    from .simbench import simulate as _sim

    ds, truth = _sim(SimConfig(setting=setting, sigma_mu=sigma_mu, seed=seed, n_samples=n_samples,
                               sigma_x=sigma_x, sigma_c=sigma_c, poisson_rate=poisson_rate))
    d = _workdir(ctx)
    write_dataset(ds, d)
    pd.DataFrame(truth, index=pd.Index(ds.gene_ids, name="gene_id"),
                 columns=list(ds.phenotype_names)).to_csv(d / "truth_weights.tsv", sep="\t")
    _snapshot(ctx, "simulate")
    click.echo(f"wrote {ds.n_genes} genes x {ds.n_samples} samples, K={ds.n_phenotypes} to {d}")


@cli.command()
@_dataset_options
@click.option("--perms", default=None, type=int, help="Planned B, only used for the resolution check.")
@click.option("--alpha", default=0.05, show_default=True, type=float)
@click.pass_context
def assoc(ctx, expression, phenotypes, covariates, kinds, perms, alpha):
    """Per gene x phenotype Wald p-values and coefficient signs."""
    ds = _dataset(ctx, expression, phenotypes, covariates, kinds)
    for msg in validate(ds, perms, alpha):
        click.echo(f"warning: {msg}", err=True)
    pm = assoc_pvalues(ds)
    d = _workdir(ctx)
    write_pvalues(pm, d / "pvalues.tsv")
    write_signs(pm, d / "signs.tsv")
    n_flag = int(pm.flags.sum())
    if n_flag:
        click.echo(f"warning: {n_flag} gene-phenotype fits were degenerate (p set to 1)", err=True)
    _snapshot(ctx, "assoc")
    click.echo(f"wrote pvalues.tsv and signs.tsv ({ds.n_genes} genes, K={ds.n_phenotypes})")


@cli.command()
@_dataset_options
@click.option("--perms", default=100, show_default=True, type=click.IntRange(min=1), help="Permutations B.")
@click.option("--seed", default=1, show_default=True, type=int)
@click.option("--null-covariates/--no-null-covariates", default=False, show_default=True,
              help="Keep covariates in the null-model fit.")
@click.option("--tsv", is_flag=True, help="Also write null.tsv.")
@click.pass_context
def null(ctx, expression, phenotypes, covariates, kinds, perms, seed, null_covariates, tsv):
    """Residual-permutation null p-values (null.bin)."""
    from .permnull import build_null

    ds = _dataset(ctx, expression, phenotypes, covariates, kinds)
    store = build_null(ds, perms, seed, include_covariates_in_null=null_covariates,
                       n_jobs=_threads(ctx))
    d = _workdir(ctx)
    store.save(d / "null.bin")
    if tsv:
        store.to_tsv(d / "null.tsv", ds.gene_ids, ds.phenotype_names)
    _snapshot(ctx, "null")
    click.echo(f"wrote null.bin (B={perms}, pooled size {perms * ds.n_genes})")


def _load_stage(d: Path):
    from .permnull import NullStore

    pm = read_pvalues(_need(d / "pvalues.tsv", "p-value table"))
    store = NullStore.load(_need(d / "null.bin", "null store"))
    if store.pvals.shape[1:] != pm.values.shape:
        raise ValidationError(
            f"null store is {store.pvals.shape[1]} x {store.pvals.shape[2]} but pvalues.tsv is "
            f"{pm.values.shape[0]} x {pm.values.shape[1]}; rerun null"
        )
    return pm, store


@cli.command()
@click.option("--method", "method", multiple=True, default=("afp",), show_default=True,
              help="afp, afz, fisher, minp (repeat or comma-separate).")
@click.option("--alpha", default=0.05, show_default=True, type=float,
              help="Family-wise level for the Bonferroni summary.")
@click.pass_context
def combine(ctx, method, alpha):
    """Combine p-values across phenotypes (results.tsv)."""
    d = _workdir(ctx)
    pm, store = _load_stage(d)
    K = pm.values.shape[1]
    sign_txt = [",".join(str(int(s)) for s in row) for row in pm.signs]
    frames = []
    for m in _methods(method):
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            r = run_method(m, pm, store)
            hits = bonferroni_select(r.p_floored, alpha, B=store.B)
        for w in caught:
            click.echo(f"warning: {w.message}", err=True)
        if r.mask is not None:
            bits = [",".join(map(str, row)) for row in r.weights(K)]
            mask = [str(int(x)) for x in r.mask]
        else:
            bits = mask = ["NA"] * len(pm.gene_ids)
        frames.append(pd.DataFrame({
            "gene_id": pm.gene_ids, "method": m, "statistic": r.statistic, "p_raw": r.p_raw,
            "p_floored": r.p_floored, "weight_mask": mask, "weight_bits": bits, "signs": sign_txt,
        }))
        click.echo(f"{m}: {len(hits)} genes significant at Bonferroni alpha={alpha}")
    out = pd.concat(frames, ignore_index=True)
    out.to_csv(d / "results.tsv", sep="\t", index=False, float_format="%.17g")
    _snapshot(ctx, "combine")


def _read_results(d: Path) -> pd.DataFrame:
    return pd.read_csv(_need(d / "results.tsv", "combine results"), sep="\t",
                       dtype={"gene_id": str, "weight_mask": str, "weight_bits": str, "signs": str})


def _significant(d: Path, method: str, alpha: float, B: int | None = None) -> list[str]:
    res = _read_results(d)
    res = res[res["method"] == method]
    if res.empty:
        raise ValidationError(f"results.tsv has no rows for method {method}; run combine --method {method}")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        idx = bonferroni_select(res["p_floored"].to_numpy(), alpha, B=B)
    return [res["gene_id"].iloc[i] for i in sorted(idx)]


@cli.command()
@_dataset_options
@click.option("--method", default="afp", show_default=True, type=click.Choice(["afp", "afz"]))
@click.option("--boots", default=50, show_default=True, type=click.IntRange(min=2), help="Bootstrap count L.")
@click.option("--boot-perms", default=None, type=click.IntRange(min=1),
              help="Permutations per bootstrap (default: B of null.bin, else 100).")
@click.option("--seed", default=1, show_default=True, type=int)
@click.option("--alpha", default=0.05, show_default=True, type=float)
@click.option("--genes", "genes_file", type=click.Path(), default=None,
              help="File with one gene id per line (default: Bonferroni-significant genes).")
@click.pass_context
def bootstrap(ctx, expression, phenotypes, covariates, kinds, method, boots, boot_perms, seed,
              alpha, genes_file):
    """Bootstrap signed weights (weights_tensor.tsv, variability.tsv)."""
    from .permnull import NullStore
    from .stability import bootstrap_weights, variability_index

    d = _workdir(ctx)
    ds = _dataset(ctx, expression, phenotypes, covariates, kinds)
    B_null = NullStore.load(d / "null.bin").B if (d / "null.bin").exists() else None
    if boot_perms is None:
        boot_perms = B_null or 100
        ctx.params["boot_perms"] = boot_perms
    if genes_file:
        genes = [g.strip() for g in _need(Path(genes_file), "gene list").read_text().split() if g.strip()]
    else:
        genes = _significant(d, method, alpha, B_null)
    if not genes:
        raise PreconditionError("no genes to bootstrap (no significant genes; pass --genes)")
    t = bootstrap_weights(ds, boots, boot_perms, method, seed, genes, n_jobs=_threads(ctx))
    t.to_tsv(d / "weights_tensor.tsv")
    U = variability_index(t)
    pd.DataFrame(U, index=pd.Index(t.gene_subset, name="gene_id"),
                 columns=list(t.phenotype_names)).to_csv(d / "variability.tsv", sep="\t",
                                                         float_format="%.17g")
    _snapshot(ctx, "bootstrap")
    click.echo(f"wrote weights_tensor.tsv (L={boots}, {len(genes)} genes) and variability.tsv")


@cli.command()
@click.option("--min-size", default=20, show_default=True, type=click.IntRange(min=2))
@click.option("--alpha-tight", default=0.7, show_default=True, type=float)
@click.option("--merge-tau", default=0.5, show_default=True, type=float)
@click.option("--max-modules", default=None, type=click.IntRange(min=1))
@click.option("--gmt", type=click.Path(), default=None, help="Gene sets in GMT format.")
@click.option("--universe", type=click.Path(), default=None,
              help="Background gene list (default: all genes in pvalues.tsv).")
@click.pass_context
def categorize(ctx, min_size, alpha_tight, merge_tau, max_modules, gmt, universe):
    """Co-membership, tight modules and enrichment."""
    from .categorize import enrich, merge_modules, read_gmt, tight_cluster
    from .stability import SignedWeightTensor, comembership

    d = _workdir(ctx)
    t = SignedWeightTensor.from_tsv(_need(d / "weights_tensor.tsv", "bootstrap weights"))
    V = comembership(t)
    genes = list(t.gene_subset)
    pd.DataFrame(V, index=pd.Index(genes, name="gene_id"), columns=genes).to_csv(
        d / "comembership.tsv", sep="\t", float_format="%.17g")
    a = tight_cluster(V, genes, min_size=min_size, alpha_tight=alpha_tight, max_modules=max_modules)
    a = merge_modules(a, V, genes, merge_tau=merge_tau)
    labels = a.labels()
    tight = {i: t_ for i, t_ in enumerate(a.tightness, 1)}
    rows = [(g, labels[g], int(labels[g] == 0), tight.get(labels[g], float("nan"))) for g in genes]
    pd.DataFrame(rows, columns=["gene_id", "module", "scattered", "tightness"]).to_csv(
        d / "clusters.tsv", sep="\t", index=False, float_format="%.17g")
    if a.empty:
        click.echo("warning: no module met the size and tightness thresholds; all genes scattered", err=True)
    if gmt:
        sets = read_gmt(_need(Path(gmt), "GMT file"))
        if universe:
            uni = [g.strip() for g in _need(Path(universe), "universe list").read_text().split() if g.strip()]
        elif (d / "pvalues.tsv").exists():
            uni = list(read_pvalues(d / "pvalues.tsv").gene_ids)
        else:
            uni = genes
        frames = []
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            for i, mod in enumerate(a.modules, 1):
                e = enrich(mod, sets, uni)
                e.insert(0, "module", i)
                frames.append(e)
        for msg in sorted({str(w.message) for w in caught}):
            click.echo(f"warning: {msg}", err=True)
        cols = ["module", "set_id", "description", "set_size", "overlap", "p_value", "q_value"]
        out = pd.concat(frames, ignore_index=True) if frames else pd.DataFrame(columns=cols)
        out.to_csv(d / "enrichment.tsv", sep="\t", index=False, float_format="%.17g")
    _snapshot(ctx, "categorize")
    click.echo(f"{len(a.modules)} module(s), {len(a.scattered)} scattered gene(s)")


@cli.command()
@click.option("--setting", multiple=True, default=("IA",), show_default=True,
              help="Simulation setting(s); repeat or comma-separate.")
@click.option("--sigma-mu", multiple=True, type=float, default=(0.0, 0.4, 0.6), show_default=True)
@click.option("--reps", default=100, show_default=True, type=click.IntRange(min=1), help="Replicates S.")
@click.option("--perms", default=100, show_default=True, type=click.IntRange(min=1))
@click.option("--method", "method", multiple=True, default=METHODS, show_default=True)
@click.option("--alpha", default=0.05, show_default=True, type=float)
@click.option("--seed", default=1, show_default=True, type=int)
@click.option("--sigma-c", default=0.5, show_default=True, type=float)
@click.option("--poisson-rate", default="exp", show_default=True, type=click.Choice(["exp", "identity"]))
@click.pass_context
def benchmark(ctx, setting, sigma_mu, reps, perms, method, alpha, seed, sigma_c, poisson_rate):
    """Type I error, power and weight recovery on simulated data."""
    from .simbench import N_PHENOTYPES, SETTINGS, benchmark_table, run_benchmark

    settings = [s.strip().upper() for v in setting for s in v.split(",") if s.strip()]
    bad = [s for s in settings if s not in SETTINGS]
    if bad:
        raise ValidationError(f"unknown setting(s) {bad}; choose from {list(SETTINGS)}")
    methods = _methods(method)
    results = []
    for s in settings:
        for sm in sigma_mu:
            r = run_benchmark(s, sm, S=reps, B=perms, methods=methods, alpha=alpha, seed=seed,
                              n_jobs=_threads(ctx), sigma_c=sigma_c, poisson_rate=poisson_rate)
            results.append(r)
            click.echo(f"{s} sigma_mu={sm}: " + ", ".join(
                f"{m}={v:.3f}" for m, v in r.rejection_rate.items()))
    d = _workdir(ctx)
    pd.DataFrame(benchmark_table(results)).to_csv(d / "benchmark.tsv", sep="\t", index=False,
                                                  float_format="%.6g")
    rows = []
    blocks = ("genes 1-50", "genes 51-100", "genes 101-150")
    for r in results:
        for m, W in r.mean_weights.items():
            for b, label in enumerate(blocks):
                rows.append([r.setting, r.sigma_mu, m, label, *W[b]])
    cols = ["setting", "sigma_mu", "method", "gene_block"] + [f"Y{k + 1}" for k in range(N_PHENOTYPES)]
    pd.DataFrame(rows, columns=cols).to_csv(d / "mean_weights.tsv", sep="\t", index=False,
                                            float_format="%.4f")
    _snapshot(ctx, "benchmark")


@cli.command("plot-data")
@click.option("--method", default="afp", show_default=True, type=click.Choice(list(METHODS)))
@click.option("--alpha", default=0.05, show_default=True, type=float)
@click.option("--svg/--no-svg", default=False, show_default=True, help="Also render SVG figures.")
@click.pass_context
def plot_data(ctx, method, alpha, svg):
    """Figure tables (CSV) and optional SVG renderings."""
    from .plotting import boxplot_table, render_boxplot, render_heatmap, signed_logp_table

    d = _workdir(ctx)
    pm = read_pvalues(_need(d / "pvalues.tsv", "p-value table"))
    genes = _significant(d, method, alpha)
    if (d / "clusters.tsv").exists():
        cl = pd.read_csv(d / "clusters.tsv", sep="\t", dtype={"gene_id": str})
        # modules first, in module order, scattered genes last
        key = {g: (m if m > 0 else 10**9, g) for g, m in zip(cl["gene_id"], cl["module"])}
        genes = sorted(genes, key=lambda g: key.get(g, (2 * 10**9, g)))
    written = []

    box = boxplot_table(pm, genes)
    box.to_csv(d / "boxplot.csv", index=False, float_format="%.17g")
    written.append("boxplot.csv")
    sl = signed_logp_table(pm, genes)
    sl.to_csv(d / "signed_logp.csv", float_format="%.17g")
    written.append("signed_logp.csv")
    if svg:
        render_boxplot(box, d / "boxplot.svg", title=f"{len(genes)} significant genes ({method})")
        render_heatmap(sl.to_numpy(), d / "signed_logp.svg", rows=list(sl.index), cols=list(sl.columns),
                       cmap="RdBu_r", vmin=-10, vmax=10, label="-log10(p) x sign")
        written += ["boxplot.svg", "signed_logp.svg"]

    if (d / "comembership.tsv").exists():
        V = pd.read_csv(d / "comembership.tsv", sep="\t", index_col=0, dtype={"gene_id": str})
        V.index = V.index.astype(str)
        if (d / "clusters.tsv").exists():
            order = sorted(V.index, key=lambda g: key.get(g, (2 * 10**9, g)))
            V = V.loc[order, order]
        V.to_csv(d / "heatmap_comembership.csv", float_format="%.17g")
        written.append("heatmap_comembership.csv")
        if svg:
            render_heatmap(V.to_numpy(), d / "heatmap_comembership.svg", rows=list(V.index),
                           cols=list(V.columns), cmap="Greys", vmin=0, vmax=1, label="co-membership")
            written.append("heatmap_comembership.svg")
    if (d / "variability.tsv").exists():
        U = pd.read_csv(d / "variability.tsv", sep="\t", index_col=0, dtype={"gene_id": str})
        U.to_csv(d / "variability.csv", float_format="%.17g")
        written.append("variability.csv")
        if svg:
            render_heatmap(U.to_numpy(), d / "variability.svg", rows=list(U.index), cols=list(U.columns),
                           cmap="magma_r", vmin=0, vmax=1, label="variability index")
            written.append("variability.svg")
    _snapshot(ctx, "plot-data")
    click.echo("wrote " + ", ".join(written))


def main() -> None:  # pragma: no cover - console entry point
    cli(prog_name="afassoc")


if __name__ == "__main__":  # pragma: no cover
    main()
