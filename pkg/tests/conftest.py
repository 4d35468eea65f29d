import numpy as np
import pytest

from afassoc.data import Dataset

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


def make_dataset(rng, p=6, n=40, K=3, M=1, kinds=None, signal=0.0):
    X = rng.normal(size=(p, n))
    Z = rng.normal(size=(n, M))
    Y = rng.normal(size=(n, K)) + signal * X[0][:, None]
    kinds = kinds or ["continuous"] * K
    for k, kind in enumerate(kinds):
        if kind == "count":
            Y[:, k] = rng.poisson(np.exp(0.3 * X[0] * (signal > 0)))
    return Dataset(
        expression=X, phenotypes=Y, kinds=kinds, covariates=Z,
        gene_ids=[f"g{j}" for j in range(p)], sample_ids=[f"s{i}" for i in range(n)],
        phenotype_names=[f"y{k}" for k in range(K)],
    )


@pytest.fixture
def small_ds(rng):
    return make_dataset(rng, signal=1.0, kinds=["continuous", "count", "continuous"])
