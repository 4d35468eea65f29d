import math
import warnings

import numpy as np
import pytest

from afassoc.categorize import (
    ClusterAssignment,
    enrich,
    merge_modules,
    module_tightness,
    read_gmt,
    tight_cluster,
)
from afassoc.errors import PreconditionError, ValidationError
from oracles import hypergeom_upper


def blocks(sizes, within=1.0, between=0.0):
    n = sum(sizes)
    V = np.full((n, n), between)
    s = 0
    for b in sizes:
        V[s:s + b, s:s + b] = within
        s += b
    np.fill_diagonal(V, 1.0)
    return V


def ids(n):
    return [f"g{i:03d}" for i in range(n)]


def test_two_blocks():
    a = tight_cluster(blocks([5, 4]), ids(9), min_size=2, alpha_tight=0.9)
    assert sorted(map(len, a.modules)) == [4, 5] and a.scattered == []
    assert set(a.modules[0]) | set(a.modules[1]) == set(ids(9))


def test_identity_all_scattered():
    a = tight_cluster(np.eye(6), ids(6), min_size=2, alpha_tight=0.7)
    assert a.empty and len(a.scattered) == 6 and "empty" in a.flags


def planted_V(seed=0, noise=10):
    rng = np.random.default_rng(seed)
    sizes = [25, 30, 20]
    V = blocks(sizes, within=0.95, between=0.1)
    n = sum(sizes) + noise
    full = np.full((n, n), 0.3)
    full[: sum(sizes), : sum(sizes)] = V
    full += rng.uniform(-0.02, 0.02, size=(n, n))
    full = np.clip((full + full.T) / 2, 0, 1)
    np.fill_diagonal(full, 1.0)
    labels = np.repeat([1, 2, 3, 0], sizes + [noise])
    return full, labels


def test_planted_recovery():
    V, labels = planted_V()
    g = ids(len(labels))
    a = tight_cluster(V, g, min_size=15, alpha_tight=0.7)
    got = sorted(sorted(m) for m in a.modules)
    want = sorted(sorted(g[i] for i in np.flatnonzero(labels == c)) for c in (1, 2, 3))
    assert got == want
    assert sorted(a.scattered) == sorted(g[i] for i in np.flatnonzero(labels == 0))


def test_invariants_and_order_invariance():
    V, labels = planted_V(seed=3)
    g = ids(len(labels))
    a = tight_cluster(V, g, min_size=5, alpha_tight=0.7)
    pos = {x: i for i, x in enumerate(g)}
    for m, t in zip(a.modules, a.tightness):
        assert len(m) >= 5 and t >= 0.7
        assert module_tightness(V, [pos[x] for x in m]) == pytest.approx(t)
    flat = [x for m in a.modules for x in m] + a.scattered
    assert sorted(flat) == sorted(g) and len(flat) == len(set(flat))
    assert a.tightness == sorted(a.tightness, reverse=True)

    perm = np.random.default_rng(1).permutation(len(g))
    b = tight_cluster(V[np.ix_(perm, perm)], [g[i] for i in perm], min_size=5, alpha_tight=0.7)
    assert sorted(map(sorted, a.modules)) == sorted(map(sorted, b.modules))


def test_max_modules():
    V, labels = planted_V()
    a = tight_cluster(V, ids(len(labels)), min_size=15, alpha_tight=0.7, max_modules=1)
    assert len(a.modules) == 1 and len(a.scattered) == len(labels) - len(a.modules[0])


def test_parameter_validation():
    with pytest.raises(ValidationError):
        tight_cluster(np.eye(3), ids(3), min_size=1)
    with pytest.raises(ValidationError):
        tight_cluster(np.eye(3), ids(3), alpha_tight=0.4)
    with pytest.raises(ValidationError):
        tight_cluster(np.array([[1, 0.2], [0.5, 1]]), ids(2))


def _two(between):
    V = blocks([4, 4], within=1.0, between=between)
    g = ids(8)
    return V, g, ClusterAssignment([g[:4], g[4:]], [], [1.0, 1.0])


def test_merge():
    V, g, a = _two(0.9)
    m = merge_modules(a, V, g, merge_tau=0.8)
    assert len(m.modules) == 1 and sorted(m.modules[0]) == g
    V, g, a = _two(0.1)
    assert len(merge_modules(a, V, g, merge_tau=0.8).modules) == 2


def test_merge_seven_into_four():
    # C1-C3 close to each other, C6-C7 close to each other, C4 and C5 isolated
    sizes = [5] * 7
    V = blocks(sizes, within=0.95, between=0.05)
    g = ids(35)
    close = [(0, 1), (0, 2), (1, 2), (5, 6)]
    for a, b in close:
        V[a * 5:(a + 1) * 5, b * 5:(b + 1) * 5] = 0.7
        V[b * 5:(b + 1) * 5, a * 5:(a + 1) * 5] = 0.7
    a = ClusterAssignment([g[i * 5:(i + 1) * 5] for i in range(7)], [], [0.95] * 7)
    m = merge_modules(a, V, g, merge_tau=0.5)
    assert sorted(map(len, m.modules)) == [5, 5, 10, 15]
    flat = [x for mod in m.modules for x in mod]
    assert len(flat) == len(set(flat)) == 35


def test_enrich_examples():
    uni = list("abcde")
    r = enrich(["a", "b"], {"S": ["a", "b"]}, uni)
    assert r.loc[0, "p_value"] == pytest.approx(0.1) and r.loc[0, "overlap"] == 2
    assert enrich(["a"], {"U": uni}, uni).loc[0, "p_value"] == pytest.approx(1.0)
    with pytest.raises(PreconditionError):
        enrich([], {"S": ["a"]}, uni)
    with pytest.raises(PreconditionError):
        enrich(["z"], {"S": ["a"]}, uni)


def test_enrich_matches_counting_oracle():
    rng = np.random.default_rng(2)
    uni = [f"u{i}" for i in range(30)]
    module = list(rng.choice(uni, 8, replace=False))
    sets = {f"S{i}": list(rng.choice(uni, rng.integers(1, 15), replace=False)) for i in range(12)}
    r = enrich(module, sets, uni).set_index("set_id")
    for sid, genes in sets.items():
        k = len(set(genes) & set(module))
        assert r.loc[sid, "p_value"] == pytest.approx(hypergeom_upper(30, len(set(genes)), 8, k), rel=1e-10)
    p = r["p_value"].sort_values().to_numpy()
    q_manual = np.minimum.accumulate((p * len(p) / np.arange(1, len(p) + 1))[::-1])[::-1]
    np.testing.assert_allclose(np.sort(r["q_value"].to_numpy()), np.sort(np.minimum(q_manual, 1)))


def test_enrich_skips_empty_sets(tmp_path):
    gmt = tmp_path / "s.gmt"
    gmt.write_text("A\tfirst\ta\tb\nB\tsecond\tzz\n\nC\tthird\tc\td\te\n")
    sets = read_gmt(gmt)
    assert sets["A"] == ("first", ["a", "b"])
    with pytest.warns(UserWarning, match="B"):
        r = enrich(["a", "b"], sets, list("abcde"))
    assert list(r["set_id"]) == ["A", "C"]
    assert r["p_value"].is_monotonic_increasing
    (tmp_path / "bad.gmt").write_text("onlyid\n")
    with pytest.raises(ValidationError):
        read_gmt(tmp_path / "bad.gmt")
