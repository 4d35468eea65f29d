import numpy as np
import pytest

from afassoc.data import (
    Dataset,
    PValueMatrix,
    load_dataset,
    parse_kinds,
    read_pvalues,
    validate,
    write_dataset,
    write_pvalues,
)
from afassoc.errors import (
    KindViolation,
    MissingSample,
    MissingValue,
    NonNumericCell,
    TooManyPhenotypes,
    ValidationError,
)


def _write(path, header, rows):
    path.write_text("\t".join(header) + "\n" + "".join("\t".join(map(str, r)) + "\n" for r in rows))
    return path


@pytest.fixture
def files(tmp_path, rng):
    samples = [f"s{i}" for i in range(10)]
    X = rng.normal(size=(5, 10)).round(4)
    Y = rng.normal(size=(10, 2)).round(3)
    Z = rng.normal(size=(10, 1)).round(3)
    e = _write(tmp_path / "e.tsv", ["gene_id", *samples], [[f"g{j}", *X[j]] for j in range(5)])
    order = rng.permutation(10)
    ph = _write(tmp_path / "p.tsv", ["sample_id", "a", "b"], [[samples[i], *Y[i]] for i in order])
    cv = _write(tmp_path / "c.tsv", ["sample_id", "age"], [[samples[i], *Z[i]] for i in order[::-1]])
    return e, ph, cv, X, Y, Z


def test_load_dimensions_and_alignment(files):
    e, ph, cv, X, Y, Z = files
    ds = load_dataset(e, ph, cv, "continuous,continuous")
    assert (ds.n_genes, ds.n_samples, ds.n_phenotypes, ds.n_covariates) == (5, 10, 2, 1)
    np.testing.assert_array_equal(ds.phenotypes, Y)
    np.testing.assert_array_equal(ds.covariates, Z)
    assert ds.sample_ids == tuple(f"s{i}" for i in range(10))


def test_roundtrip_bit_exact(files, tmp_path):
    e, ph, cv, *_ = files
    ds = load_dataset(e, ph, cv)
    out = write_dataset(ds, tmp_path / "rt")
    ds2 = load_dataset(out["expression"], out["phenotypes"], out["covariates"],
                       out["kinds"].read_text().strip())
    for a in ("expression", "phenotypes", "covariates"):
        assert np.array_equal(getattr(ds, a), getattr(ds2, a))
    assert ds.gene_ids == ds2.gene_ids and ds.kinds == ds2.kinds


def test_missing_sample(files, tmp_path):
    e, ph, *_ = files
    lines = ph.read_text().splitlines()
    bad = _write(tmp_path / "bad.tsv", lines[0].split("\t"), [l.split("\t") for l in lines[1:-1]])
    with pytest.raises(MissingSample):
        load_dataset(e, bad)


def test_non_numeric_reports_line(files, tmp_path):
    e, ph, *_ = files
    lines = ph.read_text().splitlines()
    cells = lines[3].split("\t")
    cells[1] = "abc"
    lines[3] = "\t".join(cells)
    bad = tmp_path / "bad.tsv"
    bad.write_text("\n".join(lines) + "\n")
    with pytest.raises(NonNumericCell, match=r"bad.tsv:4"):
        load_dataset(e, bad)


def test_missing_value(files, tmp_path):
    e, ph, *_ = files
    lines = ph.read_text().splitlines()
    cells = lines[2].split("\t")
    cells[2] = "NA"
    lines[2] = "\t".join(cells)
    bad = tmp_path / "bad.tsv"
    bad.write_text("\n".join(lines) + "\n")
    with pytest.raises(MissingValue):
        load_dataset(e, bad)


def test_count_kind_violation(rng):
    Y = np.column_stack([np.arange(10.0), rng.normal(size=10)])
    Y[3, 0] = -1
    with pytest.raises(KindViolation):
        Dataset(rng.normal(size=(3, 10)), Y, ["count", "continuous"], np.zeros((10, 0)),
                ["a", "b", "c"], [str(i) for i in range(10)], ["y1", "y2"])


def test_too_many_phenotypes(rng):
    with pytest.raises(TooManyPhenotypes):
        Dataset(rng.normal(size=(3, 20)), rng.normal(size=(20, 16)), ["continuous"] * 16,
                np.zeros((20, 0)), ["a", "b", "c"], [str(i) for i in range(20)],
                [f"y{k}" for k in range(16)])


def test_dataset_is_immutable(small_ds):
    with pytest.raises(ValueError):
        small_ds.expression[0, 0] = 1.0


def test_small_n_rejected(rng):
    with pytest.raises(ValidationError):
        Dataset(rng.normal(size=(3, 3)), rng.normal(size=(3, 1)), ["continuous"], rng.normal(size=(3, 1)),
                ["a", "b", "c"], ["1", "2", "3"], ["y"])


def test_parse_kinds():
    assert parse_kinds("count, continuous") == ["count", "continuous"]
    with pytest.raises(ValidationError):
        parse_kinds("binary")


def test_validate_messages(rng):
    X = rng.normal(size=(3, 20))
    X[1] = 2.0
    ds = Dataset(X, rng.normal(size=(20, 12)), ["continuous"] * 12, np.zeros((20, 0)),
                 ["a", "b", "c"], [str(i) for i in range(20)], [f"y{k}" for k in range(12)])
    msgs = validate(ds)
    assert any("zero-variance gene: b" in m for m in msgs)
    assert any("below 10" in m for m in msgs)
    assert any("B-resolution" in m for m in validate(ds, perms=10, alpha=0.05))
    assert not any("B-resolution" in m for m in validate(ds, perms=100, alpha=0.05))


def test_validate_clean(small_ds):
    assert validate(small_ds) == []


def test_pvalue_matrix_roundtrip(tmp_path):
    pm = PValueMatrix(np.array([[0.5, 1e-300], [1.0, 0.123456789]]), np.array([[1, -1], [0, 1]]),
                      ["g1", "g2"], ["a", "b"])
    write_pvalues(pm, tmp_path / "pv.tsv")
    back = read_pvalues(tmp_path / "pv.tsv")
    assert np.array_equal(back.values, pm.values) and np.array_equal(back.signs, pm.signs)
    with pytest.raises(ValidationError):
        PValueMatrix(np.array([[0.0]]), np.array([[1]]), ["g"], ["a"])
