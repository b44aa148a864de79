import numpy as np
import pytest

from dff.core import (
    DataError, Dataset, SplitSpec, Standardizer, kfold_partition, load_dataset, load_matrix_csv,
    make_rng, save_dataset, save_matrix_csv, split_dataset,
)


def _ds(n=10, p=2, d=3, seed=0):
    rng = np.random.default_rng(seed)
    return Dataset(rng.standard_normal((n, p)), rng.standard_normal((n, d)), "test", seed)


def test_split_sizes():
    tr, va, te = split_dataset(_ds(10), SplitSpec(0.8, 0.1, 0.1, seed=7))
    assert (tr.n, va.n, te.n) == (8, 1, 1)


def test_split_zero_fractions_allowed():
    tr, va, te = split_dataset(_ds(10), SplitSpec(1.0, 0.0, 0.0))
    assert (tr.n, va.n, te.n) == (10, 0, 0)


def test_split_deterministic_and_disjoint():
    ds = _ds(50)
    a = split_dataset(ds, SplitSpec(seed=3))
    b = split_dataset(ds, SplitSpec(seed=3))
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x.X, y.X)
    rows = np.concatenate([s.X[:, 0] for s in a])
    assert sorted(rows) == sorted(ds.X[:, 0])


def test_split_rejects_bad_specs():
    with pytest.raises(ValueError):
        SplitSpec(0.5, 0.2, 0.2)
    with pytest.raises(ValueError):
        split_dataset(_ds(2), SplitSpec())
    with pytest.raises(ValueError):
        split_dataset(_ds(5), SplitSpec(0.9, 0.05, 0.05))


@pytest.mark.parametrize("n,k,sizes", [(4, 2, [2, 2]), (5, 2, [3, 2]), (10, 3, [4, 3, 3])])
def test_kfold_sizes(n, k, sizes):
    folds = kfold_partition(n, k, seed=0)
    assert [len(f) for f in folds] == sizes
    np.testing.assert_array_equal(np.sort(np.concatenate(folds)), np.arange(n))


def test_kfold_seeds_differ():
    a = kfold_partition(100, 2, seed=1)
    b = kfold_partition(100, 2, seed=2)
    assert not np.array_equal(a[0], b[0])
    for folds in (a, b):
        assert sum(len(f) for f in folds) == 100
        assert len(np.intersect1d(folds[0], folds[1])) == 0


def test_kfold_rejects():
    with pytest.raises(ValueError):
        kfold_partition(3, 1, 0)
    with pytest.raises(ValueError):
        kfold_partition(3, 4, 0)


def test_dataset_validation():
    with pytest.raises(DataError):
        Dataset(np.zeros((3, 2)), np.zeros((4, 1)))
    with pytest.raises(DataError):
        Dataset(np.array([[np.nan]]), np.zeros((1, 1)))
    ds = _ds()
    with pytest.raises(ValueError):
        ds.X[0, 0] = 1.0


def test_dataset_roundtrip_exact(tmp_path):
    ds = _ds(7, 3, 4, seed=5)
    save_dataset(ds, tmp_path / "d.csv")
    back = load_dataset(tmp_path / "d.csv")
    np.testing.assert_array_equal(back.X, ds.X)
    np.testing.assert_array_equal(back.C, ds.C)
    assert back.seed == 5 and back.provenance == "test"


def test_dataset_bad_files(tmp_path):
    (tmp_path / "e.csv").write_text("")
    with pytest.raises(DataError):
        load_dataset(tmp_path / "e.csv")
    (tmp_path / "b.csv").write_text("x_0,c_0\n1,abc\n")
    with pytest.raises(DataError):
        load_dataset(tmp_path / "b.csv")
    (tmp_path / "h.csv").write_text("a,b\n1,2\n")
    with pytest.raises(DataError):
        load_dataset(tmp_path / "h.csv")


def test_matrix_csv_roundtrip(tmp_path):
    M = np.random.default_rng(0).standard_normal((4, 3))
    save_matrix_csv(M, tmp_path / "m.csv")
    np.testing.assert_array_equal(load_matrix_csv(tmp_path / "m.csv"), M)


def test_make_rng_streams():
    a = make_rng(3, "features").random(5)
    np.testing.assert_array_equal(a, make_rng(3, "features").random(5))
    assert not np.array_equal(a, make_rng(3, "noise").random(5))
    assert not np.array_equal(a, make_rng(4, "features").random(5))


def test_standardizer():
    X = np.array([[1.0, 5.0], [3.0, 5.0]])
    s = Standardizer.fit(X)
    np.testing.assert_allclose(s.transform(X), [[-1, 0], [1, 0]])
