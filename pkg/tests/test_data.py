import logging

import numpy as np
import pytest

from oslnet.data import (TEST, TRAIN, DataRecipe, Dataset, GeometryError, ParseError, generate_blobs,
                         load_features, merge_splits, reduce_training, split_per_class, write_features)


def test_blobs_balance_and_determinism():
    a = generate_blobs(4, 16, 5, 7, 0.2, seed=3)
    b = generate_blobs(4, 16, 5, 7, 0.2, seed=3)
    assert np.array_equal(a.features, b.features) and np.array_equal(a.labels, b.labels)
    assert a.counts(TRAIN).tolist() == [5] * 4
    assert a.counts(TEST).tolist() == [7] * 4
    assert set(a.split.tolist()) == {TRAIN, TEST}


def test_blobs_zero_noise_one_nn_perfect():
    d = generate_blobs(5, 10, 3, 3, 0.0, seed=1)
    xtr, ytr = d.train
    xte, yte = d.test
    dist = ((xte[:, :, None] - xtr[:, None, :]) ** 2).sum(axis=0)
    assert np.array_equal(ytr[np.argmin(dist, axis=1)], yte)


def test_blobs_mean_separation():
    d = generate_blobs(8, 64, 1, 0, 0.0, seed=0, min_angle_deg=60)
    means = d.features / np.linalg.norm(d.features, axis=0)
    cos = means.T @ means
    assert np.all(np.abs(cos[~np.eye(8, dtype=bool)]) <= 0.5 + 1e-12)


def test_sample_seed_keeps_means():
    a = generate_blobs(3, 8, 50, 0, 0.1, seed=0, sample_seed=1)
    b = generate_blobs(3, 8, 50, 0, 0.1, seed=0, sample_seed=2)
    assert not np.array_equal(a.features, b.features)
    for c in range(3):
        ma = a.features[:, a.labels == c].mean(axis=1)
        mb = b.features[:, b.labels == c].mean(axis=1)
        assert np.linalg.norm(ma - mb) < 0.1


def test_blobs_geometry_error():
    with pytest.raises(GeometryError, match="larger dim"):
        generate_blobs(6, 6, 1, 1, 0.1, seed=0, min_angle_deg=89, max_tries=200)


def test_round_trip_bit_identical(tmp_path, rng):
    x = rng.standard_normal((3, 7)) * 1e3
    y = rng.integers(0, 4, 7)
    write_features(tmp_path / "a.csv", x, y)
    d = load_features(tmp_path / "a.csv")
    assert np.array_equal(d.features, x) and np.array_equal(d.labels, y)
    write_features(tmp_path / "b.csv", d.features, d.labels)
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_small_file(tmp_path):
    (tmp_path / "s.csv").write_text("0,1.0,2.0\n1,3.0,4.0\n0,5.0,6.0\n")
    d = load_features(tmp_path / "s.csv")
    assert d.features.shape == (2, 3) and d.dim == 2 and d.class_count == 2


def test_sparse_labels_warn(tmp_path, caplog):
    (tmp_path / "s.csv").write_text("0,1\n3,2\n7,3\n")
    with caplog.at_level(logging.WARNING):
        d = load_features(tmp_path / "s.csv")
    assert d.class_count == 8
    assert "no samples" in caplog.text


@pytest.mark.parametrize("body, match", [
    ("", "no data rows"),
    ("0,1,2\n1,2\n", ":2: expected 3 columns"),
    ("a,1\n", ":1: label 'a'"),
    ("0,x\n", ":1:"),
    ("-1,2\n", "negative label"),
])
def test_parse_errors(tmp_path, body, match):
    (tmp_path / "bad.csv").write_text(body)
    with pytest.raises(ParseError, match=match):
        load_features(tmp_path / "bad.csv")


def test_split_per_class_partition():
    base = generate_blobs(3, 6, 9, 0, 0.1, seed=0)
    d = split_per_class(base, seed=4)
    assert set(d.split.tolist()) == {TRAIN, TEST}
    assert d.counts(TRAIN).tolist() == [5, 5, 5]
    assert d.counts(TEST).tolist() == [4, 4, 4]


def test_reduce_training():
    d = generate_blobs(3, 6, 10, 4, 0.1, seed=0)
    assert reduce_training(d, 0, seed=0) is d
    r = reduce_training(d, 9, seed=0)
    assert r.counts(TRAIN).tolist() == [1, 1, 1]
    assert np.array_equal(r.test[0], d.test[0])
    with pytest.raises(ValueError, match="class 0"):
        reduce_training(d, 10, seed=0)


@pytest.mark.parametrize("n", [20, 30, 40, 50])
def test_reduction_protocol(n):
    d = DataRecipe(k=4, dim=16, train_per_class=60, test_per_class=10, reduce=n).build(0)
    assert d.counts(TRAIN).tolist() == [60 - n] * 4
    assert d.counts(TEST).tolist() == [10] * 4


def test_recipe_rounds_differ_but_repeat():
    r = DataRecipe(k=3, dim=8, train_per_class=4, test_per_class=4)
    assert np.array_equal(r.build(1).features, r.build(1).features)
    assert not np.array_equal(r.build(0).features, r.build(1).features)
    fixed = DataRecipe(k=3, dim=8, train_per_class=4, test_per_class=4, resample=False)
    assert np.array_equal(fixed.build(0).features, fixed.build(5).features)


def test_recipe_from_files(tmp_path):
    d = generate_blobs(3, 5, 4, 2, 0.1, seed=0)
    write_features(tmp_path / "train.csv", *d.train)
    write_features(tmp_path / "test.csv", *d.test)
    r = DataRecipe(source="file", train_path=str(tmp_path / "train.csv"), test_path=str(tmp_path / "test.csv"))
    m = r.build(0)
    assert m.counts(TRAIN).tolist() == [4, 4, 4] and m.counts(TEST).tolist() == [2, 2, 2]
    single = DataRecipe(source="file", path=str(tmp_path / "train.csv")).build(0)
    assert single.counts(TRAIN).tolist() == [2, 2, 2]
    with pytest.raises(ValueError):
        DataRecipe(source="file")


def test_dataset_validation():
    with pytest.raises(ValueError):
        Dataset(np.zeros((2, 2)), np.array([0, 5]), 2, np.array([TRAIN, TEST]))
    with pytest.raises(ValueError):
        merge_splits(generate_blobs(2, 3, 1, 1, 0.1, 0), generate_blobs(2, 4, 1, 1, 0.1, 0))
