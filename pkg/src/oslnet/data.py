"""Datasets: synthetic Gaussian blobs, CSV feature files, splitting and reduction."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)

TRAIN, TEST = "train", "test"


class GeometryError(RuntimeError):
    pass


class ParseError(ValueError):
    pass


@dataclass(frozen=True)
class Dataset:
    """``features`` is ``dim x n``; ``split`` tags every column ``train`` or ``test``."""

    features: np.ndarray
    labels: np.ndarray
    class_count: int
    split: np.ndarray
    provenance: str = "synthetic"

    def __post_init__(self):
        n = self.features.shape[1]
        if self.labels.shape != (n,) or self.split.shape != (n,):
            raise ValueError("labels and split must have one entry per feature column")
        if n and (self.labels.min() < 0 or self.labels.max() >= self.class_count):
            raise ValueError("labels must lie in [0, class_count)")
        if not np.all(np.isfinite(self.features)):
            raise ValueError("features must be finite")

    @property
    def dim(self) -> int:
        return self.features.shape[0]

    def subset(self, which: str) -> tuple[np.ndarray, np.ndarray]:
        sel = self.split == which
        return self.features[:, sel], self.labels[sel]

    @property
    def train(self):
        return self.subset(TRAIN)

    @property
    def test(self):
        return self.subset(TEST)

    def counts(self, which: str) -> np.ndarray:
        return np.bincount(self.labels[self.split == which], minlength=self.class_count)


def _class_means(rng, k: int, dim: int, min_angle_deg: float, max_tries: int) -> np.ndarray:
    max_cos = np.cos(np.deg2rad(min_angle_deg))
    means = []
    tries = 0
    while len(means) < k:
        tries += 1
        if tries > max_tries:
            raise GeometryError(
                f"could not place {k} class means with pairwise angle >= {min_angle_deg} deg "
                f"in {dim} dimensions after {max_tries} draws; use a larger dim"
            )
        v = rng.standard_normal(dim)
        v /= np.linalg.norm(v)
        if all(abs(v @ m) <= max_cos for m in means):
            means.append(v)
    return np.stack(means, axis=1)


def generate_blobs(k: int, dim: int, train_per_class: int, test_per_class: int, noise_scale: float,
                   seed: int, min_angle_deg: float = 60.0, max_tries: int = 10000,
                   sample_seed: int | None = None) -> Dataset:
    """Gaussian class clusters around random unit-vector means.

    Means are resampled until every pair is at least ``min_angle_deg`` apart;
    samples are ``mean + noise_scale * N(0, I)``. ``seed`` fixes the means; a
    separate ``sample_seed`` redraws only the samples around them.
    """
    if k < 2:
        raise ValueError("need at least 2 classes")
    if dim < k:
        raise ValueError(f"dim ({dim}) must be >= k ({k})")
    rng = np.random.default_rng(seed)
    means = _class_means(rng, k, dim, min_angle_deg, max_tries)
    if sample_seed is not None:
        rng = np.random.default_rng([seed, sample_seed])
    per_class = train_per_class + test_per_class
    labels = np.repeat(np.arange(k), per_class)
    noise = rng.standard_normal((dim, k * per_class))
    features = means[:, labels] + noise_scale * noise
    split = np.tile(np.array([TRAIN] * train_per_class + [TEST] * test_per_class), k)
    return Dataset(features, labels, k, split, "synthetic")


def split_per_class(data: Dataset, seed: int, train_fraction: float = 0.5) -> Dataset:
    """Randomly split each class into train/test, half each by default.

    With an odd class size the extra sample goes to the training split; every
    class with two or more samples ends up in both splits.
    """
    rng = np.random.default_rng(seed)
    split = np.empty(data.labels.shape[0], dtype="<U5")
    for cls in range(data.class_count):
        idx = np.flatnonzero(data.labels == cls)
        if idx.size == 0:
            continue
        idx = rng.permutation(idx)
        n_train = int(np.ceil(idx.size * train_fraction))
        if idx.size >= 2:
            n_train = min(max(n_train, 1), idx.size - 1)
        split[idx[:n_train]] = TRAIN
        split[idx[n_train:]] = TEST
    return replace(data, split=split)


def reduce_training(data: Dataset, n_remove_per_class: int, seed: int) -> Dataset:
    """Drop ``n_remove_per_class`` random training samples from every class; test data is untouched."""
    if n_remove_per_class < 0:
        raise ValueError("n_remove_per_class must be >= 0")
    if n_remove_per_class == 0:
        return data
    rng = np.random.default_rng(seed)
    drop = []
    for cls in range(data.class_count):
        idx = np.flatnonzero((data.labels == cls) & (data.split == TRAIN))
        if idx.size - n_remove_per_class < 1:
            raise ValueError(
                f"removing {n_remove_per_class} training samples would leave class {cls} "
                f"with {idx.size - n_remove_per_class} (has {idx.size})"
            )
        drop.append(rng.choice(idx, size=n_remove_per_class, replace=False))
    keep = np.ones(data.labels.shape[0], dtype=bool)
    keep[np.concatenate(drop)] = False
    return replace(data, features=data.features[:, keep], labels=data.labels[keep], split=data.split[keep])


def load_features(path, format: str = "csv") -> Dataset:
    """Read ``label,f1,f2,...`` rows; an optional first line starting with ``#`` is a header.

    The returned dataset has every sample tagged ``train``; use
    :func:`split_per_class` (or load a separate test file) to create a test split.
    """
    if format != "csv":
        raise ValueError(f"unsupported format {format!r}")
    path = Path(path)
    labels, rows = [], []
    width = None
    with path.open(newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if lineno == 1 and row[0].lstrip().startswith("#"):
                continue
            if width is None:
                width = len(row)
                if width < 2:
                    raise ParseError(f"{path}:{lineno}: need a label and at least one feature")
            elif len(row) != width:
                raise ParseError(f"{path}:{lineno}: expected {width} columns, got {len(row)}")
            try:
                label = int(row[0])
            except ValueError:
                raise ParseError(f"{path}:{lineno}: label {row[0]!r} is not an integer") from None
            if label < 0:
                raise ParseError(f"{path}:{lineno}: negative label {label}")
            try:
                rows.append([float(v) for v in row[1:]])
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: {exc}") from None
            labels.append(label)
    if not labels:
        raise ParseError(f"{path}: no data rows")
    y = np.asarray(labels, dtype=np.int64)
    k = int(y.max()) + 1
    empty = np.flatnonzero(np.bincount(y, minlength=k) == 0)
    if empty.size:
        logger.warning("%s: classes %s have no samples (class_count=%d from max label)", path, empty.tolist(), k)
    features = np.asarray(rows, dtype=np.float64).T
    return Dataset(features, y, k, np.full(y.shape[0], TRAIN, dtype="<U5"), "file")


def write_features(path, features: np.ndarray, labels: np.ndarray, header: bool = True) -> None:
    """Write ``label,features...`` rows with round-trip exact floats."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        if header:
            fh.write("# label," + ",".join(f"f{i}" for i in range(features.shape[0])) + "\n")
        w = csv.writer(fh, lineterminator="\n")
        for j in range(features.shape[1]):
            w.writerow([int(labels[j])] + [repr(float(v)) for v in features[:, j]])


def merge_splits(train: Dataset, test: Dataset) -> Dataset:
    if train.dim != test.dim:
        raise ValueError(f"train dim {train.dim} != test dim {test.dim}")
    k = max(train.class_count, test.class_count)
    return Dataset(
        np.concatenate([train.features, test.features], axis=1),
        np.concatenate([train.labels, test.labels]),
        k,
        np.concatenate([np.full(train.labels.shape[0], TRAIN, dtype="<U5"),
                        np.full(test.labels.shape[0], TEST, dtype="<U5")]),
        "file",
    )


@dataclass(frozen=True)
class DataRecipe:
    """How to build the dataset of each experiment round.

    ``source`` is ``blobs`` (synthetic) or ``file``. For files, ``path`` is a
    single CSV split per class each round, or ``train_path``/``test_path`` a
    fixed split. ``resample`` redraws blob samples (or re-splits a single
    file) every round; ``reduce`` removes that many training samples per class.
    """

    source: str = "blobs"
    k: int = 8
    dim: int = 64
    train_per_class: int = 20
    test_per_class: int = 100
    noise_scale: float = 0.25
    min_angle_deg: float = 60.0
    seed: int = 0
    path: str | None = None
    train_path: str | None = None
    test_path: str | None = None
    resample: bool = True
    reduce: int = 0

    def __post_init__(self):
        if self.source not in ("blobs", "file"):
            raise ValueError(f"data.source must be 'blobs' or 'file', got {self.source!r}")
        if self.source == "file" and not (self.path or (self.train_path and self.test_path)):
            raise ValueError("file data needs 'path' or both 'train_path' and 'test_path'")

    def build(self, round_index: int = 0) -> Dataset:
        salt = round_index if self.resample else 0
        if self.source == "blobs":
            data = generate_blobs(self.k, self.dim, self.train_per_class, self.test_per_class,
                                  self.noise_scale, self.seed, self.min_angle_deg, sample_seed=salt)
        elif self.path:
            data = split_per_class(load_features(self.path), seed=self.seed + salt)
        else:
            data = merge_splits(load_features(self.train_path), load_features(self.test_path))
        return reduce_training(data, self.reduce, seed=self.seed + salt)


# 8 classes, 100 train + 100 test samples per class; the noise level puts a
# plain dense network at about 0.90 test accuracy
DESK_BENCHMARK = DataRecipe(k=8, dim=64, train_per_class=100, test_per_class=100, noise_scale=0.3, seed=0)
