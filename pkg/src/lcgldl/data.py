"""Dataset loading, validation, fold planning, synthetic fixtures and label noise."""

from __future__ import annotations

import csv
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from lcgldl.errors import DataError
from lcgldl.net import softmax

ROW_SUM_TOL = 1e-6
# rows off by more than this are rejected instead of renormalized
RENORM_TOL = 1e-3

_FEATURE_RE = re.compile(r"f(\d+)$")
_LABEL_RE = re.compile(r"l(\d+)$")


def check_distributions(labels: np.ndarray, tol: float = ROW_SUM_TOL) -> None:
    labels = np.asarray(labels)
    if labels.ndim != 2:
        raise DataError(f"label matrix must be 2-D, got shape {labels.shape}")
    if not np.all(np.isfinite(labels)):
        raise DataError("label matrix contains non-finite entries")
    if labels.min(initial=0.0) < 0.0 or labels.max(initial=0.0) > 1.0:
        raise DataError("label entries must lie in [0, 1]")
    sums = labels.sum(axis=1)
    bad = np.flatnonzero(np.abs(sums - 1.0) > tol)
    if bad.size:
        raise DataError(f"label row not a distribution (row {bad[0]} sums to {sums[bad[0]]:.6g})")


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    name: str = "dataset"

    def __post_init__(self):
        features = np.ascontiguousarray(self.features, dtype=np.float64)
        labels = np.ascontiguousarray(self.labels, dtype=np.float64)
        if features.ndim != 2:
            raise DataError(f"feature matrix must be 2-D, got shape {features.shape}")
        if labels.ndim != 2 or labels.shape[0] != features.shape[0]:
            raise DataError(f"label matrix shape {labels.shape} does not match {features.shape[0]} instances")
        m, n = features.shape
        t = labels.shape[1]
        if m < 2:
            raise DataError(f"need at least 2 instances, got {m}")
        if n < 1:
            raise DataError("need at least 1 feature column")
        if t < 2:
            raise DataError(f"need at least 2 labels, got {t}")
        if not np.all(np.isfinite(features)):
            raise DataError("feature matrix contains non-finite entries")
        check_distributions(labels)
        features.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)

    @property
    def m(self) -> int:
        return self.features.shape[0]

    @property
    def n(self) -> int:
        return self.features.shape[1]

    @property
    def t(self) -> int:
        return self.labels.shape[1]

    def subset(self, index, name: str | None = None) -> "Dataset":
        index = np.asarray(index)
        return Dataset(self.features[index], self.labels[index], name or self.name)

    def with_labels(self, labels: np.ndarray) -> "Dataset":
        return Dataset(self.features, labels, self.name)


@dataclass(frozen=True)
class FoldPlan:
    repeats: int
    folds: int
    assignments: list = field(repr=False)

    def splits(self):
        """Yield ``(repeat, fold, train_index, test_index)`` in (repeat, fold) order."""
        for r, sets in enumerate(self.assignments):
            for f, test in enumerate(sets):
                train = np.sort(np.concatenate([s for g, s in enumerate(sets) if g != f]))
                yield r, f, train, test


def _parse_header(header: list[str]) -> tuple[int, int]:
    n = 0
    while n < len(header) and _FEATURE_RE.match(header[n].strip()):
        if header[n].strip() != f"f{n}":
            raise DataError(f"feature column {n} is named {header[n]!r}, expected 'f{n}'")
        n += 1
    rest = [h.strip() for h in header[n:]]
    for j, name in enumerate(rest):
        if name != f"l{j}":
            raise DataError(f"column {n + j} is named {name!r}, expected 'l{j}'")
    return n, len(rest)


def _read_table(path) -> tuple[int, int, np.ndarray]:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"no such file: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        n, t = _parse_header(header)
        width = n + t
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != width:
                raise DataError(f"{path}:{lineno}: expected {width} columns, got {len(row)}")
            try:
                rows.append([float(cell) for cell in row])
            except ValueError:
                raise DataError(f"{path}:{lineno}: non-numeric cell") from None
    if t < 2:
        raise DataError(f"{path}: need at least 2 label columns, got {t}")
    table = np.array(rows, dtype=np.float64).reshape(len(rows), width)
    return n, t, table


def _renormalize(labels: np.ndarray, source) -> np.ndarray:
    sums = labels.sum(axis=1)
    bad = np.flatnonzero((np.abs(sums - 1.0) > RENORM_TOL) | (labels.min(axis=1) < 0.0))
    if bad.size:
        raise DataError(f"{source}: label row not a distribution (data row {bad[0]}, sum {sums[bad[0]]:.6g})")
    return labels / sums[:, None]


def load_csv(path, name: str | None = None) -> Dataset:
    """Read a ``f0..f{n-1},l0..l{t-1}`` CSV file into a validated Dataset.

    Label rows whose sum is within 1e-3 of one are rescaled to sum exactly
    to one; anything further off is rejected.
    """
    n, t, table = _read_table(path)
    if n < 1:
        raise DataError(f"{path}: no feature columns")
    labels = _renormalize(table[:, n:], path)
    return Dataset(table[:, :n], labels, name or Path(path).stem)


def load_label_matrix(path) -> np.ndarray:
    """Label block of a dataset CSV; feature columns are optional here."""
    n, _, table = _read_table(path)
    labels = _renormalize(table[:, n:], path)
    check_distributions(labels)
    return labels


def save_csv(dataset: Dataset, path) -> None:
    header = [f"f{i}" for i in range(dataset.n)] + [f"l{j}" for j in range(dataset.t)]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for x, y in zip(dataset.features, dataset.labels):
            writer.writerow([repr(float(v)) for v in x] + [repr(float(v)) for v in y])


def make_fold_plan(m: int, repeats: int, folds: int, seed: int) -> FoldPlan:
    if folds < 2:
        raise DataError(f"folds must be at least 2, got {folds}")
    if folds > m:
        raise DataError(f"cannot split {m} instances into {folds} folds")
    if repeats < 1:
        raise DataError(f"repeats must be positive, got {repeats}")
    rng = np.random.default_rng(seed_entropy(seed))
    assignments = []
    for _ in range(repeats):
        perm = rng.permutation(m)
        assignments.append([np.sort(part) for part in np.array_split(perm, folds)])
    return FoldPlan(repeats, folds, assignments)


def inject_gaussian_noise(labels: np.ndarray, variance: float, seed: int) -> np.ndarray:
    """Perturb every entry with i.i.d. N(0, variance) noise, then row-softmax."""
    if variance < 0:
        raise DataError(f"noise variance must be nonnegative, got {variance}")
    labels = np.asarray(labels, dtype=np.float64)
    rng = np.random.default_rng(seed_entropy(seed))
    noise = rng.standard_normal(labels.shape)
    return softmax(labels + np.sqrt(variance) * noise)


def synth_dataset(m: int, n: int, t: int, seed: int, name: str | None = None) -> Dataset:
    if m < 2 or n < 1 or t < 2:
        raise DataError(f"synth_dataset needs m>=2, n>=1, t>=2 (got m={m}, n={n}, t={t})")
    rng = np.random.default_rng(seed_entropy(seed))
    teacher = rng.uniform(-1.0, 1.0, size=(n, t))
    features = rng.uniform(-1.0, 1.0, size=(m, n))
    labels = softmax(features @ teacher)
    return Dataset(features, labels, name or f"synth-{m}x{n}x{t}-s{seed}")


def seed_entropy(seed: int) -> int:
    """Map any Python int onto the unsigned 64-bit range numpy seeding accepts."""
    return int(seed) & 0xFFFFFFFFFFFFFFFF
