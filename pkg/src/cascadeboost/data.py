"""Datasets, margin matrices and the structured Q matrix.

Rows of every dataset are ordered positives first.  The booster only ever
sees the data through the margin matrix ``A`` (``A[i, j] = y_i h_j(x_i)``)
and the class-mean vectors ``e1``, ``e2``.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal, Sequence

import numpy as np

QMode = Literal["lda", "lac"]

DEFAULT_DELTA = 1e-8


class DegenerateClassError(ValueError):
    """A class has too few examples for the exact within-class covariance."""


@dataclass(frozen=True)
class Dataset:
    """Feature rows with +1/-1 labels, positives first.

    ``permutation[k]`` is the row index in the original input that ended up
    at position ``k`` after sorting.
    """

    features: np.ndarray
    labels: np.ndarray
    permutation: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        X = np.asarray(self.features, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        y = np.asarray(self.labels).astype(np.int8)
        if X.shape[0] != y.shape[0]:
            raise ValueError(f"{X.shape[0]} feature rows but {y.shape[0]} labels")
        if not np.all((y == 1) | (y == -1)):
            raise ValueError("labels must be +1 or -1")
        if np.any(np.diff((y == -1).astype(np.int8)) < 0):
            raise ValueError("dataset rows must be sorted positives-first")
        perm = self.permutation
        perm = np.arange(len(y)) if perm is None else np.asarray(perm, dtype=np.int64)
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", y)
        object.__setattr__(self, "permutation", perm)

    @classmethod
    def from_arrays(cls, features, labels) -> "Dataset":
        """Build a dataset from unsorted rows; positives are moved first (stable)."""
        y = np.asarray(labels).astype(np.int8)
        order = np.argsort(y == -1, kind="stable")
        X = np.asarray(features, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        return cls(X[order], y[order], order)

    @classmethod
    def from_classes(cls, positives, negatives) -> "Dataset":
        P = np.atleast_2d(np.asarray(positives, dtype=float))
        N = np.atleast_2d(np.asarray(negatives, dtype=float))
        if P.size == 0:
            P = P.reshape(0, N.shape[1])
        if N.size == 0:
            N = N.reshape(0, P.shape[1])
        y = np.concatenate([np.ones(len(P), np.int8), -np.ones(len(N), np.int8)])
        return cls(np.vstack([P, N]), y)

    @property
    def m(self) -> int:
        return len(self.labels)

    @property
    def m1(self) -> int:
        return int(np.count_nonzero(self.labels == 1))

    @property
    def m2(self) -> int:
        return self.m - self.m1

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    @property
    def positives(self) -> np.ndarray:
        return self.features[: self.m1]

    @property
    def negatives(self) -> np.ndarray:
        return self.features[self.m1 :]

    def require_both_classes(self):
        if self.m1 < 1 or self.m2 < 1:
            raise ValueError(f"need both classes, got m1={self.m1}, m2={self.m2}")


def load_dataset_csv(path) -> Dataset:
    """Read ``label,f0,f1,...`` CSV; rows are re-sorted positives-first.

    Leading ``#`` lines (run metadata written by :func:`save_dataset_csv`) are skipped.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(line for line in fh if not line.startswith("#"))
        header = next(reader)
        if not header or header[0].strip() != "label":
            raise ValueError(f"{path}: first column must be 'label'")
        rows = [r for r in reader if r]
    if not rows:
        raise ValueError(f"{path}: no data rows")
    data = np.array([[float(v) for v in r] for r in rows])
    labels = data[:, 0]
    if not np.all(np.isin(labels, (1.0, -1.0))):
        raise ValueError(f"{path}: labels must be +1 or -1")
    return Dataset.from_arrays(data[:, 1:], labels)


def format_float(x: float) -> str:
    return format(float(x), ".17g")


def save_dataset_csv(dataset: Dataset, path, comment: str | None = None):
    path = Path(path)
    with path.open("w", newline="") as fh:
        if comment:
            for line in comment.splitlines():
                fh.write(f"# {line}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["label"] + [f"f{k}" for k in range(dataset.n_features)])
        for label, row in zip(dataset.labels, dataset.features):
            writer.writerow([int(label)] + [format_float(v) for v in row])


class MarginMatrix:
    """Column-major store of ``A[i, j] = y_i h_j(x_i)`` that grows by columns."""

    def __init__(self, labels: np.ndarray, capacity: int = 16):
        self.labels = np.asarray(labels, dtype=np.int8)
        self._buf = np.empty((len(self.labels), max(capacity, 1)), dtype=float, order="F")
        self.n = 0

    @property
    def m(self) -> int:
        return len(self.labels)

    @property
    def entries(self) -> np.ndarray:
        return self._buf[:, : self.n]

    def column(self, j: int) -> np.ndarray:
        return self._buf[:, j]

    def append_predictions(self, predictions) -> np.ndarray:
        """Append the column for a weak classifier with the given +/-1 outputs."""
        h = np.asarray(predictions, dtype=float)
        if h.shape != (self.m,):
            raise ValueError(f"expected {self.m} predictions, got shape {h.shape}")
        if not np.all(np.abs(h) == 1.0):
            raise ValueError("weak classifier outputs must be +1 or -1")
        if self.n == self._buf.shape[1]:
            grown = np.empty((self.m, 2 * self.n), dtype=float, order="F")
            grown[:, : self.n] = self._buf
            self._buf = grown
        self._buf[:, self.n] = self.labels * h
        self.n += 1
        return self._buf[:, self.n - 1]

    def append(self, classifier, features: np.ndarray) -> np.ndarray:
        return self.append_predictions(classifier.predict(features))


def build_margin_matrix(dataset: Dataset, weak_classifiers: Sequence) -> MarginMatrix:
    if len(weak_classifiers) == 0:
        raise ValueError("at least one weak classifier is required")
    A = MarginMatrix(dataset.labels, capacity=len(weak_classifiers))
    for h in weak_classifiers:
        A.append(h, dataset.features)
    return A


@dataclass(frozen=True)
class ClassMeanVectors:
    e1: np.ndarray
    e2: np.ndarray

    @classmethod
    def from_counts(cls, m1: int, m2: int) -> "ClassMeanVectors":
        if m1 < 1 or m2 < 1:
            raise ValueError("both classes need at least one example")
        e1 = np.concatenate([np.full(m1, 1.0 / m1), np.zeros(m2)])
        e2 = np.concatenate([np.zeros(m1), np.full(m2, 1.0 / m2)])
        return cls(e1, e2)

    @property
    def e(self) -> np.ndarray:
        return self.e1 + self.e2


@dataclass(frozen=True)
class QMatrix:
    """Block-diagonal ``Q = diag(Q1, Q2)`` kept in factored form.

    In exact mode ``Q1 = a1 (I - 11'/m1)`` with ``a1 = m1 / (m (m1 - 1))``,
    which has diagonal ``1/m`` and off-diagonal ``-1/(m (m1 - 1))``.  The
    approximate mode replaces each active block with ``I/m``.  LAC zeroes
    ``Q2``.
    """

    m1: int
    m2: int
    mode: QMode = "lda"
    exact: bool = True
    delta: float = DEFAULT_DELTA

    @property
    def m(self) -> int:
        return self.m1 + self.m2

    def _block_scale(self, count: int) -> float:
        if self.exact:
            return count / (self.m * (count - 1))
        return 1.0 / self.m

    def _blocks(self):
        yield slice(0, self.m1), self.m1
        if self.mode == "lda":
            yield slice(self.m1, self.m), self.m2

    def matvec(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        if v.shape[0] != self.m:
            raise ValueError(f"vector length {v.shape[0]} != m = {self.m}")
        out = np.zeros_like(v)
        for sl, count in self._blocks():
            block = v[sl]
            if self.exact:
                block = block - block.mean(axis=0)
            out[sl] = self._block_scale(count) * block
        return out

    def quadratic(self, v: np.ndarray) -> float:
        v = np.asarray(v, dtype=float)
        if v.shape != (self.m,):
            raise ValueError(f"vector length {v.shape} != m = {self.m}")
        total = 0.0
        for sl, count in self._blocks():
            block = v[sl]
            if self.exact:
                block = block - block.mean()
            total += self._block_scale(count) * float(block @ block)
        return total

    def solve_regularized(self, v: np.ndarray, delta: float | None = None) -> np.ndarray:
        """Return ``(Q + delta I)^{-1} v``."""
        delta = self.delta if delta is None else delta
        if delta <= 0:
            raise ValueError("delta must be positive, Q itself is singular")
        v = np.asarray(v, dtype=float)
        out = v / delta
        for sl, count in self._blocks():
            block = v[sl]
            a = self._block_scale(count)
            if self.exact:
                mean = block.mean()
                out[sl] = (block - mean) / (a + delta) + mean / delta
            else:
                out[sl] = block / (a + delta)
        return out

    def block(self, which: int) -> np.ndarray:
        """Dense Q1 (``which=1``) or Q2 (``which=2``); intended for small m."""
        count = self.m1 if which == 1 else self.m2
        if which == 2 and self.mode == "lac":
            return np.zeros((count, count))
        a = self._block_scale(count)
        if not self.exact:
            return a * np.eye(count)
        return a * (np.eye(count) - np.full((count, count), 1.0 / count))

    def dense(self) -> np.ndarray:
        Q = np.zeros((self.m, self.m))
        Q[: self.m1, : self.m1] = self.block(1)
        Q[self.m1 :, self.m1 :] = self.block(2)
        return Q


def build_q_matrix(m1: int, m2: int, mode: QMode = "lda", exact: bool = True,
                   delta: float = DEFAULT_DELTA) -> QMatrix:
    if mode not in ("lda", "lac"):
        raise ValueError(f"unknown mode {mode!r}")
    if m1 < 1 or m2 < 1:
        raise ValueError("both classes need at least one example")
    if exact and (m1 < 2 or (mode == "lda" and m2 < 2)):
        raise DegenerateClassError(
            f"exact Q needs at least 2 examples per active class (m1={m1}, m2={m2}); "
            "use exact=False for the diagonal approximation"
        )
    if delta < 0:
        raise ValueError("delta must be nonnegative")
    return QMatrix(m1, m2, mode, exact, delta)


def quadratic_form(q: QMatrix, rho: np.ndarray) -> float:
    """``rho' Q rho`` in O(m) without materialising Q."""
    return q.quadratic(rho)

