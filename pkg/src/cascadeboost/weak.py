"""Weak learners: decision stumps, integral images and Haar-like features."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Literal, Sequence

import numpy as np
from scipy import sparse

from .data import Dataset

FEATURE_BLOCK = 512
TIE_RTOL = 1e-12


@dataclass(frozen=True)
class DecisionStump:
    """``h(x) = polarity * sign(x[feature_index] - threshold)`` with ``sign(0) = +1``."""

    feature_index: int
    threshold: float
    polarity: int = 1

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        col = X[:, self.feature_index] if X.ndim == 2 else X[self.feature_index]
        return np.where(col >= self.threshold, self.polarity, -self.polarity).astype(float)

    def to_dict(self) -> dict:
        return {"feature_index": int(self.feature_index), "threshold": float(self.threshold),
                "polarity": int(self.polarity)}

    @classmethod
    def from_dict(cls, d: dict) -> "DecisionStump":
        return cls(int(d["feature_index"]), float(d["threshold"]), int(d["polarity"]))


def predict_all(stumps: Sequence[DecisionStump], X: np.ndarray) -> np.ndarray:
    """Weak-classifier output matrix ``H`` (rows = examples, columns = stumps)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if not stumps:
        return np.zeros((X.shape[0], 0))
    idx = np.array([s.feature_index for s in stumps])
    thr = np.array([s.threshold for s in stumps])
    pol = np.array([s.polarity for s in stumps], dtype=float)
    return np.where(X[:, idx] >= thr, pol, -pol)


def _best_in_block(X: np.ndarray, uy: np.ndarray, tie_tol: float):
    """Best (score, row, threshold, polarity) for each column of ``X``.

    Candidate rows: 0 is the sentinel below the minimum, row k >= 1 splits
    between sorted values k-1 and k.  The edge of polarity +1 at a split is
    ``total - 2 * (weight at or below the split)``.
    """
    order = np.argsort(X, axis=0, kind="stable")
    xs = np.take_along_axis(X, order, axis=0)
    cum = np.cumsum(uy[order], axis=0)
    total = cum[-1]
    edges = np.vstack([total[None, :], total - 2.0 * cum[:-1]])
    valid = np.vstack([np.ones((1, X.shape[1]), bool), xs[:-1] < xs[1:]])
    score = np.where(valid, np.abs(edges), -np.inf)
    # edges equal up to rounding count as ties; the lowest threshold wins
    row = np.argmax(score >= score.max(axis=0) - tie_tol, axis=0)
    cols = np.arange(X.shape[1])
    best = score[row, cols]
    edge = edges[row, cols]
    thr = np.where(row == 0, -np.inf, 0.5 * (xs[row - 1, cols] + xs[row, cols]))
    pol = np.where(edge >= 0, 1, -1)
    return best, thr, pol


def best_stump_on_features(X: np.ndarray, y: np.ndarray, u: np.ndarray,
                           feature_ids: Iterable[int] | None = None) -> tuple[DecisionStump, float]:
    """Exhaustive stump search maximising ``sum_i u_i y_i h(x_i)``.

    Weights may be signed.  Ties go to the lowest feature index, then the
    lowest threshold, then polarity +1.
    """
    X = np.asarray(X, dtype=float)
    u = np.asarray(u, dtype=float)
    if not np.any(u != 0):
        raise ValueError("weights are all zero")
    ids = np.arange(X.shape[1]) if feature_ids is None else np.sort(np.asarray(list(feature_ids)))
    uy = u * np.asarray(y, dtype=float)
    tie_tol = TIE_RTOL * float(np.abs(uy).sum())
    best = (-np.inf, None)
    for start in range(0, len(ids), FEATURE_BLOCK):
        block = ids[start : start + FEATURE_BLOCK]
        score, thr, pol = _best_in_block(X[:, block], uy, tie_tol)
        k = int(np.argmax(score >= score.max() - tie_tol))
        if score[k] > best[0] + tie_tol:
            best = (score[k], DecisionStump(int(block[k]), float(thr[k]), int(pol[k])))
    stump = best[1]
    return stump, float(uy @ stump.predict(X))


class WeakLearnerPool:
    """Stumps over the columns of a feature matrix, searched on a random feature subset.

    Each call to :meth:`best` draws ``sample_fraction`` of the columns
    uniformly without replacement from a generator seeded with ``rng_seed``.
    ``haar_features`` optionally records which Haar feature each column is.
    """

    def __init__(self, n_features: int, sample_fraction: float = 0.1, rng_seed: int = 0,
                 haar_features: Sequence["HaarFeature"] | None = None):
        if not 0 < sample_fraction <= 1:
            raise ValueError("sample_fraction must be in (0, 1]")
        if n_features < 1:
            raise ValueError("pool needs at least one feature")
        if haar_features is not None and len(haar_features) != n_features:
            raise ValueError("one Haar feature per column is required")
        self.n_features = n_features
        self.sample_fraction = sample_fraction
        self.rng_seed = rng_seed
        self.haar_features = haar_features
        self.rng = np.random.default_rng(rng_seed)

    def sample(self) -> np.ndarray:
        if self.sample_fraction >= 1:
            return np.arange(self.n_features)
        k = max(1, int(round(self.sample_fraction * self.n_features)))
        return np.sort(self.rng.choice(self.n_features, size=k, replace=False))

    def best(self, dataset: Dataset, u: np.ndarray) -> DecisionStump:
        return best_stump(self, dataset, u)


def best_stump(pool: WeakLearnerPool, dataset: Dataset, u: np.ndarray) -> DecisionStump:
    if dataset.n_features != pool.n_features:
        raise ValueError("dataset and pool disagree on the number of features")
    stump, _ = best_stump_on_features(dataset.features, dataset.labels, u, pool.sample())
    return stump


class IntegralImage:
    """Summed-area table with a zero first row and column.

    ``table[y, x]`` is the sum of ``pixels[:y, :x]``, so numpy's row index is
    the image y coordinate.
    """

    def __init__(self, pixels):
        pixels = np.asarray(pixels)
        if pixels.ndim != 2 or pixels.size == 0:
            raise ValueError("expected a non-empty 2-D pixel grid")
        dtype = np.int64 if np.issubdtype(pixels.dtype, np.integer) else float
        self.height, self.width = pixels.shape
        self.table = np.zeros((self.height + 1, self.width + 1), dtype=dtype)
        self.table[1:, 1:] = pixels.astype(dtype).cumsum(0).cumsum(1)

    def rect_sum(self, x: int, y: int, w: int, h: int):
        if x < 0 or y < 0 or w < 0 or h < 0 or x + w > self.width or y + h > self.height:
            raise ValueError(f"rectangle ({x}, {y}, {w}, {h}) outside {self.width}x{self.height}")
        t = self.table
        return t[y + h, x + w] - t[y, x + w] - t[y + h, x] + t[y, x]


def integral_image(pixels) -> IntegralImage:
    return IntegralImage(pixels)


HaarKind = Literal["h2", "v2", "h3", "v3", "d4"]
# (columns, rows) the bounding box is divided into
_GRID = {"h2": (2, 1), "v2": (1, 2), "h3": (3, 1), "v3": (1, 3), "d4": (2, 2)}
# weight of each grid cell, row-major
_WEIGHTS = {
    "h2": (1, -1),
    "v2": (1, -1),
    "h3": (1, -2, 1),
    "v3": (1, -2, 1),
    "d4": (1, -1, -1, 1),
}
HAAR_KINDS: tuple[str, ...] = tuple(_GRID)


@dataclass(frozen=True)
class HaarFeature:
    """One of the five basic Haar patterns inside a ``w`` x ``h`` box at ``(x, y)``.

    h2 is left minus right, v2 top minus bottom, h3/v3 the outer thirds minus
    twice the middle, d4 the main diagonal minus the anti-diagonal.  Every
    pattern has zero total weight, so responses ignore a constant offset.
    """

    kind: str
    x: int
    y: int
    w: int
    h: int

    def __post_init__(self):
        if self.kind not in _GRID:
            raise ValueError(f"unknown Haar kind {self.kind!r}")
        gx, gy = _GRID[self.kind]
        if self.w <= 0 or self.h <= 0 or self.w % gx or self.h % gy:
            raise ValueError(f"{self.kind} needs a box divisible into {gx}x{gy} cells")

    def rects(self) -> list[tuple[int, int, int, int, int]]:
        gx, gy = _GRID[self.kind]
        cw, ch = self.w // gx, self.h // gy
        weights = _WEIGHTS[self.kind]
        return [
            (self.x + i * cw, self.y + j * ch, cw, ch, weights[j * gx + i])
            for j in range(gy)
            for i in range(gx)
        ]

    def fits(self, width: int, height: int) -> bool:
        return self.x >= 0 and self.y >= 0 and self.x + self.w <= width and self.y + self.h <= height

    def to_dict(self) -> dict:
        return {"kind": self.kind, "x": self.x, "y": self.y, "w": self.w, "h": self.h}


def haar_response(feature: HaarFeature, img: IntegralImage):
    if not feature.fits(img.width, img.height):
        raise ValueError(f"{feature} does not fit a {img.width}x{img.height} window")
    return sum(wt * img.rect_sum(x, y, w, h) for x, y, w, h, wt in feature.rects())


def enumerate_haar_features(width: int, height: int, step: int = 1,
                            kinds: Sequence[str] = HAAR_KINDS) -> list[HaarFeature]:
    """Every feature of the given kinds at every position and cell size, on a ``step`` grid."""
    out = []
    for kind in kinds:
        gx, gy = _GRID[kind]
        for h in range(gy, height + 1, gy):
            for w in range(gx, width + 1, gx):
                for y in range(0, height - h + 1, step):
                    for x in range(0, width - w + 1, step):
                        out.append(HaarFeature(kind, x, y, w, h))
    return out


def haar_corner_matrix(features: Sequence[HaarFeature], width: int, height: int) -> sparse.csr_matrix:
    """Sparse map from a flattened integral image to all feature responses."""
    stride = width + 1
    rows, cols, vals = [], [], []
    for k, f in enumerate(features):
        if not f.fits(width, height):
            raise ValueError(f"{f} does not fit a {width}x{height} window")
        for x, y, w, h, wt in f.rects():
            for (cy, cx), sgn in (((y + h, x + w), 1), ((y, x + w), -1), ((y + h, x), -1), ((y, x), 1)):
                rows.append(k)
                cols.append(cy * stride + cx)
                vals.append(sgn * wt)
    M = sparse.coo_matrix((vals, (rows, cols)), shape=(len(features), (height + 1) * stride))
    return M.tocsr()


def haar_feature_matrix(windows, features: Sequence[HaarFeature]) -> np.ndarray:
    """Responses of ``features`` on a stack of windows, shape ``(n_windows, n_features)``."""
    windows = np.asarray(windows, dtype=float)
    if windows.ndim == 2:
        windows = windows[None]
    n, height, width = windows.shape
    tables = np.zeros((n, height + 1, width + 1))
    tables[:, 1:, 1:] = windows.cumsum(1).cumsum(2)
    M = haar_corner_matrix(features, width, height)
    return np.asarray((M @ tables.reshape(n, -1).T).T)


def read_pgm(path) -> np.ndarray:
    """Read a binary (P5) or ASCII (P2) greymap."""
    data = Path(path).read_bytes()
    tokens: list[bytes] = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    magic, width, height, maxval = tokens[0], int(tokens[1]), int(tokens[2]), int(tokens[3])
    if magic == b"P5":
        pos += 1
        dtype = np.uint8 if maxval < 256 else np.dtype(">u2")
        count = width * height
        pixels = np.frombuffer(data, dtype=dtype, count=count, offset=pos)
    elif magic == b"P2":
        pixels = np.array(data[pos:].split()[: width * height], dtype=np.int64)
    else:
        raise ValueError(f"{path}: not a P2/P5 greymap")
    if pixels.size != width * height:
        raise ValueError(f"{path}: truncated pixel data")
    return pixels.reshape(height, width).astype(np.int64)


def write_pgm(path, pixels: np.ndarray):
    pixels = np.asarray(pixels)
    height, width = pixels.shape
    header = f"P5\n{width} {height}\n255\n".encode()
    Path(path).write_bytes(header + np.clip(pixels, 0, 255).astype(np.uint8).tobytes())


def read_pixel_csv(path) -> np.ndarray:
    return np.atleast_2d(np.loadtxt(path, delimiter=",", ndmin=2))


def read_window(path) -> np.ndarray:
    path = Path(path)
    if path.suffix.lower() == ".csv":
        return read_pixel_csv(path)
    return read_pgm(path)
