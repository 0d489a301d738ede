"""Seeded synthetic datasets for desk-scale experiments."""
from __future__ import annotations

import numpy as np

from .data import Dataset

TOY_KINDS = ("gaussians2d", "separable", "xor")


def gaussians2d(n_pos: int = 100, n_neg: int = 400, seed: int = 0, separation: float = 1.5) -> Dataset:
    """Two overlapping 2-D Gaussians; the negative class is broader and, by default, larger."""
    rng = np.random.default_rng(seed)
    pos = rng.normal(0.0, 0.7, size=(n_pos, 2)) + separation / 2
    neg = rng.normal(0.0, 1.2, size=(n_neg, 2)) - separation / 2
    return Dataset.from_classes(pos, neg)


def separable(n_pos: int = 50, n_neg: int = 50, seed: int = 0) -> Dataset:
    """Classes split by ``x0 = 0`` with a margin; one stump classifies it perfectly."""
    rng = np.random.default_rng(seed)
    pos = rng.uniform(0.0, 1.0, size=(n_pos, 2))
    neg = rng.uniform(0.0, 1.0, size=(n_neg, 2))
    pos[:, 0] += 0.25
    neg[:, 0] -= 1.25
    return Dataset.from_classes(pos, neg)


def xor(n_pos: int = 50, n_neg: int = 50, seed: int = 0) -> Dataset:
    """Positives in quadrants 1 and 3, negatives in 2 and 4."""
    rng = np.random.default_rng(seed)

    def draw(n, signs):
        pts = rng.uniform(0.1, 1.0, size=(n, 2))
        which = rng.integers(0, 2, size=n)
        return pts * np.array(signs)[which]

    pos = draw(n_pos, [(1, 1), (-1, -1)])
    neg = draw(n_neg, [(-1, 1), (1, -1)])
    return Dataset.from_classes(pos, neg)


def generate(kind: str, n_pos: int, n_neg: int, seed: int) -> Dataset:
    if n_pos < 1 or n_neg < 1:
        raise ValueError("counts must be at least 1 per class")
    if kind == "gaussians2d":
        return gaussians2d(n_pos, n_neg, seed)
    if kind == "separable":
        return separable(n_pos, n_neg, seed)
    if kind == "xor":
        return xor(n_pos, n_neg, seed)
    raise ValueError(f"unknown toy kind {kind!r}; choose from {TOY_KINDS}")
