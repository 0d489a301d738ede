"""Biased minimax probability machine diagnostics.

``phi(gamma, family)`` turns the worst-case constraint
``inf P(w'x >= b) >= gamma`` over a distribution family with known mean and
covariance into ``w'mu - b >= phi(gamma) sqrt(w' Sigma w)``.  Reading the
same relation backwards gives the worst-case accuracy a trained classifier
guarantees on the positive class.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.special import ndtr, ndtri

GAMMA_FLOOR = 1e-6


class DistributionFamily(str, Enum):
    GENERAL = "general"
    SYMMETRIC = "symmetric"
    SYMMETRIC_UNIMODAL = "symmetric_unimodal"
    GAUSSIAN = "gaussian"


FAMILIES = tuple(DistributionFamily)


def _family(family) -> DistributionFamily:
    try:
        return DistributionFamily(family)
    except ValueError:
        raise ValueError(f"unknown distribution family {family!r}") from None


def phi(gamma, family) -> np.ndarray | float:
    """Worst-case coefficient for accuracy ``gamma``; vectorised over ``gamma``.

    The symmetric and symmetric-unimodal cases are 0 for ``gamma <= 0.5``.
    """
    fam = _family(family)
    g = np.asarray(gamma, dtype=float)
    if np.any((g <= 0) | (g >= 1)) or np.any(np.isnan(g)):
        raise ValueError("gamma must lie in the open interval (0, 1)")
    if fam is DistributionFamily.GENERAL:
        out = np.sqrt(g / (1.0 - g))
    elif fam is DistributionFamily.GAUSSIAN:
        out = ndtri(g)
    else:
        with np.errstate(divide="ignore"):
            out = np.where(g > 0.5, np.sqrt(1.0 / (2.0 * (1.0 - g))), 0.0)
        if fam is DistributionFamily.SYMMETRIC_UNIMODAL:
            out = (2.0 / 3.0) * out
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class WorstCaseAccuracy:
    """``gamma`` is clipped into (0, 1); ``in_range`` is False when ``s`` is not a value of phi."""

    gamma: float
    family: DistributionFamily
    s: float
    in_range: bool = True


def invert_phi(s: float, family, floor: float = GAMMA_FLOOR) -> WorstCaseAccuracy:
    """Largest ``gamma`` with ``phi(gamma) <= s``, in closed form."""
    fam = _family(family)
    if not 0 < floor < 0.5:
        raise ValueError("floor must lie in (0, 0.5)")
    s = float(s)
    if math.isnan(s):
        raise ValueError("s is NaN")
    in_range = True
    if fam is DistributionFamily.GAUSSIAN:
        gamma = float(ndtr(s))
    elif s < 0:
        gamma, in_range = floor, False
    elif fam is DistributionFamily.GENERAL:
        gamma = s * s / (1.0 + s * s)
        in_range = s > 0
    else:
        base = s if fam is DistributionFamily.SYMMETRIC else 1.5 * s
        if base > 1:
            gamma = 1.0 - 1.0 / (2.0 * base * base)
        else:
            # phi jumps from 0 straight to its branch minimum at gamma = 0.5
            gamma, in_range = 0.5, s == 0
    top = math.nextafter(1.0, 0.0)
    if gamma < floor or gamma > top:
        gamma, in_range = min(max(gamma, floor), top), False
    return WorstCaseAccuracy(gamma, fam, s, in_range)


def worst_case_gamma(w, b: float, mu1, sigma1, family, floor: float = GAMMA_FLOOR) -> WorstCaseAccuracy:
    """Worst-case positive-class accuracy of ``sign(w'x - b)`` from ``s = (w'mu1 - b) / sqrt(w'Sigma1 w)``."""
    w = np.asarray(w, dtype=float)
    var = float(w @ np.asarray(sigma1, dtype=float) @ w)
    if not var > 0:
        raise ValueError("projected positive-class variance w'Sigma1 w must be positive")
    s = (float(w @ np.asarray(mu1, dtype=float)) - b) / math.sqrt(var)
    return invert_phi(s, family, floor)


@dataclass(frozen=True)
class QQResult:
    theoretical: np.ndarray
    sample: np.ndarray
    correlation: float

    def pairs(self) -> list[tuple[float, float]]:
        return list(zip(self.theoretical.tolist(), self.sample.tolist()))


def normality_qq(margins) -> QQResult:
    """Normal probability plot at positions ``(i - 0.5) / n`` and its Pearson correlation."""
    x = np.sort(np.asarray(margins, dtype=float).ravel())
    n = x.size
    if n < 3:
        raise ValueError("need at least 3 margins")
    if not np.all(np.isfinite(x)):
        raise ValueError("margins must be finite")
    if x[0] == x[-1]:
        raise ValueError("margins are constant; the QQ correlation is undefined")
    q = ndtri((np.arange(1, n + 1) - 0.5) / n)
    r = float(np.corrcoef(q, x)[0, 1])
    return QQResult(q, x, min(r, 1.0))


@dataclass(frozen=True)
class Diagonality:
    mean_abs_diag: float
    mean_abs_offdiag: float
    ratio: float


def covariance_diagonality(h_outputs) -> Diagonality:
    """Compare diagonal and off-diagonal magnitudes of the weak-output covariance.

    ``ratio`` is infinite when every off-diagonal entry is exactly 0.
    """
    H = np.asarray(h_outputs, dtype=float)
    if H.ndim != 2 or H.shape[0] < 2 or H.shape[1] < 2:
        raise ValueError("need an (m2 >= 2) x (n >= 2) matrix of weak outputs")
    C = np.cov(H, rowvar=False)
    absC = np.abs(C)
    n = C.shape[0]
    diag = float(np.trace(absC) / n)
    if diag == 0:
        raise ValueError("every weak classifier is constant on this data")
    off = float((absC.sum() - np.trace(absC)) / (n * (n - 1)))
    return Diagonality(diag, off, diag / off if off > 0 else math.inf)
