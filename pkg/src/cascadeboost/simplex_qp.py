"""Quadratic programs over the unit simplex.

    minimise  f(w) = 1/2 w'Pw - c'w   subject to  w >= 0, sum(w) = 1

``eg_solve`` is the entropic (exponentiated) gradient method used inside
column generation.  ``reference_solve`` is a slow projected-gradient solver
used as ground truth in tests and as the fallback when an extra half-space
constraint is imposed.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal

import numpy as np

EXP_CLAMP = 500.0
ADAPTIVE_GROWTH = 1.5


class QPError(RuntimeError):
    pass


class NonConvergenceError(QPError):
    pass


@dataclass(frozen=True)
class SimplexQP:
    P: np.ndarray
    c: np.ndarray

    def __post_init__(self):
        P = np.atleast_2d(np.asarray(self.P, dtype=float))
        c = np.atleast_1d(np.asarray(self.c, dtype=float))
        n = c.shape[0]
        if n < 1:
            raise ValueError("n must be at least 1")
        if P.shape != (n, n):
            raise ValueError(f"P has shape {P.shape}, expected ({n}, {n})")
        scale = max(1.0, float(np.max(np.abs(P))))
        if not np.allclose(P, P.T, rtol=0.0, atol=1e-10 * scale):
            raise ValueError("P must be symmetric")
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "c", c)

    @property
    def n(self) -> int:
        return self.c.shape[0]

    def objective(self, w: np.ndarray) -> float:
        return float(0.5 * w @ self.P @ w - self.c @ w)

    def gradient(self, w: np.ndarray) -> np.ndarray:
        return self.P @ w - self.c


@dataclass
class EGConfig:
    """Settings for :func:`eg_solve`.

    ``step_schedule="theory"`` uses ``tau_k = sqrt(2 log n) / (L_f sqrt(k))``;
    ``"fixed"`` uses ``step`` for every iteration, or ``1 / max|P_ij|`` when
    ``step`` is None.  That value bounds the gradient's Lipschitz constant
    from the l1 norm to the l-infinity norm, so each step is a descent step.
    ``"adaptive"`` starts from the same value, grows it by 1.5x after each
    iteration and halves it until ``f`` decreases at least as fast as the
    KL-proximal model predicts.
    """

    max_iters: int = 10_000
    tol: float = 1e-7
    lipschitz: float | None = None
    step_schedule: Literal["theory", "fixed", "adaptive"] = "adaptive"
    step: float | None = None
    warm_start: np.ndarray | None = None

    def __post_init__(self):
        if self.tol <= 0:
            raise ValueError("tol must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if self.step_schedule not in ("theory", "fixed", "adaptive"):
            raise ValueError(f"unknown step schedule {self.step_schedule!r}")


@dataclass
class QPSolution:
    w: np.ndarray
    objective: float
    iters: int
    converged: bool


def check_interior(w: np.ndarray, n: int) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    if w.shape != (n,):
        raise ValueError(f"warm start has shape {w.shape}, expected ({n},)")
    if not np.all(w > 0) or abs(w.sum() - 1.0) > 1e-12:
        raise ValueError("warm start must lie in the simplex interior")
    return w


def auto_lipschitz(qp: SimplexQP) -> float:
    """Upper bound on ``max_{w in simplex} ||grad f(w)||_inf``."""
    return float(np.max(np.abs(qp.P).sum(axis=1)) + np.max(np.abs(qp.c)))


def smoothness(qp: SimplexQP) -> float:
    """Lipschitz constant of the gradient from l1 to l-infinity: ``max |P_ij|``."""
    return float(np.max(np.abs(qp.P)))


def _eg_step(w: np.ndarray, grad: np.ndarray, tau: float):
    """Multiplicative update; also returns ``log(w_new / w)`` for the KL term."""
    z = grad * -tau
    z -= z.max()
    np.maximum(z, -EXP_CLAMP, out=z)
    w_new = w * np.exp(z)
    total = w_new.sum()
    w_new /= total
    # keep every iterate strictly interior
    if w_new.min() <= 0:
        np.maximum(w_new, np.finfo(float).tiny, out=w_new)
        w_new /= w_new.sum()
    z -= math.log(total)
    return w_new, z


def eg_solve(qp: SimplexQP, config: EGConfig | None = None) -> QPSolution:
    config = config or EGConfig()
    n = qp.n
    if config.warm_start is not None:
        w = check_interior(config.warm_start, n).copy()
    else:
        w = np.full(n, 1.0 / n)
    if n == 1:
        return QPSolution(np.ones(1), qp.objective(np.ones(1)), 0, True)

    schedule = config.step_schedule
    if schedule == "theory":
        lf = config.lipschitz if config.lipschitz is not None else auto_lipschitz(qp)
        base = math.sqrt(2.0 * math.log(n)) / lf if lf > 0 else 1.0
    elif config.step is not None:
        base = config.step
    else:
        L = smoothness(qp)
        base = 1.0 / L if L > 0 else 1.0 / max(float(np.max(np.abs(qp.c))), 1e-12)

    P, c = qp.P, qp.c
    Pw = P @ w
    grad = Pw - c
    if not np.all(np.isfinite(grad)):
        raise QPError("non-finite gradient; P is likely ill-conditioned")
    f_prev = 0.5 * float(w @ Pw) - float(c @ w)
    f_start = f_prev
    best_w, best_f = w, f_prev
    converged = False
    tau = base
    k = 0
    for k in range(1, config.max_iters + 1):
        if schedule == "theory":
            tau = base / math.sqrt(k)
        w_new, log_ratio = _eg_step(w, grad, tau)
        Pw_new = P @ w_new
        if schedule == "adaptive":
            # f is quadratic, so the KL descent test is exactly 1/2 d'Pd <= KL(w_new || w) / tau
            for _ in range(60):
                curvature = 0.5 * float((w_new - w) @ (Pw_new - Pw))
                if curvature * tau <= float(w_new @ log_ratio) + 1e-16 * tau * abs(f_prev):
                    break
                tau *= 0.5
                w_new, log_ratio = _eg_step(w, grad, tau)
                Pw_new = P @ w_new
        f_new = 0.5 * float(w_new @ Pw_new) - float(c @ w_new)
        if not math.isfinite(f_new):
            raise QPError("non-finite objective; P is likely ill-conditioned")
        moved = float(np.abs(w_new - w).sum())
        w, Pw = w_new, Pw_new
        grad = Pw - c
        if f_new < best_f:
            best_w, best_f = w, f_new
        if abs(f_new - f_prev) < config.tol * (1.0 + abs(f_new)) and moved < config.tol:
            converged = True
            break
        f_prev = f_new
        if schedule == "adaptive":
            tau *= ADAPTIVE_GROWTH
    if best_f > f_start:
        raise QPError("EG failed to decrease the objective")
    return QPSolution(best_w, best_f, k, converged)


def project_simplex(y: np.ndarray) -> np.ndarray:
    """Euclidean projection onto the unit simplex (sort-based)."""
    y = np.asarray(y, dtype=float)
    u = np.sort(y)[::-1]
    css = np.cumsum(u) - 1.0
    idx = np.arange(1, len(y) + 1)
    rho = np.nonzero(u - css / idx > 0)[0][-1]
    return np.maximum(y - css[rho] / (rho + 1), 0.0)


def project_simplex_halfspace(y: np.ndarray, g: np.ndarray, iters: int = 200) -> np.ndarray:
    """Projection onto ``{w in simplex : g'w >= 0}`` (assumed non-empty).

    The projection is ``project_simplex(y + lam g)`` for the smallest
    ``lam >= 0`` making ``g'w >= 0``; ``g'w`` is nondecreasing in ``lam``.
    """
    w = project_simplex(y)
    if g @ w >= 0:
        return w
    if np.max(g) < 0:
        raise QPError("half-space does not intersect the simplex")
    lo, hi = 0.0, 1.0
    while g @ project_simplex(y + hi * g) < 0:
        hi *= 2.0
        if hi > 1e12:
            raise QPError("could not bracket the half-space multiplier")
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if g @ project_simplex(y + mid * g) < 0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-15 * max(1.0, hi):
            break
    return project_simplex(y + hi * g)


def reference_solve(qp: SimplexQP, tol: float = 1e-10, max_iters: int = 500_000,
                    halfspace: np.ndarray | None = None) -> QPSolution:
    """Accelerated projected gradient run until the gradient mapping is below ``tol``.

    ``halfspace`` optionally adds the constraint ``halfspace' w >= 0``.
    Raises :class:`NonConvergenceError` instead of returning a partial result.
    """
    n = qp.n
    if n > 10_000:
        raise ValueError("reference solver is limited to n <= 10000")
    if halfspace is None:
        proj = project_simplex
    else:
        g = np.asarray(halfspace, dtype=float)
        proj = lambda v: project_simplex_halfspace(v, g)  # noqa: E731

    L = float(np.linalg.eigvalsh(qp.P)[-1]) if n > 1 else float(qp.P[0, 0])
    L = max(L, 1e-12)
    step = 1.0 / L
    x = proj(np.full(n, 1.0 / n))
    y, t = x.copy(), 1.0
    f_x = qp.objective(x)
    for k in range(1, max_iters + 1):
        x_new = proj(y - step * qp.gradient(y))
        f_new = qp.objective(x_new)
        if f_new > f_x:
            # adaptive restart of the momentum
            y, t = x.copy(), 1.0
            x_new = proj(x - step * qp.gradient(x))
            f_new = qp.objective(x_new)
        t_new = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
        y = x_new + ((t - 1.0) / t_new) * (x_new - x)
        x, t, f_x = x_new, t_new, f_new
        mapping = L * np.abs(x - proj(x - step * qp.gradient(x))).sum()
        if mapping <= tol:
            return QPSolution(x, qp.objective(x), k, True)
    raise NonConvergenceError(
        f"projected gradient did not reach stationarity {tol:g} in {max_iters} iterations"
    )
