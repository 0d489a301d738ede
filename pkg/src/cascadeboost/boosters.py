"""FisherBoost / LACBoost by column generation, plus the AdaBoost baseline
and closed-form LAC/LDA post-processing of a fixed set of weak classifiers.

The restricted master problem at every iteration is

    min_w  1/2 w'(A'QA)w - theta e'Aw   over the unit simplex,

solved with exponentiated gradient.  The dual variables come back in closed
form, ``u = -Q A w + theta e`` and ``r = max_j (A'u)_j``; the next weak
classifier is the one with the largest edge ``sum_i u_i y_i h(x_i)``.
"""
from __future__ import annotations

import json
import logging
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal, NamedTuple

import numpy as np

from .data import ClassMeanVectors, Dataset, MarginMatrix, QMatrix, build_q_matrix
from .simplex_qp import EGConfig, SimplexQP, eg_solve, reference_solve
from .weak import DecisionStump, WeakLearnerPool, predict_all

log = logging.getLogger(__name__)

BoosterMode = Literal["fisherboost", "lacboost"]
Q_MODE = {"fisherboost": "lda", "lacboost": "lac"}

ADABOOST_ALPHA_CAP = 0.5 * math.log(1e10)
WARM_NEW_WEIGHT = 1e-2
WARM_UNIFORM_MIX = 1e-6


class DegenerateDirectionWarning(UserWarning):
    pass


class MeanGapWarning(UserWarning):
    pass


@dataclass
class BoosterConfig:
    theta: float = 0.1
    epsilon: float = 1e-6
    n_max: int = 100
    mode: BoosterMode = "fisherboost"
    exact_q: bool = True
    nonneg_mean_gap: bool = False
    delta: float = 1e-8
    offset_target: str = "balanced"
    eg: EGConfig = field(default_factory=EGConfig)

    def __post_init__(self):
        if self.theta <= 0:
            raise ValueError("theta must be positive")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.n_max < 1:
            raise ValueError("n_max must be at least 1")
        if self.mode not in Q_MODE:
            raise ValueError(f"unknown booster mode {self.mode!r}")

    def to_dict(self) -> dict:
        return {"theta": self.theta, "epsilon": self.epsilon, "n_max": self.n_max,
                "mode": self.mode, "exact_q": self.exact_q,
                "nonneg_mean_gap": self.nonneg_mean_gap, "delta": self.delta,
                "offset_target": self.offset_target,
                "eg": {"max_iters": self.eg.max_iters, "tol": self.eg.tol,
                       "step_schedule": self.eg.step_schedule, "step": self.eg.step,
                       "lipschitz": self.eg.lipschitz}}


@dataclass
class StrongClassifier:
    """``sign(sum_j w_j h_j(x) - b)`` with ``sign(0) = +1``."""

    weak_classifiers: list[DecisionStump]
    w: np.ndarray
    b: float = 0.0
    mode: str = "fisherboost"
    theta: float | None = None
    flags: list[str] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.w = np.asarray(self.w, dtype=float)
        if self.w.shape != (len(self.weak_classifiers),):
            raise ValueError("one coefficient per weak classifier is required")

    @property
    def n(self) -> int:
        return len(self.weak_classifiers)

    def decision_function(self, X: np.ndarray) -> np.ndarray:
        return predict_all(self.weak_classifiers, X) @ self.w

    def predict(self, X: np.ndarray) -> np.ndarray:
        return np.where(self.decision_function(X) >= self.b, 1, -1)

    def to_dict(self) -> dict:
        d = {"mode": self.mode, "theta": self.theta,
             "weak_classifiers": [h.to_dict() for h in self.weak_classifiers],
             "w": [float(v) for v in self.w], "b": float(self.b)}
        if self.flags:
            d["flags"] = list(self.flags)
        if self.meta:
            d["meta"] = self.meta
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "StrongClassifier":
        return cls([DecisionStump.from_dict(h) for h in d["weak_classifiers"]],
                   np.array(d["w"], dtype=float), float(d["b"]), d.get("mode", "fisherboost"),
                   d.get("theta"), list(d.get("flags", [])), dict(d.get("meta", {})))


def dumps_model(obj) -> str:
    return json.dumps(obj.to_dict(), indent=2, sort_keys=True) + "\n"


def save_model(model: StrongClassifier, path):
    Path(path).write_text(dumps_model(model))


def load_model(path) -> StrongClassifier:
    return StrongClassifier.from_dict(json.loads(Path(path).read_text()))


@dataclass
class DualState:
    u: np.ndarray
    r: float


def recover_dual(q: QMatrix, rho: np.ndarray, theta: float, e: ClassMeanVectors,
                 a: MarginMatrix | np.ndarray, clamp: bool = False) -> DualState:
    """Dual variables from the primal margins ``rho = A w``.

    ``u`` multiplies the equality ``rho = A w`` and is therefore sign-free;
    ``clamp=True`` zeroes negative entries but then the duality gap no
    longer closes.
    """
    rho = np.asarray(rho, dtype=float)
    A = a.entries if isinstance(a, MarginMatrix) else np.asarray(a, dtype=float)
    if rho.shape != (q.m,) or A.shape[0] != q.m:
        raise ValueError("dimension mismatch between Q, rho and A")
    u = theta * e.e - q.matvec(rho)
    if clamp:
        u = np.maximum(u, 0.0)
    r = float(np.max(A.T @ u)) if A.shape[1] else -math.inf
    return DualState(u, r)


def primal_objective(q: QMatrix, rho: np.ndarray, theta: float, e: ClassMeanVectors) -> float:
    return 0.5 * q.quadratic(rho) - theta * float(e.e @ rho)


def dual_objective(q: QMatrix, dual: DualState, theta: float, e: ClassMeanVectors,
                   delta: float | None = None) -> float:
    v = dual.u - theta * e.e
    return -dual.r - 0.5 * float(v @ q.solve_regularized(v, delta))


class Threshold(NamedTuple):
    b: float
    flag: str | None = None


def _candidates(scores: np.ndarray) -> np.ndarray:
    v = np.unique(scores)
    if len(v) == 1:
        return v
    mids = 0.5 * (v[:-1] + v[1:])
    low = v[0] - 0.5 * (v[1] - v[0])
    high = v[-1] + 0.5 * (v[-1] - v[-2])
    return np.concatenate([[low], mids, [high]])


def find_offset(scores, labels, min_detection: float | None = None,
                max_fp: float | None = None) -> Threshold:
    """Choose ``b`` among midpoints of the distinct scores (plus one below and one above).

    * ``max_fp``: the lowest candidate whose false-positive rate is at most ``max_fp``.
    * ``min_detection`` alone: the highest candidate with detection rate at least ``min_detection``.
    * neither: the candidate minimising the miss rate plus the false-positive rate
      (lowest such ``b``).

    An example counts as accepted when ``score >= b``.  The flag reports a
    degenerate score set or a detection target missed under the fp limit.
    """
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    if not np.all(np.isfinite(scores)):
        raise ValueError("scores must be finite")
    if min_detection is not None and not 0 <= min_detection <= 1:
        raise ValueError("min_detection must lie in [0, 1]")
    if max_fp is not None and not 0 <= max_fp <= 1:
        raise ValueError("max_fp must lie in [0, 1]")
    pos = np.sort(scores[labels == 1])
    neg = np.sort(scores[labels != 1])
    cand = _candidates(scores)
    # accepted counts for each candidate
    tp = len(pos) - np.searchsorted(pos, cand, side="left")
    fp = len(neg) - np.searchsorted(neg, cand, side="left")
    det = tp / max(len(pos), 1)
    fpr = fp / max(len(neg), 1)
    flag = "degenerate" if len(cand) == 1 else None

    if max_fp is not None:
        ok = np.nonzero(fpr <= max_fp)[0]
        k = int(ok[0]) if len(ok) else len(cand) - 1
        if len(ok) == 0:
            flag = "unreachable"
        elif min_detection is not None and det[k] < min_detection:
            flag = flag or "detection_below_target"
        return Threshold(float(cand[k]), flag)
    if min_detection is not None:
        ok = np.nonzero(det >= min_detection)[0]
        if len(ok) == 0:
            return Threshold(float(cand[0]), "unreachable")
        return Threshold(float(cand[ok[-1]]), flag)
    balanced_error = (1.0 - det) + fpr
    return Threshold(float(cand[int(np.argmin(balanced_error))]), flag)


def offset_for(target: str, scores, labels, d_min=None, f_max=None) -> Threshold:
    if target == "balanced":
        return find_offset(scores, labels)
    if target == "min_detection":
        return find_offset(scores, labels, min_detection=d_min)
    if target == "max_fp":
        return find_offset(scores, labels, min_detection=d_min, max_fp=f_max)
    raise ValueError(f"unknown offset target {target!r}")


class ColumnGeneration:
    """State of the column-generation loop over one training set.

    The cascade trainer keeps one of these alive across nodes and calls
    :meth:`reset_data` when the negative set changes.
    """

    def __init__(self, dataset: Dataset, pool: WeakLearnerPool, config: BoosterConfig,
                 mode: BoosterMode | None = None):
        self.pool = pool
        self.config = config
        self.classifiers: list[DecisionStump] = []
        self.reset_data(dataset, mode)

    def reset_data(self, dataset: Dataset, mode: BoosterMode | None = None):
        """Rebuild A, P and c for the current classifiers on new data; ``u`` restarts at ``theta e``."""
        dataset.require_both_classes()
        cfg = self.config
        self.mode = mode or cfg.mode
        self.dataset = dataset
        self.q = build_q_matrix(dataset.m1, dataset.m2, Q_MODE[self.mode], cfg.exact_q, cfg.delta)
        self.means = ClassMeanVectors.from_counts(dataset.m1, dataset.m2)
        self.A = MarginMatrix(dataset.labels, capacity=max(16, 2 * len(self.classifiers)))
        self.P = np.zeros((0, 0))
        self.c = np.zeros(0)
        self.w = np.zeros(0)
        self.objectives: list[float] = []
        self.dual = DualState(cfg.theta * self.means.e, -math.inf)
        old, self.classifiers = self.classifiers, []
        for h in old:
            self._append(h)
        if old:
            self._solve(warm=None)

    @property
    def n(self) -> int:
        return len(self.classifiers)

    @property
    def rho(self) -> np.ndarray:
        return self.A.entries @ self.w

    def _append(self, h: DecisionStump):
        a = self.A.append(h, self.dataset.features)
        qa = self.q.matvec(a)
        col = self.A.entries.T @ qa
        n = self.A.n
        P = np.empty((n, n))
        P[:-1, :-1] = self.P
        P[:-1, -1] = col[:-1]
        P[-1, :-1] = col[:-1]
        P[-1, -1] = col[-1]
        self.P = P
        self.c = np.append(self.c, self.config.theta * float(self.means.e @ a))
        self.classifiers.append(h)

    def _solve(self, warm: np.ndarray | None):
        cfg = self.config
        n = self.n
        qp = SimplexQP(self.P, self.c)
        if warm is not None:
            w0 = (1.0 - WARM_UNIFORM_MIX) * warm + WARM_UNIFORM_MIX / n
            w0 /= w0.sum()
        else:
            w0 = None
        eg = EGConfig(cfg.eg.max_iters, cfg.eg.tol, cfg.eg.lipschitz, cfg.eg.step_schedule,
                      cfg.eg.step, w0)
        sol = eg_solve(qp, eg)
        w = sol.w
        if warm is not None and self.objectives:
            # the previous optimum padded with a zero is feasible; never do worse
            prev = np.append(self.w, 0.0)
            if qp.objective(prev) < sol.objective:
                w = prev
        if cfg.nonneg_mean_gap:
            gap_dir = self.c / cfg.theta
            if gap_dir @ w < 0:
                w = reference_solve(qp, halfspace=gap_dir).w
        self.w = w
        self.objectives.append(qp.objective(w))
        self.dual = recover_dual(self.q, self.rho, cfg.theta, self.means, self.A)
        self.last_iters = sol.iters

    def edge(self, h: DecisionStump) -> float:
        hx = h.predict(self.dataset.features)
        return float(self.dual.u @ (self.dataset.labels * hx))

    def step(self, check_optimality: bool = True) -> str | None:
        """One column-generation iteration.

        Returns None after adding a column, ``"optimal"`` when no column
        violates dual feasibility by more than epsilon, or ``"exhausted"``
        when the pool offers nothing with a non-zero edge.
        """
        h = self.pool.best(self.dataset, self.dual.u)
        edge = self.edge(h)
        if self.n == 0 and edge <= 0:
            return "exhausted"
        if check_optimality and self.n > 0 and edge < self.dual.r + self.config.epsilon:
            return "optimal"
        warm = None
        if self.n > 0:
            warm = np.append((1.0 - WARM_NEW_WEIGHT) * self.w, WARM_NEW_WEIGHT)
        self._append(h)
        self._solve(warm)
        return None

    def dual_gap(self) -> float:
        rho = self.rho
        primal = primal_objective(self.q, rho, self.config.theta, self.means)
        return primal - dual_objective(self.q, self.dual, self.config.theta, self.means)

    def strong_classifier(self, b: float = 0.0, flags=()) -> StrongClassifier:
        return StrongClassifier(list(self.classifiers), self.w.copy(), b, self.mode,
                                self.config.theta, list(flags))


def train(dataset: Dataset, pool: WeakLearnerPool, config: BoosterConfig | None = None,
          d_min: float | None = None, f_max: float | None = None) -> StrongClassifier:
    """Totally-corrective boosting by column generation (FisherBoost or LACBoost)."""
    config = config or BoosterConfig()
    cg = ColumnGeneration(dataset, pool, config)
    stop = "n_max"
    for _ in range(config.n_max):
        status = cg.step()
        if status is not None:
            stop = status
            break
    flags = [] if stop in ("optimal", "n_max") else ["truncated"]
    if cg.n == 0:
        model = cg.strong_classifier(0.0, flags)
    else:
        scores = cg.A.entries @ cg.w * dataset.labels
        thr = offset_for(config.offset_target, scores, dataset.labels, d_min, f_max)
        if thr.flag:
            flags.append(f"offset_{thr.flag}")
        model = cg.strong_classifier(thr.b, flags)
    model.meta = {"stop": stop, "objectives": [float(v) for v in cg.objectives],
                  "config": config.to_dict()}
    log.debug("column generation stopped (%s) with %d weak classifiers", stop, cg.n)
    return model


def adaboost_train(dataset: Dataset, pool: WeakLearnerPool, rounds: int,
                   offset_target: str | None = None) -> StrongClassifier:
    """Discrete AdaBoost; coefficients are renormalised to the simplex at the end.

    With the default ``offset_target=None`` the offset is 0, the usual AdaBoost
    rule, which is unaffected by the renormalisation.
    """
    if rounds < 1:
        raise ValueError("rounds must be at least 1")
    dataset.require_both_classes()
    y = dataset.labels.astype(float)
    D = np.full(dataset.m, 1.0 / dataset.m)
    stumps, alphas = [], []
    flags = []
    for _ in range(rounds):
        h = pool.best(dataset, D)
        hx = h.predict(dataset.features)
        err = float(D @ (hx != y))
        if err >= 0.5:
            flags.append("weak_learner_failed")
            break
        alpha = ADABOOST_ALPHA_CAP if err <= 0 else min(0.5 * math.log((1 - err) / err), ADABOOST_ALPHA_CAP)
        stumps.append(h)
        alphas.append(alpha)
        D = D * np.exp(-alpha * y * hx)
        D /= D.sum()
    alphas = np.array(alphas)
    w = alphas / alphas.sum() if len(alphas) else alphas
    model = StrongClassifier(stumps, w, 0.0, "adaboost", None, flags)
    if offset_target and stumps:
        thr = offset_for(offset_target, model.decision_function(dataset.features), dataset.labels)
        model.b = thr.b
    model.meta = {"alphas": [float(a) for a in alphas]}
    return model


def lac_lda_postprocess(h_outputs, labels, mode: Literal["lac", "lda"] = "lac",
                        delta: float = 0.0) -> tuple[np.ndarray, float]:
    """Closed-form ``w = (Sigma + delta I)^{-1} (mu1 - mu2)``, ``b = w' mu2``.

    ``Sigma`` is the positive-class covariance for LAC and the sum of both
    class covariances for LDA (maximum-likelihood estimates, dividing by the class size).
    """
    H = np.atleast_2d(np.asarray(h_outputs, dtype=float))
    labels = np.asarray(labels)
    pos, neg = H[labels == 1], H[labels != 1]
    if len(pos) < 2 or len(neg) < 2:
        raise ValueError("each class needs at least two examples")
    mu1, mu2 = pos.mean(axis=0), neg.mean(axis=0)
    gap = mu1 - mu2
    n = H.shape[1]
    if np.allclose(gap, 0.0, atol=1e-15):
        warnings.warn("class means coincide; no discriminative direction", DegenerateDirectionWarning)
        return np.zeros(n), 0.0
    if np.any(gap < 0):
        warnings.warn("some weak classifiers have mu1 - mu2 < 0", MeanGapWarning)
    sigma = np.atleast_2d(np.cov(pos, rowvar=False, ddof=0))
    if mode == "lda":
        sigma = sigma + np.atleast_2d(np.cov(neg, rowvar=False, ddof=0))
    elif mode != "lac":
        raise ValueError(f"unknown mode {mode!r}")
    S = sigma + delta * np.eye(n)
    if np.linalg.matrix_rank(S) < n:
        raise np.linalg.LinAlgError("covariance is singular; pass a positive delta")
    w = np.linalg.solve(S, gap)
    return w, float(w @ mu2)


def postprocess(model: StrongClassifier, dataset: Dataset, mode: Literal["lac", "lda"] = "lac",
                delta: float = 1e-6) -> StrongClassifier:
    """Replace a model's coefficients and offset by the LAC or LDA closed form."""
    H = predict_all(model.weak_classifiers, dataset.features)
    w, b = lac_lda_postprocess(H, dataset.labels, mode, delta)
    return StrongClassifier(list(model.weak_classifiers), w, b, f"{model.mode}+{mode}",
                            model.theta)

