"""Multi-exit cascade training with negative bootstrapping.

Exit ``t`` scores an example with the first ``n_t`` weak classifiers of a
shared, growing list.  An example is accepted only if every exit accepts it,
and evaluation stops at the first rejecting exit.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .boosters import BoosterConfig, ColumnGeneration, StrongClassifier, find_offset
from .data import Dataset
from .weak import DecisionStump, HaarFeature, WeakLearnerPool, haar_feature_matrix, predict_all

log = logging.getLogger(__name__)

REJECTED_NEVER = -1


@dataclass(frozen=True)
class NodeTargets:
    d_min: float = 0.997
    f_max: float = 0.5
    F_fp: float = 1e-6

    def __post_init__(self):
        if not 0 < self.f_max < 1:
            raise ValueError("f_max must lie in (0, 1)")
        if not 0 < self.d_min <= 1:
            raise ValueError("d_min must lie in (0, 1]")
        if not 0 < self.F_fp < 1:
            raise ValueError("F_fp must lie in (0, 1)")

    def to_dict(self) -> dict:
        return {"d_min": self.d_min, "f_max": self.f_max, "F_fp": self.F_fp}


def compose_rates(d: Sequence[float], f: Sequence[float]) -> tuple[float, float]:
    """Overall detection and false-positive rates of independent nodes."""
    d = np.asarray(d, dtype=float)
    f = np.asarray(f, dtype=float)
    if d.size == 0 or f.size == 0:
        raise ValueError("rate vectors must be non-empty")
    if d.shape != f.shape:
        raise ValueError("need one detection rate and one fp rate per node")
    if np.any((d <= 0) | (d > 1)) or np.any((f <= 0) | (f > 1)):
        raise ValueError("rates must lie in (0, 1]")
    return float(np.prod(d)), float(np.prod(f))


def geometric_schedule(n_nodes: int) -> list[int]:
    """Minimum new weak classifiers per node: 4, 4, 4, 8, 8, 16, 16, 32, 32, ..."""
    out = [4, 4, 4]
    size = 8
    while len(out) < n_nodes:
        out += [size, size]
        size *= 2
    return out[:n_nodes]


@dataclass
class CascadeExit:
    """Exit using classifiers ``start..n-1`` with coefficients ``w`` and offset ``b``.

    ``start`` is 0 for a multi-exit cascade; a standard cascade starts each
    exit where the previous one ended.
    """

    n: int
    w: np.ndarray
    b: float
    start: int = 0

    def __post_init__(self):
        self.w = np.asarray(self.w, dtype=float)
        if self.w.shape != (self.n - self.start,):
            raise ValueError("exit coefficients do not match its classifier range")

    def to_dict(self) -> dict:
        return {"n_t": self.n, "start": self.start, "w": [float(v) for v in self.w],
                "b": float(self.b)}

    @classmethod
    def from_dict(cls, d: dict) -> "CascadeExit":
        return cls(int(d["n_t"]), np.array(d["w"], dtype=float), float(d["b"]),
                   int(d.get("start", 0)))


@dataclass
class CascadeTrace:
    """Per-example outcome of an instrumented evaluation.

    ``rejected_at[i]`` is the exit that rejected example ``i`` or -1 if it
    was accepted; ``evaluated[t]`` lists the examples exit ``t`` scored.
    """

    rejected_at: np.ndarray
    evaluated: list[np.ndarray]

    @property
    def accepted(self) -> np.ndarray:
        return self.rejected_at == REJECTED_NEVER


@dataclass
class CascadeModel:
    classifiers: list[DecisionStump]
    exits: list[CascadeExit]
    lac_start_node: int = 3
    targets: NodeTargets = field(default_factory=NodeTargets)
    flags: list[str] = field(default_factory=list)
    node_metrics: list[dict] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        prev = 0
        for e in self.exits:
            if e.n < prev or e.n > len(self.classifiers):
                raise ValueError("exit sizes must be non-decreasing and within the classifier list")
            prev = e.n

    @property
    def n_nodes(self) -> int:
        return len(self.exits)

    @property
    def multi_exit(self) -> bool:
        return all(e.start == 0 for e in self.exits)

    def exit_scores(self, t: int, H: np.ndarray) -> np.ndarray:
        e = self.exits[t]
        return H[:, e.start : e.n] @ e.w

    def exit_classifier(self, t: int) -> StrongClassifier:
        e = self.exits[t]
        return StrongClassifier(self.classifiers[e.start : e.n], e.w.copy(), e.b)

    def trace(self, X: np.ndarray, final_offset: float | None = None) -> CascadeTrace:
        """Run the cascade, scoring each exit only on examples still alive."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        m = X.shape[0]
        rejected_at = np.full(m, REJECTED_NEVER, dtype=np.int64)
        alive = np.arange(m)
        evaluated = []
        computed = 0
        H = np.empty((m, 0))
        for t, e in enumerate(self.exits):
            evaluated.append(alive.copy())
            if alive.size == 0:
                continue
            if e.n > computed:
                # weak outputs are only computed for survivors
                H_new = np.zeros((m, e.n - computed))
                H_new[alive] = predict_all(self.classifiers[computed : e.n], X[alive])
                H = np.hstack([H, H_new])
                computed = e.n
            b = e.b if final_offset is None or t < self.n_nodes - 1 else final_offset
            scores = H[alive, e.start : e.n] @ e.w
            out = scores < b
            rejected_at[alive[out]] = t
            alive = alive[~out]
        return CascadeTrace(rejected_at, evaluated)

    def accepts(self, X: np.ndarray) -> np.ndarray:
        return self.trace(X).accepted

    def predict(self, X: np.ndarray) -> np.ndarray:
        return np.where(self.accepts(X), 1, -1)

    def to_dict(self) -> dict:
        d = {"exits": [e.to_dict() for e in self.exits],
             "classifiers": [h.to_dict() for h in self.classifiers],
             "lac_start_node": self.lac_start_node, "targets": self.targets.to_dict(),
             "flags": list(self.flags), "node_metrics": self.node_metrics}
        if self.meta:
            d["meta"] = self.meta
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "CascadeModel":
        return cls([DecisionStump.from_dict(h) for h in d["classifiers"]],
                   [CascadeExit.from_dict(e) for e in d["exits"]],
                   int(d.get("lac_start_node", 3)), NodeTargets(**d["targets"]),
                   list(d.get("flags", [])), list(d.get("node_metrics", [])),
                   dict(d.get("meta", {})))


def dumps_cascade(model: CascadeModel) -> str:
    return json.dumps(model.to_dict(), indent=2, sort_keys=True) + "\n"


def save_cascade(model: CascadeModel, path):
    Path(path).write_text(dumps_cascade(model))


def load_cascade(path) -> CascadeModel:
    return CascadeModel.from_dict(json.loads(Path(path).read_text()))


class NegativePool:
    """Source of negatives that the current cascade still accepts.

    Subclasses implement :meth:`draw`.  Every batch handed out by
    :meth:`sample` is kept in ``batches`` so the bootstrapping invariant can
    be audited afterwards.
    """

    def __init__(self, seed: int = 0, max_draws: int = 1_000_000, batch_size: int = 1024):
        if max_draws < 1 or batch_size < 1:
            raise ValueError("max_draws and batch_size must be positive")
        self.rng = np.random.default_rng(seed)
        self.seed = seed
        self.max_draws = max_draws
        self.batch_size = batch_size
        self.consumed = 0
        self.exhausted = False
        self.batches: list[tuple[int, np.ndarray]] = []

    def draw(self, k: int) -> np.ndarray:
        raise NotImplementedError

    def sample(self, model: CascadeModel | None, k: int) -> np.ndarray:
        """Up to ``k`` fresh negatives accepted by every exit of ``model``."""
        kept: list[np.ndarray] = []
        found = drawn = passed = 0
        while found < k:
            budget = self.max_draws - self.consumed
            if budget <= 0:
                self.exhausted = True
                break
            # draw about as many as the acceptance rate so far says are needed
            rate = (passed + 1) / (drawn + 1)
            size = min(self.batch_size, budget, math.ceil((k - found) / rate))
            batch = self.draw(size)
            self.consumed += len(batch)
            drawn += len(batch)
            if model is not None and model.exits:
                batch = batch[model.accepts(batch)]
            passed += len(batch)
            kept.append(batch[: k - found])
            found += len(kept[-1])
        out = np.vstack(kept) if kept else np.empty((0, 0))
        self.batches.append((model.n_nodes if model is not None else 0, out))
        return out


class SyntheticNegativePool(NegativePool):
    """Negatives from ``sampler(rng, k) -> (k, d) array``.

    ``uniform_box`` and ``gaussian_blob`` build common backgrounds.
    """

    def __init__(self, sampler: Callable[[np.random.Generator, int], np.ndarray], seed: int = 0,
                 max_draws: int = 1_000_000, batch_size: int = 1024):
        super().__init__(seed, max_draws, batch_size)
        self.sampler = sampler

    def draw(self, k: int) -> np.ndarray:
        return np.atleast_2d(np.asarray(self.sampler(self.rng, k), dtype=float))


class ArrayNegativePool(NegativePool):
    """Negatives drawn without replacement, in a seeded random order, from a fixed array."""

    def __init__(self, negatives: np.ndarray, seed: int = 0, batch_size: int = 1024):
        negatives = np.atleast_2d(np.asarray(negatives, dtype=float))
        if len(negatives) == 0:
            raise ValueError("negative array is empty")
        super().__init__(seed, len(negatives), batch_size)
        self.negatives = negatives[self.rng.permutation(len(negatives))]

    def draw(self, k: int) -> np.ndarray:
        return self.negatives[self.consumed : self.consumed + k]


def uniform_box(low: float, high: float, dim: int):
    def sampler(rng, k):
        return rng.uniform(low, high, size=(k, dim))
    return sampler


def gaussian_blob(mean, scale: float):
    mean = np.atleast_1d(np.asarray(mean, dtype=float))

    def sampler(rng, k):
        return mean + scale * rng.normal(size=(k, len(mean)))
    return sampler


class ImageNegativePool(NegativePool):
    """Random windows cropped from background images, mapped to Haar responses."""

    def __init__(self, images: Sequence[np.ndarray], window: tuple[int, int],
                 features: Sequence[HaarFeature], seed: int = 0, max_draws: int = 1_000_000,
                 batch_size: int = 256):
        super().__init__(seed, max_draws, batch_size)
        width, height = window
        self.images = [np.asarray(im, dtype=float) for im in images
                       if im.shape[0] >= height and im.shape[1] >= width]
        if not self.images:
            raise ValueError("no background image is at least as large as the window")
        self.window = (width, height)
        self.features = list(features)

    def draw(self, k: int) -> np.ndarray:
        width, height = self.window
        crops = np.empty((k, height, width))
        which = self.rng.integers(0, len(self.images), size=k)
        for i, j in enumerate(which):
            im = self.images[j]
            y = self.rng.integers(0, im.shape[0] - height + 1)
            x = self.rng.integers(0, im.shape[1] - width + 1)
            crops[i] = im[y : y + height, x : x + width]
        return haar_feature_matrix(crops, self.features)


@dataclass
class CascadeConfig:
    """Settings for :func:`train_cascade`.

    ``schedule`` gives the minimum number of new weak classifiers per node;
    when None, :func:`geometric_schedule` is used.  A node then keeps adding
    one classifier at a time until its detection target is met, up to
    ``max_per_node`` new classifiers.  With ``strict_schedule`` every node
    gets exactly its scheduled count, so exit sizes are fully pre-set; a
    node that then misses ``d_min`` is recorded in its metrics.
    """

    n_negatives: int = 500
    max_nodes: int = 20
    max_per_node: int = 100
    schedule: list[int] | None = None
    lac_start_node: int = 3
    multi_exit: bool = True
    strict_schedule: bool = False

    def __post_init__(self):
        if self.n_negatives < 2:
            raise ValueError("n_negatives must be at least 2")
        if self.max_nodes < 1 or self.max_per_node < 1:
            raise ValueError("max_nodes and max_per_node must be positive")
        if self.lac_start_node < 1:
            raise ValueError("lac_start_node counts nodes from 1")

    def node_minimum(self, t: int) -> int:
        sched = self.schedule or geometric_schedule(self.max_nodes)
        return sched[min(t, len(sched) - 1)]

    def to_dict(self) -> dict:
        return {"n_negatives": self.n_negatives, "max_nodes": self.max_nodes,
                "max_per_node": self.max_per_node, "schedule": self.schedule,
                "lac_start_node": self.lac_start_node, "multi_exit": self.multi_exit,
                "strict_schedule": self.strict_schedule}


def _node_rates(scores: np.ndarray, labels: np.ndarray, b: float) -> tuple[float, float]:
    acc = scores >= b
    return float(acc[labels == 1].mean()), float(acc[labels != 1].mean())


def train_cascade(positives: np.ndarray, pool: NegativePool, learner: BoosterConfig,
                  targets: NodeTargets, weak_pool: WeakLearnerPool,
                  config: CascadeConfig | None = None) -> CascadeModel:
    """Train nodes until the composed fp rate drops below ``targets.F_fp``.

    Node ``t`` (counted from 1) uses the learner's mode from
    ``lac_start_node`` on and FisherBoost before it.  Its offset is the
    lowest threshold with training fp rate at most ``f_max``.  Negatives the
    new node rejects are dropped and the pool refills the set with examples
    the whole cascade still accepts.
    """
    config = config or CascadeConfig()
    positives = np.atleast_2d(np.asarray(positives, dtype=float))
    if len(positives) < 2:
        raise ValueError("need at least two positives")
    model = CascadeModel([], [], config.lac_start_node, targets,
                         meta={"learner": learner.to_dict(), "cascade": config.to_dict()})
    negatives = pool.sample(None, config.n_negatives)
    if len(negatives) < config.n_negatives:
        model.flags.append("pool_exhausted")
        return model

    D, F = 1.0, 1.0
    cg: ColumnGeneration | None = None
    for t in range(config.max_nodes):
        if F <= targets.F_fp:
            break
        node = t + 1
        mode = learner.mode if node >= config.lac_start_node else "fisherboost"
        data = Dataset.from_classes(positives, negatives)
        if cg is None or not config.multi_exit:
            cg = ColumnGeneration(data, weak_pool, learner, mode)
        else:
            cg.reset_data(data, mode)
        start = 0 if config.multi_exit else len(model.classifiers)
        added = 0
        b, d_t, f_t = 0.0, 0.0, 1.0
        while True:
            status = cg.step(check_optimality=False)
            if status == "exhausted":
                break
            added += 1
            scores = (cg.A.entries @ cg.w) * data.labels
            b = find_offset(scores, data.labels, max_fp=targets.f_max).b
            d_t, f_t = _node_rates(scores, data.labels, b)
            if config.strict_schedule:
                if added >= config.node_minimum(t):
                    break
                continue
            if d_t >= targets.d_min and (added >= config.node_minimum(t) or F * f_t <= targets.F_fp):
                break
            if added >= config.max_per_node:
                break
        if added == 0 or (d_t < targets.d_min and not config.strict_schedule):
            model.flags.append("node_budget_exceeded")
            if added == 0:
                break
        if config.multi_exit:
            model.classifiers = list(cg.classifiers)
        else:
            model.classifiers.extend(cg.classifiers)
        model.exits.append(CascadeExit(len(model.classifiers), cg.w.copy(), b, start))
        D, F = D * d_t, F * f_t
        model.node_metrics.append({"node": node, "n_t": len(model.classifiers), "mode": mode,
                                   "detection_rate": d_t, "fp_rate": f_t, "D": D, "F": F,
                                   "n_negatives": len(negatives),
                                   "meets_d_min": d_t >= targets.d_min})
        log.info("node %d: n_t=%d d=%.4f f=%.4f F=%.3g", node, len(model.classifiers), d_t, f_t, F)
        if "node_budget_exceeded" in model.flags or F <= targets.F_fp or node == config.max_nodes:
            break
        # keep only the false positives, then refill from the pool
        neg_scores = scores[data.m1 :]
        negatives = negatives[neg_scores >= b]
        fresh = pool.sample(model, config.n_negatives - len(negatives))
        if len(fresh):
            negatives = np.vstack([negatives, fresh]) if len(negatives) else fresh
        if pool.exhausted and len(negatives) < config.n_negatives:
            model.flags.append("pool_exhausted")
            break
    model.meta["D"] = D
    model.meta["F"] = F
    return model


def evaluate_node(exit: StrongClassifier, data: Dataset) -> tuple[float, float]:
    """Detection and fp rate of a single exit (``score >= b`` accepts)."""
    data.require_both_classes()
    scores = exit.decision_function(data.features)
    return _node_rates(scores, data.labels, exit.b)


def default_sweep(model: CascadeModel, data: Dataset) -> np.ndarray:
    """Offsets for the final exit: its own ``b`` and the midpoints of reachable final scores."""
    if not model.exits:
        raise ValueError("model has no exits")
    tr = model.trace(data.features, final_offset=-math.inf)
    reach = np.flatnonzero(tr.accepted)
    H = predict_all(model.classifiers, data.features[reach])
    s = np.unique(model.exit_scores(model.n_nodes - 1, H)) if reach.size else np.zeros(0)
    if s.size > 1:
        s = np.concatenate([[s[0] - 1.0], 0.5 * (s[:-1] + s[1:]), [s[-1] + 1.0]])
    return np.union1d(s, [model.exits[-1].b])


def evaluate_cascade_roc(model: CascadeModel, data: Dataset,
                         sweep: Sequence[float] | None = None) -> list[tuple[int, float]]:
    """``(fp_count, detection_rate)`` of the full cascade for each final-exit offset."""
    data.require_both_classes()
    if not model.exits:
        raise ValueError("model has no exits")
    offsets = default_sweep(model, data) if sweep is None else np.asarray(sweep, dtype=float)
    # earlier exits do not depend on the sweep; score the final exit once
    tr = model.trace(data.features, final_offset=-math.inf)
    reach = np.flatnonzero(tr.accepted)
    H = predict_all(model.classifiers, data.features[reach])
    final = model.exit_scores(model.n_nodes - 1, H)
    pos = data.labels[reach] == 1
    points = []
    for b in offsets:
        acc = final >= b
        points.append((int(np.count_nonzero(acc & ~pos)), float(np.count_nonzero(acc & pos) / data.m1)))
    points.sort()
    return points
