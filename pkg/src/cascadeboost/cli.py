"""Command-line interface.

Every subcommand accepts ``--config FILE``, a JSON object whose keys
(kebab- or snake-case) override the corresponding flags.  Output files
embed the full run configuration and seed.  On failure a single JSON line
``{"error": ..., "message": ..., "exit_code": ...}`` goes to stderr.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import __version__
from .boosters import (BoosterConfig, StrongClassifier, adaboost_train, dumps_model, postprocess,
                       train)
from .cascade import (ArrayNegativePool, CascadeConfig, CascadeExit, CascadeModel,
                      ImageNegativePool, NodeTargets, SyntheticNegativePool, dumps_cascade,
                      evaluate_cascade_roc, evaluate_node, gaussian_blob, train_cascade,
                      uniform_box)
from .data import Dataset, format_float, load_dataset_csv, save_dataset_csv
from .mpm import FAMILIES, covariance_diagonality, normality_qq, worst_case_gamma
from .simplex_qp import EGConfig, SimplexQP, eg_solve, reference_solve
from .toy import TOY_KINDS, generate
from .weak import (WeakLearnerPool, enumerate_haar_features, haar_feature_matrix, predict_all,
                   read_window)

EXIT_INPUT = 2
EXIT_TARGET = 3
EXIT_INTERNAL = 1

THETA_GRID = "1/10,1/12,1/15,1/20,1/25,1/30,1/40,1/50"


class CLIError(Exception):
    def __init__(self, kind: str, message: str, exit_code: int = EXIT_INPUT):
        super().__init__(message)
        self.kind = kind
        self.exit_code = exit_code


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CLIError("usage", message)


# ---------------------------------------------------------------- helpers

def _run_record(args) -> dict:
    cfg = {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "config")}
    return {"command": args.command, "config": cfg, "seed": getattr(args, "seed", None),
            "version": __version__}


def _comment(args) -> str:
    return "run: " + json.dumps(_run_record(args), sort_keys=True)


def _write_csv(path, header, rows, args):
    with open(path, "w", newline="") as fh:
        fh.write(f"# {_comment(args)}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([format_float(v) if isinstance(v, float) else v for v in row])


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _need_file(path, what):
    if path is None:
        raise CLIError("missing_argument", f"{what} is required")
    if not Path(path).is_file():
        raise CLIError("file_not_found", f"{what} {path} does not exist")


def _need_dir(path, what):
    if path is None or not Path(path).is_dir():
        raise CLIError("file_not_found", f"{what} {path} is not a directory")


def _out_ok(path, what="output"):
    if path is None:
        return
    parent = Path(path).resolve().parent
    if not parent.is_dir():
        raise CLIError("bad_output", f"{what} directory {parent} does not exist")


def _seeds(seed: int, k: int) -> list[int]:
    """Independent integer seeds derived from the run seed."""
    return [int(s) for s in np.random.SeedSequence(seed).generate_state(k)]


def _load_data(path) -> Dataset:
    try:
        return load_dataset_csv(path)
    except (ValueError, csv.Error) as exc:
        raise CLIError("bad_input", str(exc)) from exc


def _load_any_model(path):
    _need_file(path, "model")
    try:
        d = json.loads(Path(path).read_text())
        if "exits" in d:
            return CascadeModel.from_dict(d)
        return StrongClassifier.from_dict(d)
    except (ValueError, KeyError, TypeError) as exc:
        raise CLIError("bad_input", f"{path}: not a model file ({exc})") from exc


def _as_cascade(model) -> CascadeModel:
    if isinstance(model, CascadeModel):
        return model
    return CascadeModel(list(model.weak_classifiers), [CascadeExit(model.n, model.w, model.b)])


def _booster_config(args) -> BoosterConfig:
    eg = EGConfig(max_iters=args.eg_max_iters, tol=args.eg_tol, lipschitz=args.eg_lipschitz,
                  step_schedule=args.eg_step_schedule, step=args.eg_step)
    return BoosterConfig(theta=args.theta, epsilon=args.epsilon, n_max=args.n_max,
                         mode=args.mode, exact_q=not args.approx_q,
                         nonneg_mean_gap=args.nonneg_mean_gap, delta=args.delta,
                         offset_target=args.offset_target, eg=eg)


def _targets(args) -> NodeTargets:
    return NodeTargets(args.d_min, args.f_max, args.overall_fp)


def _cascade_config(args, n_negatives=None) -> CascadeConfig:
    schedule = [int(v) for v in args.schedule.split(",")] if args.schedule else None
    return CascadeConfig(n_negatives=n_negatives or args.n_negatives, max_nodes=args.max_nodes,
                         max_per_node=args.max_per_node, schedule=schedule,
                         lac_start_node=args.lac_start_node, multi_exit=not args.standard_cascade,
                         strict_schedule=args.strict_schedule)


def _parse_floats(text: str) -> list[float]:
    try:
        return [float(Fraction(v.strip())) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise CLIError("bad_argument", f"cannot parse number list {text!r}") from exc


# ---------------------------------------------------------------- commands

def cmd_gen_toy(args):
    _out_ok(args.out)
    try:
        ds = generate(args.kind, args.n_pos, args.n_neg, args.seed)
    except ValueError as exc:
        raise CLIError("bad_argument", str(exc)) from exc
    save_dataset_csv(ds, args.out, comment=_comment(args))
    return {"out": args.out, "m1": ds.m1, "m2": ds.m2}


def cmd_train(args):
    _need_file(args.data, "dataset")
    _out_ok(args.out)
    data = _load_data(args.data)
    data.require_both_classes()
    weak_seed, = _seeds(args.seed, 1)
    pool = WeakLearnerPool(data.n_features, args.sample_fraction, weak_seed)
    if args.mode == "adaboost":
        model = adaboost_train(data, pool, args.n_max, args.adaboost_offset)
    else:
        cfg = _booster_config(args)
        model = train(data, pool, cfg, args.d_min, args.f_max)
    if args.postprocess != "none":
        flags = model.flags
        model = postprocess(model, data, args.postprocess, args.postprocess_delta)
        model.flags = list(flags)
    det, fp = evaluate_node(model, data)
    model.meta = dict(model.meta)
    model.meta["run"] = _run_record(args)
    model.meta["training_metrics"] = {"detection_rate": det, "fp_rate": fp}
    Path(args.out).write_text(dumps_model(model))
    if model.flags:
        raise CLIError("target_unreachable", f"training flags: {model.flags}", EXIT_TARGET)
    return {"out": args.out, "n": model.n, "detection_rate": det, "fp_rate": fp}


def _positive_windows(directory):
    files = sorted(p for p in Path(directory).iterdir() if p.suffix.lower() in (".pgm", ".csv"))
    if not files:
        raise CLIError("bad_input", f"no .pgm or .csv windows in {directory}")
    wins = [read_window(p) for p in files]
    if len({w.shape for w in wins}) != 1:
        raise CLIError("bad_input", "positive windows differ in size")
    return np.stack(wins).astype(float)


def _negative_pool(args, n_features, neg_seed, negatives=None, image_features=None):
    src = args.negatives
    if src == "data":
        if negatives is None or len(negatives) == 0:
            raise CLIError("bad_input", "dataset has no negative rows for the pool")
        return ArrayNegativePool(negatives, neg_seed)
    if src == "uniform":
        return SyntheticNegativePool(uniform_box(args.neg_low, args.neg_high, n_features),
                                     neg_seed, args.max_draws)
    if src == "gaussian":
        return SyntheticNegativePool(gaussian_blob(np.zeros(n_features), args.neg_scale),
                                     neg_seed, args.max_draws)
    images = [read_window(p) for p in sorted(Path(args.backgrounds).iterdir())
              if p.suffix.lower() in (".pgm", ".csv")]
    return ImageNegativePool(images, args.window, image_features, neg_seed, args.max_draws)


def cmd_train_cascade(args):
    _out_ok(args.out)
    _out_ok(args.metrics_out, "metrics")
    weak_seed, neg_seed = _seeds(args.seed, 2)
    haar = None
    negatives = None
    if args.negatives == "images":
        _need_dir(args.positive_windows, "positive window directory")
        _need_dir(args.backgrounds, "background directory")
        wins = _positive_windows(args.positive_windows)
        height, width = wins.shape[1:]
        args.window = (width, height)
        haar = enumerate_haar_features(width, height, args.haar_step)
        positives = haar_feature_matrix(wins, haar)
    else:
        _need_file(args.data, "dataset")
        data = _load_data(args.data)
        positives, negatives = data.positives, data.negatives
    if len(positives) < 2:
        raise CLIError("bad_input", "need at least two positive examples")
    n_features = positives.shape[1]
    pool = _negative_pool(args, n_features, neg_seed, negatives, haar)
    weak = WeakLearnerPool(n_features, args.sample_fraction, weak_seed, haar)
    model = train_cascade(positives, pool, _booster_config(args), _targets(args), weak,
                          _cascade_config(args))
    model.meta["run"] = _run_record(args)
    if haar is not None:
        model.meta["haar_features"] = [f.to_dict() for f in haar]
    Path(args.out).write_text(dumps_cascade(model))
    if args.metrics_out:
        _write_csv(args.metrics_out, ["node", "detection_rate", "fp_rate"],
                   [(m["node"], m["detection_rate"], m["fp_rate"]) for m in model.node_metrics],
                   args)
    if model.flags:
        raise CLIError("target_unreachable", f"cascade flags: {model.flags}", EXIT_TARGET)
    return {"out": args.out, "nodes": model.n_nodes, "n": len(model.classifiers),
            "F": model.meta["F"], "D": model.meta["D"]}


def cmd_eval(args):
    _need_file(args.data, "dataset")
    _out_ok(args.out)
    model = _load_any_model(args.model)
    data = _load_data(args.data)
    data.require_both_classes()
    if isinstance(model, StrongClassifier):
        det, fp = evaluate_node(model, data)
        result = {"detection_rate": det, "fp_rate": fp}
    else:
        acc = model.accepts(data.features)
        nodes = []
        for t in range(model.n_nodes):
            d_t, f_t = evaluate_node(model.exit_classifier(t), data)
            nodes.append({"node": t + 1, "detection_rate": d_t, "fp_rate": f_t})
        result = {"detection_rate": float(acc[: data.m1].mean()),
                  "fp_rate": float(acc[data.m1 :].mean()), "nodes": nodes}
    if args.out:
        _write_json(args.out, {"metrics": result, "run": _run_record(args)})
    return result


def cmd_roc(args):
    _need_file(args.data, "dataset")
    _out_ok(args.out)
    model = _as_cascade(_load_any_model(args.model))
    data = _load_data(args.data)
    sweep = _parse_floats(args.offsets) if args.offsets else None
    points = evaluate_cascade_roc(model, data, sweep)
    _write_csv(args.out, ["fp_count", "detection_rate"], points, args)
    return {"out": args.out, "points": len(points)}


def cmd_solve_qp(args):
    _need_file(args.input, "QP input")
    _out_ok(args.out)
    try:
        spec = json.loads(Path(args.input).read_text())
        P = np.array(spec["P"], dtype=float)
        c = np.array(spec["c"], dtype=float)
        if "n" in spec and int(spec["n"]) != len(c):
            raise ValueError(f"n = {spec['n']} but c has {len(c)} entries")
        qp = SimplexQP(P, c)
        warm = spec.get("warm_start")
        eg = EGConfig(max_iters=args.eg_max_iters, tol=args.eg_tol, lipschitz=args.eg_lipschitz,
                      step_schedule=args.eg_step_schedule, step=args.eg_step,
                      warm_start=None if warm is None else np.array(warm, dtype=float))
    except (ValueError, KeyError, TypeError) as exc:
        raise CLIError("bad_input", f"{args.input}: {exc}") from exc
    sol = reference_solve(qp) if args.solver == "reference" else eg_solve(qp, eg)
    out = {"w": [float(v) for v in sol.w], "objective": sol.objective, "iters": sol.iters,
           "converged": sol.converged, "run": _run_record(args)}
    if args.out:
        _write_json(args.out, out)
    if not sol.converged:
        raise CLIError("not_converged", f"EG stopped after {sol.iters} iterations", EXIT_TARGET)
    return {k: out[k] for k in ("w", "objective", "iters", "converged")}


def cmd_analyze(args):
    _need_file(args.data, "dataset")
    _out_ok(args.qq_out, "QQ")
    _out_ok(args.stats_out, "statistics")
    model = _load_any_model(args.model)
    if isinstance(model, CascadeModel):
        model = model.exit_classifier(model.n_nodes - 1)
    data = _load_data(args.data)
    data.require_both_classes()
    H = predict_all(model.weak_classifiers, data.features)
    Hp, Hn = H[: data.m1], H[data.m1 :]
    try:
        qq = normality_qq(Hp @ model.w)
        diag = covariance_diagonality(Hn)
    except ValueError as exc:
        raise CLIError("degenerate_input", str(exc)) from exc
    stats = [("qq_correlation", qq.correlation), ("mean_abs_diag", diag.mean_abs_diag),
             ("mean_abs_offdiag", diag.mean_abs_offdiag), ("diagonality_ratio", diag.ratio)]
    sigma1 = np.atleast_2d(np.cov(Hp, rowvar=False))
    if float(model.w @ sigma1 @ model.w) > 0:
        for fam in FAMILIES:
            wc = worst_case_gamma(model.w, model.b, Hp.mean(axis=0), sigma1, fam)
            stats.append((f"gamma_{fam.value}", wc.gamma))
            stats.append((f"gamma_{fam.value}_in_range", int(wc.in_range)))
    if args.qq_out:
        _write_csv(args.qq_out, ["theoretical_quantile", "sample_quantile"], qq.pairs(), args)
    if args.stats_out:
        _write_csv(args.stats_out, ["statistic", "value"], stats, args)
    return dict(stats)


def cmd_theta_sweep(args):
    _need_file(args.data, "dataset")
    _out_ok(args.out)
    data = _load_data(args.data)
    data.require_both_classes()
    grid = _parse_floats(args.grid)
    if not grid or any(t <= 0 for t in grid):
        raise CLIError("bad_argument", "theta grid must contain positive values")
    weak_seed, neg_seed = _seeds(args.seed, 2)
    n_neg = min(args.n_negatives, max(2, data.m2 // 2))
    rows = []
    for theta in grid:
        args_theta = argparse.Namespace(**{**vars(args), "theta": theta})
        pool = ArrayNegativePool(data.negatives, neg_seed)
        weak = WeakLearnerPool(data.n_features, args.sample_fraction, weak_seed)
        cfg = _cascade_config(args, n_neg)
        cfg.max_nodes = args.nodes
        model = train_cascade(data.positives, pool, _booster_config(args_theta), _targets(args),
                              weak, cfg)
        acc = model.accepts(data.features) if model.exits else np.ones(data.m, bool)
        correct = np.concatenate([acc[: data.m1], ~acc[data.m1 :]])
        rows.append((theta, float(correct.mean()), float(acc[: data.m1].mean()),
                     float(acc[data.m1 :].mean())))
    # highest accuracy, ties to the smaller theta
    best = min(rows, key=lambda r: (-r[1], r[0]))
    if args.out:
        _write_csv(args.out, ["theta", "accuracy", "detection_rate", "fp_rate"], rows, args)
    return {"best_theta": best[0], "accuracy": best[1]}


# ---------------------------------------------------------------- parser

def _add_booster_flags(p, modes=("fisherboost", "lacboost")):
    p.add_argument("--mode", default="fisherboost", choices=list(modes))
    p.add_argument("--theta", type=float, default=0.1)
    p.add_argument("--epsilon", type=float, default=1e-6)
    p.add_argument("--n-max", type=int, default=100)
    p.add_argument("--approx-q", action="store_true", help="diagonal approximation of Q")
    p.add_argument("--nonneg-mean-gap", action="store_true")
    p.add_argument("--delta", type=float, default=1e-8)
    p.add_argument("--offset-target", default="balanced",
                   choices=["balanced", "min_detection", "max_fp"])
    p.add_argument("--eg-max-iters", type=int, default=10_000)
    p.add_argument("--eg-tol", type=float, default=1e-7)
    p.add_argument("--eg-step-schedule", default="adaptive", choices=["theory", "fixed", "adaptive"])
    p.add_argument("--eg-step", type=float, default=None)
    p.add_argument("--eg-lipschitz", type=float, default=None)
    p.add_argument("--sample-fraction", type=float, default=1.0,
                   help="fraction of features searched per weak-learner call")


def _add_cascade_flags(p):
    p.add_argument("--d-min", type=float, default=0.99)
    p.add_argument("--f-max", type=float, default=0.5)
    p.add_argument("--overall-fp", type=float, default=1e-3, help="target overall fp rate F_fp")
    p.add_argument("--n-negatives", type=int, default=500)
    p.add_argument("--max-nodes", type=int, default=20)
    p.add_argument("--max-per-node", type=int, default=100)
    p.add_argument("--schedule", default=None, help="minimum new classifiers per node, e.g. 4,4,8")
    p.add_argument("--strict-schedule", action="store_true")
    p.add_argument("--lac-start-node", type=int, default=3)
    p.add_argument("--standard-cascade", action="store_true",
                   help="each exit uses only its own node's classifiers")


def _add_seed(p):
    p.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cascadeboost", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def command(name, func, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", default=None, help="JSON file overriding flags")
        p.set_defaults(func=func)
        return p

    p = command("gen-toy", cmd_gen_toy, "write a seeded synthetic dataset CSV")
    p.add_argument("--kind", default="gaussians2d", choices=TOY_KINDS)
    p.add_argument("--n-pos", type=int, default=100)
    p.add_argument("--n-neg", type=int, default=400)
    p.add_argument("--out", required=True)
    _add_seed(p)

    p = command("train", cmd_train, "train a boosted classifier")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    _add_booster_flags(p, modes=("fisherboost", "lacboost", "adaboost"))
    p.add_argument("--d-min", type=float, default=None)
    p.add_argument("--f-max", type=float, default=None)
    p.add_argument("--adaboost-offset", default=None, choices=["balanced"],
                   help="AdaBoost offset rule (default: b = 0)")
    p.add_argument("--postprocess", default="none", choices=["none", "lac", "lda"])
    p.add_argument("--postprocess-delta", type=float, default=1e-6)
    _add_seed(p)

    p = command("train-cascade", cmd_train_cascade, "train a multi-exit cascade")
    p.add_argument("--data", default=None, help="dataset CSV; positives and (for --negatives data) negatives")
    p.add_argument("--out", required=True)
    p.add_argument("--metrics-out", default=None)
    p.add_argument("--negatives", default="data", choices=["data", "uniform", "gaussian", "images"])
    p.add_argument("--neg-low", type=float, default=0.0)
    p.add_argument("--neg-high", type=float, default=1.0)
    p.add_argument("--neg-scale", type=float, default=1.0)
    p.add_argument("--max-draws", type=int, default=1_000_000)
    p.add_argument("--positive-windows", default=None)
    p.add_argument("--backgrounds", default=None)
    p.add_argument("--haar-step", type=int, default=2)
    _add_booster_flags(p)
    _add_cascade_flags(p)
    _add_seed(p)

    p = command("eval", cmd_eval, "detection and fp rates of a model on a dataset")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", default=None)

    p = command("roc", cmd_roc, "cascade ROC by sweeping the final-exit offset")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--offsets", default=None, help="comma-separated offsets (default: all distinct)")

    p = command("solve-qp", cmd_solve_qp, "solve a simplex QP given as JSON {n, P, c}")
    p.add_argument("--input", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--solver", default="eg", choices=["eg", "reference"])
    p.add_argument("--eg-max-iters", type=int, default=10_000)
    p.add_argument("--eg-tol", type=float, default=1e-7)
    p.add_argument("--eg-step-schedule", default="adaptive", choices=["theory", "fixed", "adaptive"])
    p.add_argument("--eg-step", type=float, default=None)
    p.add_argument("--eg-lipschitz", type=float, default=None)

    p = command("analyze", cmd_analyze, "margin normality and weak-output covariance diagnostics")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--qq-out", default=None)
    p.add_argument("--stats-out", default=None)

    p = command("theta-sweep", cmd_theta_sweep, "pick theta by short-cascade training accuracy")
    p.add_argument("--data", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--grid", default=THETA_GRID)
    p.add_argument("--nodes", type=int, default=2)
    _add_booster_flags(p)
    _add_cascade_flags(p)
    _add_seed(p)
    return parser


def _apply_config(args, parser):
    if not args.config:
        return args
    _need_file(args.config, "config file")
    try:
        overrides = json.loads(Path(args.config).read_text())
    except ValueError as exc:
        raise CLIError("bad_config", f"{args.config}: {exc}") from exc
    if not isinstance(overrides, dict):
        raise CLIError("bad_config", "config file must hold a JSON object")
    known = set(vars(args)) - {"func", "config", "command"}
    for key, value in overrides.items():
        attr = key.replace("-", "_")
        if attr not in known:
            raise CLIError("bad_config", f"unknown config key {key!r} for {args.command}")
        setattr(args, attr, value)
    return args


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = _apply_config(parser.parse_args(argv), parser)
        result = args.func(args)
    except CLIError as exc:
        _report(exc.kind, str(exc), exc.exit_code)
        return exc.exit_code
    except (ValueError, OSError) as exc:
        _report(type(exc).__name__, str(exc), EXIT_INPUT)
        return EXIT_INPUT
    except Exception as exc:  # noqa: BLE001
        _report(type(exc).__name__, str(exc), EXIT_INTERNAL)
        return EXIT_INTERNAL
    print(json.dumps(_plain(result), sort_keys=True, allow_nan=False))
    return 0


def _plain(o):
    """Convert numpy scalars and non-finite floats so the result line is strict JSON."""
    if isinstance(o, dict):
        return {k: _plain(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_plain(v) for v in o]
    if isinstance(o, (np.floating, np.integer)):
        o = o.item()
    if isinstance(o, float) and not math.isfinite(o):
        return str(o)
    return o


def _report(kind, message, code):
    print(json.dumps({"error": kind, "message": message, "exit_code": code}), file=sys.stderr)


if __name__ == "__main__":
    sys.exit(main())
