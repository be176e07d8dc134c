"""Command-line interface: ``sdlearn <command> [options]``.

Exit codes: 0 success, 2 bad arguments, 3 data errors (unreadable or
inconsistent inputs), 4 training aborted.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from dataclasses import replace

import numpy as np

from . import synthetic
from .classify import (
    MULTICLASS,
    SCHEMES,
    EnsembleModel,
    evaluate,
    load_classifier,
    rec_dictionary_probe,
    save_ensemble,
    train_ensemble,
)
from .data import FULL, LEFT, RIGHT, PatchSpec, concat, extract_patches, kfold_indices
from .data import load_dataset, load_idx, normalize_unit, read_pgm, save_dataset, split
from .errors import DataError, DimensionError, FormatError, SdlError, SolverError, TrainingAborted
from .model import BILINEAR, LINEAR, Hyperparams, SdlModel, save_model
from .sparse_coding import supervised_codes
from .training import (
    DEFAULT_MU_SCHEDULE,
    MODES,
    REC,
    SDL_D,
    TrainConfig,
    error_rate,
    fit_posterior_classifier,
    learn_reconstructive,
    train_sdl,
)

log = logging.getLogger("sdlearn")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_ABORT = 4

DEFAULT_BUDGET = 200_000


class UsageError(Exception):
    """Invalid command-line arguments (exit 2)."""


def _workers_default() -> int:
    try:
        return len(os.sched_getaffinity(0))
    except AttributeError:  # pragma: no cover - not on Linux
        return os.cpu_count() or 1


def _float_list(text: str) -> list:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _int_list(text: str) -> list:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


# --------------------------------------------------------------------------
# argument groups


def _add_data_args(parser, required=True, prefix="", what="dataset"):
    g = parser.add_argument_group(f"{what} input (one source)")
    dest = prefix.replace("-", "_")
    g.add_argument(f"--{prefix}data", dest=f"{dest}data", metavar="FILE",
                   help=f"{what} cache file (SDLDATA1)")
    g.add_argument(f"--{prefix}idx", dest=f"{dest}idx", nargs=2, metavar=("IMAGES", "LABELS"),
                   help=f"{what} as an IDX image file and an IDX label file")
    g.add_argument(f"--{prefix}pgm", dest=f"{dest}pgm", nargs="+", metavar="FILE",
                   help=f"{what} as patches of 8-bit PGM images, one class per file")
    parser.set_defaults(**{f"_{dest}required": required})


def _add_patch_args(parser):
    g = parser.add_argument_group("patch extraction (with --pgm)")
    g.add_argument("--patch-size", type=int, default=12, help="patch side in pixels (>= 1)")
    g.add_argument("--stride", type=int, default=1, help="patch stride in pixels (>= 1)")
    g.add_argument("--region", choices=(LEFT, RIGHT, FULL), default=FULL,
                   help="image half to sample patches from (split at floor(width / 2))")
    g.add_argument("--max-patches", type=int, default=None,
                   help="seeded uniform sample of at most this many patches per image")
    g.add_argument("--subtract-mean", action="store_true",
                   help="remove the mean intensity of every patch")
    parser.add_argument("--no-normalize", action="store_true",
                        help="keep raw signals instead of scaling them to unit l2 norm "
                             "(kappa values assume unit norm)")


def _add_hyper_args(parser):
    g = parser.add_argument_group("model hyperparameters")
    g.add_argument("--k", type=int, default=32, help="dictionary size (atoms, >= 1)")
    g.add_argument("--kappa", type=float, default=None,
                   help="sparsity ratio lambda1 / lambda0 (> 0; default 0.15 unless "
                        "--lambda1 is given)")
    g.add_argument("--lambda0", type=float, default=1.0,
                   help="initial reconstruction weight (> 0; rescaled during training)")
    g.add_argument("--lambda1", type=float, default=None,
                   help="l1 weight (>= 0); must equal kappa * lambda0 if both are given")
    g.add_argument("--lambda2", type=float, default=0.1,
                   help="l2 weight on the decision parameters (>= 0)")
    g.add_argument("--tol", type=float, default=1e-6, help="sparse coding KKT tolerance (> 0)")
    g.add_argument("--max-iter", type=int, default=2000,
                   help="sparse coding iteration cap per problem (>= 1)")


def _hyper_from_args(args, mu_schedule=(0.0,)) -> Hyperparams:
    if args.kappa is not None and args.lambda1 is not None:
        if abs(args.kappa * args.lambda0 - args.lambda1) > 1e-12 * max(1.0, args.lambda1):
            raise UsageError(f"--lambda1 {args.lambda1} is inconsistent with --kappa "
                             f"{args.kappa} and --lambda0 {args.lambda0}")
    if args.lambda1 is not None:
        lam1 = args.lambda1
    else:
        lam1 = (0.15 if args.kappa is None else args.kappa) * args.lambda0
    try:
        return Hyperparams(args.lambda0, lam1, lambda2=args.lambda2, k=args.k,
                           mu_schedule=tuple(mu_schedule), tol=args.tol,
                           max_iter=args.max_iter)
    except SdlError as exc:
        raise UsageError(str(exc)) from None


def _load_data(args, prefix="", seed=0):
    """Read the dataset selected by the ``prefix`` data flags (``None`` if absent)."""
    dest = prefix.replace("-", "_")
    sources = [s for s in ("data", "idx", "pgm") if getattr(args, f"{dest}{s}", None)]
    if len(sources) > 1:
        raise UsageError(f"give only one of --{prefix}data, --{prefix}idx, --{prefix}pgm")
    if not sources:
        if getattr(args, f"_{dest}required"):
            raise UsageError(f"a dataset is required (--{prefix}data, --{prefix}idx or "
                             f"--{prefix}pgm)")
        return None
    value = getattr(args, f"{dest}{sources[0]}")
    paths = [value] if isinstance(value, str) else list(value)
    for path in paths:
        if not os.path.isfile(path):
            raise UsageError(f"--{prefix}{sources[0]}: no such file {path!r}")
    if sources[0] == "data":
        data = load_dataset(paths[0])
    elif sources[0] == "idx":
        with open(paths[0], "rb") as fi, open(paths[1], "rb") as fl:
            data = load_idx(fi, fl)
    else:
        spec = PatchSpec(args.patch_size, args.stride, args.region)
        labels = [os.path.splitext(os.path.basename(p))[0] for p in paths]
        parts = []
        for c, path in enumerate(paths):
            with open(path, "rb") as fh:
                image = read_pgm(fh)
            parts.append(extract_patches(image, spec, c, labels, args.max_patches, seed + c,
                                         args.subtract_mean))
        data = concat(parts)
    if getattr(args, "no_normalize", False):
        log.warning("normalization disabled: kappa and lambda ranges assume unit-norm signals")
    elif not data.normalized:
        report = {}
        data = normalize_unit(data, drop_zero=True, report=report)
        if report["dropped"]:
            log.warning("dropped %d zero signal(s) before normalization", report["dropped"])
    return data


def _write_text(path, text):
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)


def _run_config(args) -> dict:
    skip = {"func"}
    return {k: v for k, v in sorted(vars(args).items())
            if k not in skip and not k.startswith("_")}


# --------------------------------------------------------------------------
# commands


def _mu_schedule(args):
    if args.mu is not None:
        return tuple(args.mu)
    if args.mu_steps is not None:
        if args.mu_steps < 1:
            raise UsageError("--mu-steps must be >= 1")
        if args.mu_steps == 1:
            return (0.0,)
        return tuple(round(v, 12) for v in np.linspace(0.0, 1.0, args.mu_steps))
    return DEFAULT_MU_SCHEDULE


def cmd_train(args) -> int:
    data = _load_data(args, seed=args.seed)
    val = _load_data(args, "val-", seed=args.seed)
    if val is None and args.val_fraction > 0:
        data, val, _ = split(data, (1.0 - args.val_fraction, args.val_fraction, 0.0), args.seed)
    hyper = _hyper_from_args(args, _mu_schedule(args))
    try:
        config = TrainConfig(hyper, outer_iterations_per_mu=args.outer_iterations,
                             gamma_rescale_iterations=args.gamma_iterations, seed=args.seed,
                             variant=args.variant, objective_mode=args.mode,
                             rec_iterations=args.rec_iterations, workers=args.workers)
    except SdlError as exc:
        raise UsageError(str(exc)) from None
    members = {"multiclass": 1, "pairwise": data.p * (data.p - 1) // 2,
               "one-vs-all": data.p}[args.scheme]
    solves = data.m * data.p * members if args.scheme == MULTICLASS else data.m * 2 * members
    if solves > args.budget:
        log.warning("about %d supervised coding problems per outer iteration exceeds the "
                    "desk-scale budget of %d (--budget)", solves, args.budget)
    traces = []
    if args.scheme == MULTICLASS:
        model, trace = train_sdl(data, val, config)
        traces.append(trace)
        save_model(model, args.out)
        classifier = model
    else:
        classifier = train_ensemble(data, args.scheme, config, val, traces)
        save_ensemble(classifier, args.out)
    trace_path = args.trace or args.out + ".trace.jsonl"
    with open(trace_path, "w", encoding="utf-8") as fh:
        for q, trace in enumerate(traces):
            for record in trace.records:
                fh.write(json.dumps(dict(record, member=q), sort_keys=True) + "\n")
    with open(args.out + ".run.json", "w", encoding="utf-8") as fh:
        json.dump(_run_config(args), fh, sort_keys=True, indent=2)
        fh.write("\n")
    for q, trace in enumerate(traces):
        last = trace.records[-1]
        val_err = trace.path[-1]["validation_error"] if trace.path else None
        if trace.chosen_mu is not None:
            val_err = next(p["validation_error"] for p in trace.path
                           if p["mu"] == trace.chosen_mu)
        prefix = f"member {q}: " if len(traces) > 1 else ""
        print(f"{prefix}final objective {last['objective']:.6g}, chosen mu "
              f"{trace.chosen_mu}, validation error "
              + ("n/a" if val_err is None else f"{100 * val_err:.2f}%"))
    return EXIT_OK


def cmd_eval(args) -> int:
    if not os.path.isfile(args.model):
        raise UsageError(f"--model: no such file {args.model!r}")
    classifier = load_classifier(args.model)
    data = _load_data(args, seed=args.seed)
    n = classifier.n
    if data.n != n:
        raise DimensionError(f"dataset signal dimension n={data.n} does not match the model "
                             f"dimension n={n}")
    report = evaluate(data, classifier, workers=args.workers, verbose=args.details)
    _write_text(args.report, report.to_json())
    print(f"error rate: {100 * report.error_rate:.2f}%")
    return EXIT_OK


def cmd_gridsearch(args) -> int:
    data = _load_data(args, seed=args.seed)
    grid = [(k, kappa, lam2) for k in args.k for kappa in args.kappa
            for lam2 in (args.lambda2 or [0.1])]
    if not grid:
        raise UsageError("empty grid")
    folds = list(kfold_indices(data, args.folds, args.seed))
    rows = []
    for k, kappa, lam2 in grid:
        try:
            hyper = Hyperparams.from_kappa(args.lambda0, kappa, lambda2=lam2, k=k,
                                           tol=args.tol, max_iter=args.max_iter)
            config = TrainConfig(hyper, objective_mode=REC, seed=args.seed, variant=args.variant,
                                 rec_iterations=args.rec_iterations, workers=args.workers)
        except SdlError as exc:
            raise UsageError(str(exc)) from None
        errors = []
        for train_idx, test_idx in folds:
            train, test = data.subset(train_idx), data.subset(test_idx)
            if np.any(train.class_counts() == 0):
                raise DataError("a class is absent from a training fold")
            D = learn_reconstructive(train, hyper, config)
            params = fit_posterior_classifier(train, D, hyper, args.variant, args.workers)
            errors.append(error_rate(test.signals, test.labels, D, params, hyper, args.workers))
        rows.append((float(np.mean(errors)), float(np.std(errors)), k, kappa, lam2))
        log.info("k=%d kappa=%g lambda2=%g cv error %.4f", k, kappa, lam2, rows[-1][0])
    rows.sort(key=lambda r: (r[0], r[2], r[3], r[4]))
    if len(rows) < args.keep:
        log.warning("grid has %d point(s), fewer than the %d kept; keeping all", len(rows),
                    args.keep)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["rank", "k", "kappa", "lambda2", "mean_error", "std_error", "kept"])
    for rank, (mean, std, k, kappa, lam2) in enumerate(rows, 1):
        writer.writerow([rank, k, repr(kappa), repr(lam2), repr(mean), repr(std),
                         int(rank <= args.keep)])
    _write_text(args.out, buf.getvalue())
    return EXIT_OK


def cmd_probe(args) -> int:
    if not args.mu:
        raise UsageError("--mu needs at least one value")
    data = _load_data(args, seed=args.seed)
    test = _load_data(args, "test-", seed=args.seed)
    if test is None:
        data, val, test = split(data, (0.5, 0.25, 0.25), args.seed)
    else:
        data, val, _ = split(data, (0.75, 0.25, 0.0), args.seed)
    if test is None:
        raise DataError("the test split is empty")
    hyper = _hyper_from_args(args, sorted(args.mu))
    try:
        config = TrainConfig(hyper, outer_iterations_per_mu=args.outer_iterations,
                             gamma_rescale_iterations=args.gamma_iterations, seed=args.seed,
                             objective_mode=SDL_D, workers=args.workers, keep_path=True)
    except SdlError as exc:
        raise UsageError(str(exc)) from None
    _, trace = train_sdl(data, val, config)
    kappa = hyper.lambda1 / hyper.lambda0
    by_mu = {entry["mu"]: entry["model"] for entry in trace.path}
    lines = []
    for mu in args.mu:
        err = rec_dictionary_probe(data, test, by_mu[mu].dictionary, kappa,
                                   lambda2=args.probe_lambda2, workers=args.workers)
        lines.append(f"{mu!r},{err!r}\n")
    _write_text(args.out, "".join(lines))
    return EXIT_OK


def _read_signals(path) -> np.ndarray:
    if path.endswith(".npy"):
        X = np.load(path, allow_pickle=False)
    else:
        try:
            X = np.loadtxt(path, dtype=np.float64, ndmin=2, delimiter=None)
        except ValueError as exc:
            raise DataError(f"cannot parse signals in {path!r}: {exc}") from None
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.ndim != 2:
        raise DataError(f"signals must form a matrix, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise DataError("signals contain non-finite values")
    return X


def cmd_code(args) -> int:
    for flag, path in (("--model", args.model), ("--signals", args.signals)):
        if not os.path.isfile(path):
            raise UsageError(f"{flag}: no such file {path!r}")
    model = load_classifier(args.model)
    if isinstance(model, EnsembleModel):
        if model.scheme != MULTICLASS:
            raise UsageError("code needs a single model file, not an ensemble")
        model = model.members[0][1]
    X = _read_signals(args.signals)
    if X.shape[1] != model.n:
        raise DimensionError(f"signal dimension n={X.shape[1]} does not match the model "
                             f"dimension n={model.n}")
    if args.normalize:
        norms = np.linalg.norm(X, axis=1)
        if np.any(norms == 0):
            raise DataError("cannot normalize a zero signal")
        X = X / norms[:, None]
    classes = list(range(model.p)) if args.cls is None else [args.cls]
    if any(c < 0 or c >= model.p for c in classes):
        raise UsageError(f"--class must lie in 0..{model.p - 1}")
    m = X.shape[0]
    if args.cls is None:
        alphas, S, info = supervised_codes(X, model.dictionary, model.params, model.hyper,
                                           workers=args.workers)
    else:
        alphas, S, info = supervised_codes(X, model.dictionary, model.params, model.hyper,
                                           classes=np.full(m, args.cls), workers=args.workers)
    out = []
    # adding 0.0 turns signed zeros into plain zeros in the JSON
    for j in range(m):
        for c in classes:
            out.append({"signal": j, "class": c, "label": model.class_labels[c],
                        "objective": float(S[j, c]), "iterations": int(info[j, c, 1]),
                        "kkt_residual": float(info[j, c, 2]),
                        "alpha": [float(v) + 0.0 for v in alphas[j, c]]})
    _write_text(args.out, json.dumps({"codes": out}, sort_keys=True, indent=2) + "\n")
    return EXIT_OK


def cmd_synth(args) -> int:
    if args.kind == "shared":
        data = synthetic.shared_dictionary_classes(args.m_per_class, n=args.n, seed=args.seed)
    elif args.kind == "sign":
        data = synthetic.sign_interaction_classes(args.m_per_class, n=args.n,
                                                  nuisance_atoms=6, nuisance_active=3,
                                                  noise=0.2, seed=args.seed)
    else:
        data = synthetic.separable_codes(args.m_per_class, n=args.n, seed=args.seed)
    save_dataset(data, args.out)
    print(f"wrote {data.m} signals of dimension {data.n} ({data.p} classes) to {args.out}")
    return EXIT_OK


# --------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="seed for every random choice")
    common.add_argument("--workers", type=int, default=_workers_default(),
                        help="worker threads for sparse coding (default: available CPUs)")
    common.add_argument("--verbose", "-v", action="count", default=0,
                        help="more logging (repeat for debug output)")
    common.add_argument("--config", metavar="JSON",
                        help="run configuration file (as written by train) supplying defaults")

    parser = argparse.ArgumentParser(prog="sdlearn", parents=[common],
                                     description="Supervised dictionary learning toolkit.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", parents=[common], help="learn a model or an ensemble")
    _add_data_args(p)
    _add_data_args(p, required=False, prefix="val-", what="validation set")
    _add_patch_args(p)
    _add_hyper_args(p)
    p.add_argument("--mode", choices=MODES, default=SDL_D,
                   help="rec: reconstructive + a posteriori classifier; sdl-g: mu = 0; "
                        "sdl-d: continuation over the mu schedule")
    p.add_argument("--variant", choices=(LINEAR, BILINEAR), default=LINEAR)
    p.add_argument("--scheme", choices=SCHEMES, default=MULTICLASS)
    p.add_argument("--mu", type=_float_list, default=None,
                   help="explicit increasing mu schedule in [0, 1], comma-separated")
    p.add_argument("--mu-steps", type=int, default=None,
                   help="evenly spaced schedule 0..1 with this many values (default 11)")
    p.add_argument("--outer-iterations", type=int, default=5,
                   help="block coordinate descent iterations per mu (>= 1)")
    p.add_argument("--gamma-iterations", type=int, default=10,
                   help="initial iterations with lambda rescaling (>= 0)")
    p.add_argument("--rec-iterations", type=int, default=30,
                   help="iterations of reconstructive dictionary learning (>= 1)")
    p.add_argument("--val-fraction", type=float, default=0.2,
                   help="fraction of each class held out for validation when no "
                        "validation set is given (0 disables)")
    p.add_argument("--budget", type=int, default=DEFAULT_BUDGET,
                   help="warn above this many supervised coding problems per iteration")
    p.add_argument("--out", required=True, help="model output file")
    p.add_argument("--trace", default=None, help="trace output (default: OUT.trace.jsonl)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="evaluate a model on a labeled set")
    _add_data_args(p)
    _add_patch_args(p)
    p.add_argument("--model", required=True, help="model or ensemble file")
    p.add_argument("--report", default="-", help="JSON report file (default: stdout)")
    p.add_argument("--details", action="store_true",
                   help="include per-sample predictions and costs in the report")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gridsearch", parents=[common],
                       help="cross-validate (k, kappa) with the reconstructive method")
    _add_data_args(p)
    _add_patch_args(p)
    p.add_argument("--k", type=_int_list, required=True, help="dictionary sizes, e.g. 24,32")
    p.add_argument("--kappa", type=_float_list, required=True, help="kappa values, e.g. 0.13,0.15")
    p.add_argument("--lambda2", type=_float_list, default=None,
                   help="optional lambda2 values (default 0.1)")
    p.add_argument("--lambda0", type=float, default=1.0, help="reconstruction weight (> 0)")
    p.add_argument("--variant", choices=(LINEAR, BILINEAR), default=LINEAR)
    p.add_argument("--folds", type=int, default=5, help="cross-validation folds (>= 2)")
    p.add_argument("--keep", type=int, default=3, help="number of best grid points kept")
    p.add_argument("--rec-iterations", type=int, default=30)
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--max-iter", type=int, default=2000)
    p.add_argument("--out", default="-", help="ranking CSV (default: stdout)")
    p.set_defaults(func=cmd_gridsearch)

    p = sub.add_parser("probe", parents=[common],
                       help="reconstructive-coding error of dictionaries along the mu path")
    _add_data_args(p)
    _add_data_args(p, required=False, prefix="test-", what="test set")
    _add_patch_args(p)
    _add_hyper_args(p)
    p.add_argument("--mu", type=_float_list, required=True,
                   help="increasing mu values, comma-separated")
    p.add_argument("--outer-iterations", type=int, default=5)
    p.add_argument("--gamma-iterations", type=int, default=10)
    p.add_argument("--probe-lambda2", type=float, default=1e-3,
                   help="l2 weight of the linear probe classifier")
    p.add_argument("--out", default="-", help="curve file, lines 'mu,error' (default: stdout)")
    p.set_defaults(func=cmd_probe)

    p = sub.add_parser("code", parents=[common], help="supervised sparse codes as JSON")
    p.add_argument("--model", required=True, help="model file")
    p.add_argument("--signals", required=True,
                   help="signals, one per row: whitespace-separated text or .npy")
    p.add_argument("--class", dest="cls", type=int, default=None,
                   help="code for this class index only (default: every class)")
    p.add_argument("--normalize", action="store_true", help="scale signals to unit norm first")
    p.add_argument("--out", default="-", help="JSON output (default: stdout)")
    p.set_defaults(func=cmd_code)

    p = sub.add_parser("synth", parents=[common], help="write a synthetic dataset cache")
    p.add_argument("--kind", choices=("shared", "sign", "separable"), default="shared")
    p.add_argument("--m-per-class", type=int, default=400)
    p.add_argument("--n", type=int, default=16)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)
    return parser


def _config_defaults(argv) -> dict:
    """Defaults read from ``--config FILE`` if present on the command line."""
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return {}
    try:
        with open(known.config, encoding="utf-8") as fh:
            values = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"--config: {exc}") from None
    if not isinstance(values, dict):
        raise UsageError("--config must hold a JSON object")
    values.pop("command", None)
    values.pop("config", None)
    return values


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        defaults = _config_defaults(argv)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"sdlearn: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if defaults:
        for action in parser._subparsers._group_actions:
            for subparser in action.choices.values():
                known = {a.dest for a in subparser._actions}
                subparser.set_defaults(**{k: v for k, v in defaults.items() if k in known})
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s",
                        stream=sys.stderr, force=True)
    try:
        if args.workers < 1:
            raise UsageError("--workers must be >= 1")
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"sdlearn: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, DimensionError, FormatError, OSError) as exc:
        print(f"sdlearn: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (TrainingAborted, SolverError) as exc:
        print(f"sdlearn: training aborted: {exc}", file=sys.stderr)
        return EXIT_ABORT
    except SdlError as exc:
        print(f"sdlearn: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
