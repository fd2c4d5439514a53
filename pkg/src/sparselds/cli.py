"""Command-line interface.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

import argparse
import json
import logging
import sys

import numpy as np

from .core import random_sparse_model, simulate_dataset
from .data_io import (EIGHT_HOURS, data_fingerprint, load_model, load_sequences, save_model,
                      write_raw_csv, write_report)
from .evaluation import run_benchmark, sample_tasks, _evaluate_many
from .exceptions import DataError, NumericalFailureError, RejectedInputError
from .forecasting import forecast
from .learning import FitConfig, em_fit

log = logging.getLogger("sparselds")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 1, 2, 3
DEFAULT_STATES = "2,3,4,5,6,7,8,9,12,15"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _int_list(text):
    try:
        vals = [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")
    if not vals or min(vals) < 1:
        raise argparse.ArgumentTypeError("state counts must be positive integers")
    return vals


def _float_list(text):
    try:
        vals = [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")
    if not vals or min(vals) < 0:
        raise argparse.ArgumentTypeError("betas must be non-negative")
    return vals


def _fit_flags(p):
    p.add_argument("--max-iter", type=int, default=200, help="EM iterations (em_max_iter)")
    p.add_argument("--tol", type=float, default=1e-6, help="relative EM objective change (em_tol)")
    p.add_argument("--prox-max-iter", type=int, default=500)
    p.add_argument("--prox-tol", type=float, default=1e-8)
    p.add_argument("--jitter", type=float, default=1e-9)


def build_parser():
    parser = _Parser(prog="sparselds", description="Sparse linear dynamical systems by MAP-EM.")
    parser.add_argument("--config", help="JSON file whose keys override flag defaults")
    parser.add_argument("--seed", type=int, default=0, help="global seed")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("simulate", help="write synthetic series from a random sparse model")
    p.add_argument("--states", type=int, default=4)
    p.add_argument("--obs-dim", type=int, default=3)
    p.add_argument("--length", type=int, default=30)
    p.add_argument("--num-series", type=int, default=100)
    p.add_argument("--sparsity", type=float, default=0.5)
    p.add_argument("--state-noise", type=float, default=0.05)
    p.add_argument("--obs-noise", type=float, default=0.3)
    p.add_argument("--initial-variance", type=float, default=3.0,
                   help="initial state variance; negative means the stationary covariance")
    p.add_argument("--model-seed", type=int, default=None,
                   help="seed of the ground-truth model (defaults to --seed)")
    p.add_argument("--out", required=True)
    p.add_argument("--model-out", help="also save the generating model")

    p = sub.add_parser("train", help="fit a model (beta 0 trains an ordinary LDS)")
    p.add_argument("--input", required=True)
    p.add_argument("--states", type=int, required=True)
    p.add_argument("--beta", type=float, default=0.0)
    p.add_argument("--step-seconds", type=int, default=EIGHT_HOURS)
    _fit_flags(p)
    p.add_argument("--model-out", required=True)

    p = sub.add_parser("predict", help="predict observation phi from observations 1..psi")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--psi", type=int, required=True)
    p.add_argument("--phi", type=int, required=True)
    p.add_argument("--step-seconds", type=int, default=EIGHT_HOURS)

    p = sub.add_parser("evaluate", help="AMAE of a model on sampled prediction tasks")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--tasks-per-series", type=int, default=5)
    p.add_argument("--repeats", type=int, default=10)
    p.add_argument("--step-seconds", type=int, default=EIGHT_HOURS)
    p.add_argument("--out", help="write the result as JSON")

    p = sub.add_parser("sweep", help="OLDS vs SLDS benchmark over state counts and betas")
    p.add_argument("--train", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--states", type=_int_list, default=_int_list(DEFAULT_STATES))
    p.add_argument("--betas", type=_float_list, default=_float_list("0,1,3,10,30,100"))
    p.add_argument("--repeats", type=int, default=10)
    p.add_argument("--tasks-per-series", type=int, default=5)
    p.add_argument("--select-beta", action="store_true",
                   help="pick one beta per state count on a 20%% validation split")
    p.add_argument("--step-seconds", type=int, default=EIGHT_HOURS)
    _fit_flags(p)
    p.add_argument("--out-dir", required=True)
    return parser


def _apply_config(parser, argv):
    """Re-parse with defaults taken from --config, so explicit flags still win."""
    args = parser.parse_args(argv)
    if not args.config:
        return args
    try:
        with open(args.config, encoding="utf-8") as fh:
            overrides = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read config file {args.config}: {exc}") from exc
    if not isinstance(overrides, dict):
        raise UsageError("config file must hold a JSON object")
    known = set(vars(args))
    unknown = sorted(k for k in overrides if k.replace("-", "_") not in known)
    if unknown:
        raise UsageError(f"unknown config keys: {', '.join(unknown)}")
    overrides = {k.replace("-", "_"): v for k, v in overrides.items()}
    parser.set_defaults(**{k: v for k, v in overrides.items() if k in ("seed", "verbose")})
    for action in parser._subparsers._group_actions:
        for sp in action.choices.values():
            sp.set_defaults(**{k: v for k, v in overrides.items()
                               if any(a.dest == k for a in sp._actions)})
    return parser.parse_args(argv)


def _fit_config(args, l, beta):
    return FitConfig(l=l, beta=beta, em_max_iter=args.max_iter, em_tol=args.tol,
                     prox_max_iter=args.prox_max_iter, prox_tol=args.prox_tol,
                     jitter=args.jitter, seed=args.seed)


def _check_positive(**kw):
    for k, v in kw.items():
        if v is None or v < 1:
            raise UsageError(f"--{k.replace('_', '-')} must be a positive integer")


def cmd_simulate(args):
    _check_positive(states=args.states, obs_dim=args.obs_dim, length=args.length,
                    num_series=args.num_series)
    if not 0.0 <= args.sparsity < 1.0:
        raise UsageError("--sparsity must be in [0, 1)")
    iv = None if args.initial_variance < 0 else args.initial_variance
    model_seed = args.seed if args.model_seed is None else args.model_seed
    params = random_sparse_model(args.states, args.obs_dim, args.sparsity, seed=model_seed,
                                 state_noise=args.state_noise, obs_noise=args.obs_noise,
                                 initial_variance=iv)
    seqs = simulate_dataset(params, args.num_series, args.length, seed=args.seed)
    write_raw_csv(args.out, seqs)
    log.info("wrote %d series to %s", len(seqs), args.out)
    if args.model_out:
        save_model(params, {"source": "simulate", "model_seed": model_seed}, args.model_out)


def cmd_train(args):
    _check_positive(states=args.states)
    if args.beta < 0:
        raise UsageError("--beta must be >= 0")
    seqs = load_sequences(args.input, args.step_seconds)
    cfg = _fit_config(args, args.states, args.beta)
    params, diag = em_fit(seqs, cfg)
    log.info("EM finished after %d iterations (converged=%s), objective %.6f",
             diag.iterations_run, diag.converged, diag.final_objective)
    meta = {"beta": args.beta, "method": "OLDS" if args.beta == 0 else "SLDS",
            "iterations": diag.iterations_run, "converged": diag.converged,
            "final_objective": diag.final_objective, "objective_anomalies": diag.anomaly_count,
            "zero_fraction_A": diag.zero_fraction_A, "data_fingerprint": data_fingerprint(seqs),
            "num_series": len(seqs), "seed": args.seed}
    save_model(params, meta, args.model_out)
    log.info("model written to %s", args.model_out)


def cmd_predict(args):
    if args.psi < 1 or args.phi <= args.psi:
        raise UsageError("--psi and --phi must satisfy 1 <= psi < phi")
    params, _ = load_model(args.model)
    seqs = load_sequences(args.input, args.step_seconds)
    h = args.phi - args.psi
    for s in seqs:
        if s.T < args.psi:
            raise DataError(f"series {s.series_id!r} has only {s.T} observations (< psi)")
        yhat = forecast(params, s.prefix(args.psi), h).horizon_values[-1]
        print(",".join([str(s.series_id)] + [repr(float(v)) for v in yhat]))


def cmd_evaluate(args):
    _check_positive(tasks_per_series=args.tasks_per_series, repeats=args.repeats)
    params, _ = load_model(args.model)
    seqs = load_sequences(args.input, args.step_seconds)
    task_lists = [sample_tasks(seqs, args.tasks_per_series, np.random.SeedSequence([args.seed, r]))
                  for r in range(args.repeats)]
    vals = _evaluate_many(params, seqs, task_lists)
    out = {"amae": vals, "mean": float(np.mean(vals)),
           "std": float(np.std(vals, ddof=1)) if len(vals) > 1 else 0.0,
           "tasks_per_repeat": len(task_lists[0])}
    print(f"AMAE mean {out['mean']:.6f} std {out['std']:.6f} over {args.repeats} repeats")
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(out, fh, indent=1)
            fh.write("\n")


def cmd_sweep(args):
    _check_positive(repeats=args.repeats, tasks_per_series=args.tasks_per_series)
    train = load_sequences(args.train, args.step_seconds)
    test = load_sequences(args.test, args.step_seconds)
    template = _fit_config(args, 1, 0.0)

    def progress(cell):
        status = f"failed: {cell.failed}" if cell.failed else f"AMAE {cell.mean:.4f} +/- {cell.std:.4f}"
        log.info("%s states=%d %s", cell.row_key, cell.n_states, status)

    result = run_benchmark(train, test, args.states, args.betas, args.repeats, template,
                           seed=args.seed, tasks_per_series=args.tasks_per_series,
                           select_beta=args.select_beta, progress=progress)
    paths = write_report(result, args.out_dir)
    log.info("report written: %s", ", ".join(paths.values()))


COMMANDS = {"simulate": cmd_simulate, "train": cmd_train, "predict": cmd_predict,
            "evaluate": cmd_evaluate, "sweep": cmd_sweep}


def run(argv=None):
    parser = build_parser()
    stage = "argument parsing"
    try:
        args = _apply_config(parser, argv)
        if args.command is None:
            raise UsageError("a subcommand is required: " + ", ".join(COMMANDS))
        logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                            format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr,
                            force=True)
        effective = {k: v for k, v in sorted(vars(args).items())}
        log.info("effective configuration: %s", json.dumps(effective, default=str))
        stage = args.command
        COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error ({stage}): {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalFailureError as exc:
        print(f"numerical failure ({stage}): {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (DataError, RejectedInputError, OSError) as exc:
        print(f"data error ({stage}): {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
