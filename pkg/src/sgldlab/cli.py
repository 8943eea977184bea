"""Command-line entry point: ``sgldlab <command> [options]``.

Experiment commands read an optional JSON config whose keys override the
experiment defaults (``seed`` and ``threads`` may also appear there), write
``<experiment>.csv`` and ``meta.json`` into ``--out`` and exit with status 1
when a check fails (always for ``oracle-validate``, otherwise with
``--strict``). Utility commands: ``gen-data``, ``run``, ``oracle`` and ``mh``.
"""
from __future__ import annotations

import argparse
import json
import math
import sys
import warnings
from pathlib import Path

import numpy as np

from .estimators import Functional, bootstrap_se
from .experiments import DEFAULTS, EXPERIMENTS, ExperimentSpec, run_experiment
from .gradients import CV, FULL, NAIVE, make_scheme
from .io import config_hash, load_dataset, save_dataset, write_csv, write_json
from .models import GaussianConjugateModel, generate_gaussian_data, generate_logreg_data
from .oracle import oracle_bias, oracle_inputs_for, oracle_mean, oracle_mse, oracle_variance
from .reference import MhConfig, mh_sample
from .sampler import (CONVENTIONS, DivergenceError, InitialCondition, RunConfig, StabilityError, run_paths,
                      run_rr_paths)

__all__ = ["main", "build_parser", "load_config"]


def load_config(path):
    """Read a JSON experiment config; ``{"params": {...}}`` or a flat mapping."""
    if path is None:
        return {}
    cfg = json.loads(Path(path).read_text())
    if not isinstance(cfg, dict):
        raise ValueError("config must be a JSON object")
    return cfg


def _add_experiment(sub, name):
    p = sub.add_parser(name, help=f"run the {name} experiment")
    p.add_argument("--config", help="JSON file overriding the default parameters")
    p.add_argument("--out", default="results", help="output directory (default: results)")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--allow-unstable", action="store_true", help="run grid points beyond the stability limit")
    if "horizon_const" in DEFAULTS[name]:
        p.add_argument("--horizon-const", type=float, default=None, help="c in T = c log(1/eps) / N")
    p.add_argument("--strict", action="store_true", help="exit with status 1 if any check fails")
    p.set_defaults(handler=_cmd_experiment, experiment=name)


def _model_args(p):
    p.add_argument("--data", help="dataset CSV written by gen-data")
    p.add_argument("--N", type=int, default=1000, help="Gaussian data size when --data is absent")
    p.add_argument("--data-seed", type=int, default=0)


def build_parser():
    parser = argparse.ArgumentParser(prog="sgldlab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in EXPERIMENTS:
        _add_experiment(sub, name)

    g = sub.add_parser("gen-data", help="generate a synthetic dataset")
    g.add_argument("--model", choices=("gaussian", "logistic"), default="gaussian")
    g.add_argument("--N", type=int, required=True)
    g.add_argument("--d", type=int, default=3)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--sigma-theta-sq", type=float, default=1.0)
    g.add_argument("--sigma-y-sq", type=float, default=1.0)
    g.add_argument("--theta-true", type=float, default=None)
    g.add_argument("--prior-variance", type=float, default=10.0)
    g.add_argument("--out", required=True, help="CSV path; metadata goes next to it as .json")
    g.set_defaults(handler=_cmd_gen_data)

    r = sub.add_parser("run", help="simulate independent paths and report an estimate")
    _model_args(r)
    r.add_argument("--h", type=float, required=True)
    hz = r.add_mutually_exclusive_group(required=True)
    hz.add_argument("--T", type=float)
    hz.add_argument("--steps", type=int)
    r.add_argument("--paths", type=int, default=100)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--threads", type=int, default=1)
    r.add_argument("--scheme", choices=(FULL, NAIVE, CV), default=FULL)
    r.add_argument("--batch", type=int, default=None)
    r.add_argument("--init", default=None, help="comma-separated starting point (default: scheme dependent)")
    r.add_argument("--init-sd", type=float, default=0.0)
    r.add_argument("--convention", choices=CONVENTIONS, default="langevin")
    r.add_argument("--rr", action="store_true", help="Richardson-Romberg pairs (2 fine - coarse)")
    r.add_argument("--allow-unstable", action="store_true")
    r.add_argument("--out", default=None, help="directory for paths.csv and meta.json")
    r.set_defaults(handler=_cmd_run)

    o = sub.add_parser("oracle", help="closed-form moments of the Gaussian chain")
    _model_args(o)
    o.add_argument("--h", type=float, required=True)
    o.add_argument("--n", type=int, default=None, help="batch size (default: full gradient)")
    o.add_argument("--M", type=int, default=None, help="steps (default: stationary)")
    o.add_argument("--P", type=int, default=1)
    o.add_argument("--theta0", type=float, default=0.0)
    o.set_defaults(handler=_cmd_oracle)

    m = sub.add_parser("mh", help="Metropolis-Hastings reference moments")
    _model_args(m)
    m.add_argument("--steps", type=int, default=200_000)
    m.add_argument("--burn-in", type=int, default=20_000)
    m.add_argument("--thin", type=int, default=1)
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--out", default=None, help="JSON file for the summary")
    m.set_defaults(handler=_cmd_mh)
    return parser


def _load_model(args):
    if args.data:
        return load_dataset(args.data)
    return generate_gaussian_data(args.N, seed=args.data_seed)


def _cmd_experiment(args):
    cfg = load_config(args.config)
    params = dict(cfg.get("params", {k: v for k, v in cfg.items() if k not in ("seed", "threads")}))
    if args.allow_unstable:
        params["allow_unstable"] = True
    if getattr(args, "horizon_const", None) is not None:
        params["horizon_const"] = args.horizon_const
    seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
    threads = args.threads if args.threads is not None else int(cfg.get("threads", 1))
    spec = ExperimentSpec(args.experiment, params, seed=seed, workers=threads)
    result = run_experiment(spec)
    path = result.write(args.out)
    failed = [c["name"] for c in result.checks if not c["passed"]]
    print(f"wrote {path} ({len(result.rows)} rows); checks passed {len(result.checks) - len(failed)}"
          f"/{len(result.checks)}")
    for name in failed:
        print(f"FAIL {name}", file=sys.stderr)
    strict = args.strict or args.experiment == "oracle-validate"
    return 1 if failed and strict else 0


def _cmd_gen_data(args):
    if args.model == "gaussian":
        model = generate_gaussian_data(args.N, args.sigma_theta_sq, args.sigma_y_sq, seed=args.seed,
                                       theta_true=args.theta_true)
    else:
        model = generate_logreg_data(args.d, args.N, args.prior_variance, seed=args.seed)
    path = save_dataset(model, args.out, seed=args.seed)
    print(f"wrote {path}")
    return 0


def _cmd_run(args):
    model = _load_model(args)
    scheme = make_scheme(model, args.scheme, args.batch)
    initial = None
    if args.init is not None:
        mean = np.array([float(v) for v in args.init.split(",")])
        initial = InitialCondition.gaussian(mean, args.init_sd)
    cfg = RunConfig(h=args.h, T=args.T, steps=args.steps, paths=args.paths, seed=args.seed, scheme=scheme,
                    initial=initial, convention=args.convention, allow_unstable=args.allow_unstable,
                    workers=args.threads)
    try:
        if args.rr:
            coarse, fine = run_rr_paths(model, cfg)
            batch = fine
            states = 2.0 * fine.final_states - coarse.final_states
            cost = coarse.total_cost + fine.total_cost
        else:
            batch = run_paths(model, cfg)
            states, cost = batch.final_states, batch.total_cost
    except (StabilityError, DivergenceError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    summary = {"config": cfg.summary(), "config_hash": config_hash(cfg.summary()), "rr": args.rr,
               "total_term_evals": cost, "setup_term_evals": batch.setup_cost, "coordinates": []}
    for j in range(model.dim):
        vals = Functional.coordinate(j)(states)
        se = bootstrap_se(vals, 1000) if vals.size >= 2 else 0.0
        summary["coordinates"].append({"index": j, "mean": math.fsum(vals) / vals.size, "bootstrap_se": se})
    if args.out:
        rows = [{"path_id": int(pid), **{f"theta_{j + 1}": float(v) for j, v in enumerate(x)}}
                for pid, x in zip(batch.path_ids, states)]
        write_csv(Path(args.out) / "paths.csv", rows, ["path_id"] + [f"theta_{j + 1}" for j in range(model.dim)])
        write_json(Path(args.out) / "meta.json", summary)
    print(json.dumps(summary["coordinates"]))
    return 0


def _cmd_oracle(args):
    model = _load_model(args)
    if not isinstance(model, GaussianConjugateModel):
        print("error: the oracle needs the Gaussian model", file=sys.stderr)
        return 2
    M = math.inf if args.M is None else args.M
    inp = oracle_inputs_for(model, args.h, args.n, M=M, P=args.P, theta0_mean=args.theta0)
    out = {"A": inp.A, "var_B": inp.var_B, "mean": oracle_mean(inp), "bias": oracle_bias(inp),
           "variance": oracle_variance(inp), "mse": oracle_mse(inp)}
    print(json.dumps(out))
    return 0


def _cmd_mh(args):
    model = _load_model(args)
    res = mh_sample(model, MhConfig(args.steps, args.burn_in, args.thin, seed=args.seed))
    out = {"mean": res.samples.mean(axis=0), "std": res.samples.std(axis=0, ddof=1), **res.metadata}
    for w in res.warnings:
        warnings.warn(w, RuntimeWarning, stacklevel=1)
    if args.out:
        write_json(args.out, out)
    print(json.dumps({k: np.asarray(v).tolist() for k, v in out.items() if k in ("mean", "std", "acceptance_rate")}))
    return 0


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.handler(args)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
