"""Command-line interface: ``dp-consensus design|run|sweep|check``.

Exit codes: 0 success, 1 consensus did not converge, 2 invalid flags or
config, 3 privacy condition violated.
"""
from __future__ import annotations

import argparse
import json
import os
import secrets
import sys

from . import consensus as cs
from . import experiments as ex
from . import privacy as pv
from .simnet import Network, check_phase_separation

EXIT_OK = 0
EXIT_UNCONVERGED = 1
EXIT_USAGE = 2
EXIT_VIOLATION = 3


class UsageError(Exception):
    """Invalid flag combination or config; reported with exit code 2."""


def _json(obj) -> str:
    return json.dumps(obj, indent=2, default=_default)


def _default(o):
    if hasattr(o, "tolist"):
        return o.tolist()
    raise TypeError(f"cannot serialize {type(o).__name__}")


def _parse_values(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise UsageError(f"--values must be a comma-separated list of numbers ({exc})") from exc


def _load(args) -> ex.ExperimentConfig:
    try:
        cfg = ex.load_config(args.config)
    except OSError as exc:
        raise UsageError(f"cannot read config: {exc}") from exc
    overrides = {}
    if hasattr(args, "seed"):
        if args.seed is not None:
            overrides["seed"] = args.seed
        elif not _config_has_seed(args.config):
            # no seed anywhere: draw one and report it so the run can be repeated
            overrides["seed"] = secrets.randbits(63)
            print(f"seed: {overrides['seed']}", file=sys.stderr)
    if getattr(args, "trials", None) is not None:
        overrides["trials"] = args.trials
    return cfg.replace(**overrides) if overrides else cfg


def _config_has_seed(path: str) -> bool:
    with open(path) as fh:
        return "seed" in json.load(fh).get("run", {})


# --------------------------------------------------------------------------- design

def cmd_design(args) -> int:
    alg = args.algorithm
    family = pv.family_of(alg)
    if family == pv.GAUSSIAN and args.h is not None:
        raise UsageError("--h applies only to Laplace algorithms")
    if family == pv.LAPLACE and args.g is not None:
        raise UsageError("--g applies only to Gaussian algorithms")
    if alg == pv.DISHUF_GAUSSIAN and args.g is None:
        raise UsageError("dishuf-gaussian needs --g")
    if alg == pv.DISHUF_LAPLACE and args.h is None:
        raise UsageError("dishuf-laplace needs --h")
    if args.h is not None and not args.h > 1:
        raise UsageError("h must exceed 1")
    if args.g is not None and not args.g > 0:
        raise UsageError("g must be positive")
    if args.abar != int(args.abar):
        raise UsageError("abar must be an integer")
    budget = pv.PrivacyBudget(args.epsilon, args.delta, args.mu)
    plan = pv.design(alg, budget, args.n, args.abar, g=args.g, h=args.h)
    report = pv.check_condition(plan, budget, args.n, args.abar)
    out = {**plan.to_dict(), "predicted_mse": pv.predict_mse(plan, args.n),
           "predicted_network_error": pv.predict_network_error(plan, args.n),
           "condition": report.to_dict()}
    if alg.startswith("dishuf"):
        out["one_minus_alpha"] = pv.one_minus_alpha(args.n, args.abar)
    print(_json(out))
    return EXIT_OK


# --------------------------------------------------------------------------- run

def cmd_run(args) -> int:
    cfg = _load(args)
    ctx = ex.build_context(cfg)
    log = open(args.transcript, "w") if args.transcript else None
    try:
        network = Network(ctx.graph, log=log, record=args.transcript is not None)
        result, run = ex.run_trial(cfg, args.trial, network=network,
                                   thin=args.thin if args.trajectory else 0)
    finally:
        if log is not None:
            log.close()
    if args.transcript:
        check_phase_separation(network.transcript)
    out = {
        "algorithm": cfg.algorithm,
        "seed": cfg.seed,
        "trial": args.trial,
        "n": cfg.n,
        "d_star": ctx.d_star,
        "plan": ctx.plan.to_dict(),
        "iterations": result.iterations,
        "converged": result.converged,
        "mse": result.mse,
        "network_error": result.network_error,
        "predicted_mse": pv.predict_mse(ctx.plan, cfg.n),
    }
    if run is not None:
        out["consensus_value"] = run.mean
        out["final_states"] = run.final
    print(_json(out))
    if args.trajectory:
        if run is None:
            raise UsageError("--trajectory needs an iterated algorithm")
        with open(args.trajectory, "w") as fh:
            cs.write_trajectory(run, fh)
    return EXIT_OK if result.converged else EXIT_UNCONVERGED


# --------------------------------------------------------------------------- sweep

def cmd_sweep(args) -> int:
    param = "epsilon" if args.param == "eps" else args.param
    if param not in ex.SWEEP_PARAMS:
        raise UsageError(f"--param must be one of {', '.join(ex.SWEEP_PARAMS)}")
    cfg = _load(args)
    values = _parse_values(args.values)
    baselines = [b for b in (args.baselines or "").split(",") if b]
    for b in baselines:
        if b not in pv.BASELINES:
            raise UsageError(f"unknown baseline {b!r}; choose from {', '.join(pv.BASELINES)}")
    try:
        threads = ex.resolve_threads(args.threads)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    summaries = ex.sweep(cfg, param, values, baselines, threads=threads)
    os.makedirs(args.out, exist_ok=True)
    csv_path = ex.emit(summaries, "csv", os.path.join(args.out, f"{args.prefix}.csv"))
    ex.emit(summaries, "json", os.path.join(args.out, f"{args.prefix}.json"))
    if not args.no_plots:
        from . import report
        report.write_figures(summaries, args.out, args.prefix)
        if args.trajectory_steps:
            curves = {}
            for alg in (cfg.algorithm, *baselines):
                curves[alg] = ex.error_trajectories(cfg.replace(algorithm=alg), min(cfg.trials, args.trajectory_trials),
                                                    args.trajectory_steps)
            report.plot_trajectories(curves, os.path.join(args.out, f"{args.prefix}_trajectories.png"))
    with open(csv_path) as fh:
        sys.stdout.write(fh.read())
    return EXIT_OK


# --------------------------------------------------------------------------- check

def cmd_check(args) -> int:
    cfg = _load(args)
    ctx = ex.build_context(cfg)
    plan = ctx.plan
    changes = {k: v for k, v in (("sigma_gamma", args.sigma_gamma), ("sigma_eta", args.sigma_eta),
                                 ("sigma_xi", args.sigma_xi)) if v is not None}
    if changes:
        plan = plan.replace(**changes)
    report = pv.check_condition(plan, cfg.budget, cfg.n, cfg.abar)
    print(_json({"algorithm": plan.algorithm, "plan": plan.to_dict(), **report.to_dict(),
                 "result": "pass" if report.holds else "fail"}))
    return EXIT_OK if report.holds else EXIT_VIOLATION


# --------------------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dp-consensus", description=__doc__,
                                formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = p.add_subparsers(dest="command", required=True)

    d = sub.add_parser("design", help="print the noise plan for a privacy budget")
    d.add_argument("--algorithm", required=True, choices=pv.ALGORITHMS)
    d.add_argument("--epsilon", type=float, required=True)
    d.add_argument("--delta", type=float, default=0.0)
    d.add_argument("--mu", type=float, default=1.0)
    d.add_argument("--n", type=int, required=True)
    d.add_argument("--abar", type=float, default=1e4)
    d.add_argument("--g", type=float)
    d.add_argument("--h", type=float)
    d.set_defaults(func=cmd_design)

    r = sub.add_parser("run", help="run one trial and print its summary")
    r.add_argument("--config", required=True)
    r.add_argument("--seed", type=int)
    r.add_argument("--trial", type=int, default=0, help="trial index within the seed's streams")
    r.add_argument("--transcript", help="write the message transcript as JSON lines")
    r.add_argument("--trajectory", help="write the state trajectory as CSV")
    r.add_argument("--thin", type=int, default=1, help="keep every THIN-th state in the trajectory")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", help="Monte Carlo sweep over one parameter")
    s.add_argument("--config", required=True)
    s.add_argument("--param", required=True)
    s.add_argument("--values", required=True, help="comma-separated values")
    s.add_argument("--trials", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--prefix", default="sweep")
    s.add_argument("--baselines", help="comma-separated baseline algorithms to add")
    s.add_argument("--threads", type=int, help=f"worker processes (default ${ex.THREADS_ENV} or 1)")
    s.add_argument("--no-plots", action="store_true")
    s.add_argument("--trajectory-steps", type=int, default=0,
                   help="also plot error trajectories over this many iterations")
    s.add_argument("--trajectory-trials", type=int, default=200)
    s.set_defaults(func=cmd_sweep)

    c = sub.add_parser("check", help="evaluate the privacy condition of a config's plan")
    c.add_argument("--config", required=True)
    c.add_argument("--sigma-gamma", type=float)
    c.add_argument("--sigma-eta", type=float)
    c.add_argument("--sigma-xi", type=float)
    c.set_defaults(func=cmd_check)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    try:
        return args.func(args)
    except (UsageError, ValueError, OverflowError, ArithmeticError) as exc:
        msg = str(exc)
        print(f"error: {msg}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
