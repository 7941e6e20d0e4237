"""
``fedplt`` command line: generate, tune, run, sweep, privacy.

Every subcommand writes its outputs plus a ``manifest.json`` holding the fully
resolved parameters into ``--out``. Exit codes: 0 success, 2 usage error,
3 no stable tuning point, 4 numerical abort.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import tempfile
import warnings
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .core import (Bernoulli, CostModel, Full, NumericalAbort, RunConfig, UniformSubset, dump_trajectory,
                   run)
from .harness import (DESK, NOT_REACHED_TEXT, RunSpec, SweepSpec, emit_table, rounds_to_threshold, sweep,
                      time_to_threshold)
from .privacy import DEFAULT_DELTAS, PrivacyParams, privacy_report
from .problem import (NonsmoothSpec, RegularizerSpec, generate_logistic_data, load_problem, logistic_problem,
                      quadratic_problem, save_problem)
from .rates import NoStablePoint, TuneGrid, evaluate_grid, tune_grid
from .solvers import AGD, GD, SGD, Exact, NoisyGD
from .splitting import optimal_step

EXIT_OK, EXIT_USAGE, EXIT_UNSTABLE, EXIT_NUMERIC = 0, 2, 3, 4

FIXTURES = {
    # scalar pair (x - 1)^2 / 2, (x + 1)^2 / 2
    "quadratic-pair": dict(centers=[1.0, -1.0], curvatures=1.0),
    # unequal curvatures: the pair on which naive local training drifts
    "hetero-pair": dict(centers=[1.0, -1.0], curvatures=[1.0, 3.0]),
}


class UsageError(Exception):
    pass


def _write_atomic(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    with os.fdopen(fd, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _write_manifest(out: Path, cmd: str, params: dict, seed, inputs: list, outputs: list) -> None:
    manifest = {
        "subcommand": cmd,
        "version": __version__,
        "seed": seed,
        "parameters": params,
        "inputs": [str(p) for p in inputs],
        "outputs": [str(p) for p in outputs],
    }
    _write_atomic(out / "manifest.json", json.dumps(manifest, indent=1, sort_keys=True, default=_jsonable) + "\n")


def _jsonable(x):
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, float) and math.isinf(x):
        return NOT_REACHED_TEXT
    return str(x)


def _finite_or_sentinel(x: float):
    return NOT_REACHED_TEXT if math.isinf(x) else x


def _floats(s: str) -> list[float]:
    try:
        return [float(v) for v in s.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {s!r}")


def _ints(s: str) -> list[int]:
    try:
        return [int(v) for v in s.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {s!r}")


def parse_participation(s: str):
    if s == "full":
        return Full()
    kind, _, val = s.partition(":")
    try:
        if kind == "bernoulli":
            return Bernoulli(float(val))
        if kind == "subset":
            return UniformSubset(int(val))
    except ValueError as e:
        raise UsageError(f"bad participation {s!r}: {e}")
    raise UsageError(f"participation must be full, bernoulli:p or subset:m, got {s!r}")


def _participation_label(pm) -> str:
    if isinstance(pm, Full):
        return "full"
    if isinstance(pm, Bernoulli):
        return f"bernoulli:{pm.p}"
    return f"subset:{pm.m}"


# --- generate ------------------------------------------------------------------------

def cmd_generate(a) -> int:
    out = Path(a.out)
    path = out / "problem.bin"
    h = NonsmoothSpec("l1", a.l1) if a.l1 > 0 else NonsmoothSpec()
    if a.fixture == "logistic":
        if min(a.agents, a.dim, a.per_agent) < 1:
            raise UsageError("--agents, --dim and --per-agent must be positive")
        data = generate_logistic_data(a.seed, a.agents, a.dim, a.per_agent)
        p = logistic_problem(data, RegularizerSpec(a.reg, a.reg_weight), h, meta={"seed": a.seed})
    else:
        p = quadratic_problem(nonsmooth=h, **FIXTURES[a.fixture])
    out.mkdir(parents=True, exist_ok=True)
    save_problem(p, path, seed=a.seed)
    params = dict(fixture=a.fixture, agents=p.N, dim=p.n, per_agent=a.per_agent, reg=a.reg,
                  reg_weight=a.reg_weight, l1=a.l1)
    _write_manifest(out, "generate", params, a.seed, [], [path])
    print(path)
    return EXIT_OK


# --- tune ----------------------------------------------------------------------------

def cmd_tune(a) -> int:
    p = load_problem(a.problem)
    b = p.require_bounds()
    g = TuneGrid(a.rho_grid, a.ne_grid, a.gamma_grid, relative_gamma=a.gamma_relative, p_lo=a.p_lo,
                 p_hi=max(a.p_hi, a.p_lo))
    table = evaluate_grid(g, b, a.solver)
    out = Path(a.out)
    rows = [r.row() for r in table]
    path = out / f"tune.{a.format}"
    params = dict(vars(a), command=None)
    params.pop("func", None)
    _write_atomic(path, emit_table(rows, a.format))
    try:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            best = tune_grid(g, b, a.solver).best
        for w in caught:
            print(f"warning: {w.message}", file=sys.stderr)
    except NoStablePoint as e:
        _write_manifest(out, "tune", params, None, [a.problem], [path])
        print(f"no stable point: {e}", file=sys.stderr)
        return EXIT_UNSTABLE
    best_row = best.row()
    _write_atomic(out / "best.json", json.dumps(best_row, indent=1, default=_jsonable) + "\n")
    _write_manifest(out, "tune", params, None, [a.problem], [path, out / "best.json"])
    print(json.dumps(best_row, default=_jsonable))
    return EXIT_OK


# --- run -----------------------------------------------------------------------------

def _solver(a):
    if a.solver == "gd":
        return GD(a.gamma)
    if a.solver == "agd":
        return AGD()
    if a.solver == "sgd":
        return SGD(a.batch, a.gamma)
    if a.solver == "noisy":
        if a.tau is None:
            raise UsageError("--solver noisy requires --tau")
        return NoisyGD(a.tau, a.gamma, a.clip)
    return Exact()


def cmd_run(a) -> int:
    p = load_problem(a.problem)
    solver = _solver(a)
    if getattr(solver, "step", 0.0) is None and p.bounds is not None:
        solver = replace(solver, step=optimal_step(p.bounds, a.rho))
    cfg = RunConfig(rho=a.rho, solver=solver, epochs=a.ne, participation=parse_participation(a.participation),
                    rounds=a.rounds, seed=a.seed, metric=a.metric, cost_model=CostModel(a.tg, a.tc), init=a.init)
    try:
        res = run(p, cfg)
    except NumericalAbort as e:
        print(f"numerical abort: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    traj = out / "trajectory.jsonl"
    tmp = out / ".trajectory.jsonl.tmp"
    dump_trajectory(res.records, tmp)
    os.replace(tmp, traj)
    ttt = time_to_threshold(res.records, a.threshold)
    summary = {
        "rounds": a.rounds,
        "final_metric": res.records[-1].metric,
        "metric": res.meta["metric"],
        "threshold": a.threshold,
        "reached": not math.isinf(ttt),
        "time_to_threshold": _finite_or_sentinel(ttt),
        "rounds_to_threshold": _finite_or_sentinel(rounds_to_threshold(res.records, a.threshold)),
        "x_bar": res.x_bar.tolist(),
        "y": res.y.tolist(),
    }
    if "assumptions" in res.meta:
        summary["note"] = res.meta["assumptions"]
    _write_atomic(out / "summary.json", json.dumps(summary, indent=1, default=_jsonable) + "\n")
    params = dict(solver=a.solver, step=getattr(cfg.solver, "step", None), batch=a.batch, tau=a.tau,
                  clip=a.clip, ne=a.ne, rho=a.rho, participation=_participation_label(cfg.participation),
                  rounds=a.rounds, metric=res.meta["metric"], tg=a.tg, tc=a.tc, threshold=a.threshold,
                  init=a.init)
    _write_manifest(out, "run", params, a.seed, [a.problem], [traj, out / "summary.json"])
    print(json.dumps({k: summary[k] for k in ("reached", "time_to_threshold", "final_metric")}, default=_jsonable))
    return EXIT_OK


# --- sweep ---------------------------------------------------------------------------

def cmd_sweep(a) -> int:
    p = load_problem(a.problem)
    solver = NoisyGD(a.tau or 0.0, a.gamma) if a.axis == "tau" else GD(a.gamma)
    metric = a.metric
    if a.axis == "tau" and metric == "auto":
        metric = "state_distance"
    cfg = RunConfig(rho=a.rho, solver=solver, epochs=a.ne, participation=parse_participation(a.participation),
                    rounds=a.rounds, metric=metric, cost_model=CostModel(a.tg, a.tc))
    measure = a.measure or ("asymptotic_error" if a.axis == "tau" else "time")
    rows = sweep(SweepSpec(a.axis, a.values, RunSpec(p, cfg, measure, a.threshold)), a.seeds, a.master_seed)
    out = Path(a.out)
    path = out / f"sweep_{a.axis}.{a.format}"
    _write_atomic(path, emit_table(rows, a.format))
    params = dict(axis=a.axis, values=a.values, seeds=a.seeds, rho=a.rho, step=a.gamma, ne=a.ne, tau=a.tau,
                  participation=a.participation, rounds=a.rounds, metric=metric, measure=measure, tg=a.tg,
                  tc=a.tc, threshold=a.threshold)
    _write_manifest(out, "sweep", params, a.master_seed, [a.problem], [path])
    sys.stdout.write(emit_table(rows, "csv"))
    return EXIT_OK


# --- privacy -------------------------------------------------------------------------

def cmd_privacy(a) -> int:
    if a.lambda_order <= 1:
        raise UsageError("--lambda-order must exceed 1")
    q, lam_lo, bounds = a.q, a.lambda_lo, None
    if a.problem:
        p = load_problem(a.problem)
        bounds = p.require_bounds()
        q = q or [c.q for c in p.costs]
        lam_lo = lam_lo or bounds.lambda_lo
    if not q or lam_lo is None:
        raise UsageError("give --q and --lambda-lo, or --problem")
    pp = PrivacyParams(a.L, a.tau**2, a.gamma, tuple(q), lam_lo, a.lambda_order)
    if bounds is not None:
        upper = 2.0 / (bounds.lambda_hi + 1.0 / a.rho)
        if a.gamma >= upper:
            print(f"warning: step {a.gamma} violates the privacy precondition gamma < {upper:.6g}", file=sys.stderr)
    rep = privacy_report(pp, a.rounds, a.ne, a.delta)
    rows = rep.rows(pp.q)
    worst = {"agent": "worst", "q_i": min(pp.q), "K": a.rounds, "Ne": a.ne, "lambda": a.lambda_order,
             "eps_rdp": rep.eps_worst, "asymptote": float(rep.asymptote.max())}
    for d in sorted(rep.adp, reverse=True):
        worst[f"eps_adp@{d:g}"] = rep.adp[d]
    rows.append(worst)
    out = Path(a.out)
    path = out / f"privacy.{a.format}"
    text = emit_table(rows, a.format)
    _write_atomic(path, text)
    if a.format == "json":
        exact = {"eps_per_agent": [float(v) for v in rep.eps_per_agent], "eps_worst": rep.eps_worst,
                 "adp": {f"{d:g}": v for d, v in rep.adp.items()}}
        _write_atomic(out / "privacy_exact.json", json.dumps(exact, indent=1) + "\n")
    params = dict(L=a.L, tau=a.tau, gamma=a.gamma, lambda_order=a.lambda_order, rounds=a.rounds, ne=a.ne,
                  q=list(pp.q), lambda_lo=lam_lo, delta=list(a.delta), rho=a.rho)
    _write_manifest(out, "privacy", params, None, [a.problem] if a.problem else [], [path])
    print(json.dumps({"eps_worst": rep.eps_worst, "adp": {f"{d:g}": v for d, v in rep.adp.items()}}))
    return EXIT_OK


# --- parser --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fedplt", description=__doc__.strip().splitlines()[0])
    ap.add_argument("--version", action="version", version=f"fedplt {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a problem instance")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--agents", type=int, default=DESK["N"])
    g.add_argument("--dim", type=int, default=DESK["n"])
    g.add_argument("--per-agent", type=int, default=DESK["q"])
    g.add_argument("--reg", choices=("l2", "nonconvex"), default="l2")
    g.add_argument("--reg-weight", type=float, default=DESK["eps"])
    g.add_argument("--l1", type=float, default=0.0, help="weight of the shared l1 term (0: none)")
    g.add_argument("--fixture", choices=("logistic", *FIXTURES), default="logistic")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("tune", help="grid-search stabilizing parameters")
    t.add_argument("--problem", required=True)
    t.add_argument("--rho-grid", type=_floats, default=[0.1, 0.2, 0.5, 1.0, 2.0, 5.0, 10.0])
    t.add_argument("--gamma-grid", type=_floats, default=None)
    t.add_argument("--gamma-relative", action="store_true", help="gamma grid holds multiples of the optimal step")
    t.add_argument("--ne-grid", type=_ints, default=[1, 2, 5, 8, 10, 20])
    t.add_argument("--p-lo", type=float, default=1.0)
    t.add_argument("--p-hi", type=float, default=1.0)
    t.add_argument("--solver", choices=("gd", "agd", "exact"), default="gd")
    t.add_argument("--format", choices=("csv", "json"), default="csv")
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_tune)

    r = sub.add_parser("run", help="run Fed-PLT")
    r.add_argument("--problem", required=True)
    r.add_argument("--solver", choices=("gd", "agd", "sgd", "noisy", "exact"), default="gd")
    r.add_argument("--ne", type=int, default=5)
    r.add_argument("--rho", type=float, default=1.0)
    r.add_argument("--gamma", type=float, default=None)
    r.add_argument("--batch", type=int, default=1)
    r.add_argument("--tau", type=float, default=None, help="noise standard deviation")
    r.add_argument("--clip", type=float, default=None, help="sensitivity bound L for gradient clipping")
    r.add_argument("--participation", default="full")
    r.add_argument("--rounds", type=int, default=100)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--metric", choices=("auto", "grad_norm_sq", "distance", "state_distance"), default="auto")
    r.add_argument("--init", choices=("zero", "private"), default="zero")
    r.add_argument("--tg", type=float, default=1.0)
    r.add_argument("--tc", type=float, default=10.0)
    r.add_argument("--threshold", type=float, default=DESK["threshold"])
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", help="Monte Carlo parameter sweep")
    s.add_argument("--problem", required=True)
    s.add_argument("--axis", choices=("ne", "rho", "tau", "participation", "tc"), required=True)
    s.add_argument("--values", type=_floats, required=True)
    s.add_argument("--seeds", type=int, default=DESK["seeds"])
    s.add_argument("--master-seed", type=int, default=0)
    s.add_argument("--ne", type=int, default=5)
    s.add_argument("--rho", type=float, default=1.0)
    s.add_argument("--gamma", type=float, default=None)
    s.add_argument("--tau", type=float, default=None)
    s.add_argument("--participation", default="full")
    s.add_argument("--rounds", type=int, default=200)
    s.add_argument("--metric", choices=("auto", "grad_norm_sq", "distance", "state_distance"), default="auto")
    s.add_argument("--measure", choices=("time", "rounds", "asymptotic_error", "final_metric"), default=None)
    s.add_argument("--tg", type=float, default=1.0)
    s.add_argument("--tc", type=float, default=10.0)
    s.add_argument("--threshold", type=float, default=DESK["threshold"])
    s.add_argument("--format", choices=("csv", "json"), default="csv")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_sweep)

    pv = sub.add_parser("privacy", help="Renyi and approximate DP report")
    pv.add_argument("--L", type=float, required=True)
    pv.add_argument("--tau", type=float, required=True, help="noise standard deviation")
    pv.add_argument("--gamma", type=float, required=True)
    pv.add_argument("--lambda-order", type=float, default=2.0)
    pv.add_argument("--rounds", type=int, required=True)
    pv.add_argument("--ne", type=int, required=True)
    pv.add_argument("--q", type=_ints, default=None)
    pv.add_argument("--lambda-lo", type=float, default=None)
    pv.add_argument("--problem", default=None)
    pv.add_argument("--rho", type=float, default=1.0, help="used only for the step-size check")
    pv.add_argument("--delta", type=_floats, default=list(DEFAULT_DELTAS))
    pv.add_argument("--format", choices=("csv", "json"), default="csv")
    pv.add_argument("--out", required=True)
    pv.set_defaults(func=cmd_privacy)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    a = ap.parse_args(argv)
    try:
        return a.func(a)
    except (UsageError, ValueError) as e:
        print(f"fedplt {a.command}: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericalAbort, FloatingPointError) as e:
        print(f"fedplt {a.command}: numerical abort: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
