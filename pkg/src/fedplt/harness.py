"""
Simulated-cost timing, Monte Carlo aggregation, parameter sweeps and tables.

All "time" is the cost model: a round charges ``(Ne t_G + t_C)`` per active
agent. Monte Carlo repetition ``i`` runs with seed ``master + i`` on a fixed
problem instance, so only participation draws and solver noise vary.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .core import (Bernoulli, CostModel, Full, RunConfig, cost_per_round, participation_bounds, run)
from .problem import (NonsmoothSpec, ProblemInstance, RegularizerSpec, generate_logistic_data,
                      logistic_problem)
from .rates import TuneGrid, tune_grid
from .solvers import GD, NoisyGD

__all__ = [
    "CostModel", "cost_per_round", "NOT_REACHED", "time_to_threshold", "rounds_to_threshold",
    "asymptotic_error", "desk_problem", "RunSpec", "TableRow", "measure", "monte_carlo",
    "SweepSpec", "sweep", "emit_table", "parse_table", "tuned_config", "DESK", "FULL_SCALE",
]

NOT_REACHED = math.inf
NOT_REACHED_TEXT = "not_reached"

DESK = dict(N=10, n=5, q=50, eps=0.5, threshold=1e-5, seeds=20)
FULL_SCALE = dict(N=100, n=5, q=250, eps=0.5, threshold=1e-5, seeds=100)


def time_to_threshold(records, threshold: float) -> float:
    """Cumulative cost at the first record with ``metric <= threshold``, else ``NOT_REACHED``."""
    for r in records:
        if r.metric <= threshold:
            return r.elapsed_cost
    return NOT_REACHED


def rounds_to_threshold(records, threshold: float) -> float:
    for r in records:
        if r.metric <= threshold:
            return float(r.k)
    return NOT_REACHED


def asymptotic_error(records, tail: float = 0.1) -> float:
    """Mean metric over the final ``tail`` fraction of rounds (at least one)."""
    body = [r.metric for r in records if r.k > 0] or [r.metric for r in records]
    m = max(1, int(math.ceil(tail * len(body))))
    return float(np.mean(body[-m:]))


def desk_problem(seed: int = 0, *, N: int = DESK["N"], n: int = DESK["n"], q: int = DESK["q"],
                 eps: float = DESK["eps"], l1: float = 0.0, full_scale: bool = False) -> ProblemInstance:
    """The synthetic logistic benchmark; ``full_scale`` switches to ``N=100, q=250``."""
    if full_scale:
        N, q = FULL_SCALE["N"], FULL_SCALE["q"]
    data = generate_logistic_data(seed, N, n, q)
    h = NonsmoothSpec("l1", l1) if l1 > 0 else NonsmoothSpec()
    return logistic_problem(data, RegularizerSpec("l2", eps), h, meta={"seed": seed})


def tuned_config(p: ProblemInstance, Ne_values=(5,), rho_values=None, base: RunConfig | None = None,
                 gamma_multipliers=None) -> tuple[RunConfig, object]:
    """Tune ``(rho, gamma, Ne)`` for GD local training and return the run config and report."""
    if rho_values is None:
        rho_values = list(np.round(np.logspace(-2, 1, 31), 6))
    base = RunConfig() if base is None else base
    p_lo, p_hi = participation_bounds(base.participation, p.N)
    g = TuneGrid(list(rho_values), list(Ne_values), gamma_multipliers, relative_gamma=gamma_multipliers is not None,
                 p_lo=p_lo, p_hi=p_hi)
    res = tune_grid(g, p.require_bounds(), "gd")
    gamma = None if res.gamma is None else float(res.gamma)
    cfg = replace(base, rho=float(res.rho), epochs=res.Ne, solver=replace_step(base.solver, gamma))
    return cfg, res.best


def replace_step(solver, gamma):
    return replace(solver, step=gamma) if hasattr(solver, "step") else solver


# --- Monte Carlo -------------------------------------------------------------------

@dataclass
class RunSpec:
    problem: ProblemInstance
    config: RunConfig
    measure: str = "time"  # time | rounds | asymptotic_error | final_metric
    threshold: float = DESK["threshold"]

    def __post_init__(self):
        if self.measure not in ("time", "rounds", "asymptotic_error", "final_metric"):
            raise ValueError(f"unknown measure {self.measure!r}")


def measure(spec: RunSpec, seed: int) -> float:
    res = run(spec.problem, replace(spec.config, seed=seed))
    if spec.measure == "time":
        return time_to_threshold(res.records, spec.threshold)
    if spec.measure == "rounds":
        return rounds_to_threshold(res.records, spec.threshold)
    if spec.measure == "asymptotic_error":
        return asymptotic_error(res.records)
    return res.records[-1].metric


@dataclass
class TableRow:
    axis: str
    value: object
    measure: str
    mean: float
    min: float
    max: float
    n_seeds: int
    note: str = ""
    values: list = field(default_factory=list, repr=False, compare=False)

    def __post_init__(self):
        if self.n_seeds < 1:
            raise ValueError("n_seeds must be at least 1")


def _workers() -> int:
    try:
        return max(1, int(os.environ.get("FEDPLT_WORKERS", "1")))
    except ValueError:
        return 1


def _measure_args(args):
    return measure(*args)


def monte_carlo(spec: RunSpec, seeds: int, master_seed: int = 0, *, axis: str = "", value=None,
                workers: int | None = None) -> TableRow:
    """Average ``measure`` over seeds ``master_seed + i``; ``NOT_REACHED`` propagates to the mean."""
    if seeds < 1:
        raise ValueError("need at least one seed")
    jobs = [(spec, master_seed + i) for i in range(seeds)]
    workers = _workers() if workers is None else workers
    if workers > 1 and seeds > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            vals = list(ex.map(_measure_args, jobs))
    else:
        vals = [_measure_args(j) for j in jobs]
    arr = np.array(vals, dtype=float)
    mean = NOT_REACHED if np.any(np.isinf(arr)) else float(np.sum(arr) / len(arr))
    note = "partial-round cost charged per active agent" if not isinstance(spec.config.participation, Full) else ""
    return TableRow(axis, value, spec.measure, mean, float(arr.min()), float(arr.max()), seeds, note, vals)


# --- sweeps -------------------------------------------------------------------------

AXES = ("ne", "rho", "tau", "participation", "tc")


@dataclass
class SweepSpec:
    axis: str
    values: list
    base: RunSpec

    def __post_init__(self):
        if self.axis not in AXES:
            raise ValueError(f"axis must be one of {AXES}")
        if not self.values:
            raise ValueError("sweep needs at least one value")


def apply_axis(cfg: RunConfig, axis: str, value) -> RunConfig:
    """Set one parameter; a GD step left at its default follows ``rho`` automatically."""
    if axis == "ne":
        return replace(cfg, epochs=int(value))
    if axis == "rho":
        return replace(cfg, rho=float(value), solver=replace_step(cfg.solver, None))
    if axis == "tau":
        s = cfg.solver
        return replace(cfg, solver=NoisyGD(tau=float(value), step=getattr(s, "step", None), clip=getattr(s, "clip", None)))
    if axis == "participation":
        v = float(value)
        return replace(cfg, participation=Full() if v == 1.0 else Bernoulli(v))
    if axis == "tc":
        return replace(cfg, cost_model=CostModel(cfg.cost_model.t_G, float(value)))
    raise ValueError(f"unknown axis {axis!r}")


def sweep(spec: SweepSpec, seeds: int, master_seed: int = 0) -> list[TableRow]:
    rows = []
    for v in spec.values:
        cfg = apply_axis(spec.base.config, spec.axis, v)
        if spec.axis == "rho" or (spec.axis == "tau" and cfg.metric in ("distance", "state_distance")):
            cfg = replace(cfg, reference=None)
        rs = replace(spec.base, config=cfg)
        rows.append(monte_carlo(rs, seeds, master_seed, axis=spec.axis, value=v))
    return rows


# --- tables ---------------------------------------------------------------------------

COLUMNS = ("axis", "value", "measure", "mean", "min", "max", "n_seeds", "note")


def _fmt(x):
    if isinstance(x, (bool, np.bool_)):
        return x
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        if math.isinf(x):
            return NOT_REACHED_TEXT
        return float(f"{x:.6g}")
    return x


def _cell(x) -> str:
    x = _fmt(x)
    if isinstance(x, float):
        return f"{x:.6g}"
    return "" if x is None else str(x)


def _unfmt(s: str):
    if s == NOT_REACHED_TEXT:
        return NOT_REACHED
    for conv in (int, float):
        try:
            return conv(s)
        except ValueError:
            pass
    return s


def emit_table(rows, fmt: str = "csv") -> str:
    """Render rows with a fixed column order and 6 significant digits."""
    dicts = [r if isinstance(r, dict) else {c: getattr(r, c) for c in COLUMNS} for r in rows]
    columns = list(COLUMNS) if not dicts else list(dicts[0])
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(columns)
        for d in dicts:
            w.writerow([_cell(d[c]) for c in columns])
        return buf.getvalue()
    if fmt == "json":
        return json.dumps({"columns": columns, "rows": [{c: _fmt(d[c]) for c in columns} for d in dicts]},
                          indent=1) + "\n"
    raise ValueError("format must be csv or json")


def parse_table(text: str, fmt: str = "csv") -> list[dict]:
    if fmt == "csv":
        rdr = csv.reader(io.StringIO(text))
        header = next(rdr)
        return [{c: _unfmt(v) for c, v in zip(header, line)} for line in rdr]
    if fmt == "json":
        doc = json.loads(text)
        return [{c: (NOT_REACHED if r[c] == NOT_REACHED_TEXT else r[c]) for c in doc["columns"]} for r in doc["rows"]]
    raise ValueError("format must be csv or json")
