"""
The Fed-PLT round engine.

One round, given stored agent states ``(x_i, z_i)``:

    y   = prox_{rho h / N}(mean_i z_i)          (coordinator, all stored z_i)
    for each active agent i:
        v   = 2 y - z_i
        x_i = local_solve(start=x_i, target=v)   (Ne epochs)
        z_i = z_i + 2 (x_i - y)

Inactive agents keep ``(x_i, z_i)`` bit-identical. Randomness is drawn from
streams keyed on ``(seed, agent, round)`` so the trajectory never depends on
which agents happened to be active earlier or on solve order.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .problem import ProblemInstance, global_gradient_norm_sq
from .solvers import GD, NoisyGD, LocalSolveConfig, SolverKind, local_solve
from .splitting import consensus_prox, prs_reference_solve

_PARTICIPATION_TAG = 1_000_003
_INIT_TAG = 1_000_033


class NumericalAbort(FloatingPointError):
    def __init__(self, k: int, agent: int | None, what: str = "iterate"):
        self.k, self.agent = k, agent
        where = "coordinator" if agent is None else f"agent {agent}"
        super().__init__(f"non-finite {what} in round {k} at {where}")


@dataclass
class AgentState:
    x: np.ndarray
    z: np.ndarray


@dataclass
class CoordinatorState:
    y: np.ndarray


# --- participation -----------------------------------------------------------

@dataclass(frozen=True)
class Full:
    pass


@dataclass(frozen=True)
class Bernoulli:
    """Each agent active independently with probability ``p`` (scalar or per agent)."""

    p: float | tuple = 0.5

    def __post_init__(self):
        p = np.atleast_1d(np.asarray(self.p, dtype=float))
        if np.any(p <= 0) or np.any(p > 1):
            raise ValueError("activation probabilities must lie in (0, 1]")
        if p.size > 1:
            object.__setattr__(self, "p", tuple(float(v) for v in p))

    def probs(self, N: int) -> np.ndarray:
        p = np.atleast_1d(np.asarray(self.p, dtype=float))
        if p.size == 1:
            return np.full(N, p[0])
        if p.size != N:
            raise ValueError(f"{p.size} probabilities for {N} agents")
        return p


@dataclass(frozen=True)
class UniformSubset:
    """Exactly ``m`` agents per round, drawn without replacement."""

    m: int

    def __post_init__(self):
        if self.m < 1:
            raise ValueError("subset size must be at least 1")


Participation = Full | Bernoulli | UniformSubset


def participation_bounds(pm: Participation, N: int) -> tuple[float, float]:
    """``(p_lo, p_hi)``, the extreme per-agent activation probabilities."""
    if isinstance(pm, Full):
        return 1.0, 1.0
    if isinstance(pm, Bernoulli):
        p = pm.probs(N)
        return float(p.min()), float(p.max())
    frac = min(pm.m, N) / N
    return frac, frac


def sample_active(pm: Participation, N: int, rng: np.random.Generator) -> tuple[int, ...]:
    if isinstance(pm, Full):
        return tuple(range(N))
    if isinstance(pm, Bernoulli):
        return tuple(int(i) for i in np.flatnonzero(rng.random(N) < pm.probs(N)))
    if pm.m > N:
        raise ValueError(f"subset size {pm.m} exceeds {N} agents")
    return tuple(int(i) for i in np.sort(rng.choice(N, size=pm.m, replace=False)))


def participation_rng(seed: int, k: int) -> np.random.Generator:
    return np.random.default_rng([seed, _PARTICIPATION_TAG, k])


def agent_rng(seed: int, agent: int, k: int) -> np.random.Generator:
    return np.random.default_rng([seed, agent, k])


# --- configuration and records -------------------------------------------------

@dataclass(frozen=True)
class CostModel:
    t_G: float = 1.0
    t_C: float = 10.0

    def __post_init__(self):
        if self.t_G < 0 or self.t_C < 0:
            raise ValueError("costs must be nonnegative")


def cost_per_round(Ne: int, n_agents: int, cm: CostModel) -> float:
    """``(Ne t_G + t_C) * n_agents``; pass the active count for partial rounds."""
    return (Ne * cm.t_G + cm.t_C) * n_agents


@dataclass(frozen=True)
class RoundRecord:
    k: int
    active: tuple
    y: np.ndarray
    metric: float
    elapsed_cost: float

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "active": list(self.active),
            "metric": self.metric,
            "elapsed_cost": self.elapsed_cost,
            "y": [float(v) for v in self.y],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RoundRecord":
        return cls(int(d["k"]), tuple(d["active"]), np.asarray(d["y"], dtype=float),
                   float(d["metric"]), float(d["elapsed_cost"]))

    def __eq__(self, other):
        if not isinstance(other, RoundRecord):
            return NotImplemented
        return self.to_dict() == other.to_dict()


METRICS = ("auto", "grad_norm_sq", "distance", "state_distance")


@dataclass
class RunConfig:
    rho: float = 1.0
    solver: SolverKind = field(default_factory=GD)
    epochs: int = 5
    participation: Participation = field(default_factory=Full)
    rounds: int = 100
    seed: int = 0
    metric: str = "auto"
    reference: tuple | None = None  # (x_star, z_star); computed on demand
    cost_model: CostModel = field(default_factory=CostModel)
    init: object = "zero"  # "zero", "private", or an (x0, z0) pair of (N, n) arrays
    record_states: bool = False

    def __post_init__(self):
        if self.rounds < 1:
            raise ValueError("need at least one round")
        if self.epochs < 1:
            raise ValueError("need at least one local epoch")
        if self.rho <= 0:
            raise ValueError("rho must be positive")
        if self.metric not in METRICS:
            raise ValueError(f"metric must be one of {METRICS}")


@dataclass
class RunResult:
    records: list
    agents: list
    meta: dict
    states: list | None = None  # per record: (x (N, n), z (N, n)) copies

    @property
    def x_bar(self) -> np.ndarray:
        return np.mean([a.x for a in self.agents], axis=0)

    @property
    def y(self) -> np.ndarray:
        return self.records[-1].y

    @property
    def metrics(self) -> np.ndarray:
        return np.array([r.metric for r in self.records])


# --- round operations ----------------------------------------------------------

def coordinator_step(z_all, h, rho: float) -> np.ndarray:
    return consensus_prox(z_all, h, rho)


def agent_round(state: AgentState, y, cost, solve: LocalSolveConfig) -> AgentState:
    v = 2.0 * y - state.z
    x_new = local_solve(cost, state.x, v, solve)
    return AgentState(x_new, state.z + 2.0 * (x_new - y))


def fedplt_round(p: ProblemInstance, agents: list, cfg: RunConfig, k: int):
    """Round ``k`` (0-based). Returns ``(agents', coordinator, active)``."""
    z_all = np.stack([a.z for a in agents])
    y = coordinator_step(z_all, p.nonsmooth, cfg.rho)
    if not np.all(np.isfinite(y)):
        raise NumericalAbort(k, None)
    active = sample_active(cfg.participation, p.N, participation_rng(cfg.seed, k))
    out = list(agents)
    for i in active:
        solve = LocalSolveConfig(cfg.solver, cfg.epochs, cfg.rho, p.bounds, agent_rng(cfg.seed, i, k))
        new = agent_round(agents[i], y, p.costs[i], solve)
        if not (np.all(np.isfinite(new.x)) and np.all(np.isfinite(new.z))):
            raise NumericalAbort(k, i)
        out[i] = new
    return out, CoordinatorState(y), active


def initial_states(p: ProblemInstance, cfg: RunConfig) -> list:
    N, n = p.N, p.n
    if isinstance(cfg.init, str):
        if cfg.init == "zero":
            return [AgentState(np.zeros(n), np.zeros(n)) for _ in range(N)]
        if cfg.init == "private":
            from .privacy import private_init

            tau = getattr(cfg.solver, "tau", None)
            if tau is None:
                raise ValueError("private initialization needs the noisy solver's tau")
            lam = p.require_bounds().lambda_lo
            return [AgentState(private_init(n, tau**2, lam, np.random.default_rng([cfg.seed, _INIT_TAG, i])),
                               np.zeros(n)) for i in range(N)]
        raise ValueError(f"unknown init {cfg.init!r}")
    x0, z0 = (np.asarray(a, dtype=float) for a in cfg.init)
    if x0.shape != (N, n) or z0.shape != (N, n):
        raise ValueError(f"initial states must have shape {(N, n)}")
    return [AgentState(x0[i].copy(), z0[i].copy()) for i in range(N)]


def resolve_metric(p: ProblemInstance, cfg: RunConfig) -> str:
    if cfg.metric != "auto":
        return cfg.metric
    return "grad_norm_sq" if p.nonsmooth.is_zero else "distance"


def metric_function(p: ProblemInstance, cfg: RunConfig, kind: str):
    """``f(agents, y) -> float`` for the chosen metric."""
    if kind == "grad_norm_sq":
        return lambda agents, y: global_gradient_norm_sq(np.mean([a.x for a in agents], axis=0), p)
    x_star, z_star = cfg.reference if cfg.reference is not None else prs_reference_solve(p, cfg.rho)
    x_star = np.asarray(x_star, dtype=float)
    z_star = np.asarray(z_star, dtype=float)
    if kind == "distance":
        return lambda agents, y: float(np.linalg.norm(y - x_star))

    def state_distance(agents, y):
        x = np.stack([a.x for a in agents])
        z = np.stack([a.z for a in agents])
        return float(math.sqrt(np.sum((x - x_star) ** 2) + np.sum((z - z_star) ** 2)))

    return state_distance


def _snapshot(agents):
    return np.stack([a.x for a in agents]), np.stack([a.z for a in agents])


def _run_meta(p: ProblemInstance, cfg: RunConfig, metric: str, algorithm: str) -> dict:
    meta = {
        "algorithm": algorithm,
        "metric": metric,
        "N": p.N,
        "n": p.n,
        "seed": cfg.seed,
        "cost_convention": "(Ne*t_G + t_C) per active agent per round",
    }
    if isinstance(cfg.participation, UniformSubset):
        meta["assumptions"] = "outside the convergence guarantee: subset sampling is not independent across agents"
    return meta


def run(p: ProblemInstance, cfg: RunConfig) -> RunResult:
    """``cfg.rounds`` rounds of Fed-PLT; ``records[0]`` is the initial state at cost 0."""
    if isinstance(cfg.solver, NoisyGD) and cfg.init == "private" and p.bounds is None:
        raise ValueError("private mode needs convexity bounds")
    metric = resolve_metric(p, cfg)
    f = metric_function(p, cfg, metric)
    agents = initial_states(p, cfg)
    y = coordinator_step(np.stack([a.z for a in agents]), p.nonsmooth, cfg.rho)
    records = [RoundRecord(0, (), y, f(agents, y), 0.0)]
    states = [_snapshot(agents)] if cfg.record_states else None
    elapsed = 0.0
    for k in range(cfg.rounds):
        agents, coord, active = fedplt_round(p, agents, cfg, k)
        elapsed += cost_per_round(cfg.epochs, len(active), cfg.cost_model)
        records.append(RoundRecord(k + 1, active, coord.y, f(agents, coord.y), elapsed))
        if states is not None:
            states.append(_snapshot(agents))
    return RunResult(records, agents, _run_meta(p, cfg, metric, "fedplt"), states)


def fedavg_baseline(p: ProblemInstance, cfg: RunConfig, step: float | None = None) -> RunResult:
    """Naive local training: active agents run ``Ne`` GD steps on ``f_i`` from the
    broadcast model, and the coordinator averages what it receives.

    The step defaults to ``1 / lambda_hi``. Only the smooth part is used; the
    metric is evaluated at the broadcast model.
    """
    if step is None:
        step = 1.0 / p.require_bounds().lambda_hi
    metric = resolve_metric(p, cfg)
    f = metric_function(p, cfg, metric)
    x = np.zeros(p.n) if cfg.init == "zero" else np.mean(np.asarray(cfg.init[0], dtype=float), axis=0)

    def as_agents(v):
        return [AgentState(v, np.zeros(p.n)) for _ in range(p.N)]

    records = [RoundRecord(0, (), x.copy(), f(as_agents(x), x), 0.0)]
    elapsed = 0.0
    for k in range(cfg.rounds):
        active = sample_active(cfg.participation, p.N, participation_rng(cfg.seed, k))
        if active:
            local = []
            for i in active:
                w = x.copy()
                for _ in range(cfg.epochs):
                    w = w - step * p.costs[i].grad(w)
                local.append(w)
            x = np.mean(local, axis=0)
            if not np.all(np.isfinite(x)):
                raise NumericalAbort(k, None)
        elapsed += cost_per_round(cfg.epochs, len(active), cfg.cost_model)
        records.append(RoundRecord(k + 1, active, x.copy(), f(as_agents(x), x), elapsed))
    return RunResult(records, as_agents(x), _run_meta(p, cfg, metric, "fedavg"))


# --- trajectory logs -------------------------------------------------------------

def dump_trajectory(records, path) -> None:
    """One JSON object per line; floats are written with round-trip precision."""
    text = "".join(json.dumps(r.to_dict(), sort_keys=True) + "\n" for r in records)
    Path(path).write_text(text)


def load_trajectory(path) -> list:
    lines = Path(path).read_text().splitlines()
    return [RoundRecord.from_dict(json.loads(line)) for line in lines if line.strip()]
