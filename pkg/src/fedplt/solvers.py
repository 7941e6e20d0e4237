"""
Local training procedures.

Every solver approximates ``prox_{rho f_i}(v)``, i.e. minimizes

    d(w) = f_i(w) + ||w - v||^2 / (2 rho),

starting from the agent's current model ``x_start``. Starting there (and not
at ``v`` or zero) is what makes the outer iteration contractive.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .privacy import clip_rows
from .problem import ConvexityBounds
from .splitting import optimal_step, prox_gd


@dataclass(frozen=True)
class GD:
    step: float | None = None  # None: 2 / (lambda_lo + lambda_hi + 2 / rho)


@dataclass(frozen=True)
class AGD:
    pass


@dataclass(frozen=True)
class SGD:
    batch: int = 1
    step: float | None = None


@dataclass(frozen=True)
class NoisyGD:
    tau: float = 0.0  # noise standard deviation; per-step noise is sqrt(2 step) * N(0, tau^2 I)
    step: float | None = None
    clip: float | None = None  # sensitivity bound L; per-sample gradients clipped to norm L / 2


@dataclass(frozen=True)
class Exact:
    """Solve the subproblem to ``tol`` (test oracle, not a practical solver)."""

    tol: float = 1e-12


SolverKind = GD | AGD | SGD | NoisyGD | Exact


@dataclass
class LocalSolveConfig:
    kind: SolverKind
    epochs: int
    rho: float
    bounds: ConvexityBounds | None = None
    rng: np.random.Generator | None = None

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("need at least one local epoch")
        if self.rho <= 0:
            raise ValueError("rho must be positive")

    def step(self) -> float:
        """Step size of the gradient-type solvers, validated against the smoothness bound."""
        gamma = getattr(self.kind, "step", None)
        if gamma is None:
            if self.bounds is None:
                raise ValueError("default step needs convexity bounds")
            return optimal_step(self.bounds, self.rho)
        if self.bounds is not None:
            upper = 2.0 / (self.bounds.lambda_hi + 1.0 / self.rho)
            if not 0 < gamma < upper:
                raise ValueError(f"step {gamma} outside (0, {upper})")
        elif gamma <= 0:
            raise ValueError("step must be positive")
        return gamma


def local_objective_gradient(w, v, cost, rho: float) -> np.ndarray:
    """Gradient of ``f_i(w) + ||w - v||^2 / (2 rho)``."""
    w = np.asarray(w, dtype=float)
    return cost.grad(w) + (w - np.asarray(v, dtype=float)) / rho


def run_gd(cost, x_start, v, cfg: LocalSolveConfig) -> np.ndarray:
    gamma = cfg.step()
    w = np.array(x_start, dtype=float)
    for _ in range(cfg.epochs):
        w = w - gamma * local_objective_gradient(w, v, cost, cfg.rho)
    return w


def run_agd(cost, x_start, v, cfg: LocalSolveConfig) -> np.ndarray:
    """Constant-momentum accelerated gradient on the strongly convex subproblem."""
    if cfg.bounds is None:
        raise ValueError("accelerated gradient needs convexity bounds")
    sb = cfg.bounds.shifted(cfg.rho)
    step = 1.0 / sb.lambda_hi
    momentum = (np.sqrt(sb.lambda_hi) - np.sqrt(sb.lambda_lo)) / (np.sqrt(sb.lambda_hi) + np.sqrt(sb.lambda_lo))
    w = np.array(x_start, dtype=float)
    u = w.copy()
    for _ in range(cfg.epochs):
        u_next = w - step * local_objective_gradient(w, v, cost, cfg.rho)
        w = u_next + momentum * (u_next - u)
        u = u_next
    return w


def sample_batch(rng: np.random.Generator, q: int, batch: int) -> np.ndarray:
    """Sorted indices of a uniform batch drawn without replacement."""
    return np.sort(rng.choice(q, size=batch, replace=False))


def run_sgd(cost, x_start, v, cfg: LocalSolveConfig) -> np.ndarray:
    kind = cfg.kind
    if not 1 <= kind.batch <= cost.q:
        raise ValueError(f"batch size {kind.batch} outside [1, {cost.q}]")
    if cfg.rng is None:
        raise ValueError("stochastic gradient needs an rng stream")
    gamma = cfg.step()
    w = np.array(x_start, dtype=float)
    v = np.asarray(v, dtype=float)
    for _ in range(cfg.epochs):
        idx = sample_batch(cfg.rng, cost.q, kind.batch)
        w = w - gamma * (cost.batch_grad(w, idx) + (w - v) / cfg.rho)
    return w


def clipped_gradient(cost, w, L: float) -> np.ndarray:
    """Data-loss gradient averaged over per-sample gradients clipped to norm ``L / 2``."""
    return clip_rows(cost.sample_grads(w), L).mean(axis=0) + cost.reg_grad(w)


def run_noisy_gd(cost, x_start, v, cfg: LocalSolveConfig) -> np.ndarray:
    kind = cfg.kind
    if kind.tau < 0:
        raise ValueError("noise level must be nonnegative")
    if kind.clip is not None and kind.clip <= 0:
        raise ValueError("clipping bound must be positive")
    if cfg.rng is None:
        raise ValueError("noisy gradient needs an rng stream")
    gamma = cfg.step()
    w = np.array(x_start, dtype=float)
    v = np.asarray(v, dtype=float)
    noise_std = np.sqrt(2.0 * gamma) * kind.tau
    for _ in range(cfg.epochs):
        if kind.clip is None:
            g = cost.grad(w) + (w - v) / cfg.rho
        else:
            g = clipped_gradient(cost, w, kind.clip) + (w - v) / cfg.rho
        w = w - gamma * g + noise_std * cfg.rng.standard_normal(w.shape)
    return w


def exact_prox_oracle(cost, v, rho: float, bounds: ConvexityBounds, x0=None, tol: float = 1e-12) -> np.ndarray:
    """``prox_{rho f_i}(v)`` to subproblem gradient norm ``tol``."""
    return prox_gd(cost, v, rho, bounds, x0=x0, tol=tol)


def local_solve(cost, x_start, v, cfg: LocalSolveConfig) -> np.ndarray:
    kind = cfg.kind
    if isinstance(kind, GD):
        return run_gd(cost, x_start, v, cfg)
    if isinstance(kind, AGD):
        return run_agd(cost, x_start, v, cfg)
    if isinstance(kind, SGD):
        return run_sgd(cost, x_start, v, cfg)
    if isinstance(kind, NoisyGD):
        return run_noisy_gd(cost, x_start, v, cfg)
    if isinstance(kind, Exact):
        if cfg.bounds is None:
            raise ValueError("exact solve needs convexity bounds")
        return exact_prox_oracle(cost, v, cfg.rho, cfg.bounds, x0=x_start, tol=kind.tol)
    raise TypeError(f"unknown solver {kind!r}")
