"""
Proximal operators and a centralized Peaceman-Rachford reference solver.

The reference solver iterates

    y_{k+1} = prox_{rho g}(z_k)
    x_{k+1} = prox_{rho f}(2 y_{k+1} - z_k)
    z_{k+1} = z_k + 2 (x_{k+1} - y_{k+1})

on the stacked consensus problem, with every ``prox_{rho f_i}`` solved to a
gradient-norm tolerance. Its fixed point ``(x_bar, z_bar)`` is the ground truth
that the federated runs are measured against.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .problem import ConvexityBounds, NonsmoothSpec, ProblemInstance


def soft_threshold(v, threshold):
    return np.sign(v) * np.maximum(np.abs(v) - threshold, 0.0)


def prox_h(h: NonsmoothSpec, v, penalty: float) -> np.ndarray:
    """``argmin_x h(x) + ||x - v||^2 / (2 penalty)``."""
    v = np.asarray(v, dtype=float)
    if h.is_zero:
        return v.copy()
    return soft_threshold(v, penalty * h.weight)


def reflect_h(h: NonsmoothSpec, v, penalty: float) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    return 2.0 * prox_h(h, v, penalty) - v


def consensus_prox(z_all, h: NonsmoothSpec, rho: float) -> np.ndarray:
    """Single block ``y`` of ``prox_{rho g}(z)`` for ``g = indicator(consensus) + h(x_1)``.

    The stacked proximal is ``1_N kron y`` with ``y = prox_{rho h / N}(mean_i z_i)``.
    """
    z_all = np.atleast_2d(np.asarray(z_all, dtype=float))
    N = z_all.shape[0]
    return prox_h(h, z_all.mean(axis=0), rho / N)


def prs_rate(rho: float, b: ConvexityBounds) -> float:
    """Contraction factor of ``refl_{rho f} o refl_{rho g}`` for strongly convex smooth ``f``."""
    if rho <= 0:
        raise ValueError("rho must be positive")
    return max(
        abs(1 - rho * b.lambda_hi) / (1 + rho * b.lambda_hi),
        abs(1 - rho * b.lambda_lo) / (1 + rho * b.lambda_lo),
    )


def optimal_step(b: ConvexityBounds, rho: float) -> float:
    """Rate-optimal gradient step on ``f + ||. - v||^2 / (2 rho)``."""
    return 2.0 / (b.lambda_lo + b.lambda_hi + 2.0 / rho)


def prox_gd(cost, v, rho: float, bounds: ConvexityBounds, x0=None, tol: float = 1e-12,
            max_iter: int = 200_000) -> np.ndarray:
    """Solve ``min_x f(x) + ||x - v||^2 / (2 rho)`` by gradient descent.

    Runs until the subproblem gradient norm is at most ``tol``; raises
    ``RuntimeError`` after ``max_iter`` steps.
    """
    v = np.asarray(v, dtype=float)
    w = v.copy() if x0 is None else np.array(x0, dtype=float)
    step = optimal_step(bounds, rho)
    for _ in range(max_iter):
        g = cost.grad(w) + (w - v) / rho
        if np.linalg.norm(g) <= tol:
            return w
        w = w - step * g
    raise RuntimeError(
        f"proximal solve did not reach gradient norm {tol:g} in {max_iter} steps; "
        "the subproblem is ill-conditioned or the bounds are wrong"
    )


@dataclass(frozen=True)
class PrsState:
    x: np.ndarray  # (N, n)
    y: np.ndarray  # (n,)
    z: np.ndarray  # (N, n)


def prs_step(p: ProblemInstance, z, rho: float, inner_tolerance: float = 1e-12, x_warm=None) -> PrsState:
    """One exact Peaceman-Rachford iteration from ``z`` (stacked ``(N, n)``)."""
    bounds = p.require_bounds()
    y = consensus_prox(z, p.nonsmooth, rho)
    x = np.empty_like(z)
    for i, c in enumerate(p.costs):
        v = 2.0 * y - z[i]
        x0 = None if x_warm is None else x_warm[i]
        x[i] = prox_gd(c, v, rho, bounds, x0=x0, tol=inner_tolerance)
    return PrsState(x, y, z + 2.0 * (x - y))


_REFERENCE_CACHE: dict = {}


def prs_reference_solve(p: ProblemInstance, rho: float, iterations: int = 10_000,
                        inner_tolerance: float = 1e-12, tol: float = 1e-13, z0=None,
                        use_cache: bool = True):
    """Ground-truth ``(x_star, z_star)`` by exact Peaceman-Rachford splitting.

    Iterates until ``||z_{k+1} - z_k|| <= tol * max(1, ||z_k||)`` or
    ``iterations`` steps. Results are cached on ``(fingerprint, rho, ...)``.

    Returns
    -------
    x_star : ndarray, shape (n,)
        Consensus block of ``y`` at the final iterate.
    z_star : ndarray, shape (N, n)
    """
    if rho <= 0:
        raise ValueError("rho must be positive")
    key = (p.fingerprint(), float(rho), iterations, inner_tolerance, tol)
    if use_cache and z0 is None and key in _REFERENCE_CACHE:
        x_star, z_star = _REFERENCE_CACHE[key]
        return x_star.copy(), z_star.copy()
    z = np.zeros((p.N, p.n)) if z0 is None else np.array(z0, dtype=float)
    x = None
    for k in range(iterations):
        s = prs_step(p, z, rho, inner_tolerance, x_warm=x)
        if not (np.all(np.isfinite(s.z)) and np.all(np.isfinite(s.x))):
            raise FloatingPointError(f"reference PRS produced non-finite iterates at step {k}")
        done = np.linalg.norm(s.z - z) <= tol * max(1.0, np.linalg.norm(z))
        z, x = s.z, s.x
        if done:
            break
    x_star = consensus_prox(z, p.nonsmooth, rho)
    if use_cache and z0 is None:
        _REFERENCE_CACHE[key] = (x_star.copy(), z.copy())
    return x_star, z


def prs_trajectory(p: ProblemInstance, z0, rho: float, rounds: int, inner_tolerance: float = 1e-12):
    """The first ``rounds`` exact iterates ``[(y_1, z_1), ...]`` from ``z0``."""
    z = np.array(z0, dtype=float)
    out, x = [], None
    for _ in range(rounds):
        s = prs_step(p, z, rho, inner_tolerance, x_warm=x)
        out.append((s.y, s.z))
        z, x = s.z, s.x
    return out
