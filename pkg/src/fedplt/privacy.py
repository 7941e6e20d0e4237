"""
Closed-form Rényi privacy accounting for noisy-gradient local training.

For agent ``i`` with ``q_i`` points, sensitivity ``L``, noise variance
``tau^2``, step ``gamma`` and strong-convexity modulus ``lambda_lo``, ``K``
rounds of ``Ne`` noisy epochs (full participation, Gaussian initialization
``N(0, 2 tau^2 / lambda_lo I)``) are ``(lam, eps_i)``-RDP with

    eps_i = lam L^2 / (lambda_lo tau^2 q_i^2) * (1 - exp(-lambda_lo gamma K Ne / 2)).

The bound saturates at ``lam L^2 / (lambda_lo tau^2 q_i^2)`` no matter how long
training runs. Conversion to ``(eps, delta)``-DP adds ``log(1/delta)/(lam-1)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

DEFAULT_DELTAS = (1e-3, 1e-5, 1e-7)


@dataclass(frozen=True)
class PrivacyParams:
    L: float
    tau_sq: float
    gamma: float
    q: tuple
    lambda_lo: float
    renyi_order: float = 2.0

    def __post_init__(self):
        if self.renyi_order <= 1:
            raise ValueError("Renyi order must exceed 1")
        if self.tau_sq <= 0:
            raise ValueError("noise variance must be positive")
        if self.L <= 0 or self.lambda_lo <= 0 or self.gamma <= 0:
            raise ValueError("L, lambda_lo and gamma must be positive")
        q = tuple(int(v) for v in np.atleast_1d(self.q))
        if not q or min(q) < 1:
            raise ValueError("dataset sizes must be positive")
        object.__setattr__(self, "q", q)


@dataclass
class PrivacyReport:
    eps_per_agent: np.ndarray
    eps_worst: float
    asymptote: np.ndarray
    K: int
    Ne: int
    renyi_order: float
    adp: dict = field(default_factory=dict)  # delta -> eps

    def rows(self, q) -> list[dict]:
        """One row per agent: ``agent, q_i, K, Ne, lambda, eps_rdp, asymptote, eps_adp@delta...``."""
        out = []
        for i, (e, a) in enumerate(zip(self.eps_per_agent, self.asymptote)):
            row = {"agent": i, "q_i": int(q[i]), "K": self.K, "Ne": self.Ne, "lambda": self.renyi_order,
                   "eps_rdp": float(e), "asymptote": float(a)}
            for d in sorted(self.adp, reverse=True):
                row[f"eps_adp@{d:g}"] = rdp_to_adp(self.renyi_order, float(e), d)
            out.append(row)
        return out


def clip_gradient(g, L: float) -> np.ndarray:
    """``g * min(1, L / (2 ||g||))``: norm at most ``L / 2``."""
    return clip_rows(np.atleast_2d(g), L).reshape(np.shape(g))


def clip_rows(G, L: float) -> np.ndarray:
    """Row-wise :func:`clip_gradient`."""
    if L <= 0:
        raise ValueError("clipping bound must be positive")
    G = np.asarray(G, dtype=float)
    norms = np.linalg.norm(G, axis=1)
    scale = np.minimum(1.0, (L / 2.0) / np.maximum(norms, np.finfo(float).tiny))
    return G * scale[:, None]


def _saturation(pp: PrivacyParams, q: int) -> float:
    return pp.renyi_order * pp.L**2 / (pp.lambda_lo * pp.tau_sq * q**2)


def rdp_epsilon_agent(pp: PrivacyParams, i: int, K: float, Ne: int) -> float:
    if K < 0 or Ne < 0:
        raise ValueError("K and Ne must be nonnegative")
    if math.isinf(K):
        return _saturation(pp, pp.q[i])
    return _saturation(pp, pp.q[i]) * -math.expm1(-pp.lambda_lo * pp.gamma * K * Ne / 2.0)


def rdp_epsilon_worst(pp: PrivacyParams, K: float, Ne: int) -> float:
    """The bound for the smallest local dataset, hence the largest over agents."""
    return rdp_epsilon_agent(pp, int(np.argmin(pp.q)), K, Ne)


def rdp_to_adp(renyi_order: float, eps: float, delta: float) -> float:
    if renyi_order <= 1:
        raise ValueError("Renyi order must exceed 1")
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    return eps + math.log(1.0 / delta) / (renyi_order - 1.0)


def private_init(n: int, tau_sq: float, lambda_lo: float, rng: np.random.Generator) -> np.ndarray:
    """``N(0, 2 tau^2 / lambda_lo I_n)``; ``tau_sq = 0`` gives zeros without consuming the stream."""
    if tau_sq < 0 or lambda_lo <= 0:
        raise ValueError("need tau_sq >= 0 and lambda_lo > 0")
    if tau_sq == 0:
        return np.zeros(n)
    return math.sqrt(2.0 * tau_sq / lambda_lo) * rng.standard_normal(n)


def privacy_report(pp: PrivacyParams, K: int, Ne: int, deltas=DEFAULT_DELTAS) -> PrivacyReport:
    eps = np.array([rdp_epsilon_agent(pp, i, K, Ne) for i in range(len(pp.q))])
    asym = np.array([_saturation(pp, q) for q in pp.q])
    worst = rdp_epsilon_worst(pp, K, Ne)
    return PrivacyReport(eps, worst, asym, K, Ne, pp.renyi_order,
                         {d: rdp_to_adp(pp.renyi_order, worst, d) for d in deltas})


@dataclass(frozen=True)
class AccuracyBound:
    value: float
    asymptotic: bool  # False when ||S|| >= 1: only the partial sum up to K is meaningful


def privacy_accuracy_bound(spectral_norm: float, chi: float, Ne: int, tau: float, n: int, N: int,
                           gamma: float, K: float, initial_dist: float) -> AccuracyBound:
    """Bound on the stacked state distance after ``K`` rounds of noisy local training.

    ``||S||^K d0 + (1 - ||S||^K) / (1 - ||S||) * tau sqrt(10 n N gamma) * (1 - chi^Ne) / (1 - chi)``.
    ``K = inf`` gives the asymptote (infinite when ``||S|| >= 1``).
    """
    if not 0 <= chi < 1:
        raise ValueError("chi must lie in [0, 1)")
    if tau < 0 or spectral_norm < 0:
        raise ValueError("tau and the spectral norm must be nonnegative")
    s = spectral_norm
    inner = 1.0 if Ne == 1 else (1.0 - chi**Ne) / (1.0 - chi)
    noise = tau * math.sqrt(10.0 * n * N * gamma) * inner
    if math.isinf(K):
        if s >= 1.0:
            return AccuracyBound(math.inf if noise > 0 or initial_dist > 0 else 0.0, False)
        return AccuracyBound(noise / (1.0 - s), True)
    sK = s**K
    geo = K if s == 1.0 else (1.0 - sK) / (1.0 - s)
    return AccuracyBound(sK * initial_dist + geo * noise, s < 1.0)


def per_sample_gradient_bound(features) -> float:
    """``max_h ||a_h||``: every logistic per-sample gradient has at most this norm."""
    return float(np.max(np.linalg.norm(np.asarray(features), axis=1)))


def sensitivity_check(cost, L: float, samples: int = 100, rng: np.random.Generator | None = None,
                      clip: bool = False, scale: float = 1.0) -> bool:
    """Statistical falsifier of ``||grad f^D(x) - grad f^D'(x)|| <= L / q``.

    Draws ``samples`` random points ``x ~ scale * N(0, I)``, swaps one random
    data point for a fresh draw from the same dataset's other rows, and checks
    the bound on each trial. With ``clip`` the per-sample gradients are clipped
    at ``L / 2`` first, which makes the bound hold by construction.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    d = cost.dataset
    q = d.q
    ok = True
    for _ in range(samples):
        x = scale * rng.standard_normal(d.n)
        G = cost.sample_grads(x)
        if clip:
            G = clip_rows(G, L) if L > 0 else np.zeros_like(G)
        j = int(rng.integers(q))
        # neighbouring dataset: point j replaced by an independent random point
        a_new = d.features[int(rng.integers(q))] * rng.uniform(-1.0, 1.0)
        b_new = -d.labels[j]
        m = b_new * (a_new @ x)
        g_new = a_new * (-b_new * math.exp(-np.logaddexp(0.0, m)))
        if clip:
            g_new = clip_rows(g_new[None, :], L)[0] if L > 0 else np.zeros_like(g_new)
        diff = np.linalg.norm(G[j] - g_new) / q
        if diff > L / q + 1e-15:
            ok = False
    return ok
