"""
Contraction certificates and parameter tuning.

With ``c`` the contraction factor of the local solver after ``Ne`` epochs,
``zeta`` the exact PRS rate and ``m = lambda_lo + 1/rho``, the pair of errors
``(||x_k - x_bar||, ||z_k - z_bar||)`` is propagated entrywise by

    S = [[c,     (1 + c) / m    ],
         [2 c,   zeta + 2 c / m ]].

Stability of ``S`` (spectral radius < 1) is what parameter tuning targets; the
per-step contraction constant that enters the convergence bound is ``||S||``.
The two can disagree, and both are reported.

Note the off-diagonal term: the Lipschitz constant of ``prox_{rho f}`` is
``1 / (1 + rho lambda_lo) = (1/rho) / m``, so ``1 / m`` bounds it only for
``rho >= 1``. Rate-domination checks should be run in that regime.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from itertools import product

import numpy as np

from .problem import ConvexityBounds
from .splitting import optimal_step, prs_rate


class NoStablePoint(RuntimeError):
    """Raised when no grid point yields a stable contraction matrix."""


@dataclass(frozen=True)
class ContractionReport:
    rho: float
    gamma: float | None
    Ne: int
    chi_pow: float
    zeta: float
    S: np.ndarray
    spectral_radius: float
    spectral_norm: float
    sigma: float
    nu: float = 0.0
    stabilizability_lhs: float = math.nan
    stabilizability_rhs: float = math.nan

    @property
    def stable(self) -> bool:
        return self.spectral_radius < 1.0

    @property
    def stabilizability_holds(self) -> bool:
        return self.stabilizability_lhs < self.stabilizability_rhs

    @property
    def certificate_gap(self) -> bool:
        """Stable, yet ``||S|| >= 1`` so the convergence bound does not contract per step."""
        return self.spectral_radius < 1.0 <= self.spectral_norm

    def row(self) -> dict:
        return {
            "rho": float(self.rho),
            "gamma": None if self.gamma is None else float(self.gamma),
            "Ne": int(self.Ne),
            "chi_term": float(self.chi_pow),
            "zeta": float(self.zeta),
            "spectral_radius": float(self.spectral_radius),
            "spectral_norm": float(self.spectral_norm),
            "sigma": float(self.sigma),
            "stable": bool(self.stable),
            "stabilizability_holds": bool(self.stabilizability_holds),
            "certificate_gap": bool(self.certificate_gap),
        }


def chi_gd(gamma: float, b: ConvexityBounds, rho: float) -> float:
    """Contraction factor of one gradient step on the proximal subproblem."""
    sb = b.shifted(rho)
    if not 0 < gamma < 2.0 / sb.lambda_hi:
        raise ValueError(f"step {gamma} outside (0, {2.0 / sb.lambda_hi})")
    return max(abs(1 - gamma * sb.lambda_lo), abs(1 - gamma * sb.lambda_hi))


def chi_agd(Ne: int, b: ConvexityBounds, rho: float) -> float:
    """Contraction bound of ``Ne`` accelerated steps; can exceed 1 for small ``Ne``."""
    if Ne < 1:
        raise ValueError("Ne must be at least 1")
    sb = b.shifted(rho)
    kappa = sb.lambda_hi / sb.lambda_lo
    return (1.0 + kappa) * (1.0 - math.sqrt(1.0 / kappa)) ** Ne


def agd_min_epochs(b: ConvexityBounds, rho: float) -> int:
    """Smallest ``Ne`` with ``Ne > log(1 + kappa) / |log(1 - 1/sqrt(kappa))|``."""
    sb = b.shifted(rho)
    kappa = sb.lambda_hi / sb.lambda_lo
    if kappa == 1.0:
        return 1
    threshold = math.log(1.0 + kappa) / abs(math.log(1.0 - 1.0 / math.sqrt(kappa)))
    return math.floor(threshold) + 1


def build_S(chi_pow: float, zeta: float, b: ConvexityBounds, rho: float) -> np.ndarray:
    if chi_pow < 0 or zeta < 0:
        raise ValueError("chi_pow and zeta must be nonnegative")
    m = b.lambda_lo + 1.0 / rho
    return np.array([
        [chi_pow, (1.0 + chi_pow) / m],
        [2.0 * chi_pow, zeta + 2.0 * chi_pow / m],
    ])


def eig2(S) -> tuple[float, float]:
    """Eigenvalues of a 2x2 matrix with real spectrum, larger first."""
    t = S[0, 0] + S[1, 1]
    det = S[0, 0] * S[1, 1] - S[0, 1] * S[1, 0]
    disc = t * t - 4.0 * det
    if disc < 0:
        raise ValueError("complex eigenvalues")
    r = math.sqrt(disc)
    return (t + r) / 2.0, (t - r) / 2.0


def norm2(S) -> float:
    """Largest singular value of a 2x2 matrix."""
    fro = float(np.sum(S * S))
    det = S[0, 0] * S[1, 1] - S[0, 1] * S[1, 0]
    return math.sqrt((fro + math.sqrt(max(fro * fro - 4.0 * det * det, 0.0))) / 2.0)


def stabilizability_sides(chi_pow: float, zeta: float, b: ConvexityBounds, rho: float) -> tuple[float, float]:
    """``((1 - zeta)(1 - c), 4 c / m)``.

    ``stabilizability_holds`` reports the inequality ``lhs < rhs`` as commonly stated.
    For ``c, zeta < 1`` the largest eigenvalue of ``S`` is below 1 exactly when
    ``lhs > rhs``, so stability itself is always decided from the eigenvalues.
    """
    m = b.lambda_lo + 1.0 / rho
    return (1.0 - zeta) * (1.0 - chi_pow), 4.0 * chi_pow / m


def stability_check(S, chi_pow: float, zeta: float, b: ConvexityBounds, rho: float) -> dict:
    lam1, lam2 = eig2(S)
    lhs, rhs = stabilizability_sides(chi_pow, zeta, b, rho)
    radius = max(abs(lam1), abs(lam2))
    return {
        "stable": radius < 1.0,
        "stabilizability_holds": lhs < rhs,
        "spectral_radius": radius,
        "spectral_norm": norm2(S),
        "stabilizability_lhs": lhs,
        "stabilizability_rhs": rhs,
    }


def sigma_rate(p_lo: float, spectral_norm: float) -> float:
    """Rate under Bernoulli participation with smallest probability ``p_lo``."""
    if not 0 < p_lo <= 1:
        raise ValueError("p_lo must lie in (0, 1]")
    if spectral_norm < 0:
        raise ValueError("spectral norm must be nonnegative")
    if p_lo == 1.0:
        return spectral_norm
    return math.sqrt(1.0 - p_lo + p_lo * spectral_norm**2)


def contraction_report(rho: float, b: ConvexityBounds, Ne: int, *, gamma: float | None = None,
                       solver: str = "gd", p_lo: float = 1.0, nu: float = 0.0) -> ContractionReport:
    """Assemble the certificate for one parameter choice.

    ``solver`` is ``"gd"`` (factor ``chi_gd(gamma)^Ne``, ``gamma`` defaulting to
    the rate-optimal step), ``"agd"`` (factor ``chi_agd(Ne)``) or ``"exact"``
    (factor 0).
    """
    if solver == "gd":
        gamma = optimal_step(b, rho) if gamma is None else gamma
        chi_pow = chi_gd(gamma, b, rho) ** Ne
    elif solver == "agd":
        gamma = None
        chi_pow = chi_agd(Ne, b, rho)
    elif solver == "exact":
        gamma = None
        chi_pow = 0.0
    else:
        raise ValueError(f"unknown solver {solver!r}")
    zeta = prs_rate(rho, b)
    S = build_S(chi_pow, zeta, b, rho)
    chk = stability_check(S, chi_pow, zeta, b, rho)
    return ContractionReport(
        rho=rho, gamma=gamma, Ne=Ne, chi_pow=chi_pow, zeta=zeta, S=S,
        spectral_radius=chk["spectral_radius"], spectral_norm=chk["spectral_norm"],
        sigma=sigma_rate(p_lo, chk["spectral_norm"]), nu=nu,
        stabilizability_lhs=chk["stabilizability_lhs"], stabilizability_rhs=chk["stabilizability_rhs"],
    )


def error_bound_curve(report: ContractionReport, initial_dist: float, p_lo: float, p_hi: float, K: int) -> np.ndarray:
    """Expected-error bound for rounds ``k = 1..K``.

    ``sqrt(p_hi/p_lo) * (sigma^k * initial_dist + (1 - sigma^k) / (1 - sigma) * nu)``
    with ``sigma`` recomputed from ``p_lo``.
    """
    if not 0 < p_lo <= p_hi <= 1:
        raise ValueError("need 0 < p_lo <= p_hi <= 1")
    sigma = sigma_rate(p_lo, report.spectral_norm)
    k = np.arange(1, K + 1, dtype=float)
    sk = sigma**k
    geo = k if sigma == 1.0 else (1.0 - sk) / (1.0 - sigma)
    return math.sqrt(p_hi / p_lo) * (sk * initial_dist + geo * report.nu)


def error_bound_limit(report: ContractionReport, p_lo: float, p_hi: float) -> float:
    sigma = sigma_rate(p_lo, report.spectral_norm)
    if sigma >= 1.0:
        return math.inf
    return math.sqrt(p_hi / p_lo) * report.nu / (1.0 - sigma)


@dataclass
class TuneGrid:
    rho_values: list
    Ne_values: list
    gamma_values: list | None = None  # None: rate-optimal step only
    relative_gamma: bool = False  # gamma_values are multiples of the rate-optimal step
    p_lo: float = 1.0
    p_hi: float = 1.0

    def __post_init__(self):
        if not self.rho_values or not self.Ne_values or self.gamma_values == []:
            raise ValueError("grid lists must be nonempty")
        if not 0 < self.p_lo <= self.p_hi <= 1:
            raise ValueError("need 0 < p_lo <= p_hi <= 1")


@dataclass
class TuneResult:
    best: ContractionReport
    table: list = field(default_factory=list)

    @property
    def rho(self):
        return self.best.rho

    @property
    def gamma(self):
        return self.best.gamma

    @property
    def Ne(self):
        return self.best.Ne


def evaluate_grid(g: TuneGrid, b: ConvexityBounds, solver: str = "gd") -> list[ContractionReport]:
    """Every grid point's report; step sizes outside the admissible range are skipped."""
    out = []
    for rho, Ne in product(g.rho_values, g.Ne_values):
        if solver == "gd":
            gammas = [None] if g.gamma_values is None else list(g.gamma_values)
            for gv in gammas:
                gamma = optimal_step(b, rho) if gv is None else (gv * optimal_step(b, rho) if g.relative_gamma else gv)
                try:
                    out.append(contraction_report(rho, b, Ne, gamma=gamma, solver="gd", p_lo=g.p_lo))
                except ValueError:
                    continue
        else:
            out.append(contraction_report(rho, b, Ne, solver=solver, p_lo=g.p_lo))
    return out


def tune_grid(g: TuneGrid, b: ConvexityBounds, solver: str = "gd") -> TuneResult:
    """Stable grid point of smallest ``||S||`` (ties: smaller ``Ne``, then smaller ``rho``)."""
    table = evaluate_grid(g, b, solver)
    stable = [r for r in table if r.stable]
    if not stable:
        raise NoStablePoint(f"none of {len(table)} grid points gives a stable contraction matrix")
    best = min(stable, key=lambda r: (r.spectral_norm, r.Ne, r.rho))
    if best.certificate_gap:
        warnings.warn(
            f"best point is stable (radius {best.spectral_radius:.4g}) but ||S|| = "
            f"{best.spectral_norm:.4g} >= 1: the error bound does not contract per step",
            stacklevel=2,
        )
    return TuneResult(best, table)
