"""
Composite empirical-risk problems.

Each agent ``i`` owns a smooth cost ``f_i`` and all agents share a nonsmooth
term ``h``; the federated problem is ``min_x sum_i f_i(x) + h(x)``.

Two families of agent costs are provided:

* :class:`LogisticCost` -- averaged logistic loss over a local dataset plus a
  weighted regularizer (the classification benchmark);
* :class:`QuadraticCost` -- separable quadratics ``0.5 * sum_j c_j (x_j - m_j)^2``,
  used as closed-form test fixtures.

Both expose ``loss``, ``grad``, ``sample_grads`` and ``reg_grad`` so the local
solvers never need to know which family they are running on.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence, Union

import numpy as np

BALANCE_TOLERANCE = 0.1
LABEL_FLIP_PROB = 0.05
LABEL_NOISE_STD = 0.1
DEFAULT_FEATURE_SCALE = 3.0


@dataclass(frozen=True)
class RegularizerSpec:
    """Smooth regularizer ``weight * r(x)``.

    ``kind`` is one of ``"none"``, ``"l2"`` (``r(x) = ||x||^2 / 2``) or
    ``"nonconvex"`` (``r(x) = sum_j x_j^2 / (1 + x_j^2)``).
    """

    kind: str = "l2"
    weight: float = 0.5

    def __post_init__(self):
        if self.kind not in ("none", "l2", "nonconvex"):
            raise ValueError(f"unknown regularizer kind {self.kind!r}")
        if self.kind != "none" and not self.weight > 0:
            raise ValueError("regularizer weight must be positive")

    def value(self, x: np.ndarray) -> float:
        if self.kind == "none":
            return 0.0
        if self.kind == "l2":
            return self.weight * 0.5 * float(x @ x)
        return self.weight * float(np.sum(x**2 / (1.0 + x**2)))

    def grad(self, x: np.ndarray) -> np.ndarray:
        if self.kind == "none":
            return np.zeros_like(x)
        if self.kind == "l2":
            return self.weight * x
        return self.weight * 2.0 * x / (1.0 + x**2) ** 2


@dataclass(frozen=True)
class NonsmoothSpec:
    """Shared nonsmooth term ``h``: ``"zero"`` or ``"l1"`` (``weight * ||x||_1``)."""

    kind: str = "zero"
    weight: float = 0.0

    def __post_init__(self):
        if self.kind not in ("zero", "l1"):
            raise ValueError(f"unknown nonsmooth kind {self.kind!r}")
        if self.weight < 0:
            raise ValueError("nonsmooth weight must be nonnegative")

    @property
    def is_zero(self) -> bool:
        return self.kind == "zero" or self.weight == 0.0

    def value(self, x: np.ndarray) -> float:
        if self.is_zero:
            return 0.0
        return self.weight * float(np.sum(np.abs(x)))


@dataclass(frozen=True)
class ConvexityBounds:
    """Strong convexity modulus ``lambda_lo`` and smoothness modulus ``lambda_hi``."""

    lambda_lo: float
    lambda_hi: float

    def __post_init__(self):
        if not (0 < self.lambda_lo <= self.lambda_hi < np.inf):
            raise ValueError(
                f"need 0 < lambda_lo <= lambda_hi < inf, got {self.lambda_lo}, {self.lambda_hi}"
            )

    def shifted(self, rho: float) -> "ConvexityBounds":
        """Moduli of the proximal subproblem ``f + ||. - v||^2 / (2 rho)``."""
        return ConvexityBounds(self.lambda_lo + 1.0 / rho, self.lambda_hi + 1.0 / rho)


@dataclass(frozen=True, eq=False)
class LocalDataset:
    features: np.ndarray  # (q, n)
    labels: np.ndarray  # (q,), entries +-1
    agent_id: int = 0

    def __post_init__(self):
        a = np.asarray(self.features, dtype=float)
        b = np.asarray(self.labels, dtype=float)
        if a.ndim != 2 or b.shape != (a.shape[0],) or a.shape[0] < 1:
            raise ValueError("features must be (q, n) and labels (q,) with q >= 1")
        if not np.all(np.isfinite(a)):
            raise ValueError("features must be finite")
        if not np.all(np.abs(b) == 1.0):
            raise ValueError("labels must be exactly +1 or -1")
        object.__setattr__(self, "features", a)
        object.__setattr__(self, "labels", b)

    @property
    def q(self) -> int:
        return self.features.shape[0]

    @property
    def n(self) -> int:
        return self.features.shape[1]

    @property
    def positives(self) -> int:
        return int(np.sum(self.labels > 0))


def _check_dim(x: np.ndarray, n: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != (n,):
        raise ValueError(f"dimension mismatch: expected ({n},), got {x.shape}")
    return x


def _margin_weights(x, d: LocalDataset) -> np.ndarray:
    # d/dm log(1 + exp(-m)) = -1 / (1 + exp(m)), evaluated stably
    m = d.labels * (d.features @ x)
    return -d.labels * np.exp(-np.logaddexp(0.0, m))


def local_loss(x, d: LocalDataset, r: RegularizerSpec) -> float:
    """Averaged logistic loss of ``d`` at ``x`` plus ``r``."""
    x = _check_dim(x, d.n)
    m = d.labels * (d.features @ x)
    return float(np.mean(np.logaddexp(0.0, -m))) + r.value(x)


def local_gradient(x, d: LocalDataset, r: RegularizerSpec) -> np.ndarray:
    x = _check_dim(x, d.n)
    s = _margin_weights(x, d)
    return d.features.T @ s / d.q + r.grad(x)


def _top_gram_eigenvalue(d: LocalDataset) -> float:
    gram = d.features.T @ d.features / (4.0 * d.q)
    return float(np.linalg.eigvalsh(gram)[-1])


def smoothness_bounds(datasets: Sequence[LocalDataset], r: RegularizerSpec) -> ConvexityBounds:
    """Moduli shared by all logistic agents.

    The logistic second derivative is at most 1/4, so each data term is
    ``lambda_max(A^T A / (4 q))``-smooth; the l2 regularizer contributes
    ``weight`` to both moduli.
    """
    if r.kind != "l2":
        raise ValueError("convexity bounds need the l2 regularizer (got %r)" % r.kind)
    top = max(_top_gram_eigenvalue(d) for d in datasets)
    return ConvexityBounds(r.weight, r.weight + top)


@dataclass(frozen=True, eq=False)
class LogisticCost:
    dataset: LocalDataset
    regularizer: RegularizerSpec

    @property
    def n(self) -> int:
        return self.dataset.n

    @property
    def q(self) -> int:
        return self.dataset.q

    def loss(self, x) -> float:
        return local_loss(x, self.dataset, self.regularizer)

    def grad(self, x) -> np.ndarray:
        return local_gradient(x, self.dataset, self.regularizer)

    def reg_grad(self, x) -> np.ndarray:
        return self.regularizer.grad(x)

    def sample_grads(self, x, idx=None) -> np.ndarray:
        """Per-sample data-loss gradients (regularizer excluded), one row each."""
        d = self.dataset
        a, b = (d.features, d.labels) if idx is None else (d.features[idx], d.labels[idx])
        m = b * (a @ x)
        s = -b * np.exp(-np.logaddexp(0.0, m))
        return a * s[:, None]

    def batch_grad(self, x, idx) -> np.ndarray:
        """Minibatch estimate of ``grad`` over rows ``idx``."""
        d = self.dataset
        a, b = d.features[idx], d.labels[idx]
        m = b * (a @ x)
        s = -b * np.exp(-np.logaddexp(0.0, m))
        return a.T @ s / len(idx) + self.regularizer.grad(x)


@dataclass(frozen=True, eq=False)
class QuadraticCost:
    """``0.5 * sum_j curvature_j * (x_j - center_j)^2`` treated as a single sample."""

    center: np.ndarray
    curvature: np.ndarray

    def __post_init__(self):
        c = np.atleast_1d(np.asarray(self.center, dtype=float))
        k = np.broadcast_to(np.asarray(self.curvature, dtype=float), c.shape).copy()
        if np.any(k <= 0):
            raise ValueError("curvature must be positive")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "curvature", k)

    @property
    def n(self) -> int:
        return self.center.shape[0]

    q = 1

    def loss(self, x) -> float:
        x = _check_dim(x, self.n)
        return 0.5 * float(np.sum(self.curvature * (x - self.center) ** 2))

    def grad(self, x) -> np.ndarray:
        x = _check_dim(x, self.n)
        return self.curvature * (x - self.center)

    def reg_grad(self, x) -> np.ndarray:
        return np.zeros(self.n)

    def sample_grads(self, x, idx=None) -> np.ndarray:
        return self.grad(x)[None, :]

    def batch_grad(self, x, idx) -> np.ndarray:
        return self.grad(x)

    def prox(self, v, rho: float) -> np.ndarray:
        """Closed-form ``argmin f(x) + ||x - v||^2 / (2 rho)``."""
        return (rho * self.curvature * self.center + v) / (rho * self.curvature + 1.0)


AgentCost = Union[LogisticCost, QuadraticCost]


@dataclass(frozen=True, eq=False)
class ProblemInstance:
    costs: tuple
    nonsmooth: NonsmoothSpec
    bounds: ConvexityBounds | None
    n: int
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.costs) < 1:
            raise ValueError("need at least one agent")
        if any(c.n != self.n for c in self.costs):
            raise ValueError("all agents must share the model dimension")

    @property
    def N(self) -> int:
        return len(self.costs)

    @property
    def datasets(self) -> list[LocalDataset]:
        return [c.dataset for c in self.costs]

    @property
    def kind(self) -> str:
        return "logistic" if isinstance(self.costs[0], LogisticCost) else "quadratic"

    def require_bounds(self) -> ConvexityBounds:
        if self.bounds is None:
            raise ValueError("problem has no convexity bounds (nonconvex regularizer?)")
        return self.bounds

    def smooth_gradient(self, x) -> np.ndarray:
        return sum(c.grad(x) for c in self.costs)

    def objective(self, x) -> float:
        return sum(c.loss(x) for c in self.costs) + self.nonsmooth.value(x)

    def fingerprint(self) -> str:
        """Content hash, used to key cached reference solutions."""
        h = hashlib.sha256()
        h.update(repr((self.kind, self.nonsmooth, self.n)).encode())
        for c in self.costs:
            if isinstance(c, LogisticCost):
                h.update(repr(c.regularizer).encode())
                h.update(c.dataset.features.tobytes())
                h.update(c.dataset.labels.tobytes())
            else:
                h.update(c.center.tobytes())
                h.update(c.curvature.tobytes())
        return h.hexdigest()


def logistic_problem(datasets, regularizer=RegularizerSpec(), nonsmooth=NonsmoothSpec(), meta=None):
    datasets = list(datasets)
    n = datasets[0].n
    if any(d.n != n for d in datasets):
        raise ValueError("datasets disagree on feature dimension")
    bounds = smoothness_bounds(datasets, regularizer) if regularizer.kind == "l2" else None
    costs = tuple(LogisticCost(d, regularizer) for d in datasets)
    return ProblemInstance(costs, nonsmooth, bounds, n, dict(meta or {}))


def quadratic_problem(centers, curvatures=1.0, nonsmooth=NonsmoothSpec()):
    """One :class:`QuadraticCost` per row of ``centers``.

    ``centers`` is ``(N, n)``, or ``(N,)`` for scalar agents. ``curvatures`` is
    a scalar, one value per agent ``(N,)``, or a full ``(N, n)`` array.
    """
    centers = np.asarray(centers, dtype=float)
    if centers.ndim == 1:
        centers = centers[:, None]
    curv = np.asarray(curvatures, dtype=float)
    if curv.ndim == 1:
        curv = curv[:, None]
    curv = np.broadcast_to(curv, centers.shape)
    costs = tuple(QuadraticCost(c, k) for c, k in zip(centers, curv))
    bounds = ConvexityBounds(float(curv.min()), float(curv.max()))
    return ProblemInstance(costs, nonsmooth, bounds, centers.shape[1])


def generate_logistic_data(seed: int, N: int, n: int, q: int, *, feature_scale: float = DEFAULT_FEATURE_SCALE,
                           max_tries: int = 1000) -> list[LocalDataset]:
    """Synthetic binary classification data, ``N`` agents with ``q`` points each.

    Feature rows are i.i.d. ``feature_scale * N(0, I_n)``. Labels follow
    ``sign(a @ x_true + noise)`` for one shared ground-truth ``x_true``, then
    each label is flipped with probability 0.05. A dataset whose positive count
    is further than ``max(0.1 q, 0.5)`` from ``q / 2`` is redrawn.
    """
    if min(N, n, q) < 1:
        raise ValueError("N, n and q must all be positive")
    rng = np.random.default_rng(seed)
    x_true = rng.standard_normal(n)
    band = max(BALANCE_TOLERANCE * q, 0.5)
    out = []
    for i in range(N):
        for _ in range(max_tries):
            a = feature_scale * rng.standard_normal((q, n))
            b = np.sign(a @ x_true + LABEL_NOISE_STD * rng.standard_normal(q))
            b[b == 0] = 1.0
            b[rng.random(q) < LABEL_FLIP_PROB] *= -1.0
            if abs(np.sum(b > 0) - q / 2) <= band:
                break
        else:
            raise RuntimeError(f"could not draw a balanced dataset for agent {i}")
        out.append(LocalDataset(a, b, agent_id=i))
    return out


def global_gradient_norm_sq(x_bar, p: ProblemInstance) -> float:
    """``||sum_i grad f_i(x_bar)||^2`` over the smooth parts only."""
    g = p.smooth_gradient(_check_dim(x_bar, p.n))
    return float(g @ g)


# --- serialization -----------------------------------------------------------

_MAGIC = b"FEDPLT-PROBLEM 1\n"


def save_problem(p: ProblemInstance, path, seed=None) -> None:
    """Write ``p`` as a JSON header line followed by little-endian binary records.

    Logistic records are ``n`` float64 features then one int8 label per point,
    agent by agent. Quadratic records are ``n`` float64 centers then ``n``
    float64 curvatures per agent.
    """
    header = {
        "kind": p.kind,
        "N": p.N,
        "n": p.n,
        "nonsmooth": {"kind": p.nonsmooth.kind, "weight": p.nonsmooth.weight},
        "seed": seed if seed is not None else p.meta.get("seed"),
        "meta": {k: v for k, v in p.meta.items() if k != "seed"},
    }
    chunks = []
    if p.kind == "logistic":
        reg = p.costs[0].regularizer
        header["q"] = [c.q for c in p.costs]
        header["regularizer"] = {"kind": reg.kind, "weight": reg.weight}
        rec = np.dtype([("a", "<f8", (p.n,)), ("b", "i1")])
        for c in p.costs:
            arr = np.empty(c.q, dtype=rec)
            arr["a"] = c.dataset.features
            arr["b"] = c.dataset.labels.astype(np.int8)
            chunks.append(arr.tobytes())
    else:
        for c in p.costs:
            chunks.append(c.center.astype("<f8").tobytes() + c.curvature.astype("<f8").tobytes())
    blob = _MAGIC + json.dumps(header, sort_keys=True).encode() + b"\n" + b"".join(chunks)
    Path(path).write_bytes(blob)


def load_problem(path) -> ProblemInstance:
    raw = Path(path).read_bytes()
    if not raw.startswith(_MAGIC):
        raise ValueError(f"{path}: not a problem file")
    body = raw[len(_MAGIC):]
    nl = body.index(b"\n")
    header = json.loads(body[:nl])
    data = body[nl + 1:]
    n, N = header["n"], header["N"]
    h = NonsmoothSpec(**header["nonsmooth"])
    meta = dict(header.get("meta") or {})
    if header.get("seed") is not None:
        meta["seed"] = header["seed"]
    if header["kind"] == "logistic":
        rec = np.dtype([("a", "<f8", (n,)), ("b", "i1")])
        arr = np.frombuffer(data, dtype=rec)
        if arr.size != sum(header["q"]):
            raise ValueError(f"{path}: truncated or corrupt record section")
        datasets, start = [], 0
        for i, q in enumerate(header["q"]):
            chunk = arr[start:start + q]
            datasets.append(LocalDataset(chunk["a"].astype(float), chunk["b"].astype(float), agent_id=i))
            start += q
        return logistic_problem(datasets, RegularizerSpec(**header["regularizer"]), h, meta)
    vals = np.frombuffer(data, dtype="<f8").reshape(N, 2, n)
    p = quadratic_problem(vals[:, 0, :], vals[:, 1, :], h)
    return ProblemInstance(p.costs, p.nonsmooth, p.bounds, p.n, meta)
