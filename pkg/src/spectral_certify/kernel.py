"""Finite transition kernels, stationary measures and contraction gaps."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .norms import FunctionSpace, norm

__all__ = [
    "FiniteKernel",
    "GapCertificate",
    "StationaryMeasure",
    "ConvergenceError",
    "NoContractionError",
    "apply_averaging",
    "stationary_measure",
    "contraction_factor_exact_rank1",
    "exact_gap_certificate",
    "dobrushin_coefficient",
    "sup_osc_gap_certificate",
    "estimate_gap",
    "maximize_ratio",
    "iterate_kernel",
    "load_chain_spec",
    "dump_chain_spec",
]

log = logging.getLogger(__name__)

ROW_TOL = 1e-12
PROVENANCES = ("analytic", "user", "estimated")
DEFAULT_SAFETY = 0.9


class ConvergenceError(RuntimeError):
    def __init__(self, message, residual=None, history=None):
        super().__init__(message)
        self.residual = residual
        self.history = history or []


class NoContractionError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class FiniteKernel:
    """Row-stochastic matrix ``P[x, y]`` on ``len(states)`` states."""

    P: np.ndarray
    states: tuple = ()
    metric: Optional[np.ndarray] = None
    adjacency: Optional[tuple] = None

    def __post_init__(self):
        P = np.array(self.P, dtype=float)
        if P.ndim != 2 or P.shape[0] != P.shape[1] or P.shape[0] == 0:
            raise ValueError("transition matrix must be square and non-empty")
        if np.any(P < 0) or not np.all(np.isfinite(P)):
            raise ValueError("transition probabilities must be finite and non-negative")
        sums = P.sum(axis=1)
        if np.max(np.abs(sums - 1.0)) > ROW_TOL:
            raise ValueError(f"rows must sum to 1 (max deviation {np.max(np.abs(sums - 1)):.3e})")
        P.setflags(write=False)
        object.__setattr__(self, "P", P)
        if not self.states:
            object.__setattr__(self, "states", tuple(range(P.shape[0])))
        elif len(self.states) != P.shape[0]:
            raise ValueError("number of state labels does not match the matrix")

    @property
    def n(self) -> int:
        return self.P.shape[0]

    @classmethod
    def two_state(cls, p, q):
        """Rows ``(1 - p, p)`` and ``(q, 1 - q)``."""
        return cls(np.array([[1.0 - p, p], [q, 1.0 - q]]))

    @classmethod
    def from_rows(cls, rows, states=(), **annotations):
        return cls(np.asarray(rows, dtype=float), tuple(states), **annotations)


@dataclass(frozen=True, eq=False)
class GapCertificate:
    """A contraction gap ``delta0`` with its provenance.

    ``estimated`` certificates already have ``safety_factor`` applied and
    are reported as uncertified by every downstream bound.
    """

    delta0: float
    space: object = None
    provenance: str = "user"
    safety_factor: float = 1.0
    raw_ratio: Optional[float] = None
    witness: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        d = float(self.delta0)
        if not (0.0 < d <= 1.0):
            raise ValueError(f"gap must lie in (0, 1], got {d!r}")
        if self.provenance not in PROVENANCES:
            raise ValueError(f"unknown provenance {self.provenance!r}")
        if not (0.0 < self.safety_factor <= 1.0):
            raise ValueError("safety factor must lie in (0, 1]")
        object.__setattr__(self, "delta0", d)

    @property
    def certified(self) -> bool:
        return self.provenance != "estimated"

    @property
    def space_name(self) -> str:
        if isinstance(self.space, FunctionSpace):
            return self.space.name or self.space.kind.value
        return "" if self.space is None else str(self.space)

    @classmethod
    def coerce(cls, value):
        """Accept a certificate or a bare number (treated as user-asserted)."""
        if isinstance(value, cls):
            return value
        return cls(float(value), provenance="user")


@dataclass(frozen=True)
class StationaryMeasure:
    weights: np.ndarray
    residual: float = 0.0
    iterations: int = 0

    def __call__(self, f):
        return self.weights @ np.asarray(f)


def apply_averaging(kernel: FiniteKernel, f):
    """``(L0 f)(x) = sum_y P[x, y] f(y)``; accepts a batch of row vectors."""
    f = np.asarray(f)
    if f.shape[-1] != kernel.n:
        raise ValueError(f"dimension mismatch: kernel has {kernel.n} states, got {f.shape[-1]}")
    return f @ kernel.P.T


def stationary_measure(kernel: FiniteKernel, tol=1e-12, refine=3) -> StationaryMeasure:
    """Left fixed vector of ``P`` by a direct solve with iterative refinement.

    The balance equations with one of them replaced by ``sum mu = 1`` are
    non-singular exactly when the stationary measure is unique.
    """
    n = kernel.n
    A = kernel.P.T - np.eye(n)
    A[-1, :] = 1.0
    rhs = np.zeros(n)
    rhs[-1] = 1.0
    try:
        mu = np.linalg.solve(A, rhs)
        for _ in range(refine):
            mu = mu + np.linalg.solve(A, rhs - A @ mu)
    except np.linalg.LinAlgError:
        raise ConvergenceError("stationary measure is not unique (singular balance equations)")
    mu = np.clip(mu, 0.0, None)
    mu /= mu.sum()
    residual = float(np.abs(mu @ kernel.P - mu).sum())
    if not residual <= tol:
        raise ConvergenceError(
            f"stationary measure residual {residual:.3e} exceeds {tol:.1e}", residual=residual)
    return StationaryMeasure(mu, residual, refine)


def _lazy_iid_theta(P, tol=1e-12):
    """``theta`` such that ``P = (1 - theta) I + theta 1 nu``, or None."""
    n = P.shape[0]
    off = ~np.eye(n, dtype=bool)
    cols = np.where(off, P, np.nan)
    lo = np.nanmin(cols, axis=0)
    hi = np.nanmax(cols, axis=0)
    if np.any(hi - lo > tol):
        return None
    theta = float(lo.sum())
    if theta <= 0:
        return None
    return theta


def contraction_factor_exact_rank1(kernel: FiniteKernel) -> Optional[float]:
    """Exact gap for the analytic families, else ``None``.

    Two-state kernels give ``1 - |1 - p - q|``.  Kernels of the form
    ``(1 - theta) I + theta 1 nu`` act on ``ker nu`` as multiplication by
    ``1 - theta`` and give ``1 - |1 - theta|`` in any admissible norm.
    The value may be 0 for periodic kernels; certificates reject it.
    """
    P = kernel.P
    if kernel.n == 1:
        return 1.0
    if kernel.n == 2:
        return float(1.0 - abs(1.0 - P[0, 1] - P[1, 0]))
    theta = _lazy_iid_theta(P)
    if theta is None:
        return None
    return float(1.0 - abs(1.0 - theta))


def exact_gap_certificate(kernel: FiniteKernel, space=None) -> GapCertificate:
    delta0 = contraction_factor_exact_rank1(kernel)
    if delta0 is None:
        raise ValueError("kernel is not in a family with a known exact gap")
    return GapCertificate(delta0, space=space, provenance="analytic")


def dobrushin_coefficient(kernel: FiniteKernel) -> float:
    """``max_{x,y} TV(P[x], P[y])``."""
    P = kernel.P
    return float(0.5 * np.abs(P[:, None, :] - P[None, :, :]).sum(axis=-1).max())


def sup_osc_gap_certificate(kernel: FiniteKernel) -> GapCertificate:
    """Certified gap ``(1 - k) / (1 + k)`` in the sup-plus-oscillation norm.

    ``k`` is the Dobrushin coefficient.  On ``ker mu0`` every function
    changes sign, so ``sup|f| <= osc f``; with ``osc(L0 f) <= k osc f`` and
    ``sup|L0 f| <= min(sup|f|, osc L0 f)`` the ratio ``||L0 f|| / ||f||``
    is at most ``2k / (1 + k)``.
    """
    k = dobrushin_coefficient(kernel)
    if k >= 1.0:
        raise NoContractionError("Dobrushin coefficient is 1; no certified sup-norm gap")
    return GapCertificate((1.0 - k) / (1.0 + k), space=FunctionSpace.sup_osc(kernel.n),
                          provenance="analytic")


def _ratio(space, images, F, floor=0.0):
    num = np.atleast_1d(norm(space, images))
    den = np.atleast_1d(norm(space, F))
    out = np.full(den.shape, -np.inf)
    ok = den > floor
    out[ok] = num[ok] / den[ok]
    return out


def maximize_ratio(A, space, directions, starts, steps=200, min_step=1e-10, project=None):
    """Local ascent of ``||A f|| / ||f||`` over ``span(directions)``.

    Each start is improved by steepest moves ``f +- s d`` over the
    direction set, doubling ``s`` after a success and halving it after a
    failure.  Returns ``(best_ratio, witness)``; the ratio is a lower bound
    on the restricted operator norm by construction.  ``project`` maps
    batches back onto the subspace after each accepted move, so rounding
    cannot leak out of it.
    """
    A = np.asarray(A)
    D = np.asarray(directions)
    AD = D @ A.T
    F = np.atleast_2d(np.asarray(starts, dtype=A.dtype if np.iscomplexobj(A) else float))
    den = np.atleast_1d(norm(space, F))
    # starts that project to (numerically) zero carry no direction
    keep = den > 1e-9 * den.max() if den.max() > 0 else den > 0
    F = F[keep] / den[keep, None]
    if F.shape[0] == 0:
        return -np.inf, None
    # all starts ascend together, each with its own step size
    AF = F @ A.T
    r = _ratio(space, AF, F)
    s = np.full(F.shape[0], 0.5)
    active = np.ones(F.shape[0], dtype=bool)
    m, n = D.shape
    for _ in range(steps):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        sd = s[idx, None, None] * D[None]
        sa = s[idx, None, None] * AD[None]
        cand = np.concatenate([F[idx, None] + sd, F[idx, None] - sd], axis=1)
        img = np.concatenate([AF[idx, None] + sa, AF[idx, None] - sa], axis=1)
        # moves that nearly cancel f lose all precision in the ratio; skip them
        rc = _ratio(space, img.reshape(-1, n), cand.reshape(-1, n), 1e-3).reshape(idx.size, 2 * m)
        k = np.argmax(rc, axis=1)
        rows = np.arange(idx.size)
        best = rc[rows, k]
        up = best > r[idx] * (1 + 1e-12)
        gi = idx[up]
        if gi.size:
            fc = cand[rows[up], k[up]]
            if project is not None:
                fc = project(fc)
            F[gi] = fc / np.atleast_1d(norm(space, fc))[:, None]
            # fresh images: incremental updates drift after cancelling moves
            AF[gi] = F[gi] @ A.T
            r[gi] = _ratio(space, AF[gi], F[gi])
            s[gi] = np.minimum(2.0 * s[gi], 1.0)
        lo = idx[~up]
        s[lo] *= 0.5
        active[lo[s[lo] < min_step]] = False
    b = int(np.argmax(r))
    return float(r[b]), F[b]


def _random_starts(rng, n, count, project):
    starts = []
    for i in range(count):
        c = i % 3
        if c == 0:
            v = rng.standard_normal(n)
        elif c == 1:
            v = rng.choice([-1.0, 1.0], size=n)
        else:
            v = (rng.random(n) < 0.5).astype(float)
        starts.append(project(v))
    return starts


def _eigen_starts(P, project, count):
    """Real and imaginary parts of the leading non-trivial eigenvectors."""
    vals, vecs = np.linalg.eig(P)
    order = np.argsort(-np.abs(vals))
    out = []
    for k in order[1: count + 1]:
        for part in (vecs[:, k].real, vecs[:, k].imag):
            v = project(part)
            if np.max(np.abs(v)) > 1e-12:
                out.append(v)
    return out


def estimate_gap(kernel: FiniteKernel, space: FunctionSpace, restarts=8, steps=200,
                 safety_factor=DEFAULT_SAFETY, seed=0, mu0=None) -> GapCertificate:
    """Heuristic contraction gap on ``ker mu0``.

    Maximises ``||L0 f|| / ||f||`` over the hyperplane by local ascent from
    random and eigenvector starts and returns
    ``safety_factor * (1 - max ratio)``.  The maximisation only finds a
    lower bound of the true ratio, so the result is flagged as estimated.
    """
    if mu0 is None:
        mu0 = stationary_measure(kernel).weights
    mu0 = np.asarray(mu0, dtype=float)
    n = kernel.n
    if n == 1:
        return GapCertificate(safety_factor, space, "estimated", safety_factor, 0.0)

    def project(v):
        return v - (v @ mu0)[..., None] if np.ndim(v) > 1 else v - mu0 @ v

    directions = np.eye(n) - mu0[:, None]  # row i is e_i - mu0_i, inside ker mu0
    rng = np.random.default_rng(seed)
    starts = _random_starts(rng, n, restarts, project) + _eigen_starts(kernel.P, project, 2)
    r, f = maximize_ratio(kernel.P, space, directions, np.array(starts), steps=steps, project=project)
    log.debug("estimate_gap: best ratio %.6g from %d starts", r, len(starts))
    if r >= 1.0:
        raise NoContractionError(f"no contraction detected in this norm (ratio {r:.6g})")
    return GapCertificate(safety_factor * (1.0 - r), space, "estimated", safety_factor, r, f)


def iterate_kernel(kernel: FiniteKernel, k: int) -> FiniteKernel:
    """``k``-step kernel ``P^k``."""
    if k < 1:
        raise ValueError("iteration count must be at least 1")
    Pk = np.linalg.matrix_power(kernel.P, int(k))
    Pk = np.clip(Pk, 0.0, None)
    Pk /= Pk.sum(axis=1, keepdims=True)
    return FiniteKernel(Pk, kernel.states, kernel.metric, kernel.adjacency)


def load_chain_spec(source) -> FiniteKernel:
    """Read a chain-spec JSON document (path, file object or dict).

    Schema: ``{"states": [...], "rows": [{"from": i, "to": j, "p": x}, ...],
    "metric": optional matrix, "adjacency": optional neighbour lists}``.
    """
    if isinstance(source, dict):
        doc = source
    elif hasattr(source, "read"):
        doc = json.load(source)
    else:
        with open(source) as fh:
            doc = json.load(fh)
    states = list(doc["states"])
    n = len(states)
    P = np.zeros((n, n))
    for entry in doc["rows"]:
        P[int(entry["from"]), int(entry["to"])] += float(entry["p"])
    metric = doc.get("metric")
    adjacency = doc.get("adjacency")
    return FiniteKernel(
        P,
        tuple(states),
        None if metric is None else np.asarray(metric, dtype=float),
        None if adjacency is None else tuple(tuple(a) for a in adjacency),
    )


def dump_chain_spec(kernel: FiniteKernel, fh=None):
    ii, jj = np.nonzero(kernel.P)
    doc = {
        "states": list(kernel.states),
        "rows": [{"from": int(i), "to": int(j), "p": float(kernel.P[i, j])} for i, j in zip(ii, jj)],
    }
    if kernel.metric is not None:
        doc["metric"] = np.asarray(kernel.metric).tolist()
    if kernel.adjacency is not None:
        doc["adjacency"] = [list(a) for a in kernel.adjacency]
    if fh is None:
        return doc
    json.dump(doc, fh)
    return doc

