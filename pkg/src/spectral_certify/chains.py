"""Ready-made example chains: lazy i.i.d., hypercube walk, Bernoulli convolution."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .bounds import BoundReport, Condition
from .kernel import FiniteKernel, GapCertificate, load_chain_spec
from .norms import FunctionSpace, PiecewiseConstant

__all__ = [
    "theta_lazy",
    "HypercubeChain",
    "hypercube",
    "is_scrambled",
    "BernoulliChain",
    "bernoulli",
    "bernoulli_iterate_count",
    "bernoulli_gap",
    "bernoulli_bound",
    "bernoulli_indicator_mean",
    "SamplableKernel",
    "FiniteSampler",
    "resolve_chain",
]

MAX_EXPLICIT_N = 10
MAX_LAMBDA = 0.99


def theta_lazy(nu, theta) -> FiniteKernel:
    """Kernel that stays put with probability ``1 - theta``, else resamples from ``nu``.

    Its gap is exactly ``theta`` in every admissible norm.
    """
    nu = np.asarray(nu, dtype=float)
    if nu.ndim != 1 or nu.size == 0 or np.any(nu < 0) or abs(nu.sum() - 1.0) > 1e-12:
        raise ValueError("nu must be a probability vector")
    if not (0.0 < theta <= 1.0):
        raise ValueError("theta must lie in (0, 1]")
    P = (1.0 - theta) * np.eye(nu.size) + theta * np.tile(nu, (nu.size, 1))
    return FiniteKernel(P)


# -- samplers ---------------------------------------------------------------


@dataclass
class SamplableKernel:
    """Vectorised chain stepper ``step(states, rng) -> states``.

    ``step`` must consume the random stream deterministically so that a
    fixed generator state reproduces the same trajectories.
    """

    step: Callable
    describe: str = ""
    dtype: type = float


class FiniteSampler(SamplableKernel):
    """Inverse-CDF stepper over the non-zero entries of each row.

    Row ``x`` contributes the cumulative levels ``x + c_j`` to one sorted
    array, so a whole batch steps with a single ``searchsorted`` on
    ``state + u``.
    """

    def __init__(self, kernel: FiniteKernel):
        P = kernel.P
        width = int((P > 0).sum(axis=1).max())
        idx = np.zeros((kernel.n, width), dtype=np.int64)
        cum = np.ones((kernel.n, width))
        for x in range(kernel.n):
            (cols,) = np.nonzero(P[x])
            idx[x, : cols.size] = cols
            idx[x, cols.size:] = cols[-1]
            c = np.cumsum(P[x, cols])
            c[-1] = 1.0
            cum[x, : cols.size] = c
        self._idx = idx.ravel()
        self._levels = (np.arange(kernel.n)[:, None] + cum).ravel()
        super().__init__(self._step, f"finite[{kernel.n}]", np.int64)

    def _step(self, states, rng):
        u = rng.random(states.shape[0])
        pos = np.searchsorted(self._levels, states + u, side="right")
        return self._idx[pos]


# -- hypercube --------------------------------------------------------------


def _popcount(x):
    x = np.asarray(x, dtype=np.int64)
    count = np.zeros_like(x)
    while np.any(x):
        count += x & 1
        x = x >> 1
    return count


@dataclass
class HypercubeChain:
    """Lazy walk on ``{0,1}^N``: pick a slot uniformly, replace it by a fair bit.

    States are integers whose bit ``i`` is coordinate ``i + 1``.
    """

    N: int
    kernel: Optional[FiniteKernel]
    lip_space: Optional[FunctionSpace]
    tv_space: Optional[FunctionSpace]
    sampler: SamplableKernel = field(repr=False, default=None)

    @property
    def n_states(self):
        return 1 << self.N

    def polarization(self):
        """Proportion of ones."""
        return _popcount(np.arange(self.n_states)) / self.N

    def first_coordinate_zero(self):
        """Indicator of the half-cube whose first coordinate is 0."""
        return ((np.arange(self.n_states) & 1) == 0).astype(float)

    def indicator(self, predicate):
        """Indicator of ``{x : predicate(bits)}``, bits as a tuple of 0/1."""
        vals = [
            1.0 if predicate(tuple((x >> i) & 1 for i in range(self.N))) else 0.0
            for x in range(self.n_states)
        ]
        return np.array(vals)


def hypercube(N: int, explicit: Optional[bool] = None) -> HypercubeChain:
    if N < 1:
        raise ValueError("dimension must be at least 1")
    if explicit is None:
        explicit = N <= MAX_EXPLICIT_N
    elif explicit and N > MAX_EXPLICIT_N:
        raise ValueError(f"explicit kernel limited to N <= {MAX_EXPLICIT_N}")
    if not explicit and N > MAX_EXPLICIT_N:
        warnings.warn(f"N={N}: sampler only, no explicit kernel", stacklevel=2)

    def step(states, rng):
        slot = rng.integers(0, N, size=states.shape[0])
        bit = rng.integers(0, 2, size=states.shape[0])
        return (states & ~(1 << slot)) | (bit << slot)

    sampler = SamplableKernel(step, f"hypercube[{N}]", np.int64)
    if not explicit:
        return HypercubeChain(N, None, None, None, sampler)

    n = 1 << N
    x = np.arange(n)
    P = np.zeros((n, n))
    P[x, x] = 0.5
    for i in range(N):
        P[x, x ^ (1 << i)] += 0.5 / N
    metric = _popcount(x[:, None] ^ x[None, :]).astype(float)
    adjacency = tuple(tuple(int(xx ^ (1 << i)) for i in range(N)) for xx in x)
    kernel = FiniteKernel(P, tuple(range(n)), metric, adjacency)
    lip = FunctionSpace.weighted_lipschitz(metric, weight=N)
    tv = FunctionSpace.local_tv(adjacency)
    return HypercubeChain(N, kernel, lip, tv, sampler)


def is_scrambled(N: int, indicator, p: float) -> bool:
    """Whether every vertex has exactly ``2pN`` neighbours with the same indicator value.

    Checked exhaustively; ``indicator`` is a 0/1 vector over ``2^N`` states.
    """
    if N > 20:
        raise ValueError("exhaustive check limited to N <= 20")
    target = 2.0 * p * N
    if abs(target - round(target)) > 1e-9:
        return False
    ind = np.asarray(indicator).astype(bool)
    x = np.arange(1 << N)
    same = np.zeros(x.size, dtype=np.int64)
    for i in range(N):
        same += ind[x ^ (1 << i)] == ind
    return bool(np.all(same == int(round(target))))


# -- Bernoulli convolution --------------------------------------------------


def bernoulli_iterate_count(lam: float) -> int:
    """Number of steps ``floor(1 + log 2 / log(1 / lam))`` after which BV contracts."""
    return int(math.floor(1.0 + math.log(2.0) / math.log(1.0 / lam)))


@dataclass
class BernoulliChain:
    """``x -> lam * x + lam * eps`` with a fair sign ``eps``.

    The stationary law is the Bernoulli convolution; ``ell`` steps are
    grouped into one step of the iterated chain.
    """

    lam: float
    ell: int

    @property
    def radius(self):
        return self.lam / (1.0 - self.lam)

    @property
    def interval(self):
        return (-self.radius, self.radius)

    def step(self, x, bits):
        """One application of the random map; ``bits`` are 0/1."""
        return self.lam * x + self.lam * (2 * np.asarray(bits) - 1)

    def iterated_step(self, x, rng):
        for _ in range(self.ell):
            x = self.step(x, rng.integers(0, 2, size=np.shape(x)))
        return x

    def run(self, x0, bits):
        """Positions ``X_1..X_k`` from one bit sequence."""
        out = []
        x = x0
        for b in bits:
            x = self.step(x, b)
            out.append(x)
        return out

    def sampler(self) -> SamplableKernel:
        return SamplableKernel(self.iterated_step, f"bernoulli[{self.lam}]", float)

    def indicator(self, left, right) -> PiecewiseConstant:
        lo, hi = self.interval
        return PiecewiseConstant.indicator(left, right, lo, hi)


def bernoulli(lam: float) -> BernoulliChain:
    if not (0.5 < lam < 1.0):
        raise ValueError("lambda must lie in (0.5, 1)")
    if lam > MAX_LAMBDA:
        raise ValueError("iterate count impractical for lambda > 0.99")
    return BernoulliChain(float(lam), bernoulli_iterate_count(lam))


def bernoulli_gap(lam: float) -> GapCertificate:
    """Gap ``1 / (2^(ell+1) - 1)`` of the ``ell``-step chain on BV."""
    ell = bernoulli_iterate_count(lam)
    return GapCertificate(1.0 / (2 ** (ell + 1) - 1), space="bv", provenance="analytic")


def bernoulli_bound(lam, phi_bv_norm, a, n):
    """Closed-form concentration bound for the ``ell``-step Bernoulli chain.

    ``2.488 exp(-n a^2 / (||phi||^2 (16.65 * 2^ell + 5.12)))``, valid for
    ``a < ||phi|| / (3 (2^(ell+1) - 1))`` and ``n >= 120 * 2^ell``.
    """
    ell = bernoulli_iterate_count(lam)
    cap = phi_bv_norm / (3.0 * (2 ** (ell + 1) - 1))
    n_min = 120 * 2 ** ell
    denom = 16.65 * 2 ** ell + 5.12
    raw = 2.488 * math.exp(-n * a * a / (phi_bv_norm ** 2 * denom))
    conditions = [
        Condition("deviation_cap", a, cap, a < cap),
        Condition("sample_size", n, n_min, n >= n_min),
    ]
    applicable = all(c.ok for c in conditions)
    reason = "" if applicable else "; ".join(
        f"{c.name} violated ({c.value:g} vs {c.limit:g})" for c in conditions if not c.ok)
    return BoundReport(
        theorem="bernoulli",
        regime="gaussian",
        raw_value=raw,
        value=min(raw, 1.0) if applicable else 1.0,
        applicable=applicable,
        conditions=conditions,
        certified=True,
        inputs={"lambda": lam, "ell": ell, "phi_norm": phi_bv_norm, "a": a, "n": n},
        reason=reason,
    )


def bernoulli_indicator_mean(lam, left, right, depth=16):
    """Certified enclosure ``(lo, hi)`` of the stationary mass of ``[left, right]``.

    The stationary variable is ``sum_{k<=d} eps_k lam^k + lam^d Z`` with
    ``Z`` in the invariant interval; each of the ``2^d`` branches is an
    interval of mass ``2^-d`` that is counted fully inside, possibly inside,
    or outside.
    """
    sums = np.zeros(1)
    for k in range(1, depth + 1):
        step = lam ** k
        sums = np.concatenate([sums - step, sums + step])
    r = lam ** depth * lam / (1.0 - lam)
    pad = 1e-12 * (1.0 + abs(left) + abs(right))
    lo_b, hi_b = sums - r - pad, sums + r + pad
    inside = (lo_b >= left) & (hi_b <= right)
    touches = (hi_b >= left) & (lo_b <= right)
    w = 0.5 ** depth
    return float(inside.sum() * w), float(touches.sum() * w)


# -- preset resolution ------------------------------------------------------


def resolve_chain(spec: str):
    """Parse ``hypercube:N``, ``bernoulli:lambda``, ``theta-lazy:k,theta`` or ``file:path``."""
    name, _, arg = spec.partition(":")
    if name == "hypercube":
        return hypercube(int(arg))
    if name == "bernoulli":
        return bernoulli(float(arg))
    if name == "theta-lazy":
        k, theta = arg.split(",")
        k = int(k)
        return theta_lazy(np.full(k, 1.0 / k), float(theta))
    if name == "two-state":
        p, q = arg.split(",")
        return FiniteKernel.two_state(float(p), float(q))
    if name == "file":
        return load_chain_spec(arg)
    raise ValueError(f"unknown chain id {spec!r}")
