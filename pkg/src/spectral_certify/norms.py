"""Banach-algebra function norms of the form ``||f|| = sup|f| + V(f)``.

Four seminorms ``V`` are supported on finite state spaces:

``SupOsc``
    oscillation ``sup f - inf f``.
``WeightedLipschitz``
    ``weight * max_{x != y} |f(x) - f(y)| / d(x, y)``.
``LocalTV``
    ``max_x sum_{y ~ x} |f(y) - f(x)|`` for a graph adjacency.
``BVInterval``
    total variation of the piecewise constant function taking the values
    of ``f`` on consecutive cells of an interval.

All of them satisfy ``V(1) = 0`` and ``V(fg) <= |f|_inf V(g) + V(f) |g|_inf``,
so the resulting norm is a Banach algebra norm with ``||1|| = 1``.

Every evaluator accepts a single function (shape ``(n,)``) or a batch of
functions stacked along the first axis (shape ``(m, n)``); complex values
are allowed.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

__all__ = [
    "Kind",
    "FunctionSpace",
    "Observable",
    "PiecewiseConstant",
    "SpaceMismatchError",
    "sup_norm",
    "seminorm",
    "norm",
    "check_algebra",
    "normalize_observable",
]

ALGEBRA_SLACK = 1e-12


class SpaceMismatchError(ValueError):
    """The function space lacks the annotation its kind requires."""


class Kind(str, enum.Enum):
    SUP_OSC = "SupOsc"
    WEIGHTED_LIPSCHITZ = "WeightedLipschitz"
    LOCAL_TV = "LocalTV"
    BV_INTERVAL = "BVInterval"


def _as_batch(f):
    f = np.asarray(f)
    if f.size == 0:
        raise ValueError("empty observable")
    if not np.isfinite(f).all():
        raise ValueError("observable has non-finite values")
    single = f.ndim <= 1
    return (f.reshape(1, -1) if single else f), single


def _unbatch(values, single):
    return float(values[0]) if single else values


@dataclass(frozen=True, eq=False)
class FunctionSpace:
    """Descriptor of a norm ``sup|f| + V(f)`` on a finite state set.

    Use the named constructors rather than the raw initializer; they
    precompute the data each seminorm needs.
    """

    kind: Kind
    n_states: Optional[int] = None
    metric: Optional[np.ndarray] = None
    weight: float = 1.0
    adjacency: Optional[tuple] = None
    interval: Optional[tuple] = None
    order: Optional[np.ndarray] = None
    name: str = ""
    _pairs: Optional[tuple] = field(default=None, repr=False)
    _edges: Optional[tuple] = field(default=None, repr=False)

    @classmethod
    def sup_osc(cls, n_states=None):
        return cls(Kind.SUP_OSC, n_states=n_states, name="suposc")

    @classmethod
    def weighted_lipschitz(cls, metric, weight=1.0):
        """Lipschitz seminorm for a full pairwise distance matrix.

        The maximum over pairs is taken exactly, ``O(n^2)`` per function.
        """
        d = np.asarray(metric, dtype=float)
        if d.ndim != 2 or d.shape[0] != d.shape[1]:
            raise ValueError("metric must be a square distance matrix")
        if weight <= 0:
            raise ValueError("weight must be positive")
        i, j = np.triu_indices(d.shape[0], k=1)
        dist = d[i, j]
        if np.any(dist <= 0) or not np.all(np.isfinite(dist)):
            raise ValueError("metric must be positive and finite off the diagonal")
        keep = _irreducible_pairs(d)
        if keep is not None:
            i, j, dist = i[keep[i, j]], j[keep[i, j]], dist[keep[i, j]]
        return cls(
            Kind.WEIGHTED_LIPSCHITZ,
            n_states=d.shape[0],
            metric=d,
            weight=float(weight),
            name="lip",
            _pairs=(i, j, 1.0 / dist, _difference_matrix(d.shape[0], i, j, 1.0 / dist)),
        )

    @classmethod
    def local_tv(cls, adjacency):
        """Local total variation for neighbour lists ``adjacency[x]``."""
        adj = tuple(tuple(int(y) for y in nbrs) for nbrs in adjacency)
        n = len(adj)
        src = np.array([x for x, nbrs in enumerate(adj) for _ in nbrs], dtype=np.intp)
        dst = np.array([y for nbrs in adj for y in nbrs], dtype=np.intp)
        if dst.size and (dst.min() < 0 or dst.max() >= n):
            raise ValueError("adjacency refers to unknown states")
        # src is grouped by vertex, so each vertex's jumps form one segment
        first = np.flatnonzero(np.r_[True, src[1:] != src[:-1]]) if src.size else src
        return cls(Kind.LOCAL_TV, n_states=n, adjacency=adj, name="localtv", _edges=(src, dst, first))

    @classmethod
    def bv_interval(cls, n_states=None, positions=None, interval=None):
        """Total variation on an interval, states ordered by ``positions``."""
        order = None
        if positions is not None:
            positions = np.asarray(positions, dtype=float)
            order = np.argsort(positions, kind="stable")
            n_states = positions.size
        return cls(Kind.BV_INTERVAL, n_states=n_states, interval=interval, order=order, name="bv")

    def _check_size(self, n):
        if self.n_states is not None and n != self.n_states:
            raise ValueError(f"dimension mismatch: space has {self.n_states} states, got {n}")

    def seminorm(self, f):
        return seminorm(self, f)

    def norm(self, f):
        return norm(self, f)


def sup_norm(f):
    """``max_x |f(x)|``; batches return one value per row."""
    fb, single = _as_batch(f)
    return _unbatch(np.max(np.abs(fb), axis=1), single)


def seminorm(space: FunctionSpace, f):
    fb, single = _as_batch(f)
    return _unbatch(_seminorm_rows(space, fb), single)


def _seminorm_rows(space, fb):
    """Seminorm of each row of a validated 2-D batch."""
    space._check_size(fb.shape[1])
    kind = space.kind
    if kind is Kind.SUP_OSC:
        if np.iscomplexobj(fb):
            # diameter of the value set
            diff = np.abs(fb[:, :, None] - fb[:, None, :])
            v = diff.max(axis=(1, 2))
        else:
            v = fb.max(axis=1) - fb.min(axis=1)
    elif kind is Kind.WEIGHTED_LIPSCHITZ:
        if space._pairs is None:
            raise SpaceMismatchError("space/kind mismatch: WeightedLipschitz needs a metric")
        i, j, inv_d, W = space._pairs
        if i.size == 0:
            v = np.zeros(fb.shape[0])
        elif W is not None:
            v = space.weight * np.max(np.abs(fb @ W), axis=1)
        else:
            v = space.weight * np.max(np.abs(fb[:, i] - fb[:, j]) * inv_d, axis=1)
    elif kind is Kind.LOCAL_TV:
        if space._edges is None:
            raise SpaceMismatchError("space/kind mismatch: LocalTV needs an adjacency")
        src, dst, first = space._edges
        if src.size == 0:
            v = np.zeros(fb.shape[0])
        else:
            jumps = np.abs(fb[:, dst] - fb[:, src])
            v = np.add.reduceat(jumps, first, axis=1).max(axis=1)
    elif kind is Kind.BV_INTERVAL:
        g = fb if space.order is None else fb[:, space.order]
        v = np.abs(np.diff(g, axis=1)).sum(axis=1)
    else:  # pragma: no cover
        raise SpaceMismatchError(f"space/kind mismatch: unknown kind {kind!r}")
    return np.asarray(v, dtype=float)


def norm(space: FunctionSpace, f):
    fb, single = _as_batch(f)
    return _unbatch(np.abs(fb).max(axis=1) + _seminorm_rows(space, fb), single)


def check_algebra(space: FunctionSpace, f, g) -> bool:
    """Whether ``||fg|| <= ||f|| ||g||`` holds up to a relative slack of 1e-12."""
    f = np.asarray(f)
    g = np.asarray(g)
    lhs = norm(space, f * g)
    rhs = norm(space, f) * norm(space, g)
    return bool(lhs <= rhs * (1.0 + ALGEBRA_SLACK))


@dataclass(frozen=True)
class PiecewiseConstant:
    """Right-continuous step function on ``[lo, hi]``.

    ``values[k]`` holds on ``[breaks[k-1], breaks[k])`` with ``breaks[-1]``
    implicitly ``lo`` and ``breaks[len]`` implicitly ``hi``; so there is one
    more value than interior breakpoints.
    """

    breaks: tuple
    values: tuple
    lo: float = -np.inf
    hi: float = np.inf

    def __post_init__(self):
        if len(self.values) != len(self.breaks) + 1:
            raise ValueError("need exactly one more value than breakpoints")
        if any(b2 <= b1 for b1, b2 in zip(self.breaks, self.breaks[1:])):
            raise ValueError("breakpoints must be strictly increasing")

    @classmethod
    def indicator(cls, left, right, lo=-np.inf, hi=np.inf):
        """Indicator of ``[left, right)``, with jumps only inside ``(lo, hi)``."""
        if not left < right:
            raise ValueError("empty interval")
        breaks, values = [], [0.0]
        if left > lo:
            breaks.append(float(left))
            values.append(1.0)
        else:
            values = [1.0]
        if right < hi:
            breaks.append(float(right))
            values.append(0.0)
        return cls(tuple(breaks), tuple(values), lo, hi)

    def __call__(self, x):
        idx = np.searchsorted(np.asarray(self.breaks, dtype=float), x, side="right")
        return np.asarray(self.values, dtype=float)[idx]

    def total_variation(self):
        return float(np.abs(np.diff(self.values)).sum())

    def sup(self):
        return float(np.max(np.abs(self.values)))

    def bv_norm(self):
        return self.sup() + self.total_variation()

    def affine(self, scale, shift):
        """``scale * f + shift`` as a new step function."""
        return PiecewiseConstant(
            self.breaks, tuple(scale * v + shift for v in self.values), self.lo, self.hi
        )


@dataclass
class Observable:
    """A real observable with its norm data.

    For finite chains ``values`` is explicit and the norms are computed.
    For samplable chains pass ``func`` together with user-asserted
    ``norm_value``/``seminorm_value``; nothing is estimated on the user's
    behalf, since the bounds are only valid with a true upper bound.
    """

    values: Optional[np.ndarray] = None
    func: Optional[Callable] = None
    norm_value: float = 0.0
    seminorm_value: float = 0.0
    mean_under: Optional[float] = None
    space: Optional[FunctionSpace] = None

    @classmethod
    def explicit(cls, values, space: FunctionSpace, mean_under=None):
        values = np.asarray(values, dtype=float)
        v = seminorm(space, values)
        return cls(
            values=values,
            norm_value=sup_norm(values) + v,
            seminorm_value=v,
            mean_under=mean_under,
            space=space,
        )

    @classmethod
    def asserted(cls, func, norm_value, seminorm_value=0.0, mean_under=None):
        if norm_value < 0 or seminorm_value < 0:
            raise ValueError("asserted norms must be non-negative")
        return cls(func=func, norm_value=float(norm_value),
                   seminorm_value=float(seminorm_value), mean_under=mean_under)

    def __call__(self, x):
        if self.func is not None:
            return self.func(x)
        return self.values[x]


def normalize_observable(phi, mu0, sigma2, space: Optional[FunctionSpace] = None) -> Observable:
    """Reduced centred observable ``(phi - mu0(phi)) / sigma``.

    ``mu0`` is the stationary probability vector.  Raises when the
    variance is not positive.
    """
    if not sigma2 > 0:
        raise ValueError("degenerate variance; Berry-Esseen inapplicable")
    if isinstance(phi, Observable):
        space = space or phi.space
        phi = phi.values
    phi = np.asarray(phi, dtype=float)
    mu0 = np.asarray(mu0, dtype=float)
    centred = phi - mu0 @ phi
    centred = centred - mu0 @ centred
    tilde = centred / np.sqrt(sigma2)
    if space is None:
        space = FunctionSpace.sup_osc(phi.size)
    return Observable.explicit(tilde, space, mean_under=float(mu0 @ tilde))


def _difference_matrix(n, i, j, inv_d, max_entries=4_000_000):
    """Columns ``(e_i - e_j) / d(i, j)``, so pair slopes are one matmul."""
    if n * i.size > max_entries:
        return None
    W = np.zeros((n, i.size))
    cols = np.arange(i.size)
    W[i, cols] = inv_d
    W[j, cols] = -inv_d
    return W


def _irreducible_pairs(d, rel_tol=1e-12, max_states=1024):
    """Mask of pairs not split by an intermediate point.

    If ``d(x, z) + d(z, y) = d(x, y)`` the ratio on ``(x, y)`` is at most
    the larger ratio on ``(x, z)`` and ``(z, y)``, so the pair can be
    dropped without changing the Lipschitz constant.
    """
    n = d.shape[0]
    if n > max_states or n < 3:
        return None
    keep = np.ones((n, n), dtype=bool)
    idx = np.arange(n)
    for x in range(n):
        via = d[x][:, None] + d  # via[z, y] = d(x, z) + d(z, y)
        via[x, :] = np.inf
        via[idx, idx] = np.inf
        keep[x] = via.min(axis=0) > d[x] * (1.0 + rel_tol)
    return keep & keep.T


def _pairwise_metric(points: Sequence) -> np.ndarray:
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    return np.sqrt(((pts[:, None, :] - pts[None, :, :]) ** 2).sum(axis=-1))
