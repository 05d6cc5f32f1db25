"""Simulation harness: empirical tails, exact sum laws and Kolmogorov distances.

Trials are split into fixed-size blocks; block ``b`` draws from its own
Philox stream keyed by ``(seed, b)``, so results do not depend on how many
workers run the blocks.
"""

from __future__ import annotations

import csv
import io
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.special import ndtr
from scipy.stats import beta as beta_dist

from .bounds import BoundQuery, berry_esseen_bound, concentration_bound, second_order_bound
from .chains import BernoulliChain, FiniteSampler, HypercubeChain, SamplableKernel
from .kernel import FiniteKernel, GapCertificate, stationary_measure
from .norms import FunctionSpace, normalize_observable
from .variance import dynamical_variance_exact

__all__ = [
    "SimulationConfig",
    "TailEstimate",
    "SumDistribution",
    "KSEstimate",
    "ValidationReport",
    "clopper_pearson_upper",
    "simulate_means",
    "simulate_tail",
    "tail_from_means",
    "exact_sum_distribution",
    "ks_distance",
    "validate_bounds",
    "validate_berry_esseen",
    "worker_count",
]

log = logging.getLogger(__name__)

THREADS_ENV = "SPECTRAL_CERTIFY_THREADS"
DEFAULT_BLOCK = 8192
MAX_SUPPORT = 2_000_000
HIT_REL_TOL = 1e-12  # deviations equal to a up to rounding count as hits


def worker_count(requested: Optional[int] = None) -> int:
    n = requested or os.cpu_count() or 1
    cap = os.environ.get(THREADS_ENV)
    if cap:
        n = min(n, max(1, int(cap)))
    return max(1, n)


@dataclass
class SimulationConfig:
    """What to simulate.

    ``chain`` is a :class:`FiniteKernel`, :class:`HypercubeChain`,
    :class:`BernoulliChain` or a bare :class:`SamplableKernel`.
    ``observable`` is a vector of values over the states or a vectorised
    callable.  ``initial`` is a start state (or start point), or a
    probability vector over finite states; the default is the first state
    (or 0 for the Bernoulli chain).
    """

    chain: object
    observable: object
    n: int
    trials: int
    seed: int = 0
    initial: object = None
    chain_id: str = ""
    observable_id: str = ""
    block_size: int = DEFAULT_BLOCK

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be at least 1")
        if self.n < 1:
            raise ValueError("n must be at least 1")


def _sampler(chain) -> SamplableKernel:
    if isinstance(chain, SamplableKernel):
        return chain
    if isinstance(chain, HypercubeChain):
        return chain.sampler
    if isinstance(chain, BernoulliChain):
        return chain.sampler()
    if isinstance(chain, FiniteKernel):
        return FiniteSampler(chain)
    raise TypeError(f"cannot sample from {type(chain).__name__}")


def _evaluator(observable) -> Callable:
    if callable(observable):
        return observable
    vals = np.asarray(observable, dtype=float)
    return lambda states: vals[states]


def _initial_states(cfg, sampler, size, rng):
    init = cfg.initial
    if init is None:
        init = 0.0 if sampler.dtype is float else 0
    arr = np.asarray(init)
    if arr.ndim == 1:
        cum = np.cumsum(arr / arr.sum())
        return np.minimum(np.searchsorted(cum, rng.random(size), side="right"), arr.size - 1)
    return np.full(size, init, dtype=sampler.dtype)


def _block_stream(seed, block):
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(block,))))


def _run_block(cfg, sampler, phi, block, size, checkpoints):
    rng = _block_stream(cfg.seed, block)
    x = _initial_states(cfg, sampler, size, rng)
    acc = np.zeros(size)
    out = {}
    last = checkpoints[-1]
    marks = set(checkpoints)
    for k in range(1, last + 1):
        x = sampler.step(x, rng)
        acc += phi(x)
        if k in marks:
            out[k] = acc / k
    return block, out


def simulate_means(cfg: SimulationConfig, checkpoints=None, workers=None):
    """Empirical means ``(1/n) sum_{k=1}^n phi(X_k)`` for every trial.

    Returns a dict ``{n: array of shape (trials,)}`` for each checkpoint
    (default just ``cfg.n``); all checkpoints share the same trajectories.
    """
    checkpoints = sorted(set(checkpoints or [cfg.n]))
    sampler = _sampler(cfg.chain)
    phi = _evaluator(cfg.observable)
    nblocks = -(-cfg.trials // cfg.block_size)
    sizes = [min(cfg.block_size, cfg.trials - b * cfg.block_size) for b in range(nblocks)]
    jobs = [(cfg, sampler, phi, b, sizes[b], checkpoints) for b in range(nblocks)]
    w = min(worker_count(workers), nblocks)
    if w > 1:
        with ThreadPoolExecutor(max_workers=w) as ex:
            results = list(ex.map(lambda j: _run_block(*j), jobs))
    else:
        results = [_run_block(*j) for j in jobs]
    results.sort(key=lambda r: r[0])
    return {n: np.concatenate([r[1][n] for r in results]) for n in checkpoints}


def clopper_pearson_upper(hits: int, trials: int, level=0.99) -> float:
    """Exact one-sided upper confidence limit for a binomial proportion."""
    if hits >= trials:
        return 1.0
    return float(beta_dist.ppf(level, hits + 1, trials - hits))


@dataclass(frozen=True)
class TailEstimate:
    a: float
    hits: int
    trials: int
    p_hat: float
    ci_upper_99: float


def _mean_interval(cfg, mean):
    if mean is not None:
        lo, hi = (mean, mean) if np.ndim(mean) == 0 else mean
        return float(lo), float(hi)
    chain = cfg.chain.kernel if isinstance(cfg.chain, HypercubeChain) else cfg.chain
    if isinstance(chain, FiniteKernel) and not callable(cfg.observable):
        m = float(stationary_measure(chain).weights @ np.asarray(cfg.observable, dtype=float))
        return m, m
    raise ValueError("stationary mean unknown; pass mean= (a value or an enclosure (lo, hi))")


def tail_from_means(means, a_list, mean_interval):
    """Count ``|mean - mu0(phi)| >= a``.

    With an enclosure ``(lo, hi)`` of ``mu0(phi)`` a trial counts as a hit
    if it deviates by ``a`` from some point of the enclosure, so the count
    can only be too high.
    """
    lo, hi = mean_interval
    dev = np.maximum(np.abs(means - lo), np.abs(means - hi))
    out = []
    for a in a_list:
        h = int(np.count_nonzero(dev >= a * (1.0 - HIT_REL_TOL)))
        out.append(TailEstimate(float(a), h, means.size, h / means.size,
                                clopper_pearson_upper(h, means.size)))
    return out


def simulate_tail(cfg: SimulationConfig, a_list, mean=None, workers=None):
    """Tail frequencies at ``cfg.n`` for each deviation in ``a_list``."""
    interval = _mean_interval(cfg, mean)
    means = simulate_means(cfg, workers=workers)[cfg.n]
    return tail_from_means(means, a_list, interval)


# -- exact laws -----------------------------------------------------------


@dataclass(frozen=True)
class SumDistribution:
    """Law of ``sum_{k=1}^n phi(X_k)`` as sorted atoms with probabilities."""

    atoms: np.ndarray
    probs: np.ndarray
    n: int

    def cdf(self, x):
        c = np.cumsum(self.probs)
        idx = np.searchsorted(self.atoms, x, side="right")
        return np.where(idx > 0, c[np.maximum(idx - 1, 0)], 0.0)

    def tail(self, centre, radius):
        """``P(|S - centre| >= radius)``."""
        return float(self.probs[np.abs(self.atoms - centre) >= radius].sum())

    def standardized(self, mean, sigma):
        """Law of ``(S - n mean) / (sigma sqrt(n))``."""
        s = sigma * math.sqrt(self.n)
        return SumDistribution((self.atoms - self.n * mean) / s, self.probs, self.n)


def exact_sum_distribution(kernel: FiniteKernel, phi, mu, n: int, max_support=MAX_SUPPORT,
                           max_values=8) -> SumDistribution:
    """Forward recursion over (state, counts of each value of ``phi``).

    Count vectors are encoded in mixed radix ``n + 1``; the support is the
    set of reachable count vectors, which must stay below ``max_support``.
    """
    phi = np.asarray(phi, dtype=float)
    vals, cls = np.unique(phi, return_inverse=True)
    m = vals.size
    if m > max_values:
        raise ValueError(f"phi takes {m} distinct values; use the empirical method")
    radix = n + 1
    if radix ** m > 2 ** 62:
        raise ValueError("support explosion: too many count vectors; use the empirical method")
    shift = radix ** np.arange(m, dtype=np.int64)
    codes = np.zeros(1, dtype=np.int64)
    prob = np.asarray(mu, dtype=float)[None, :]
    for _ in range(n):
        Q = prob @ kernel.P  # Q[c, y] probability of next state y with counts c
        new_codes, new_prob = [], []
        for j in range(m):
            cols = cls == j
            block = np.zeros_like(Q)
            block[:, cols] = Q[:, cols]
            new_codes.append(codes + shift[j])
            new_prob.append(block)
        allc = np.concatenate(new_codes)
        allp = np.concatenate(new_prob)
        codes, inv = np.unique(allc, return_inverse=True)
        if codes.size > max_support:
            raise ValueError(f"support explosion ({codes.size} count vectors); use the empirical method")
        prob = np.zeros((codes.size, kernel.n))
        np.add.at(prob, inv, allp)
        keep = prob.sum(axis=1) > 0
        codes, prob = codes[keep], prob[keep]
    counts = (codes[:, None] // shift[None, :]) % radix
    sums = counts @ vals
    p = prob.sum(axis=1)
    atoms, inv = np.unique(sums, return_inverse=True)
    probs = np.zeros(atoms.size)
    np.add.at(probs, inv, p)
    return SumDistribution(atoms, probs, n)


@dataclass(frozen=True)
class KSEstimate:
    n: Optional[int]
    method: str  # "exact_dp" or "empirical"
    ks_distance: float
    support_size: Optional[int] = None


def ks_distance(F, n=None) -> KSEstimate:
    """Sup distance between a step distribution function and the standard normal.

    ``F`` is a :class:`SumDistribution` (already standardised), a pair
    ``(atoms, probs)``, or a 1-D sample.  The sup is attained at a jump,
    on one side or the other.
    """
    if isinstance(F, SumDistribution):
        atoms, probs, method, n = F.atoms, F.probs, "exact_dp", F.n if n is None else n
    elif isinstance(F, tuple):
        atoms, probs = (np.asarray(v, dtype=float) for v in F)
        order = np.argsort(atoms)
        atoms, probs, method = atoms[order], probs[order], "exact_dp"
    else:
        x = np.sort(np.asarray(F, dtype=float).ravel())
        if x.size == 0:
            raise ValueError("empty sample")
        atoms, counts = np.unique(x, return_counts=True)
        probs, method = counts / x.size, "empirical"
    after = np.cumsum(probs)
    before = after - probs
    G = ndtr(atoms)
    d = float(max(np.max(np.abs(after - G)), np.max(np.abs(before - G))))
    return KSEstimate(n, method, min(d, 1.0), atoms.size if method == "exact_dp" else None)


# -- validation -----------------------------------------------------------


VALIDATION_COLUMNS = ("chain", "observable", "norm", "delta0", "certified", "theorem", "regime",
                      "a", "n", "trials", "p_hat", "ci_upper_99", "bound", "pass")


@dataclass
class ValidationReport:
    rows: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        """All certified rows pass; estimated-gap rows are advisory."""
        return all(r["pass"] for r in self.rows if r["certified"])

    @property
    def failures(self):
        return [r for r in self.rows if not r["pass"]]

    def to_csv(self, fh=None):
        out = fh if fh is not None else io.StringIO()
        w = csv.DictWriter(out, fieldnames=VALIDATION_COLUMNS)
        w.writeheader()
        for r in self.rows:
            w.writerow({k: (str(v).lower() if isinstance(v, bool) else v) for k, v in r.items()})
        if fh is None:
            return out.getvalue()

    @classmethod
    def from_csv(cls, fh):
        if isinstance(fh, str):
            fh = io.StringIO(fh)
        rows = []
        for row in csv.DictReader(fh):
            r = dict(row)
            for k in ("delta0", "a", "p_hat", "ci_upper_99", "bound"):
                r[k] = float(r[k]) if r[k] != "" else None
            for k in ("n", "trials"):
                r[k] = int(r[k])
            for k in ("certified", "pass"):
                r[k] = r[k] == "true"
            rows.append(r)
        return cls(rows)


def validate_bounds(cfg: SimulationConfig, delta0, phi_norm, a_grid, n_grid, theorem="A",
                    mean=None, S=None, norm_name="", workers=None) -> ValidationReport:
    """Compare simulated tails against the concentration (``A``) or second-order (``B``) bound.

    A grid point passes when the bound is inapplicable or the 99% upper
    confidence limit does not exceed it.
    """
    cert = GapCertificate.coerce(delta0)
    interval = _mean_interval(cfg, mean)
    means = simulate_means(cfg, checkpoints=n_grid, workers=workers)
    rep = ValidationReport()
    for n in sorted(set(n_grid)):
        tails = tail_from_means(means[n], a_grid, interval)
        for est in tails:
            if theorem == "A":
                b = concentration_bound(BoundQuery(cert, phi_norm, est.a, n))
            elif theorem == "B":
                b = second_order_bound(BoundQuery(cert, phi_norm, est.a, n, S))
            else:
                raise ValueError(f"unknown theorem {theorem!r} for tail validation")
            ok = (not b.applicable) or est.ci_upper_99 <= b.value
            rep.rows.append({
                "chain": cfg.chain_id, "observable": cfg.observable_id, "norm": norm_name,
                "delta0": cert.delta0, "certified": cert.certified, "theorem": b.theorem,
                "regime": b.regime, "a": est.a, "n": n, "trials": est.trials, "p_hat": est.p_hat,
                "ci_upper_99": est.ci_upper_99, "bound": b.value, "pass": bool(ok),
            })
    return rep


def validate_berry_esseen(kernel: FiniteKernel, phi, delta0, n_grid, space=None, mu=None,
                          chain_id="", observable_id="", norm_name="") -> ValidationReport:
    """Exact Kolmogorov distance against the Berry-Esseen bound for each ``n``."""
    cert = GapCertificate.coerce(delta0)
    mu0 = stationary_measure(kernel).weights
    s2 = dynamical_variance_exact(kernel, phi, mu0).sigma2
    space = space or FunctionSpace.sup_osc(kernel.n)
    tilde = normalize_observable(phi, mu0, s2, space)
    if mu is None:
        mu = mu0
    rep = ValidationReport()
    for n in n_grid:
        dist = exact_sum_distribution(kernel, tilde.values, mu, n).standardized(0.0, 1.0)
        ks = ks_distance(dist).ks_distance
        b = berry_esseen_bound(BoundQuery(cert, phi_tilde_norm=tilde.norm_value, n=n))
        rep.rows.append({
            "chain": chain_id, "observable": observable_id, "norm": norm_name or space.name,
            "delta0": cert.delta0, "certified": cert.certified, "theorem": "C",
            "regime": b.regime, "a": None, "n": n, "trials": 0, "p_hat": ks, "ci_upper_99": ks,
            "bound": b.raw_value, "pass": bool(ks <= b.raw_value),
        })
    return rep

