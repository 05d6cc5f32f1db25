"""Dynamical (asymptotic) variance of additive functionals of a finite chain.

``sigma^2(phi) = mu0(phibar^2) + 2 sum_{k>=1} mu0(phibar L0^k phibar)`` with
``phibar = phi - mu0(phi)``.  The exact value comes from one linear solve
(a Poisson equation); the truncated series comes with a tail bound driven by
the contraction gap.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .kernel import FiniteKernel, GapCertificate, stationary_measure
from .norms import FunctionSpace, norm

__all__ = [
    "VarianceResult",
    "dynamical_variance_exact",
    "dynamical_variance_truncated",
    "autocovariances",
    "correlation_sum",
    "tail_bound",
    "norm_lower_bound",
    "norm_lower_bound_check",
]

NEG_SLACK = 1e-10
COND_LIMIT = 1e12


@dataclass(frozen=True)
class VarianceResult:
    sigma2: float
    method: str  # "exact_solve" or "truncated"
    truncation_K: Optional[int] = None
    tail_bound: Optional[float] = None


def _clamp(s2):
    if s2 < -NEG_SLACK:
        raise ValueError(f"negative variance {s2:.3e}; kernel or data inconsistent")
    return max(float(s2), 0.0)


def _mu0(kernel, mu0):
    if mu0 is None:
        return stationary_measure(kernel).weights
    return np.asarray(mu0, dtype=float)


def _centred(phi, mu0):
    phi = np.asarray(phi, dtype=float)
    bar = phi - mu0 @ phi
    return bar - mu0 @ bar


def _poisson_solution(kernel: FiniteKernel, phibar, mu0):
    """``g = sum_{k>=1} L0^k phibar`` via ``(I - P + 1 mu0) g = P phibar``."""
    n = kernel.n
    A = np.eye(n) - kernel.P + np.outer(np.ones(n), mu0)
    if np.linalg.cond(A) > COND_LIMIT:
        raise np.linalg.LinAlgError("singular Poisson system; the chain has no spectral gap")
    g = np.linalg.solve(A, kernel.P @ phibar)
    return g - mu0 @ g


def correlation_sum(kernel: FiniteKernel, phi, mu0=None) -> float:
    """``sum_{k>=1} mu0(phi L0^k phibar)``."""
    mu0 = _mu0(kernel, mu0)
    bar = _centred(phi, mu0)
    g = _poisson_solution(kernel, bar, mu0)
    return float(mu0 @ (bar * g))


def dynamical_variance_exact(kernel: FiniteKernel, phi, mu0=None) -> VarianceResult:
    mu0 = _mu0(kernel, mu0)
    bar = _centred(phi, mu0)
    g = _poisson_solution(kernel, bar, mu0)
    s2 = mu0 @ (bar * bar) + 2.0 * (mu0 @ (bar * g))
    return VarianceResult(_clamp(s2), "exact_solve")


def autocovariances(kernel: FiniteKernel, phi, K: int, mu0=None) -> np.ndarray:
    """``c_k = mu0(phibar L0^k phibar)`` for ``k = 0..K``."""
    mu0 = _mu0(kernel, mu0)
    bar = _centred(phi, mu0)
    out = np.empty(K + 1)
    v = bar
    for k in range(K + 1):
        out[k] = mu0 @ (bar * v)
        v = kernel.P @ v
    return out


def tail_bound(phibar_norm, delta0, K) -> float:
    """``2 ||phibar||^2 (1 - delta0)^(K+1) / delta0``, the size of the omitted terms."""
    return 2.0 * phibar_norm ** 2 * (1.0 - delta0) ** (K + 1) / delta0


def dynamical_variance_truncated(source, phi, K: int, delta0, space: Optional[FunctionSpace] = None,
                                 mu0=None, phibar_norm: Optional[float] = None) -> VarianceResult:
    """Series truncated after ``k = K``, with its tail bound.

    ``source`` is a :class:`FiniteKernel` or a precomputed sequence of
    autocovariances ``c_0..c_K`` (e.g. moments supplied for a sampler).
    The tail bound needs ``||phibar||`` in the norm where ``delta0`` holds:
    pass ``space`` (finite kernels) or ``phibar_norm`` directly.
    """
    if K < 0:
        raise ValueError("K must be non-negative")
    d0 = GapCertificate.coerce(delta0).delta0
    if isinstance(source, FiniteKernel):
        mu0 = _mu0(source, mu0)
        c = autocovariances(source, phi, K, mu0)
        if phibar_norm is None:
            if space is None:
                raise ValueError("need space or phibar_norm for the tail bound")
            phibar_norm = float(norm(space, _centred(phi, mu0)))
    else:
        c = np.asarray(source, dtype=float)
        if c.size < K + 1:
            raise ValueError(f"need {K + 1} autocovariances, got {c.size}")
        c = c[: K + 1]
        if phibar_norm is None:
            raise ValueError("phibar_norm is required with precomputed autocovariances")
    s2 = c[0] + 2.0 * c[1:].sum()
    return VarianceResult(max(float(s2), 0.0), "truncated", int(K), tail_bound(phibar_norm, d0, K))


def norm_lower_bound(delta0) -> float:
    """Smallest possible norm ``sqrt(delta0 / 2)`` of a unit-variance centred observable."""
    return float(np.sqrt(GapCertificate.coerce(delta0).delta0 / 2.0))


def norm_lower_bound_check(phi_tilde_norm, delta0) -> bool:
    return bool(phi_tilde_norm >= norm_lower_bound(delta0))
