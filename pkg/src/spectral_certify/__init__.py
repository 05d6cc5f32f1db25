"""Explicit concentration and Berry-Esseen bounds for Markov chains with a contraction gap."""

from .bounds import (
    BoundQuery,
    BoundReport,
    berry_esseen_bound,
    concentration_bound,
    plan_sample_size,
    second_order_bound,
    threshold_n,
    u_min,
)
from .chains import bernoulli, hypercube, theta_lazy
from .kernel import (
    FiniteKernel,
    GapCertificate,
    estimate_gap,
    exact_gap_certificate,
    stationary_measure,
    sup_osc_gap_certificate,
)
from .norms import FunctionSpace, Kind, Observable, norm, seminorm
from .perturbation import build_transfer, leading_eigen, smallness_condition
from .variance import dynamical_variance_exact, dynamical_variance_truncated

__version__ = "0.1.0"
