import io
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spectral_certify.chains import theta_lazy
from spectral_certify.kernel import ConvergenceError, FiniteKernel, GapCertificate, exact_gap_certificate
from spectral_certify.montecarlo import exact_sum_distribution
from spectral_certify.norms import FunctionSpace, norm
from spectral_certify.perturbation import (
    LemmaRecord,
    LemmaReport,
    build_transfer,
    characteristic_function_exact,
    leading_eigen,
    operator_norm,
    persistence_radius,
    smallness_condition,
    smallness_radius,
    threshold_steps,
    verify_gap_persistence,
    verify_iterated_estimates,
    verify_lemma_estimates,
)


def _two_state_lambda(p, q, phi):
    w0, w1 = np.exp(phi)
    tr = (1 - p) * w0 + (1 - q) * w1
    det = (1 - p - q) * w0 * w1
    return (tr + math.sqrt(tr * tr - 4 * det)) / 2


def test_build_transfer():
    k = FiniteKernel.two_state(0.2, 0.3)
    assert np.allclose(build_transfer(k, [0.4, -1.0], scale=0).matrix, k.P)
    op = build_transfer(k, [0.0, 0.0])
    assert op.is_averaging
    with pytest.raises(OverflowError, match="rescale"):
        build_transfer(k, [0.0, 800.0])
    c = build_transfer(k, [0.0, 1.0], scale=1j)
    assert np.iscomplexobj(c.matrix)
    assert np.allclose(c.apply(np.ones(2)), k.P @ np.exp([0.0, 1j]))


def test_leading_eigen_examples():
    k = FiniteKernel.two_state(0.2, 0.3)
    e0 = leading_eigen(build_transfer(k, np.zeros(2)))
    assert e0.lam == 1.0 and np.all(e0.right == 1.0)
    nu = np.array([0.1, 0.6, 0.3])
    phi = np.array([0.3, -0.2, 0.5])
    e = leading_eigen(build_transfer(theta_lazy(nu, 1.0), phi))
    assert e.lam == pytest.approx(nu @ np.exp(phi), rel=1e-13)
    s = 0.3
    assert leading_eigen(build_transfer(k, [0.0, s])).lam == pytest.approx(
        _two_state_lambda(0.2, 0.3, [0.0, s]), rel=1e-13)


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 10), st.integers(0, 10_000))
def test_leading_eigen_matches_dense_solver(n, seed):
    rng = np.random.default_rng(seed)
    k = FiniteKernel(rng.dirichlet(np.ones(n), size=n))
    phi = 0.1 * rng.standard_normal(n)
    e = leading_eigen(build_transfer(k, phi))
    dense = np.max(np.real(np.linalg.eigvals(k.P * np.exp(phi)[None, :])))
    assert e.lam == pytest.approx(dense, rel=1e-10)
    assert e.residual <= 1e-12
    P = e.projection()
    assert np.allclose(P @ P, P, atol=1e-10)


def test_leading_eigen_rejects_no_dominance():
    with pytest.raises(ConvergenceError):
        leading_eigen(build_transfer(FiniteKernel.two_state(1.0, 1.0), [0.0, 0.1]))


def test_smallness_examples():
    assert smallness_radius(1.0) == pytest.approx(math.log(26 / 25))
    assert smallness_condition(1.0, 0.039)
    assert smallness_condition(1.0, 0.0)
    assert smallness_radius(0.1) == pytest.approx(math.log(1 + 0.01 / 14.2))
    assert not smallness_condition(0.1, 0.001)


def test_threshold_steps():
    assert threshold_steps(1.0) == 59
    assert threshold_steps(0.13) == 460


def test_persistence_radius():
    d, delta = 0.5, 0.5 / 13
    assert persistence_radius(d, delta) == pytest.approx(d * (d - delta) / (6 * (1 + d - delta) * 2))


def test_operator_norm_is_lower_bound():
    rng = np.random.default_rng(0)
    M = rng.standard_normal((5, 5))
    space = FunctionSpace.sup_osc(5)
    r, f = operator_norm(M, space)
    assert r == pytest.approx(norm(space, M @ f) / norm(space, f), rel=1e-12)
    # sup-norm part alone is a classical bound
    assert r <= 3 * np.abs(M).sum(axis=1).max()


def test_lemma_estimates_zero_potential():
    k = theta_lazy(np.full(3, 1 / 3), 0.5)
    rep = verify_lemma_estimates(k, exact_gap_certificate(k), np.zeros(3))
    assert rep.all_hold
    ops = [r for r in rep.records if r.lemma_id == "operator_perturbation" and r.inequality_id.startswith("diff")]
    assert all(r.lhs == 0 for r in ops)


def test_lemma_estimates_lazy_and_two_state():
    rng = np.random.default_rng(1)
    k = theta_lazy(rng.dirichlet(np.ones(5)), 0.5)
    cert = exact_gap_certificate(k)
    phi = rng.standard_normal(5)
    phi *= 0.9 * smallness_radius(cert) / norm(FunctionSpace.sup_osc(5), phi)
    rep = verify_lemma_estimates(k, cert, phi)
    assert rep.all_hold and rep.min_margin > 0
    ts = FiniteKernel.two_state(0.25, 0.25)
    cert = exact_gap_certificate(ts)
    for frac in np.linspace(0.05, 0.45, 5):
        phi = np.array([-1.0, 1.0])
        phi *= frac * smallness_radius(cert) / norm(FunctionSpace.sup_osc(2), phi)
        rep = verify_lemma_estimates(ts, cert, phi)
        assert rep.all_hold and rep.min_margin > 0


def test_lemma_estimates_reject_large_potential():
    k = FiniteKernel.two_state(0.25, 0.25)
    with pytest.raises(ValueError, match="smallness radius"):
        verify_lemma_estimates(k, 0.5, np.array([0.0, 1.0]))


def test_advisory_flag():
    k = FiniteKernel.two_state(0.25, 0.25)
    est = GapCertificate(0.45, provenance="estimated", safety_factor=0.9)
    rep = verify_lemma_estimates(k, est, np.array([0.0, 1e-4]))
    assert rep.advisory


def test_iterated_estimates():
    k = theta_lazy(np.full(4, 0.25), 0.5)
    cert = exact_gap_certificate(k)
    zero = verify_iterated_estimates(k, cert, np.zeros(4), threshold_steps(cert))
    assert all(r.lhs == 0 for r in zero.records)
    phi = np.array([1.0, -1.0, 0.5, 0.0])
    phi *= 0.5 * smallness_radius(cert) / norm(FunctionSpace.sup_osc(4), phi)
    rep = verify_iterated_estimates(k, cert, phi, 200)
    assert rep.all_hold
    with pytest.raises(ValueError, match="below the sample-size threshold"):
        verify_iterated_estimates(k, cert, phi, 10)


def test_gap_persistence():
    k = theta_lazy(np.full(4, 0.25), 0.5)
    cert = exact_gap_certificate(k)
    rep = verify_gap_persistence(k, cert, np.zeros(4), 0.5)
    assert rep.all_hold
    phi = np.array([1e-4, -1e-4, 0, 0])
    assert verify_gap_persistence(k, cert, phi, 0.5 / 13).all_hold
    ts = FiniteKernel.two_state(0.25, 0.25)
    c2 = exact_gap_certificate(ts)
    rad = persistence_radius(0.5, 0.5 / 13)
    s = math.log1p(0.5 * rad)
    assert verify_gap_persistence(ts, c2, np.array([0.0, s / 2]), 0.5 / 13, n_probe=50).all_hold
    with pytest.raises(ValueError):
        verify_gap_persistence(ts, c2, np.array([0.0, 1.0]), 0.5 / 13)


def test_characteristic_function_examples():
    k = FiniteKernel.two_state(0.3, 0.2)
    mu = np.array([0.4, 0.6])
    assert characteristic_function_exact(k, np.array([0.5, -1.0]), mu, 10, 0.0) == pytest.approx(1.0)
    assert characteristic_function_exact(k, np.zeros(2), mu, 10, 2.0) == pytest.approx(1.0)
    assert characteristic_function_exact(k, np.array([0.5, -1.0]), mu, 0, 3.0) == 1.0
    phi = np.array([-0.6, 0.9])
    n, t = 400, 1.0
    dist = exact_sum_distribution(k, phi / math.sqrt(n), mu, n)
    oracle = np.sum(dist.probs * np.exp(1j * t * dist.atoms))
    got = characteristic_function_exact(k, phi, mu, n, t)
    assert abs(got - oracle) <= 1e-10


def test_lemma_report_csv_round_trip():
    rep = LemmaReport()
    rep.add("leading_eigenvalue", "abs_le_0.0524", 0.01, 0.0524)
    rep.add("operator_perturbation", "diff_le_exp", 0.2, 0.1)
    assert not rep.all_hold and len(rep.failures) == 1
    back = LemmaReport.from_csv(io.StringIO(rep.to_csv()))
    assert [(r.lemma_id, r.inequality_id, r.lhs, r.rhs) for r in back.records] == \
        [(r.lemma_id, r.inequality_id, r.lhs, r.rhs) for r in rep.records]
    assert LemmaRecord("x", "y", 1.0, 1.0 - 1e-12).holds
