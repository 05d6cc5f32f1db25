import io
import json
import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spectral_certify.bounds import (
    BoundQuery,
    BoundReport,
    berry_esseen_bound,
    concentration_bound,
    plan_sample_size,
    reports_from_csv,
    reports_to_csv,
    second_order_bound,
    threshold_n,
    u_min,
)
from spectral_certify.kernel import FiniteKernel, GapCertificate
from spectral_certify.variance import dynamical_variance_exact

mp.mp.dps = 40


def test_threshold_examples():
    assert threshold_n(1.0) == 59
    assert threshold_n(0.13) == 460
    for d in np.linspace(1e-3, 1.0, 500):
        assert threshold_n(d) <= 60 / d
        exact = mp.ceil(1 + mp.log(100) / -mp.log(1 - mp.mpf(d) / 13))
        assert threshold_n(d) == int(exact)


def test_concentration_examples():
    g = concentration_bound(BoundQuery(1.0, 1.0, 1 / 3, 1000))
    assert g.theorem == "A_gauss" and g.applicable
    assert g.raw_value == pytest.approx(2.488 * math.exp(-1000 / 21.764 / 9), rel=1e-14)
    assert g.raw_value == pytest.approx(0.01509, abs=1e-5)
    e = concentration_bound(BoundQuery(1.0, 1.0, 0.5, 1000))
    assert e.theorem == "A_exp"
    assert e.raw_value == pytest.approx(2.624 * math.exp(-1000 * 0.98 / 25 * (0.5 - 0.254)), rel=1e-14)
    tiny = concentration_bound(BoundQuery(1.0, 1.0, 1e-9, 1000))
    assert tiny.raw_value > 1 and tiny.value == 1.0


def test_regime_boundary_is_gaussian():
    assert concentration_bound(BoundQuery(0.75, 1.0, 0.25, 1000)).theorem == "A_gauss"
    assert concentration_bound(BoundQuery(0.75, 1.0, 0.25 + 1e-12, 1000)).theorem == "A_exp"


def test_below_threshold_is_inapplicable():
    rep = concentration_bound(BoundQuery(1.0, 1.0, 0.3, 58))
    assert not rep.applicable and rep.value == 1.0
    assert "sample_size_threshold" in rep.reason


def test_certified_flag_follows_provenance():
    est = GapCertificate(0.4, provenance="estimated", safety_factor=0.9)
    qs = [BoundQuery(est, 1.0, 0.05, 10_000, S=0.5), BoundQuery(est, phi_tilde_norm=1.0, n=10_000)]
    assert not concentration_bound(qs[0]).certified
    assert not second_order_bound(qs[0]).certified
    assert not berry_esseen_bound(qs[1]).certified
    assert not plan_sample_size(BoundQuery(est, 1.0, 0.05, beta=0.01)).certified
    assert concentration_bound(BoundQuery(0.4, 1.0, 0.05, 10_000)).certified


def test_u_min_example():
    q = BoundQuery(1.0, 1.0, 0.009, 10 ** 6, S=0.25)
    U = u_min(q)
    assert U == pytest.approx(math.sqrt(0.009) * math.sqrt(60) * 2, rel=1e-14)
    assert U == pytest.approx(1.4697, abs=1e-4)
    rep = second_order_bound(q)
    assert rep.applicable and rep.inputs["U"] == U
    # independent minimisation over admissible U
    grid = np.linspace(U, 50 * U, 4000)
    vals = [second_order_bound(q, float(u)).raw_value for u in grid]
    assert rep.raw_value <= min(vals) * (1 + 1e-12)


def test_second_order_limits_and_conditions():
    q = BoundQuery(1.0, 1.0, 0.009, 1000, S=0.25)
    assert second_order_bound(q, 1e9).raw_value == pytest.approx(2.637, rel=1e-6)
    bad = second_order_bound(q, 0.2)
    assert not bad.applicable and bad.value == 1.0
    assert "variance_dominated" in bad.reason and "deviation_within_range" in bad.reason


def test_second_order_beats_gaussian_on_two_state():
    k = FiniteKernel.two_state(0.3, 0.3)
    d = 0.6
    phi = np.array([0.0, 1.0])
    S = dynamical_variance_exact(k, phi).sigma2
    s = 2.0  # sup-osc norm of phi
    for a in (1e-4, 3e-4, 1e-3):
        q = BoundQuery(d, s, a, 10 ** 7, S=S)
        U = u_min(q)
        if 2 * U < (13.44 * d + 8.324) / d * s * s:
            # compare decay rates; the prefactors differ
            rate_b = -math.log(second_order_bound(q).raw_value / 2.637)
            rate_a = -math.log(concentration_bound(q).raw_value / 2.488)
            assert rate_b >= rate_a


def test_berry_esseen_examples():
    assert berry_esseen_bound(BoundQuery(1.0, phi_tilde_norm=1.0, n=10 ** 6)).raw_value == pytest.approx(0.556)
    one = berry_esseen_bound(BoundQuery(1.0, phi_tilde_norm=1.0, n=1))
    assert one.raw_value == pytest.approx(556) and one.value == 1.0
    r = berry_esseen_bound(BoundQuery(0.5, phi_tilde_norm=2.0, n=400))
    assert r.raw_value == pytest.approx(9680 / 20)
    with pytest.raises(ValueError, match="inconsistent inputs"):
        berry_esseen_bound(BoundQuery(1.0, phi_tilde_norm=0.5, n=100))
    with pytest.raises(ValueError, match="contradictory"):
        berry_esseen_bound(BoundQuery(1.0, a=0.1, phi_tilde_norm=1.0, n=100))


def test_planner_examples():
    rep = plan_sample_size(BoundQuery(1.0, 1.0, 1 / 3, beta=0.01))
    assert rep.value == 1081 and rep.regime == "A_gauss"
    loose = plan_sample_size(BoundQuery(1.0, 1.0, 2.0, beta=0.5))
    assert loose.value == threshold_n(1.0)
    # just past the regime boundary the exponential rate is still positive
    edge = plan_sample_size(BoundQuery(0.9, 1.0, 0.3 + 1e-9, beta=0.01))
    assert edge.regime == "A_exp"


@settings(max_examples=80, deadline=None)
@given(st.floats(0.01, 1.0), st.floats(1e-3, 1.0), st.floats(1e-4, 0.5))
def test_planner_consistency(d, a, beta):
    rep = plan_sample_size(BoundQuery(d, 1.0, a, beta=beta))
    n = int(rep.value)
    at = concentration_bound(BoundQuery(d, 1.0, a, n))
    assert at.applicable and at.raw_value <= beta
    if n - 1 >= threshold_n(d):
        assert concentration_bound(BoundQuery(d, 1.0, a, n - 1)).raw_value > beta


def test_planner_uses_second_order_when_better():
    q = BoundQuery(1.0, 1.0, 0.009, beta=0.01, S=0.25)
    rep = plan_sample_size(q)
    n = int(rep.value)
    assert n <= plan_sample_size(BoundQuery(1.0, 1.0, 0.009, beta=0.01)).value
    if rep.regime == "B":
        assert second_order_bound(BoundQuery(1.0, 1.0, 0.009, n, 0.25)).raw_value <= 0.01


@settings(max_examples=60, deadline=None)
@given(st.floats(0.01, 1.0), st.floats(1e-3, 2.0), st.integers(1, 10 ** 6))
def test_monotone_in_n_and_a(d, a, n):
    base = threshold_n(d)
    q1 = concentration_bound(BoundQuery(d, 1.0, a, base + n))
    q2 = concentration_bound(BoundQuery(d, 1.0, a, base + n + 1))
    assert q2.raw_value <= q1.raw_value
    a2 = a * 1.01
    r2 = concentration_bound(BoundQuery(d, 1.0, a2, base + n))
    if r2.theorem == q1.theorem:
        assert r2.raw_value <= q1.raw_value
    b1 = berry_esseen_bound(BoundQuery(d, phi_tilde_norm=1.0, n=n))
    b2 = berry_esseen_bound(BoundQuery(d, phi_tilde_norm=1.0, n=n + 1))
    assert b2.raw_value <= b1.raw_value and 0 < b1.value <= 1


@settings(max_examples=40, deadline=None)
@given(st.floats(0.05, 1.0), st.floats(0.1, 2.0), st.floats(0.01, 0.9))
def test_second_order_monotone_below_crossover(d, s, frac):
    U = 5.0
    cross = U * U / (30 * (1 + 1 / d) ** 2 * s ** 3)
    a = frac * cross
    n = threshold_n(d) + 1000
    r1 = second_order_bound(BoundQuery(d, s, a, n), U).raw_value
    r2 = second_order_bound(BoundQuery(d, s, a * 1.001, n), U).raw_value
    assert r2 <= r1


def test_query_validation():
    with pytest.raises(ValueError):
        BoundQuery(1.0, -1.0, 0.1, 100)
    with pytest.raises(ValueError):
        BoundQuery(1.0, 1.0, 0.1, 0)
    with pytest.raises(ValueError):
        BoundQuery(1.0, 1.0, 0.1, beta=1.5)
    with pytest.raises(ValueError, match="missing inputs"):
        concentration_bound(BoundQuery(1.0, 1.0))


def test_csv_and_json_round_trip():
    reps = [concentration_bound(BoundQuery(1.0, 1.0, 1 / 3, 1000)),
            concentration_bound(BoundQuery(0.5, 1.0, 0.3, 10)),
            second_order_bound(BoundQuery(1.0, 1.0, 0.009, 10 ** 6, S=0.25)),
            berry_esseen_bound(BoundQuery(1.0, phi_tilde_norm=1.0, n=10 ** 6)),
            plan_sample_size(BoundQuery(1.0, 1.0, 1 / 3, beta=0.01))]
    assert reports_from_csv(io.StringIO(reports_to_csv(reps))) == reps
    for r in reps:
        assert BoundReport.from_dict(json.loads(r.to_json())) == r
