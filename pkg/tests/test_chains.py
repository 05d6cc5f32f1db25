import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spectral_certify.bounds import BoundQuery, concentration_bound
from spectral_certify.chains import (
    FiniteSampler,
    bernoulli,
    bernoulli_bound,
    bernoulli_gap,
    bernoulli_indicator_mean,
    bernoulli_iterate_count,
    hypercube,
    is_scrambled,
    resolve_chain,
    theta_lazy,
)
from spectral_certify.kernel import (
    FiniteKernel,
    apply_averaging,
    contraction_factor_exact_rank1,
    stationary_measure,
)


def test_theta_lazy():
    nu = np.full(4, 0.25)
    assert np.allclose(theta_lazy(nu, 1.0).P, np.tile(nu, (4, 1)))
    assert contraction_factor_exact_rank1(theta_lazy(nu, 0.5)) == pytest.approx(0.5)
    w = np.array([0.1, 0.2, 0.7])
    for theta in (0.05, 0.5, 1.0):
        assert np.allclose(stationary_measure(theta_lazy(w, theta)).weights, w)
    with pytest.raises(ValueError):
        theta_lazy([0.5, 0.6], 0.5)
    with pytest.raises(ValueError):
        theta_lazy(nu, 0.0)


def test_hypercube_structure():
    # one slot, always resampled: an i.i.d. fair bit
    one = hypercube(1)
    assert np.allclose(one.kernel.P, 0.5)
    assert contraction_factor_exact_rank1(one.kernel) == pytest.approx(1.0)
    for N in range(1, 8):
        cube = hypercube(N)
        P = cube.kernel.P
        assert P.shape == (2 ** N, 2 ** N)
        assert np.allclose(P.sum(axis=0), 1.0)
        assert np.all((P > 0).sum(axis=1) <= N + 1)
        assert np.all(np.diag(P) >= 0.5)
        assert np.allclose(stationary_measure(cube.kernel).weights, 2.0 ** -N)


@pytest.mark.parametrize("N", range(1, 11))
def test_polarization_is_affine_contraction(N):
    cube = hypercube(N)
    rho = cube.polarization()
    assert np.allclose(apply_averaging(cube.kernel, rho), (1 - 1 / N) * rho + 1 / (2 * N), atol=1e-14)


def test_hypercube_sampler_only_for_large_N():
    with pytest.warns(UserWarning):
        big = hypercube(12)
    assert big.kernel is None
    rng = np.random.default_rng(0)
    x = big.sampler.step(np.zeros(5, dtype=np.int64), rng)
    assert np.all(x < 2 ** 12)
    with pytest.raises(ValueError):
        hypercube(12, explicit=True)


def test_hypercube_sampler_matches_kernel():
    cube = hypercube(3)
    rng = np.random.default_rng(1)
    x = np.full(200_000, 5, dtype=np.int64)
    y = cube.sampler.step(x, rng)
    freq = np.bincount(y, minlength=8) / y.size
    assert np.allclose(freq, cube.kernel.P[5], atol=5e-3)


def test_finite_sampler_distribution():
    rng = np.random.default_rng(2)
    P = rng.dirichlet(np.ones(5), size=5)
    P[2] = [0, 0, 1, 0, 0]
    k = FiniteKernel(P)
    s = FiniteSampler(k)
    for x0 in range(5):
        y = s.step(np.full(100_000, x0), np.random.default_rng(x0))
        assert np.allclose(np.bincount(y, minlength=5) / y.size, P[x0], atol=6e-3)


def test_scrambled_predicate():
    cube = hypercube(2)
    ind = cube.first_coordinate_zero()
    # each vertex has one of its two neighbours on the same side
    assert is_scrambled(2, ind, 0.25)
    assert not is_scrambled(2, ind, 0.5)
    with pytest.raises(ValueError):
        is_scrambled(21, np.zeros(2), 0.5)


def test_bernoulli_iterate_count():
    assert bernoulli_iterate_count(0.7) == 2
    assert bernoulli_iterate_count(0.51) == 2
    assert bernoulli(0.7).ell == 2
    with pytest.raises(ValueError, match="iterate count impractical"):
        bernoulli(0.995)
    with pytest.raises(ValueError):
        bernoulli(0.4)


def test_bernoulli_gap_and_bound():
    assert bernoulli_gap(0.7).delta0 == pytest.approx(1 / 7)
    rep = bernoulli_bound(0.7, 1.0, 0.04, 480)
    assert rep.applicable
    too_big = bernoulli_bound(0.7, 1.0, 1 / 21, 480)
    assert not too_big.applicable and too_big.value == 1.0
    small_n = bernoulli_bound(0.7, 1.0, 0.04, 479)
    assert not small_n.applicable
    thm = concentration_bound(BoundQuery(1 / 7, 1.0, 0.04, 480))
    assert rep.raw_value == pytest.approx(thm.raw_value, rel=2e-3)


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 8), st.floats(0.01, 0.99), st.integers(1, 40))
def test_bernoulli_bound_tracks_theorem(ell, frac, mult):
    lam = 2.0 ** (-1.0 / (ell - 0.5))
    d = 1.0 / (2 ** (ell + 1) - 1)
    a = frac * d / 3
    n = 120 * 2 ** ell * mult
    ours = bernoulli_bound(lam, 1.0, a, n).raw_value
    theirs = concentration_bound(BoundQuery(d, 1.0, a, n)).raw_value
    # identical prefactor, exponents within 0.1% of each other
    assert abs(math.log(ours) - math.log(theirs)) <= 2e-3 * abs(math.log(theirs / 2.488)) + 1e-12


def test_bernoulli_sampler_matches_direct_formula():
    lam = 0.6
    chain = bernoulli(lam)
    rng = np.random.default_rng(4)
    bits = rng.integers(0, 2, size=40)
    xs = chain.run(0.0, bits)
    for k in range(1, 41):
        direct = sum(lam ** (k - j + 1) * (2 * int(bits[j - 1]) - 1) for j in range(1, k + 1))
        assert xs[k - 1] == pytest.approx(direct, abs=1e-14)
    lo, hi = chain.interval
    assert all(lo <= x <= hi for x in xs)


def test_bernoulli_indicator_mean_enclosure():
    lam = 0.7
    lo, hi = bernoulli_indicator_mean(lam, 0.0, 10.0, depth=14)
    assert lo <= 0.5 <= hi
    assert hi - lo < 0.05
    ind = bernoulli(lam).indicator(-0.5, 0.5)
    assert ind.total_variation() == 2.0


def test_resolve_chain():
    assert resolve_chain("hypercube:3").N == 3
    assert resolve_chain("bernoulli:0.7").ell == 2
    assert resolve_chain("theta-lazy:4,0.5").n == 4
    assert np.allclose(resolve_chain("two-state:0.2,0.3").P, FiniteKernel.two_state(0.2, 0.3).P)
    with pytest.raises(ValueError, match="unknown chain"):
        resolve_chain("torus:3")


def test_bernoulli_cap_is_gaussian_boundary():
    for ell in range(1, 11):
        d = Fraction(1, 2 ** (ell + 1) - 1)
        assert d / 3 == Fraction(1, 3 * (2 ** (ell + 1) - 1))
