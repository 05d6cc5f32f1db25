import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from spectral_certify.chains import hypercube
from spectral_certify.kernel import FiniteKernel, stationary_measure
from spectral_certify.norms import (
    FunctionSpace,
    Kind,
    Observable,
    PiecewiseConstant,
    SpaceMismatchError,
    check_algebra,
    norm,
    normalize_observable,
    seminorm,
    sup_norm,
)
from spectral_certify.variance import dynamical_variance_exact


def _spaces(n, seed=0):
    rng = np.random.default_rng(seed)
    pts = rng.random((n, 2))
    metric = np.sqrt(((pts[:, None] - pts[None]) ** 2).sum(-1))
    adj = [sorted({(i - 1) % n, (i + 1) % n} - {i}) for i in range(n)]
    return [
        FunctionSpace.sup_osc(n),
        FunctionSpace.weighted_lipschitz(metric, 2.0),
        FunctionSpace.local_tv(adj),
        FunctionSpace.bv_interval(n),
    ]


# subnormals carry no relative precision, so no relative slack can cover them
values = arrays(np.float64, 6, elements=st.floats(-10, 10, allow_nan=False, allow_subnormal=False))


# -- examples -----------------------------------------------------------------


def test_sup_norm_examples():
    assert sup_norm([0, 0, 0]) == 0
    assert sup_norm([1, -3, 2]) == 3
    assert sup_norm(hypercube(3).polarization()) == 1


def test_sup_norm_rejects_empty_and_nonfinite():
    with pytest.raises(ValueError, match="empty observable"):
        sup_norm([])
    with pytest.raises(ValueError):
        seminorm(FunctionSpace.sup_osc(), [1.0, np.nan])


def test_seminorm_examples():
    assert seminorm(FunctionSpace.sup_osc(), [1, -3, 2]) == 5
    cube = hypercube(3)
    rho = cube.polarization()
    assert seminorm(cube.lip_space, rho) == pytest.approx(1.0, abs=1e-15)
    assert norm(cube.lip_space, rho) == pytest.approx(2.0, abs=1e-15)
    ind = cube.first_coordinate_zero()
    assert seminorm(cube.tv_space, ind) == 1
    assert norm(cube.tv_space, ind) == 2
    assert seminorm(FunctionSpace.bv_interval(5), [0, 1, 1, 0, 0]) == 2


def test_bv_respects_positions():
    space = FunctionSpace.bv_interval(positions=[0.3, 0.1, 0.2])
    # sorted order is states 1, 2, 0
    assert seminorm(space, [5.0, 0.0, 1.0]) == pytest.approx(5.0)


def test_missing_annotation_is_a_mismatch():
    with pytest.raises(SpaceMismatchError, match="space/kind mismatch"):
        seminorm(FunctionSpace(Kind.WEIGHTED_LIPSCHITZ), [0.0, 1.0])
    with pytest.raises(SpaceMismatchError, match="space/kind mismatch"):
        seminorm(FunctionSpace(Kind.LOCAL_TV), [0.0, 1.0])


def test_dimension_mismatch():
    with pytest.raises(ValueError, match="dimension mismatch"):
        norm(FunctionSpace.sup_osc(3), [1.0, 2.0])


def test_lipschitz_pruning_matches_full_pairs():
    rng = np.random.default_rng(3)
    cube = hypercube(4)
    full = cube.kernel.metric
    F = rng.standard_normal((50, 16))
    i, j = np.triu_indices(16, 1)
    brute = 4 * np.max(np.abs(F[:, i] - F[:, j]) / full[i, j], axis=1)
    assert np.allclose(seminorm(cube.lip_space, F), brute, rtol=1e-13)


def test_check_algebra_examples():
    for space in _spaces(4):
        assert check_algebra(space, np.ones(4), np.ones(4))
    assert check_algebra(FunctionSpace.sup_osc(2), [1.0, 0.0], [0.0, 1.0])


def test_check_algebra_random_pairs():
    rng = np.random.default_rng(0)
    for trial in range(50):
        for space in _spaces(10, seed=trial):
            f, g = rng.standard_normal((2, 10))
            assert check_algebra(space, f, g)


def test_normalize_observable():
    mu = np.array([0.25, 0.25, 0.5])
    phi = np.array([1.0, -1.0, 0.0])
    obs = normalize_observable(phi, mu, 1.0)
    assert np.allclose(obs.values, phi)
    with pytest.raises(ValueError, match="degenerate variance"):
        normalize_observable(np.ones(3), mu, 0.0)


def test_normalized_observable_has_unit_variance():
    k = FiniteKernel.two_state(0.2, 0.35)
    mu0 = stationary_measure(k).weights
    phi = np.array([0.0, 1.0])
    s2 = dynamical_variance_exact(k, phi, mu0).sigma2
    tilde = normalize_observable(phi, mu0, s2)
    assert dynamical_variance_exact(k, tilde.values, mu0).sigma2 == pytest.approx(1.0, abs=1e-9)
    assert abs(mu0 @ tilde.values) < 1e-15


def test_observable_constructors():
    space = FunctionSpace.sup_osc(3)
    obs = Observable.explicit([0.0, 2.0, -1.0], space)
    assert obs.norm_value == 5.0 and obs.seminorm_value == 3.0
    assert obs(1) == 2.0
    a = Observable.asserted(lambda x: x, 2.0)
    assert a(3.0) == 3.0 and a.norm_value == 2.0
    with pytest.raises(ValueError):
        Observable.asserted(lambda x: x, -1.0)


def test_piecewise_constant():
    ind = PiecewiseConstant.indicator(-0.5, 0.5, -2.0, 2.0)
    assert ind.total_variation() == 2.0
    assert ind.bv_norm() == 3.0
    assert list(ind(np.array([-1.0, -0.5, 0.0, 0.5]))) == [0.0, 1.0, 1.0, 0.0]
    edge = PiecewiseConstant.indicator(-2.0, 0.0, -2.0, 2.0)
    assert edge.total_variation() == 1.0
    shifted = ind.affine(2.0, -1.0)
    assert shifted.values == (-1.0, 1.0, -1.0)
    with pytest.raises(ValueError):
        PiecewiseConstant((0.0, 0.0), (0.0, 1.0, 2.0))
    with pytest.raises(ValueError):
        PiecewiseConstant.indicator(1.0, 0.0)


# -- properties -------------------------------------------------------------


SPACES = _spaces(6)


@settings(max_examples=60, deadline=None)
@given(values, st.floats(-5, 5))
def test_norm_decomposition_and_constants(f, c):
    for space in SPACES:
        total = norm(space, f)
        assert total == pytest.approx(sup_norm(f) + seminorm(space, f), rel=1e-12, abs=1e-12)
        assert total >= sup_norm(f)
        assert norm(space, np.ones(6)) == 1.0
        assert seminorm(space, f + c) == pytest.approx(seminorm(space, f), rel=1e-9, abs=1e-9)


@settings(max_examples=60, deadline=None)
@given(values, values, st.floats(-5, 5))
def test_homogeneity_and_triangle(f, g, c):
    for space in SPACES:
        assert norm(space, c * f) == pytest.approx(abs(c) * norm(space, f), rel=1e-12, abs=1e-12)
        assert norm(space, f + g) <= (norm(space, f) + norm(space, g)) * (1 + 1e-12) + 1e-12


@settings(max_examples=60, deadline=None)
@given(values, values)
def test_submultiplicative(f, g):
    for space in SPACES:
        assert check_algebra(space, f, g)


def test_batch_matches_single():
    rng = np.random.default_rng(1)
    F = rng.standard_normal((7, 6))
    for space in SPACES:
        batch = norm(space, F)
        assert np.allclose(batch, [norm(space, f) for f in F], rtol=1e-14, atol=0)
