import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, special

from stackdesign.exceptions import FactorizationFailure
from stackdesign.kernels import (
    KernelSpec,
    gram_matrix,
    kernel_eval,
    kernel_matrix,
    matern_phi,
)

NU_GRID = (0.5, 1.5, 2.5, 3.5, 4.5)


def bessel_k_quadrature(nu, x):
    # K_nu(x) = int_0^inf exp(-x cosh t) cosh(nu t) dt, integrand scaled by exp(x)
    f = lambda t: math.exp(-x * (math.cosh(t) - 1.0)) * math.cosh(nu * t)
    t_max = math.acosh(1.0 + 800.0 / x)  # integrand below exp(-800) beyond here
    val, _ = integrate.quad(f, 0.0, t_max, epsabs=0.0, epsrel=1e-13, limit=400)
    return val * math.exp(-x)


def matern_oracle(r, nu):
    s = r * math.sqrt(2 * nu)
    return 2 ** (1 - nu) / math.gamma(nu) * s**nu * bessel_k_quadrature(nu, s)


PUBLISHED = {
    0.5: lambda r: np.exp(-r),
    1.5: lambda r: (1 + math.sqrt(3) * r) * np.exp(-math.sqrt(3) * r),
    2.5: lambda r: (1 + math.sqrt(5) * r + 5 * r**2 / 3) * np.exp(-math.sqrt(5) * r),
}


def test_phi_at_zero_is_one():
    assert matern_phi(0.0, 2.7) == 1.0
    for nu in NU_GRID:
        assert matern_phi(0.0, nu) == 1.0


def test_exponential_case():
    assert matern_phi(1.0, 0.5) == pytest.approx(math.exp(-1), rel=1e-14)


def test_three_halves_value_against_quadrature():
    expected = (1 + math.sqrt(3)) * math.exp(-math.sqrt(3))
    assert expected == pytest.approx(0.48336, abs=1e-5)
    assert matern_oracle(1.0, 1.5) == pytest.approx(expected, rel=1e-10)
    assert matern_phi(1.0, 1.5) == pytest.approx(expected, rel=1e-12)


@pytest.mark.parametrize("nu", [0.5, 1.5, 2.5])
def test_half_integer_closed_forms(nu):
    r = np.geomspace(1e-6, 30, 200)
    got = matern_phi(r, nu)
    ref = PUBLISHED[nu](r)
    np.testing.assert_allclose(got, ref, rtol=1e-10, atol=0)


@pytest.mark.parametrize("nu", [0.3, 0.8, 1.5, 2.2, 3.5, 4.5])
@pytest.mark.parametrize("r", [1e-3, 0.05, 0.4, 1.0, 3.0, 8.0])
def test_against_bessel_quadrature(nu, r):
    assert matern_phi(r, nu) == pytest.approx(matern_oracle(r, nu), rel=1e-9)


def test_general_path_agrees_with_closed_form_near_half_integers():
    r = np.linspace(0.01, 10, 50)
    for nu in (1.5, 2.5, 3.5):
        near = matern_phi(r, nu + 1e-9)
        np.testing.assert_allclose(near, matern_phi(r, nu), rtol=1e-7)


def test_large_argument_saturates_without_warning():
    with np.errstate(all="raise"):
        vals = matern_phi(np.array([1e3, 1e6]), 2.2)
    assert np.all(vals == 0.0)


@settings(max_examples=60, deadline=None)
@given(st.sampled_from(NU_GRID), st.lists(st.floats(0, 50), min_size=2, max_size=30))
def test_range_and_monotone(nu, rs):
    r = np.sort(np.array(rs))
    v = matern_phi(r, nu)
    assert np.all(v > 0) and np.all(v <= 1)
    assert np.all(np.diff(v) <= 1e-15)


def test_invalid_arguments():
    with pytest.raises(ValueError):
        matern_phi(1.0, 0.0)
    with pytest.raises(ValueError):
        matern_phi(-1.0, 1.5)
    with pytest.raises(ValueError):
        KernelSpec(1.5, (1.0, -2.0))


def test_kernel_eval_examples():
    spec = KernelSpec(0.5, (2.0,))
    assert kernel_eval(spec, [0.0], [1.0]) == pytest.approx(math.exp(-0.5), rel=1e-14)
    spec2 = KernelSpec(0.5, (1.0, 1.0))
    assert kernel_eval(spec2, [0, 0], [3, 4]) == pytest.approx(math.exp(-5), rel=1e-14)
    assert kernel_eval(spec2, [0.3, 0.7], [0.3, 0.7]) == 1.0


def test_kernel_eval_dimension_mismatch():
    with pytest.raises(ValueError):
        kernel_eval(KernelSpec(1.5, (1.0, 1.0)), [0.0, 0.0], [1.0, 2.0, 3.0])


@settings(max_examples=50, deadline=None)
@given(
    st.sampled_from(NU_GRID + (0.7, 2.2)),
    st.lists(st.floats(0.05, 5), min_size=3, max_size=3),
    st.lists(st.floats(-3, 3), min_size=3, max_size=3),
    st.lists(st.floats(-3, 3), min_size=3, max_size=3),
)
def test_kernel_eval_symmetric(nu, ls, x, y):
    spec = KernelSpec(nu, tuple(ls))
    assert kernel_eval(spec, x, y) == kernel_eval(spec, y, x)


def test_kernel_matrix_matches_pointwise():
    rng = np.random.default_rng(4)
    spec = KernelSpec(2.5, (0.4, 1.3))
    X, Y = rng.random((6, 2)), rng.random((4, 2))
    K = kernel_matrix(spec, X, Y)
    ref = np.array([[kernel_eval(spec, x, y) for y in Y] for x in X])
    np.testing.assert_allclose(K, ref, rtol=1e-12)


def test_gram_single_point():
    g = gram_matrix(KernelSpec(1.5, (1.0,)), [[0.3]])
    assert g.chol.shape == (1, 1)
    assert g.chol[0, 0] ** 2 == pytest.approx(1.0 + g.jitter)


def test_gram_duplicate_points_fail():
    with pytest.raises(FactorizationFailure):
        gram_matrix(KernelSpec(0.5, (1.0,)), [[0.2], [0.2], [0.9]])


def test_gram_collinear_exponential_entries():
    spec = KernelSpec(0.5, (0.7,))
    x = np.array([0.0, 0.3, 1.0])
    g = gram_matrix(spec, x.reshape(-1, 1))
    ref = np.exp(-np.abs(x[:, None] - x[None, :]) / 0.7)
    np.testing.assert_allclose(g.matrix, ref, rtol=1e-14)
    assert g.jitter == 0.0


@pytest.mark.parametrize("nu", NU_GRID)
def test_gram_reconstruction(nu):
    rng = np.random.default_rng(11)
    X = rng.random((40, 2))
    g = gram_matrix(KernelSpec(nu, (0.3, 0.5)), X)
    rec = g.chol @ g.chol.T
    target = g.jittered()
    assert np.linalg.norm(rec - target) <= 1e-10 * np.linalg.norm(target)


def test_jitter_escalates_for_near_singular_matrix():
    X = np.linspace(0, 1, 60).reshape(-1, 1)
    g = gram_matrix(KernelSpec(4.5, (5.0,)), X)
    assert g.jitter > 0
    np.testing.assert_allclose(g.chol @ g.chol.T, g.jittered(), rtol=1e-8, atol=1e-12)


def test_special_functions_consistent():
    # sanity on the oracle itself: quadrature vs scipy at a few points
    for nu, x in ((0.5, 1.0), (2.2, 3.0)):
        assert bessel_k_quadrature(nu, x) == pytest.approx(special.kv(nu, x), rel=1e-10)
