import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, special

from nlunmix.beta import (
    BetaParams,
    beta_cdf,
    beta_inverse_cdf,
    beta_pdf,
    fit_beta,
    regularized_incomplete_beta,
)
from nlunmix.errors import DegenerateInputError, ValidationError
from nlunmix.mixing import make_rng


@settings(max_examples=100, deadline=None)
@given(x=st.floats(0.0, 1.0), a=st.floats(0.2, 50.0), b=st.floats(0.2, 50.0))
def test_incomplete_beta_vs_scipy(x, a, b):
    assert regularized_incomplete_beta(x, a, b) == pytest.approx(special.betainc(a, b, x), abs=1e-12)


def test_inverse_trivial_cases():
    assert beta_inverse_cdf(BetaParams(1, 1), 0.3) == pytest.approx(0.3, abs=1e-12)
    assert beta_inverse_cdf(BetaParams(2, 2), 0.5) == pytest.approx(0.5, abs=1e-12)


def test_inverse_vs_quadrature():
    q = beta_inverse_cdf(BetaParams(2, 5), 0.05)
    mass, _ = integrate.quad(lambda t: beta_pdf(t, 2, 5), 0, q, epsabs=1e-14)
    assert mass == pytest.approx(0.05, abs=1e-8)


@settings(max_examples=50, deadline=None)
@given(p=st.floats(1e-6, 1 - 1e-6), a=st.floats(0.3, 30.0), b=st.floats(0.3, 30.0))
def test_inverse_round_trip(p, a, b):
    params = BetaParams(a, b)
    assert beta_cdf(params, beta_inverse_cdf(params, p)) == pytest.approx(p, abs=1e-9)


def test_scaled_support():
    params = BetaParams(3, 4, scale=2.0)
    assert beta_inverse_cdf(params, 0.4) == pytest.approx(2 * beta_inverse_cdf(BetaParams(3, 4), 0.4))


def test_fit_recovers_beta_2_5_prescaled():
    x = 2.0 * make_rng(1, 0).beta(2, 5, size=100_000)
    p = fit_beta(x, scale=2.0)
    assert abs(p.alpha - 2) <= 0.1 and abs(p.beta - 5) <= 0.1


def test_fit_uniform():
    p = fit_beta(make_rng(2, 0).uniform(size=100_000))
    assert abs(p.alpha - 1) <= 0.05 and abs(p.beta - 1) <= 0.05


def test_fit_errors():
    with pytest.raises(DegenerateInputError):
        fit_beta(np.full(100, 0.4))
    with pytest.raises(ValidationError):
        fit_beta(np.r_[np.linspace(0.1, 1.9, 99), 2.5], scale=2.0)


def test_median_property():
    p = fit_beta(make_rng(3, 0).beta(4, 4, size=20_000))
    assert beta_inverse_cdf(p, 0.5) == pytest.approx(
        beta_inverse_cdf(BetaParams(p.alpha, p.alpha), 0.5), abs=abs(p.alpha - p.beta))
