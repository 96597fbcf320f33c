"""Numerical kernels: lognormal law, quadrature, inversion, chi-square."""
import numpy as np
import pytest

from latentgap import UnitMeanLognormal, lognormal_cdf, lognormal_expectation
from latentgap.errors import BracketError, DomainError, NumericError
from latentgap.numerics import chi_square_sf, invert_monotone, quadrature_points


def test_unit_mean_lognormal_moments():
    law = UnitMeanLognormal(v=0.32)
    assert law.sigma_sq == pytest.approx(np.log(1.32))
    assert law.mu == pytest.approx(-0.5 * np.log(1.32))
    # mean exp(mu + sigma^2/2) = 1 and variance exp(sigma^2) - 1 = v
    assert np.exp(law.mu + 0.5 * law.sigma_sq) == pytest.approx(1.0)
    assert np.exp(law.sigma_sq) - 1.0 == pytest.approx(0.32)


def test_unit_mean_lognormal_rejects_bad_variance():
    for bad in (0.0, -1.0, np.inf, np.nan):
        with pytest.raises(DomainError):
            UnitMeanLognormal(v=bad)


def test_lognormal_cdf_value_frozen():
    # P(eps <= 1) = Phi(sigma/2); at v=0.32 a direct normal-CDF evaluation
    # gives 0.6038996074.
    law = UnitMeanLognormal(v=0.32)
    assert lognormal_cdf(1.0, law) == pytest.approx(0.6038996074, abs=1e-9)


def test_lognormal_cdf_limits_and_shapes():
    law = UnitMeanLognormal(v=0.5)
    assert lognormal_cdf(0.0, law) == 0.0
    assert lognormal_cdf(-3.0, law) == 0.0
    arr = lognormal_cdf(np.array([0.5, 1.0, 2.0, 8.0]), law)
    assert arr.shape == (4,)
    assert np.all(np.diff(arr) > 0)
    assert 0.0 < arr[0] and arr[-1] < 1.0


def test_lognormal_cdf_matches_sampled_fractions(rng):
    law = UnitMeanLognormal(v=0.7)
    draws = rng.lognormal(law.mu, law.sigma, size=200_000)
    for x in (0.4, 1.0, 2.5):
        frac = float(np.mean(draws <= x))
        se = np.sqrt(frac * (1.0 - frac) / draws.size)
        assert abs(lognormal_cdf(x, law) - frac) <= 4.0 * se + 1e-4


def test_quadrature_weights_and_mean():
    law = UnitMeanLognormal(v=0.32)
    u, w = quadrature_points(law, 48)
    assert w.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.all(u > 0)
    # unit mean is reproduced by the rule itself
    assert float(u @ w) == pytest.approx(1.0, abs=1e-10)


def test_quadrature_rejects_tiny_rules():
    with pytest.raises(DomainError):
        quadrature_points(UnitMeanLognormal(v=0.2), 4)


def test_lognormal_expectation_polynomials():
    # E[eps^2] = 1 + v exactly for the unit-mean law.
    law = UnitMeanLognormal(v=0.45)
    value = lognormal_expectation(lambda u: u**2, law, nodes=64)
    assert value == pytest.approx(1.45, abs=1e-9)


def test_lognormal_expectation_scalar_fallback():
    law = UnitMeanLognormal(v=0.3)
    vector = lognormal_expectation(lambda u: u + 1.0, law, nodes=32)
    scalar = lognormal_expectation(lambda u: float(u) + 1.0, law, nodes=32)
    assert vector == pytest.approx(scalar, abs=1e-12)
    assert vector == pytest.approx(2.0, abs=1e-9)


def test_lognormal_expectation_flags_nonfinite():
    law = UnitMeanLognormal(v=0.3)
    with pytest.raises(NumericError):
        lognormal_expectation(lambda u: np.where(u > 1, np.inf, u), law, nodes=16)


def test_invert_monotone_recovers_root():
    root = invert_monotone(lambda x: x**3, 8.0, bracket=(0.0, 10.0), tol=1e-12)
    assert root == pytest.approx(2.0, abs=1e-6)


def test_invert_monotone_bracket_errors():
    with pytest.raises(BracketError):
        invert_monotone(lambda x: x, 0.5, bracket=(2.0, 1.0))
    with pytest.raises(BracketError):
        invert_monotone(lambda x: x, 5.0, bracket=(0.0, 1.0))
    with pytest.raises(BracketError):
        invert_monotone(lambda x: x, -1.0, bracket=(0.0, 1.0))


def test_chi_square_sf_critical_values():
    # Textbook 0.05 critical values: 3.841 on 1 df, 5.991 on 2 df.
    assert chi_square_sf(3.841, 1) == pytest.approx(0.0500136838, abs=1e-9)
    assert chi_square_sf(5.991, 2) == pytest.approx(0.0500116150, abs=1e-9)
    assert chi_square_sf(0.0, 3) == 1.0


def test_chi_square_sf_matches_simulation(rng):
    draws = rng.chisquare(df=4, size=400_000)
    for x in (1.0, 4.0, 9.0):
        frac = float(np.mean(draws > x))
        se = np.sqrt(frac * (1.0 - frac) / draws.size)
        assert abs(chi_square_sf(x, 4) - frac) <= 4.0 * se + 1e-4


def test_chi_square_sf_domain():
    with pytest.raises(DomainError):
        chi_square_sf(-0.5, 2)
    with pytest.raises(DomainError):
        chi_square_sf(1.0, 0)
