"""Perception map: bias shape, bound, and sampled-moment agreement."""
import numpy as np
import pytest

from latentgap import ALPHA_OVER_BETA_MAX, PerceptionParams, sample_perceived, scaled_bias
from latentgap.errors import DomainError


def test_bound_is_e_squared():
    assert ALPHA_OVER_BETA_MAX == pytest.approx(np.exp(2.0), abs=0.0)


def test_params_validate_positivity():
    with pytest.raises(DomainError):
        PerceptionParams(alpha_over_beta=-1.0, k=0.5, v=0.3)
    with pytest.raises(DomainError):
        PerceptionParams(alpha_over_beta=2.0, k=0.0, v=0.3)
    with pytest.raises(DomainError):
        PerceptionParams(alpha_over_beta=2.0, k=0.5, v=-0.1)


def test_bias_ratio_cap_enforced_unless_relaxed():
    with pytest.raises(DomainError):
        PerceptionParams(alpha_over_beta=7.5, k=0.5, v=0.3)
    relaxed = PerceptionParams(alpha_over_beta=7.5, k=0.5, v=0.3, bias_bound_relaxed=True)
    assert relaxed.alpha_over_beta == 7.5
    at_cap = PerceptionParams(alpha_over_beta=ALPHA_OVER_BETA_MAX, k=0.5, v=0.3)
    assert at_cap.alpha_over_beta == ALPHA_OVER_BETA_MAX


def test_bias_decreasing_and_above_one():
    p = PerceptionParams(alpha_over_beta=5.0, k=0.47, v=0.32)
    g = np.linspace(0.05, 30.0, 400)
    b = scaled_bias(g, p)
    assert np.all(b > 1.0)
    assert np.all(np.diff(b) < 0.0)
    # short durations inflated strongly, long ones barely
    assert scaled_bias(0.1, p) > 5.0
    assert scaled_bias(20.0, p) == pytest.approx(1.0, abs=1e-9)


def test_bias_rejects_nonpositive_duration():
    p = PerceptionParams(alpha_over_beta=2.0, k=0.5, v=0.3)
    with pytest.raises(DomainError):
        scaled_bias(0.0, p)
    with pytest.raises(DomainError):
        scaled_bias(np.array([1.0, -2.0]), p)


def test_mean_perceived_increasing_iff_within_cap():
    g = np.linspace(0.01, 10.0, 2000)
    at_cap = PerceptionParams(alpha_over_beta=ALPHA_OVER_BETA_MAX, k=1.0, v=0.3)
    mean_perceived = scaled_bias(g, at_cap) * g
    assert np.all(np.diff(mean_perceived) >= -1e-12)
    beyond = PerceptionParams(alpha_over_beta=12.0, k=1.0, v=0.3, bias_bound_relaxed=True)
    mean_beyond = scaled_bias(g, beyond) * g
    assert np.any(np.diff(mean_beyond) < 0.0)


def test_sampled_perceived_moments(rng):
    p = PerceptionParams(alpha_over_beta=7.0, k=0.47, v=0.32)
    g = 2.5
    draws = sample_perceived(g, p, rng, size=400_000)
    expected_mean = scaled_bias(g, p) * g
    assert np.mean(draws) == pytest.approx(expected_mean, rel=5e-3)
    # variance of bias*g*eps is (bias*g)^2 * v
    assert np.var(draws) == pytest.approx(expected_mean**2 * 0.32, rel=2e-2)


def test_sample_perceived_shape_matches_input(rng):
    p = PerceptionParams(alpha_over_beta=3.0, k=0.5, v=0.25)
    g = np.array([1.0, 2.0, 4.0])
    out = sample_perceived(g, p, rng)
    assert out.shape == (3,)
    assert isinstance(sample_perceived(1.5, p, rng), float)
