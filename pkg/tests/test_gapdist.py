"""Gap-size laws: CDF/quantile/partial-mean consistency and fitting."""
import numpy as np
import pytest

from latentgap import EmpiricalGaps, ExponentialGaps, LognormalGaps, fit_gap_distribution
from latentgap.errors import DataError, DomainError


def test_empirical_cdf_and_quantile_are_inverse_on_sample():
    law = EmpiricalGaps([3.0, 1.0, 2.0, 2.0, 5.0])
    assert law.n == 5
    assert law.cdf(0.5) == 0.0
    assert law.cdf(2.0) == pytest.approx(0.6)
    assert law.cdf(5.0) == 1.0
    # lower quantile: smallest sample value with cdf >= p
    assert law.quantile(0.2) == 1.0
    assert law.quantile(0.2 + 1e-12) == 2.0
    assert law.quantile(0.61) == 3.0
    assert law.quantile(0.999) == 5.0


def test_empirical_partial_mean_exact_sums():
    gaps = [1.0, 2.0, 2.0, 3.0, 10.0]
    law = EmpiricalGaps(gaps)
    assert law.mean() == pytest.approx(np.mean(gaps))
    assert law.mean_below(2.5) == pytest.approx((1.0 + 2.0 + 2.0) / 5.0)
    assert law.mean_below(0.5) == 0.0
    assert law.mean_below(100.0) == pytest.approx(law.mean())


def test_empirical_rejects_bad_samples():
    with pytest.raises(DataError):
        EmpiricalGaps([])
    with pytest.raises(DataError):
        EmpiricalGaps([1.0, -2.0])
    with pytest.raises(DataError):
        EmpiricalGaps([1.0, np.inf])


def test_exponential_closed_forms():
    law = ExponentialGaps(rate=0.5)
    assert law.mean() == 2.0
    assert law.cdf(0.0) == 0.0
    assert law.cdf(2.0) == pytest.approx(1.0 - np.exp(-1.0))
    assert law.quantile(law.cdf(3.0)) == pytest.approx(3.0, abs=1e-12)
    # partial mean: integral of x f(x) below t
    t = 4.0
    lam = 0.5
    expected = (1.0 - np.exp(-lam * t) * (1.0 + lam * t)) / lam
    assert law.mean_below(t) == pytest.approx(expected, abs=1e-12)
    assert law.mean_below(1e9) == pytest.approx(law.mean(), abs=1e-9)


def test_lognormal_closed_forms():
    law = LognormalGaps(log_mean=1.1, log_sd=0.6)
    assert law.mean() == pytest.approx(np.exp(1.1 + 0.18))
    assert law.cdf(np.exp(1.1)) == pytest.approx(0.5)
    assert law.quantile(law.cdf(2.5)) == pytest.approx(2.5, abs=1e-9)
    assert law.mean_below(1e9) == pytest.approx(law.mean(), rel=1e-9)
    assert law.mean_below(0.0) == 0.0


def test_partial_means_match_sampling(rng):
    laws = [
        ExponentialGaps(rate=0.35),
        LognormalGaps(log_mean=1.2, log_sd=0.5),
    ]
    for law in laws:
        draws = law.sample(rng, size=300_000)
        t = float(np.quantile(draws, 0.7))
        sampled = float(np.mean(np.where(draws <= t, draws, 0.0)))
        assert law.mean_below(t) == pytest.approx(sampled, rel=2e-2)


def test_quantile_argument_domain():
    law = ExponentialGaps(rate=1.0)
    for bad in (0.0, 1.0, -0.3, 1.7):
        with pytest.raises(DomainError):
            law.quantile(bad)


def test_fit_families(rng):
    sample = rng.lognormal(1.3, 0.45, size=4000)
    emp = fit_gap_distribution(sample, "empirical")
    assert isinstance(emp, EmpiricalGaps)
    assert emp.mean() == pytest.approx(np.mean(sample))

    exp = fit_gap_distribution(sample, "exponential")
    assert isinstance(exp, ExponentialGaps)
    assert exp.mean() == pytest.approx(np.mean(sample))

    logn = fit_gap_distribution(sample, "lognormal")
    assert isinstance(logn, LognormalGaps)
    assert logn.log_mean == pytest.approx(np.mean(np.log(sample)))
    assert logn.log_sd == pytest.approx(np.std(np.log(sample)))


def test_fit_rejects_bad_input():
    with pytest.raises(DomainError):
        fit_gap_distribution([1.0, 2.0], "weibull")
    with pytest.raises(DataError):
        fit_gap_distribution([], "exponential")
    with pytest.raises(DataError):
        fit_gap_distribution([1.0, 0.0], "exponential")


def test_fit_warns_on_small_samples():
    with pytest.warns(UserWarning, match="only 5 gaps"):
        fit_gap_distribution([1.0, 2.0, 3.0, 4.0, 5.0], "exponential")


def test_empirical_sample_is_reproducible():
    law = EmpiricalGaps([1.0, 2.0, 3.0])
    a = law.sample(np.random.default_rng(7), size=10)
    b = law.sample(np.random.default_rng(7), size=10)
    assert np.array_equal(a, b)
    assert set(a) <= {1.0, 2.0, 3.0}
