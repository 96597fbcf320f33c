"""Opposing-stream gap-size laws: empirical and parametric.

Every law exposes cdf, quantile, partial mean, full mean, and sampling.
The empirical law is a pure step function of its sample, so quantities
computed from it are exact finite sums, reproducible bit for bit.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr, ndtri

from .errors import DataError, DomainError

__all__ = [
    "GapDistribution",
    "EmpiricalGaps",
    "ExponentialGaps",
    "LognormalGaps",
    "fit",
    "GAP_FAMILIES",
]

GAP_FAMILIES = ("empirical", "exponential", "lognormal")


class GapDistribution:
    """Common interface for gap-size laws; see the concrete classes."""

    def cdf(self, x: float) -> float:
        raise NotImplementedError

    def quantile(self, p: float) -> float:
        raise NotImplementedError

    def mean_below(self, t: float) -> float:
        raise NotImplementedError

    def mean(self) -> float:
        raise NotImplementedError

    def sample(self, rng: np.random.Generator, size=None):
        raise NotImplementedError

    @staticmethod
    def _check_quantile_arg(p: float) -> float:
        p = float(p)
        if not (0.0 < p < 1.0):
            raise DomainError(f"quantile level must lie in (0, 1), got {p}")
        return p

    @staticmethod
    def _check_threshold(t: float) -> float:
        t = float(t)
        if t < 0.0 or not np.isfinite(t):
            raise DomainError(f"threshold must be finite and >= 0, got {t}")
        return t


@dataclass(frozen=True, eq=False)
class EmpiricalGaps(GapDistribution):
    """Step-function law of an observed gap sample.

    The quantile is the lower empirical quantile: the smallest sample value x
    with F(x) >= p, so ties break deterministically toward the left.
    """

    gaps: np.ndarray
    _prefix_sum: np.ndarray = field(repr=False, default=None)

    def __init__(self, gaps):
        arr = np.sort(np.asarray(gaps, dtype=float))
        if arr.size == 0:
            raise DataError("empirical gap law needs at least one gap")
        if not np.all(np.isfinite(arr)) or arr[0] <= 0.0:
            raise DataError("empirical gaps must be finite and > 0")
        arr.setflags(write=False)
        prefix = np.concatenate(([0.0], np.cumsum(arr)))
        prefix.setflags(write=False)
        object.__setattr__(self, "gaps", arr)
        object.__setattr__(self, "_prefix_sum", prefix)

    @property
    def n(self) -> int:
        return int(self.gaps.size)

    def cdf(self, x):
        x_arr = np.asarray(x, dtype=float)
        out = np.searchsorted(self.gaps, x_arr, side="right") / self.n
        if np.isscalar(x) or x_arr.ndim == 0:
            return float(out)
        return out

    def quantile(self, p: float) -> float:
        p = self._check_quantile_arg(p)
        idx = int(np.ceil(self.n * p)) - 1
        idx = min(max(idx, 0), self.n - 1)
        return float(self.gaps[idx])

    def mean_below(self, t: float) -> float:
        t = self._check_threshold(t)
        count = int(np.searchsorted(self.gaps, t, side="right"))
        return float(self._prefix_sum[count] / self.n)

    def mean(self) -> float:
        return float(self._prefix_sum[-1] / self.n)

    def sample(self, rng: np.random.Generator, size=None):
        idx = rng.integers(0, self.n, size=size)
        out = self.gaps[idx]
        if size is None:
            return float(out)
        return out


@dataclass(frozen=True)
class ExponentialGaps(GapDistribution):
    """Exponential gap law with the given rate (1/seconds)."""

    rate: float

    def __post_init__(self) -> None:
        if not (np.isfinite(self.rate) and self.rate > 0.0):
            raise DomainError(f"rate must be finite and > 0, got {self.rate!r}")

    def cdf(self, x):
        x_arr = np.asarray(x, dtype=float)
        out = -np.expm1(-self.rate * np.maximum(x_arr, 0.0))
        if np.isscalar(x) or x_arr.ndim == 0:
            return float(out)
        return out

    def quantile(self, p: float) -> float:
        p = self._check_quantile_arg(p)
        return float(-np.log1p(-p) / self.rate)

    def mean_below(self, t: float) -> float:
        t = self._check_threshold(t)
        lam = self.rate
        return float((1.0 - np.exp(-lam * t) * (1.0 + lam * t)) / lam)

    def mean(self) -> float:
        return 1.0 / self.rate

    def sample(self, rng: np.random.Generator, size=None):
        out = rng.exponential(1.0 / self.rate, size=size)
        if size is None:
            return float(out)
        return out


@dataclass(frozen=True)
class LognormalGaps(GapDistribution):
    """Lognormal gap law parameterized by the log-scale mean and sd."""

    log_mean: float
    log_sd: float

    def __post_init__(self) -> None:
        if not np.isfinite(self.log_mean):
            raise DomainError(f"log_mean must be finite, got {self.log_mean!r}")
        if not (np.isfinite(self.log_sd) and self.log_sd > 0.0):
            raise DomainError(f"log_sd must be finite and > 0, got {self.log_sd!r}")

    def cdf(self, x):
        x_arr = np.asarray(x, dtype=float)
        out = np.zeros_like(x_arr)
        pos = x_arr > 0.0
        if np.any(pos):
            out[pos] = ndtr((np.log(x_arr[pos]) - self.log_mean) / self.log_sd)
        if np.isscalar(x) or x_arr.ndim == 0:
            return float(out)
        return out

    def quantile(self, p: float) -> float:
        p = self._check_quantile_arg(p)
        return float(np.exp(self.log_mean + self.log_sd * ndtri(p)))

    def mean_below(self, t: float) -> float:
        t = self._check_threshold(t)
        if t == 0.0:
            return 0.0
        m, s = self.log_mean, self.log_sd
        return float(self.mean() * ndtr((np.log(t) - m - s * s) / s))

    def mean(self) -> float:
        return float(np.exp(self.log_mean + 0.5 * self.log_sd**2))

    def sample(self, rng: np.random.Generator, size=None):
        out = rng.lognormal(self.log_mean, self.log_sd, size=size)
        if size is None:
            return float(out)
        return out


def fit(gaps, family: str) -> GapDistribution:
    """Fit a gap law of the given family to a sample of gap sizes.

    Exponential matches the mean; lognormal matches the log-scale moments;
    empirical stores the sample itself. Samples smaller than 30 fit with a
    warning since the resulting law is weakly determined.
    """
    if family not in GAP_FAMILIES:
        raise DomainError(f"unknown gap family {family!r}; choose from {GAP_FAMILIES}")
    arr = np.asarray(gaps, dtype=float)
    if arr.ndim != 1 or arr.size == 0:
        raise DataError("gap sample must be a nonempty 1-d sequence")
    bad = np.flatnonzero(~(np.isfinite(arr) & (arr > 0.0)))
    if bad.size:
        raise DataError(f"gap at index {int(bad[0])} is not a positive finite number")
    if arr.size < 30:
        warnings.warn(
            f"fitting a gap law to only {arr.size} gaps; estimates will be noisy",
            UserWarning,
            stacklevel=2,
        )
    if family == "empirical":
        return EmpiricalGaps(arr)
    if family == "exponential":
        return ExponentialGaps(rate=1.0 / float(np.mean(arr)))
    logs = np.log(arr)
    sd = float(np.std(logs))
    if sd == 0.0:
        raise DataError("lognormal fit needs dispersion, but all log gaps are equal")
    return LognormalGaps(log_mean=float(np.mean(logs)), log_sd=sd)
