"""Shared numerical kernels.

Distribution functions for the unit-mean lognormal error, Gauss-Hermite
expectation against that error law, bisection inversion of monotone
functions, and the chi-square survival function.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

import numpy as np
from scipy.special import gammaincc, ndtr

from .errors import BracketError, DomainError, NumericError

__all__ = [
    "UnitMeanLognormal",
    "lognormal_cdf",
    "lognormal_expectation",
    "invert_monotone",
    "chi_square_sf",
    "DEFAULT_QUADRATURE_NODES",
]

DEFAULT_QUADRATURE_NODES = 64

_SQRT2 = np.sqrt(2.0)


@dataclass(frozen=True)
class UnitMeanLognormal:
    """Multiplicative error law with mean exactly 1 and variance ``v``.

    The underlying normal has sigma_sq = ln(1+v) and mu = -0.5*ln(1+v), which
    pins the mean at 1 for every v > 0.
    """

    v: float

    def __post_init__(self) -> None:
        if not (self.v > 0.0 and np.isfinite(self.v)):
            raise DomainError(f"error variance v must be finite and > 0, got {self.v!r}")

    @property
    def sigma_sq(self) -> float:
        return float(np.log1p(self.v))

    @property
    def sigma(self) -> float:
        return float(np.sqrt(np.log1p(self.v)))

    @property
    def mu(self) -> float:
        return float(-0.5 * np.log1p(self.v))


def lognormal_cdf(x, dist: UnitMeanLognormal):
    """P(eps <= x) for the unit-mean lognormal; 0 for x <= 0 (left limit).

    Accepts a scalar or array ``x`` and returns a matching shape.
    """
    x_arr = np.asarray(x, dtype=float)
    out = np.zeros_like(x_arr)
    pos = x_arr > 0.0
    if np.any(pos):
        z = (np.log(x_arr[pos]) - dist.mu) / dist.sigma
        out[pos] = ndtr(z)
    if np.isscalar(x) or x_arr.ndim == 0:
        return float(out)
    return out


@lru_cache(maxsize=None)
def _hermite_rule(nodes: int) -> tuple[np.ndarray, np.ndarray]:
    z, w = np.polynomial.hermite.hermgauss(nodes)
    return z, w / np.sqrt(np.pi)


def quadrature_points(dist: UnitMeanLognormal, nodes: int) -> tuple[np.ndarray, np.ndarray]:
    """Abscissae in error space and probability weights for ``dist``.

    Substituting u = exp(mu + sqrt(2)*sigma*z) turns the lognormal-weighted
    integral over (0, inf) into a Gauss-Hermite sum; the weights sum to 1.
    """
    if nodes < 8:
        raise DomainError(f"quadrature needs at least 8 nodes, got {nodes}")
    z, w = _hermite_rule(int(nodes))
    u = np.exp(dist.mu + _SQRT2 * dist.sigma * z)
    return u, w


def lognormal_expectation(
    f: Callable[[np.ndarray], np.ndarray],
    dist: UnitMeanLognormal,
    nodes: int = DEFAULT_QUADRATURE_NODES,
) -> float:
    """Approximate the expectation of ``f`` under the unit-mean lognormal.

    ``f`` is called once with the full abscissa array; it may also be a
    scalar-only callable, in which case it is applied per node.
    """
    u, w = quadrature_points(dist, nodes)
    try:
        values = np.asarray(f(u), dtype=float)
        if values.shape != u.shape:
            raise TypeError
    except TypeError:
        values = np.array([float(f(ui)) for ui in u])
    bad = ~np.isfinite(values)
    if np.any(bad):
        where = u[bad][0]
        raise NumericError(f"integrand is non-finite at quadrature node u={where!r}")
    return float(values @ w)


def invert_monotone(
    fn: Callable[[float], float],
    target: float,
    bracket: tuple[float, float],
    tol: float = 1e-10,
    max_iter: int = 200,
) -> float:
    """Solve fn(x) = target for a nondecreasing ``fn`` by bisection.

    Stops when |fn(x) - target| <= tol or the bracket width falls below tol.
    """
    lo, hi = float(bracket[0]), float(bracket[1])
    if not lo < hi:
        raise BracketError(f"bracket must satisfy lo < hi, got ({lo}, {hi})")
    f_lo, f_hi = float(fn(lo)), float(fn(hi))
    if target < f_lo - tol:
        raise BracketError(f"target {target} below fn(lo)={f_lo} at lo={lo}")
    if target > f_hi + tol:
        raise BracketError(f"target {target} above fn(hi)={f_hi} at hi={hi}")
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        f_mid = float(fn(mid))
        if abs(f_mid - target) <= tol or (hi - lo) <= tol:
            return mid
        if f_mid < target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def chi_square_sf(x: float, df: int) -> float:
    """Survival function of the chi-square distribution with ``df`` degrees."""
    if int(df) != df or df < 1:
        raise DomainError(f"degrees of freedom must be a positive integer, got {df!r}")
    if x < 0.0:
        raise DomainError(f"chi-square statistic must be >= 0, got {x}")
    return float(gammaincc(df / 2.0, x / 2.0))
