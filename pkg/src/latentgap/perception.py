"""Distortion map from observed durations to perceived durations.

A duration ``g`` is perceived as ``bias(g) * g * eps`` where the bias
``(alpha_over_beta * exp(-g/k) + 1)`` inflates short durations, and ``eps``
is a unit-mean lognormal error. All quantities carry the scaled units of the
non-identifiable magnitude parameter, which never appears on its own.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError
from .numerics import UnitMeanLognormal

__all__ = ["PerceptionParams", "ALPHA_OVER_BETA_MAX", "scaled_bias", "sample_perceived"]

# Closed upper bound keeping the mean perceived duration strictly increasing.
ALPHA_OVER_BETA_MAX = float(np.exp(2.0))

_BOUND_SLACK = 1.0 + 1e-12


@dataclass(frozen=True)
class PerceptionParams:
    """Scaled perception parameters shared by every critical-gap model.

    ``alpha_over_beta`` controls short-duration overestimation, ``k`` is the
    bias decay scale in seconds, and ``v`` is the variance of the
    multiplicative error. With ``bias_bound_relaxed`` False (the default) the
    ratio is capped at e**2, the largest value for which mean perceived
    duration is increasing; relaxed fitting may exceed it.
    """

    alpha_over_beta: float
    k: float
    v: float
    bias_bound_relaxed: bool = False

    def __post_init__(self) -> None:
        for name in ("alpha_over_beta", "k", "v"):
            value = getattr(self, name)
            if not (np.isfinite(value) and value > 0.0):
                raise DomainError(f"{name} must be finite and > 0, got {value!r}")
        if not self.bias_bound_relaxed and self.alpha_over_beta > ALPHA_OVER_BETA_MAX * _BOUND_SLACK:
            raise DomainError(
                f"alpha_over_beta={self.alpha_over_beta!r} exceeds the bound e^2"
                f"={ALPHA_OVER_BETA_MAX!r}; construct with bias_bound_relaxed=True"
                " to allow it"
            )

    @property
    def error_law(self) -> UnitMeanLognormal:
        return UnitMeanLognormal(self.v)


def scaled_bias(g, p: PerceptionParams):
    """Mean multiplicative bias at duration ``g``: always > 1, decreasing in g.

    Accepts a scalar or array; g must be strictly positive.
    """
    g_arr = np.asarray(g, dtype=float)
    if np.any(g_arr <= 0.0) or not np.all(np.isfinite(g_arr)):
        raise DomainError("duration g must be finite and > 0")
    out = p.alpha_over_beta * np.exp(-g_arr / p.k) + 1.0
    if np.isscalar(g) or g_arr.ndim == 0:
        return float(out)
    return out


def sample_perceived(g, p: PerceptionParams, rng: np.random.Generator, size=None):
    """Draw perceived durations ``bias(g) * g * eps`` with lognormal ``eps``.

    ``size`` follows numpy broadcasting; with ``size=None`` the output shape
    matches ``g``.
    """
    g_arr = np.asarray(g, dtype=float)
    mean_value = scaled_bias(g_arr, p) * g_arr
    law = p.error_law
    if size is None:
        size = g_arr.shape
    eps = rng.lognormal(mean=law.mu, sigma=law.sigma, size=size)
    out = mean_value * eps
    if np.isscalar(g) and np.ndim(out) == 0:
        return float(out)
    return out
