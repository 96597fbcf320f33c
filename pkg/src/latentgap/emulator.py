"""Observable-world emulator critical gaps.

A latent (scaled) threshold is not observable, but the model's overall
rejection mass is. The emulator critical gap is the gap size whose CDF value
equals that mass, so that thresholding observed gaps at it reproduces the
model's aggregate accept/reject split.
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np
from scipy.integrate import quad
from scipy.special import ndtr

from .errors import EmulatorRangeError, NumericError, UsageError
from .gapdist import EmpiricalGaps, GapDistribution
from .models import (
    BiValued,
    BySubject,
    BySubjectOpposing,
    ClassKey,
    Constant,
    CriticalGapSpec,
    RejectedGaps,
    WaitingTime,
    tau_scaled_at,
)
from .numerics import DEFAULT_QUADRATURE_NODES, quadrature_points
from .perception import PerceptionParams

__all__ = ["rejection_curve", "rejection_mass", "emulator_gap", "emulator_profile"]


def _fixed_threshold(
    spec: CriticalGapSpec,
    key: ClassKey,
    w: Optional[float],
    r: Optional[float],
) -> Optional[float]:
    """Deterministic scaled threshold for the given conditioning, if any.

    Returns None for the waiting-time structure with w > 0, whose threshold
    is random through the perceived waiting time.
    """
    if isinstance(spec, WaitingTime):
        if w is None or w < 0.0:
            raise UsageError("waiting-time spec needs conditioning value w >= 0")
        if w == 0.0:
            return tau_scaled_at(spec, key, w_p=0.0)
        return None
    if isinstance(spec, RejectedGaps):
        if r is None or r < 0.0:
            raise UsageError("rejected-gaps spec needs conditioning value r >= 0")
        return tau_scaled_at(spec, key, r=r)
    if isinstance(spec, BiValued):
        if w is None or w < 0.0:
            raise UsageError("bi-valued spec needs conditioning value w >= 0")
        return tau_scaled_at(spec, key, w=w)
    if isinstance(spec, (Constant, BySubject, BySubjectOpposing)):
        return tau_scaled_at(spec, key)
    raise UsageError(f"unknown critical-gap spec type {type(spec).__name__}")


def rejection_curve(
    g_values,
    spec: CriticalGapSpec,
    key: ClassKey,
    p: PerceptionParams,
    *,
    w: Optional[float] = None,
    r: Optional[float] = None,
    nodes: int = DEFAULT_QUADRATURE_NODES,
):
    """P(reject | gap size) over an array of gap sizes.

    Computed in the rejection orientation directly, so masses near 0 or 1
    keep full floating-point accuracy.
    """
    g_arr = np.atleast_1d(np.asarray(g_values, dtype=float))
    law = p.error_law
    denom = (p.alpha_over_beta * np.exp(-g_arr / p.k) + 1.0) * g_arr
    tau = _fixed_threshold(spec, key, w, r)
    if tau is not None:
        z = (np.log(tau / denom) - law.mu) / law.sigma
        out = ndtr(z)
    else:
        curve = spec.params_by_class[key.pair]
        u, wts = quadrature_points(law, nodes)
        scaled_wait = (p.alpha_over_beta * np.exp(-w / p.k) + 1.0) * w
        tau_u = curve.amplitude * np.exp(-scaled_wait * u / curve.decay_length) + curve.floor
        z = (np.log(tau_u[None, :] / denom[:, None]) - law.mu) / law.sigma
        out = (ndtr(z) * wts[None, :]).sum(axis=1)
    if np.isscalar(g_values) or np.ndim(g_values) == 0:
        return float(out[0])
    return out


def rejection_mass(
    spec: CriticalGapSpec,
    key: ClassKey,
    p: PerceptionParams,
    d: GapDistribution,
    *,
    w: Optional[float] = None,
    r: Optional[float] = None,
    nodes: int = DEFAULT_QUADRATURE_NODES,
) -> float:
    """Model probability that a random gap from ``d`` is rejected.

    With an empirical law this is the exact average of the rejection curve
    over the sample (a finite sum, no quadrature error); parametric laws use
    adaptive quadrature in probability space, with breakpoints where the
    threshold levels cross the gap law.
    """
    if isinstance(d, EmpiricalGaps):
        return float(np.mean(rejection_curve(d.gaps, spec, key, p, w=w, r=r, nodes=nodes)))

    def integrand(q: float) -> float:
        return rejection_curve(d.quantile(q), spec, key, p, w=w, r=r, nodes=nodes)

    points = sorted(
        {min(max(d.cdf(t), 1e-12), 1.0 - 1e-12) for t in _threshold_levels(spec, key, w, r)}
    )
    value, abserr = quad(
        integrand, 0.0, 1.0, points=points, limit=300, epsabs=1e-11, epsrel=1e-11
    )
    if not np.isfinite(value):
        raise NumericError("rejection-mass quadrature returned a non-finite value")
    return float(min(max(value, 0.0), 1.0))


def _threshold_levels(spec, key, w, r) -> list[float]:
    tau = _fixed_threshold(spec, key, w, r)
    if tau is not None:
        return [tau]
    curve = spec.params_by_class[key.pair]
    return [curve.floor, curve.amplitude + curve.floor]


def emulator_gap(
    spec: CriticalGapSpec,
    key: ClassKey,
    p: PerceptionParams,
    d: GapDistribution,
    *,
    w: Optional[float] = None,
    r: Optional[float] = None,
    nodes: int = DEFAULT_QUADRATURE_NODES,
) -> float:
    """Observable critical gap: the gap quantile at the rejection mass."""
    mass = rejection_mass(spec, key, p, d, w=w, r=r, nodes=nodes)
    if not (0.0 < mass < 1.0):
        raise EmulatorRangeError(
            f"rejection mass {mass} leaves the attainable CDF range of the gap law"
        )
    return d.quantile(mass)


def emulator_profile(
    spec: CriticalGapSpec,
    key: ClassKey,
    p: PerceptionParams,
    d: GapDistribution,
    grid: Sequence[float],
    nodes: int = DEFAULT_QUADRATURE_NODES,
) -> list[tuple[float, float]]:
    """Emulator gaps along a grid of conditioning values.

    The grid is interpreted as waiting times for the waiting-time structure
    and as rejected-gap counts for the rejected-gaps structure.
    """
    if not isinstance(spec, (WaitingTime, RejectedGaps)):
        raise UsageError("profiles exist only for waiting-time and rejected-gaps specs")
    values = [float(x) for x in grid]
    if not values:
        raise UsageError("profile grid must be nonempty")
    if any(b < a for a, b in zip(values, values[1:])):
        raise UsageError("profile grid must be sorted ascending")
    out = []
    for x in values:
        if isinstance(spec, WaitingTime):
            tau_e = emulator_gap(spec, key, p, d, w=x, nodes=nodes)
        else:
            tau_e = emulator_gap(spec, key, p, d, r=x, nodes=nodes)
        out.append((x, tau_e))
    return out
