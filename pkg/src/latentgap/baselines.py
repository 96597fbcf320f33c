"""Classical critical-gap estimators for comparison reports.

Formulas follow the standard literature formulations:

- Raff: the gap value where the cumulative count of accepted gaps at or
  below t meets the count of rejected gaps at or above t.
- Ashworth: mean accepted gap minus opposing flow times the (sample)
  variance of accepted gaps, the usual correction under exponential
  arrivals.
- Troutbeck: maximum likelihood on per-vehicle (largest rejected, accepted)
  intervals under a lognormal critical-gap law; the fitted mean is the
  estimate.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.optimize import minimize
from scipy.special import ndtr

from .errors import DataError, DomainError, EstimatorError
from .models import GapObservation

__all__ = ["raff", "ashworth", "troutbeck", "TroutbeckResult"]


def _split_gaps(data: Sequence[GapObservation]) -> tuple[np.ndarray, np.ndarray]:
    accepted = np.sort([o.gap_size for o in data if o.accepted])
    rejected = np.sort([o.gap_size for o in data if not o.accepted])
    if accepted.size == 0:
        raise DataError("estimator needs at least one accepted gap")
    if rejected.size == 0:
        raise DataError("estimator needs at least one rejected gap")
    return accepted, rejected


def raff(data: Sequence[GapObservation]) -> float:
    """Crossing point of the accepted-below and rejected-above count curves.

    The difference D(t) = #{accepted <= t} - #{rejected >= t} is a
    nondecreasing step function. Candidates are the unique gap values, the
    midpoints between consecutive unique values, and one sentinel on each
    side. If D attains zero the midpoint of the attaining range is returned;
    otherwise the crossing is linearly interpolated across the sign change.
    """
    accepted, rejected = _split_gaps(data)
    uniques = np.unique(np.concatenate([accepted, rejected]))
    mids = 0.5 * (uniques[:-1] + uniques[1:])
    candidates = np.sort(
        np.concatenate([[uniques[0] - 1.0], uniques, mids, [uniques[-1] + 1.0]])
    )
    below_acc = np.searchsorted(accepted, candidates, side="right")
    above_rej = rejected.size - np.searchsorted(rejected, candidates, side="left")
    diff = below_acc - above_rej
    zero = candidates[diff == 0]
    if zero.size:
        return float(0.5 * (zero[0] + zero[-1]))
    sign_change = np.flatnonzero((diff[:-1] < 0) & (diff[1:] > 0))
    if sign_change.size == 0:
        raise EstimatorError("accepted and rejected count curves never cross")
    i = int(sign_change[0])
    t0, t1 = candidates[i], candidates[i + 1]
    d0, d1 = float(diff[i]), float(diff[i + 1])
    return float(t0 + (0.0 - d0) * (t1 - t0) / (d1 - d0))


def ashworth(data: Sequence[GapObservation], opposing_flow: float) -> float:
    """Mean accepted gap corrected by flow times accepted-gap variance."""
    if not (np.isfinite(opposing_flow) and opposing_flow > 0.0):
        raise DomainError(f"opposing flow must be finite and > 0, got {opposing_flow!r}")
    accepted = np.array([o.gap_size for o in data if o.accepted], dtype=float)
    if accepted.size == 0:
        raise DataError("estimator needs at least one accepted gap")
    variance = float(np.var(accepted, ddof=1)) if accepted.size > 1 else 0.0
    return float(np.mean(accepted)) - opposing_flow * variance


@dataclass(frozen=True)
class TroutbeckResult:
    critical_gap: float
    log_mean: float
    log_sd: float
    excluded_fraction: float
    n_vehicles_used: int


def _interval_data(data: Sequence[GapObservation]) -> tuple[np.ndarray, np.ndarray, int]:
    by_vehicle: dict[str, dict] = {}
    for o in data:
        entry = by_vehicle.setdefault(o.vehicle_id, {"max_rejected": 0.0, "accepted": None})
        if o.accepted:
            entry["accepted"] = o.gap_size
        else:
            entry["max_rejected"] = max(entry["max_rejected"], o.gap_size)
    accepted = []
    max_rejected = []
    excluded = 0
    for vid in sorted(by_vehicle):
        entry = by_vehicle[vid]
        if entry["accepted"] is None:
            continue
        if entry["max_rejected"] > 0.0 and entry["accepted"] <= entry["max_rejected"]:
            excluded += 1
            continue
        accepted.append(entry["accepted"])
        max_rejected.append(entry["max_rejected"])
    return np.array(accepted), np.array(max_rejected), excluded


def troutbeck(data: Sequence[GapObservation]) -> TroutbeckResult:
    """Lognormal interval MLE on (largest rejected, accepted) per vehicle.

    Vehicles whose accepted gap does not exceed their largest rejected gap
    carry no interval information and are excluded; the exclusion fraction is
    reported. Vehicles with no rejection contribute the interval (0, accepted).
    """
    accepted, max_rejected, excluded = _interval_data(data)
    total = accepted.size + excluded
    if accepted.size == 0:
        raise EstimatorError("every vehicle has accepted <= largest rejected gap")
    log_acc = np.log(accepted)
    has_rej = max_rejected > 0.0
    log_rej = np.where(has_rej, np.log(np.maximum(max_rejected, 1e-300)), 0.0)

    def neg_ll(theta: np.ndarray) -> float:
        m, log_s = theta
        s = np.exp(min(log_s, 50.0))
        upper = ndtr((log_acc - m) / s)
        lower = np.where(has_rej, ndtr((log_rej - m) / s), 0.0)
        diff = upper - lower
        if np.any(diff <= 0.0) or not np.all(np.isfinite(diff)):
            return 1e15
        return -float(np.sum(np.log(diff)))

    mid = np.where(has_rej, 0.5 * (log_acc + log_rej), log_acc)
    start = np.array([float(np.mean(mid)), float(np.log(max(np.std(mid), 1e-2)))])
    result = minimize(
        neg_ll,
        start,
        method="Nelder-Mead",
        options={"xatol": 1e-9, "fatol": 1e-12, "maxfev": 4000},
    )
    m, log_s = result.x
    s = float(np.exp(log_s))
    return TroutbeckResult(
        critical_gap=float(np.exp(m + 0.5 * s * s)),
        log_mean=float(m),
        log_sd=s,
        excluded_fraction=excluded / total if total else 0.0,
        n_vehicles_used=int(accepted.size),
    )
