"""Expected and observed average waiting times.

The computed value treats gap arrivals as i.i.d. draws: a vehicle waits out
every gap at or below the threshold and accepts the first one above it, so
the expected wait is the mean rejected-gap total, which reduces to the
partial mean below the threshold divided by the acceptance probability.
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from .errors import DataError, DomainError, InfiniteWaitError
from .gapdist import GapDistribution
from .models import GapObservation

__all__ = ["c_awt", "o_awt"]


def c_awt(tau_e: float, d: GapDistribution) -> float:
    """Computed average waiting time for a threshold ``tau_e``."""
    if not (np.isfinite(tau_e) and tau_e > 0.0):
        raise DomainError(f"tau_e must be finite and > 0, got {tau_e!r}")
    accept_mass = 1.0 - d.cdf(tau_e)
    if accept_mass <= 0.0:
        raise InfiniteWaitError(
            f"no gap above {tau_e} is attainable under the gap law; expected wait diverges"
        )
    return d.mean_below(tau_e) / accept_mass


def o_awt(data: Sequence[GapObservation], subject_class: Optional[str] = None) -> float:
    """Observed average waiting time: mean wait recorded on accepted gaps."""
    waits = [
        o.waiting_time
        for o in data
        if o.accepted and (subject_class is None or o.subject_class == subject_class)
    ]
    if not waits:
        selector = "any subject class" if subject_class is None else f"subject class {subject_class!r}"
        raise DataError(f"no accepted gaps for {selector}")
    return float(np.mean(waits))
