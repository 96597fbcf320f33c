"""Critical-gap model structures, acceptance probabilities, log-likelihood.

Six threshold structures share one perception model. A perceived gap above
the (scaled) threshold is accepted; the threshold may be constant, vary by
subject class, by subject and opposing class, or additionally decay with
perceived waiting time, with the count of gaps already rejected, or switch
between two levels at zero waiting time.

All thresholds carry the same scaled units as the perception model; the
magnitude parameter they are scaled by is not identifiable and never appears.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, NamedTuple, Optional, Sequence

import numpy as np
from scipy.special import ndtr

from .errors import ConfigurationError, DataError, DomainError, UsageError
from .numerics import DEFAULT_QUADRATURE_NODES, quadrature_points
from .perception import PerceptionParams, scaled_bias

__all__ = [
    "ClassKey",
    "GapObservation",
    "CriticalGapSpec",
    "Constant",
    "BySubject",
    "BySubjectOpposing",
    "WaitingTime",
    "RejectedGaps",
    "BiValued",
    "DecayCurve",
    "BiLevel",
    "MODEL_RANK",
    "tau_scaled_at",
    "accept_prob",
    "log_likelihood",
    "ClampCounter",
    "PackedObservations",
    "pack_observations",
]

_PROB_FLOOR = 1e-300
_PROB_CEIL = 1.0 - 1e-15


@dataclass(frozen=True)
class ClassKey:
    """Subject (and optionally opposing) vehicle class of an observation."""

    subject_class: str
    opposing_class: Optional[str] = None

    @property
    def pair(self) -> tuple[str, str]:
        if self.opposing_class is None:
            raise UsageError(f"class key {self} has no opposing class")
        return (self.subject_class, self.opposing_class)

    def label(self) -> str:
        if self.opposing_class is None:
            return self.subject_class
        return f"{self.subject_class},{self.opposing_class}"


@dataclass(frozen=True)
class GapObservation:
    """One evaluated gap: size, classes, waiting state, and the decision."""

    vehicle_id: str
    gap_index: int
    gap_size: float
    subject_class: str
    opposing_class: str
    waiting_time: float
    rejected_count: int
    accepted: bool

    def __post_init__(self) -> None:
        if not (np.isfinite(self.gap_size) and self.gap_size > 0.0):
            raise DataError(f"gap_size must be finite and > 0, got {self.gap_size!r}")
        if not (np.isfinite(self.waiting_time) and self.waiting_time >= 0.0):
            raise DataError(f"waiting_time must be finite and >= 0, got {self.waiting_time!r}")
        if self.rejected_count < 0 or int(self.rejected_count) != self.rejected_count:
            raise DataError(f"rejected_count must be a nonnegative integer, got {self.rejected_count!r}")
        if self.gap_index < 0 or int(self.gap_index) != self.gap_index:
            raise DataError(f"gap_index must be a nonnegative integer, got {self.gap_index!r}")

    @property
    def key(self) -> ClassKey:
        return ClassKey(self.subject_class, self.opposing_class)


class DecayCurve(NamedTuple):
    """Threshold decaying from amplitude+floor toward floor."""

    amplitude: float
    floor: float
    decay_length: float


class BiLevel(NamedTuple):
    """Threshold pair switching on zero vs positive waiting time."""

    zero_wait: float
    positive_wait: float


def _check_positive(name: str, value: float) -> None:
    if not (np.isfinite(value) and value > 0.0):
        raise DomainError(f"{name} must be finite and > 0, got {value!r}")


class CriticalGapSpec:
    """Base class for the six threshold structures."""

    kind: str = "abstract"

    def n_structural_params(self) -> int:
        raise NotImplementedError


@dataclass(frozen=True)
class Constant(CriticalGapSpec):
    tau_scaled: float
    kind = "constant"

    def __post_init__(self) -> None:
        _check_positive("tau_scaled", self.tau_scaled)

    def n_structural_params(self) -> int:
        return 1


@dataclass(frozen=True)
class BySubject(CriticalGapSpec):
    tau_by_subject: Mapping[str, float]
    kind = "by_subject"

    def __post_init__(self) -> None:
        if not self.tau_by_subject:
            raise ConfigurationError("by-subject spec needs at least one subject class")
        for s, value in self.tau_by_subject.items():
            _check_positive(f"tau[{s}]", value)

    def n_structural_params(self) -> int:
        return len(self.tau_by_subject)


@dataclass(frozen=True)
class BySubjectOpposing(CriticalGapSpec):
    tau_by_class: Mapping[tuple[str, str], float]
    kind = "by_subject_opposing"

    def __post_init__(self) -> None:
        if not self.tau_by_class:
            raise ConfigurationError("by-class spec needs at least one class pair")
        for pair, value in self.tau_by_class.items():
            _check_positive(f"tau[{','.join(pair)}]", value)

    def n_structural_params(self) -> int:
        return len(self.tau_by_class)


@dataclass(frozen=True)
class WaitingTime(CriticalGapSpec):
    """Threshold decaying in perceived waiting time, per class pair.

    The decay length divides the scaled perceived waiting time, so it carries
    the same scaled units as the other thresholds.
    """

    params_by_class: Mapping[tuple[str, str], DecayCurve]
    kind = "waiting_time"

    def __post_init__(self) -> None:
        _validate_decay_map(self.params_by_class)

    def n_structural_params(self) -> int:
        return 3 * len(self.params_by_class)


@dataclass(frozen=True)
class RejectedGaps(CriticalGapSpec):
    """Threshold decaying in the count of gaps already rejected.

    The decay length divides a pure count, so it is NOT carried in scaled
    units, unlike every other stored value.
    """

    params_by_class: Mapping[tuple[str, str], DecayCurve]
    kind = "rejected_gaps"

    def __post_init__(self) -> None:
        _validate_decay_map(self.params_by_class)

    def n_structural_params(self) -> int:
        return 3 * len(self.params_by_class)


@dataclass(frozen=True)
class BiValued(CriticalGapSpec):
    """Two thresholds per class pair: one at w = 0, one for w > 0.

    The dispatch is on exact zero: waiting time comes from timestamp
    subtraction, so literal zero means the first gap was the one accepted.
    """

    levels_by_class: Mapping[tuple[str, str], BiLevel]
    kind = "bi_valued"

    def __post_init__(self) -> None:
        if not self.levels_by_class:
            raise ConfigurationError("bi-valued spec needs at least one class pair")
        for pair, level in self.levels_by_class.items():
            _check_positive(f"tau0[{','.join(pair)}]", level.zero_wait)
            _check_positive(f"tau1[{','.join(pair)}]", level.positive_wait)

    def n_structural_params(self) -> int:
        return 2 * len(self.levels_by_class)


def _validate_decay_map(mapping: Mapping[tuple[str, str], DecayCurve]) -> None:
    if not mapping:
        raise ConfigurationError("decay spec needs at least one class pair")
    for pair, curve in mapping.items():
        tag = ",".join(pair)
        _check_positive(f"amplitude[{tag}]", curve.amplitude)
        _check_positive(f"floor[{tag}]", curve.floor)
        _check_positive(f"decay_length[{tag}]", curve.decay_length)


# Nesting lattice: lower rank models are restrictions of higher rank ones;
# the three rank-3 structures are not nested in each other.
MODEL_RANK = {
    "constant": 0,
    "by_subject": 1,
    "by_subject_opposing": 2,
    "waiting_time": 3,
    "rejected_gaps": 3,
    "bi_valued": 3,
}


def _lookup_pair(mapping: Mapping, key: ClassKey, spec_kind: str):
    try:
        return mapping[key.pair]
    except KeyError:
        raise ConfigurationError(
            f"{spec_kind} spec has no entry for class pair {key.label()!r}"
        ) from None


def tau_scaled_at(
    spec: CriticalGapSpec,
    key: ClassKey,
    *,
    w_p: Optional[float] = None,
    r: Optional[float] = None,
    w: Optional[float] = None,
) -> float:
    """Scaled threshold for a class key at the given conditioning value.

    ``w_p`` is the scaled perceived waiting time (waiting-time spec), ``r``
    the rejected-gap count (rejected-gaps spec), ``w`` the observed waiting
    time (bi-valued spec). Constant-style specs ignore all three.
    """
    if isinstance(spec, Constant):
        return spec.tau_scaled
    if isinstance(spec, BySubject):
        try:
            return spec.tau_by_subject[key.subject_class]
        except KeyError:
            raise ConfigurationError(
                f"by-subject spec has no entry for subject class {key.subject_class!r}"
            ) from None
    if isinstance(spec, BySubjectOpposing):
        return _lookup_pair(spec.tau_by_class, key, spec.kind)
    if isinstance(spec, WaitingTime):
        if w_p is None or w_p < 0.0:
            raise UsageError("waiting-time spec needs perceived waiting time w_p >= 0")
        curve = _lookup_pair(spec.params_by_class, key, spec.kind)
        return float(curve.amplitude * np.exp(-w_p / curve.decay_length) + curve.floor)
    if isinstance(spec, RejectedGaps):
        if r is None or r < 0.0:
            raise UsageError("rejected-gaps spec needs rejected count r >= 0")
        curve = _lookup_pair(spec.params_by_class, key, spec.kind)
        return float(curve.amplitude * np.exp(-r / curve.decay_length) + curve.floor)
    if isinstance(spec, BiValued):
        if w is None or w < 0.0:
            raise UsageError("bi-valued spec needs observed waiting time w >= 0")
        level = _lookup_pair(spec.levels_by_class, key, spec.kind)
        return level.zero_wait if w == 0.0 else level.positive_wait
    raise UsageError(f"unknown critical-gap spec type {type(spec).__name__}")


@dataclass
class ClampCounter:
    """Counts probability clamps applied while evaluating a likelihood."""

    count: int = 0


# ---------------------------------------------------------------------------
# Packed representation: the likelihood and emulator kernels are vectorized
# over rows, so datasets are converted once into canonical column arrays.
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class PackedObservations:
    """Column view of a dataset in canonical (vehicle_id, gap_index) order."""

    gap: np.ndarray
    waiting: np.ndarray
    rejected: np.ndarray
    accepted: np.ndarray
    subject_idx: np.ndarray
    pair_idx: np.ndarray
    subjects: tuple[str, ...]
    pairs: tuple[tuple[str, str], ...]
    vehicle_ids: tuple[str, ...]
    vehicle_slices: tuple[tuple[int, int], ...]

    @property
    def n_obs(self) -> int:
        return int(self.gap.size)

    @property
    def n_vehicles(self) -> int:
        return len(self.vehicle_ids)


def pack_observations(data: Sequence[GapObservation]) -> PackedObservations:
    """Sort observations canonically and extract column arrays.

    The canonical order makes every downstream reduction independent of the
    row order the caller happened to use.
    """
    obs = sorted(data, key=lambda o: (o.vehicle_id, o.gap_index))
    if not obs:
        raise DataError("dataset is empty")
    subjects = tuple(sorted({o.subject_class for o in obs}))
    pairs = tuple(sorted({(o.subject_class, o.opposing_class) for o in obs}))
    subj_pos = {s: i for i, s in enumerate(subjects)}
    pair_pos = {pr: i for i, pr in enumerate(pairs)}

    n = len(obs)
    gap = np.empty(n)
    waiting = np.empty(n)
    rejected = np.empty(n)
    accepted = np.empty(n, dtype=bool)
    subject_idx = np.empty(n, dtype=np.intp)
    pair_idx = np.empty(n, dtype=np.intp)
    vehicle_ids: list[str] = []
    slices: list[tuple[int, int]] = []
    start = 0
    for i, o in enumerate(obs):
        gap[i] = o.gap_size
        waiting[i] = o.waiting_time
        rejected[i] = o.rejected_count
        accepted[i] = o.accepted
        subject_idx[i] = subj_pos[o.subject_class]
        pair_idx[i] = pair_pos[(o.subject_class, o.opposing_class)]
        if i > 0 and o.vehicle_id != obs[i - 1].vehicle_id:
            vehicle_ids.append(obs[i - 1].vehicle_id)
            slices.append((start, i))
            start = i
    vehicle_ids.append(obs[-1].vehicle_id)
    slices.append((start, n))
    for arr in (gap, waiting, rejected, accepted, subject_idx, pair_idx):
        arr.setflags(write=False)
    return PackedObservations(
        gap=gap,
        waiting=waiting,
        rejected=rejected,
        accepted=accepted,
        subject_idx=subject_idx,
        pair_idx=pair_idx,
        subjects=subjects,
        pairs=pairs,
        vehicle_ids=tuple(vehicle_ids),
        vehicle_slices=tuple(slices),
    )


def _row_thresholds(packed: PackedObservations, spec: CriticalGapSpec) -> np.ndarray:
    """Per-row scaled threshold for every structure except waiting-time."""
    if isinstance(spec, Constant):
        return np.full(packed.n_obs, spec.tau_scaled)
    if isinstance(spec, BySubject):
        values = _map_to_array(spec.tau_by_subject, packed.subjects, "subject class")
        return values[packed.subject_idx]
    if isinstance(spec, BySubjectOpposing):
        values = _map_to_array(spec.tau_by_class, packed.pairs, "class pair")
        return values[packed.pair_idx]
    if isinstance(spec, RejectedGaps):
        a, c, ell = _decay_arrays(spec.params_by_class, packed.pairs)
        idx = packed.pair_idx
        return a[idx] * np.exp(-packed.rejected / ell[idx]) + c[idx]
    if isinstance(spec, BiValued):
        zero = _map_to_array(
            {k: lv.zero_wait for k, lv in spec.levels_by_class.items()}, packed.pairs, "class pair"
        )
        pos = _map_to_array(
            {k: lv.positive_wait for k, lv in spec.levels_by_class.items()}, packed.pairs, "class pair"
        )
        idx = packed.pair_idx
        return np.where(packed.waiting == 0.0, zero[idx], pos[idx])
    raise UsageError(f"no closed-form threshold for spec kind {spec.kind!r}")


def _map_to_array(mapping: Mapping, keys: tuple, what: str) -> np.ndarray:
    try:
        return np.array([mapping[k] for k in keys], dtype=float)
    except KeyError as exc:
        raise ConfigurationError(f"spec has no entry for {what} {exc.args[0]!r}") from None


def _decay_arrays(mapping, pairs) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    a = _map_to_array({k: cur.amplitude for k, cur in mapping.items()}, pairs, "class pair")
    c = _map_to_array({k: cur.floor for k, cur in mapping.items()}, pairs, "class pair")
    ell = _map_to_array({k: cur.decay_length for k, cur in mapping.items()}, pairs, "class pair")
    return a, c, ell


def _z_scores(tau: np.ndarray, gap: np.ndarray, p: PerceptionParams) -> np.ndarray:
    """Standardized log-ratio whose normal CDF is the rejection probability."""
    law = p.error_law
    denom = (p.alpha_over_beta * np.exp(-gap / p.k) + 1.0) * gap
    return (np.log(tau / denom) - law.mu) / law.sigma


def _clamp_probs(p_arr: np.ndarray, counter: Optional[ClampCounter]) -> np.ndarray:
    out_of_range = int(np.count_nonzero((p_arr < _PROB_FLOOR) | (p_arr > _PROB_CEIL)))
    if out_of_range and counter is not None:
        counter.count += out_of_range
    if out_of_range:
        return np.clip(p_arr, _PROB_FLOOR, _PROB_CEIL)
    return p_arr


def _waiting_z_matrix(
    spec: WaitingTime,
    packed_gap: np.ndarray,
    packed_wait: np.ndarray,
    pair_idx: np.ndarray,
    pairs: tuple,
    p: PerceptionParams,
    nodes: int,
) -> tuple[np.ndarray, np.ndarray]:
    """Z-score matrix (rows x quadrature nodes) for positive waiting times."""
    law = p.error_law
    u, wts = quadrature_points(law, nodes)
    a, c, ell = _decay_arrays(spec.params_by_class, pairs)
    idx = pair_idx
    scaled_wait = (p.alpha_over_beta * np.exp(-packed_wait / p.k) + 1.0) * packed_wait
    wait_matrix = scaled_wait[:, None] * u[None, :]
    tau_matrix = a[idx, None] * np.exp(-wait_matrix / ell[idx, None]) + c[idx, None]
    denom = (p.alpha_over_beta * np.exp(-packed_gap / p.k) + 1.0) * packed_gap
    z = (np.log(tau_matrix / denom[:, None]) - law.mu) / law.sigma
    return z, wts


def accept_prob_packed(
    packed: PackedObservations,
    spec: CriticalGapSpec,
    p: PerceptionParams,
    nodes: int = DEFAULT_QUADRATURE_NODES,
) -> np.ndarray:
    """Vector of per-row acceptance probabilities, clipped into (0, 1)."""
    if isinstance(spec, WaitingTime):
        out = np.empty(packed.n_obs)
        zero = packed.waiting == 0.0
        if np.any(zero):
            a, c, _ = _decay_arrays(spec.params_by_class, packed.pairs)
            idx = packed.pair_idx[zero]
            tau = a[idx] + c[idx]
            out[zero] = ndtr(-_z_scores(tau, packed.gap[zero], p))
        if np.any(~zero):
            z, wts = _waiting_z_matrix(
                spec, packed.gap[~zero], packed.waiting[~zero], packed.pair_idx[~zero], packed.pairs, p, nodes
            )
            out[~zero] = (ndtr(-z) * wts[None, :]).sum(axis=1)
    else:
        tau = _row_thresholds(packed, spec)
        out = ndtr(-_z_scores(tau, packed.gap, p))
    return np.clip(out, _PROB_FLOOR, _PROB_CEIL)


def log_likelihood_packed(
    packed: PackedObservations,
    spec: CriticalGapSpec,
    p: PerceptionParams,
    nodes: int = DEFAULT_QUADRATURE_NODES,
    counter: Optional[ClampCounter] = None,
) -> float:
    """Total log-likelihood over packed observations.

    Accepted rows contribute log(acceptance probability) and rejected rows
    log(rejection probability); each side is computed directly from the
    normal CDF in its own orientation, so tail accuracy is preserved without
    a subtraction. The reductions use numpy's pairwise summation over the
    canonical row order, so the value does not depend on scheduling.
    """
    acc = packed.accepted
    rej = ~acc
    if isinstance(spec, WaitingTime):
        ll = 0.0
        zero = packed.waiting == 0.0
        a_arr, c_arr, _ = _decay_arrays(spec.params_by_class, packed.pairs)
        for side_mask, orientation in ((acc, -1.0), (rej, 1.0)):
            m_zero = side_mask & zero
            if np.any(m_zero):
                idx = packed.pair_idx[m_zero]
                tau = a_arr[idx] + c_arr[idx]
                probs = ndtr(orientation * _z_scores(tau, packed.gap[m_zero], p))
                ll += float(np.sum(np.log(_clamp_probs(probs, counter))))
            m_posw = side_mask & ~zero
            if np.any(m_posw):
                z, wts = _waiting_z_matrix(
                    spec,
                    packed.gap[m_posw],
                    packed.waiting[m_posw],
                    packed.pair_idx[m_posw],
                    packed.pairs,
                    p,
                    nodes,
                )
                probs = (ndtr(orientation * z) * wts[None, :]).sum(axis=1)
                ll += float(np.sum(np.log(_clamp_probs(probs, counter))))
        return ll

    tau = _row_thresholds(packed, spec)
    z = _z_scores(tau, packed.gap, p)
    p_acc = ndtr(-z[acc])
    p_rej = ndtr(z[rej])
    ll = float(np.sum(np.log(_clamp_probs(p_acc, counter))))
    ll += float(np.sum(np.log(_clamp_probs(p_rej, counter))))
    return ll


def accept_prob(
    obs: GapObservation,
    spec: CriticalGapSpec,
    p: PerceptionParams,
    nodes: int = DEFAULT_QUADRATURE_NODES,
) -> float:
    """Probability that the perceived gap exceeds the applicable threshold.

    For the waiting-time structure the threshold depends on the perceived
    waiting time, which is integrated out by Gauss-Hermite quadrature; a zero
    waiting time makes the threshold the deterministic amplitude+floor, so
    that branch reuses the closed form exactly.
    """
    key = obs.key
    law = p.error_law
    if isinstance(spec, WaitingTime) and obs.waiting_time > 0.0:
        curve = _lookup_pair(spec.params_by_class, key, spec.kind)
        u, wts = quadrature_points(law, nodes)
        scaled_wait = scaled_bias(obs.waiting_time, p) * obs.waiting_time
        tau_u = curve.amplitude * np.exp(-scaled_wait * u / curve.decay_length) + curve.floor
        denom = scaled_bias(obs.gap_size, p) * obs.gap_size
        z = (np.log(tau_u / denom) - law.mu) / law.sigma
        value = float(ndtr(-z) @ wts)
    else:
        if isinstance(spec, WaitingTime):
            curve = _lookup_pair(spec.params_by_class, key, spec.kind)
            tau = curve.amplitude + curve.floor
        else:
            tau = tau_scaled_at(
                spec,
                key,
                r=obs.rejected_count if isinstance(spec, RejectedGaps) else None,
                w=obs.waiting_time if isinstance(spec, BiValued) else None,
            )
        denom = scaled_bias(obs.gap_size, p) * obs.gap_size
        z = (np.log(tau / denom) - law.mu) / law.sigma
        value = float(ndtr(-z))
    return float(min(max(value, _PROB_FLOOR), _PROB_CEIL))


def log_likelihood(
    data: Sequence[GapObservation],
    spec: CriticalGapSpec,
    p: PerceptionParams,
    nodes: int = DEFAULT_QUADRATURE_NODES,
    counter: Optional[ClampCounter] = None,
) -> float:
    """Total log-likelihood of the decisions in ``data`` under the model."""
    packed = data if isinstance(data, PackedObservations) else pack_observations(data)
    return log_likelihood_packed(packed, spec, p, nodes=nodes, counter=counter)
