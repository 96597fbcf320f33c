"""Constrained maximum-likelihood fitting, bootstrap inference, LR tests.

Parameters are optimized in a transformed unconstrained space: logs for
strictly positive quantities and a scaled logistic for the bias ratio, which
is capped unless relaxed. A multistart simplex search is followed by a
quasi-Newton polish using central-difference gradients.
"""

from __future__ import annotations

import hashlib
import json
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit, logit

from .baselines import raff
from .data import DataLike, Dataset, as_observations
from .emulator import emulator_gap
from .errors import (
    BootstrapError,
    DataError,
    EmulatorRangeError,
    FitError,
    NumericError,
    UsageError,
)
from .gapdist import EmpiricalGaps, GapDistribution
from .models import (
    BiLevel,
    BiValued,
    BySubject,
    BySubjectOpposing,
    ClampCounter,
    ClassKey,
    Constant,
    CriticalGapSpec,
    DecayCurve,
    MODEL_RANK,
    PackedObservations,
    RejectedGaps,
    WaitingTime,
    log_likelihood_packed,
    pack_observations,
)
from .numerics import chi_square_sf
from .perception import ALPHA_OVER_BETA_MAX, PerceptionParams

__all__ = [
    "MODEL_KINDS",
    "FitConfig",
    "FitResult",
    "BootstrapSummary",
    "LrTestResult",
    "fit",
    "bootstrap",
    "attach_bootstrap",
    "lr_test",
    "fit_result_to_dict",
    "fit_result_from_dict",
    "dump_fit_result",
    "load_fit_result",
]

MODEL_KINDS = (
    "constant",
    "by_subject",
    "by_subject_opposing",
    "waiting_time",
    "rejected_gaps",
    "bi_valued",
)

_FORMAT = "latentgap-fit-result"
_VERSION = 1

# Transformed coordinates below this are treated as sitting on the zero bound.
_ZERO_BOUND_THETA = -23.0
_AB_BOUNDARY_REL = 1e-5
# Replicate fits stop once gradients are this small: log coordinates in
# transformed units, the bias ratio in raw units. Optimizer error is then
# far below resampling variation.
_REPLICATE_GTOL = 1.0
_REPLICATE_GTOL_AB = 0.15
# Within this fraction of the bias-ratio cap, second differences of the
# logistic transform are all roundoff; the replicate path switches to raw
# units there and resolves cap-vs-interior explicitly.
_WALL_FRACTION = 1.0 - 2e-3
_CAP_SNAP_T0 = float(logit(1.0 - 1e-12))


@dataclass(frozen=True)
class FitConfig:
    """Knobs for one estimation run; defaults suit datasets of a few thousand vehicles."""

    model: str
    relax_alpha_bound: bool = False
    multistart: int = 8
    xatol: float = 1e-5
    fatol: float = 1e-7
    gtol: float = 1e-6
    maxfev: int = 6000
    nodes: int = 64
    seed: int = 0
    polish: bool = True
    threads: int = 1
    resample_unit: str = "vehicle"

    def __post_init__(self) -> None:
        if self.model not in MODEL_KINDS:
            raise UsageError(f"unknown model kind {self.model!r}; choose from {MODEL_KINDS}")
        if self.multistart < 1:
            raise UsageError("multistart must be >= 1")
        for name in ("xatol", "fatol", "gtol"):
            if not getattr(self, name) > 0.0:
                raise UsageError(f"{name} must be > 0")
        if self.maxfev < 10:
            raise UsageError("maxfev must be >= 10")
        if self.nodes < 8:
            raise UsageError("nodes must be >= 8")
        if self.threads < 1:
            raise UsageError("threads must be >= 1")
        if self.seed < 0 or int(self.seed) != self.seed:
            raise UsageError("seed must be a nonnegative integer")
        if self.resample_unit not in ("vehicle", "gap"):
            raise UsageError("resample_unit must be 'vehicle' or 'gap'")


@dataclass(frozen=True)
class FitResult:
    """Estimates plus convergence/report metadata for one model fit."""

    perception: PerceptionParams
    spec: CriticalGapSpec
    max_ll: float
    converged: bool
    n_obs: int
    n_vehicles: int
    n_params: int
    aic: float
    boundary_flags: tuple[str, ...]
    gradient_inf_norm: float
    clamp_count: int
    config: FitConfig
    data_fingerprint: str
    param_values: dict[str, float]
    emulator_gaps: dict[str, float]
    gap_sample: tuple[float, ...]
    standard_errors: Optional[dict[str, float]] = None
    confidence_intervals: Optional[dict[str, tuple[float, float]]] = None
    bootstrap_info: Optional[dict] = None


@dataclass(frozen=True)
class BootstrapSummary:
    """Resampling SEs/CIs over parameters and emulator gaps."""

    standard_errors: dict[str, float]
    confidence_intervals: dict[str, tuple[float, float]]
    n_replicates: int
    n_dropped: int
    seed: int
    resample_unit: str
    replicate_values: dict[str, tuple[float, ...]]


@dataclass(frozen=True)
class LrTestResult:
    statistic: float
    df: int
    p_value: float


# ---------------------------------------------------------------------------
# Parameter layout and transforms
# ---------------------------------------------------------------------------


class _Layout:
    """Maps between transformed vectors, report values, and model objects."""

    def __init__(self, kind: str, subjects: tuple[str, ...], pairs: tuple[tuple[str, str], ...], relax: bool):
        self.kind = kind
        self.subjects = subjects
        self.pairs = pairs
        self.relax = relax
        names = ["alpha_over_beta", "k", "v"]
        if kind == "constant":
            names.append("tau")
        elif kind == "by_subject":
            names.extend(f"tau[{s}]" for s in subjects)
        elif kind == "by_subject_opposing":
            names.extend(f"tau[{s},{o}]" for s, o in pairs)
        elif kind in ("waiting_time", "rejected_gaps"):
            for s, o in pairs:
                names.extend((f"a[{s},{o}]", f"c[{s},{o}]", f"l[{s},{o}]"))
        elif kind == "bi_valued":
            for s, o in pairs:
                names.extend((f"tau0[{s},{o}]", f"tau1[{s},{o}]"))
        else:
            raise UsageError(f"unknown model kind {kind!r}")
        self.names = names
        self.n = len(names)

    def build(self, theta: np.ndarray) -> tuple[PerceptionParams, CriticalGapSpec]:
        t = np.clip(np.asarray(theta, dtype=float), -700.0, 300.0)
        if self.relax:
            ab = float(np.exp(t[0]))
        else:
            ab = float(ALPHA_OVER_BETA_MAX * expit(t[0]))
        perception = PerceptionParams(
            alpha_over_beta=ab,
            k=float(np.exp(t[1])),
            v=float(np.exp(t[2])),
            bias_bound_relaxed=self.relax,
        )
        values = np.exp(t[3:])
        kind = self.kind
        if kind == "constant":
            spec: CriticalGapSpec = Constant(tau_scaled=float(values[0]))
        elif kind == "by_subject":
            spec = BySubject({s: float(x) for s, x in zip(self.subjects, values)})
        elif kind == "by_subject_opposing":
            spec = BySubjectOpposing({pr: float(x) for pr, x in zip(self.pairs, values)})
        elif kind in ("waiting_time", "rejected_gaps"):
            mapping = {
                pr: DecayCurve(float(values[3 * i]), float(values[3 * i + 1]), float(values[3 * i + 2]))
                for i, pr in enumerate(self.pairs)
            }
            spec = WaitingTime(mapping) if kind == "waiting_time" else RejectedGaps(mapping)
        else:
            mapping = {
                pr: BiLevel(float(values[2 * i]), float(values[2 * i + 1]))
                for i, pr in enumerate(self.pairs)
            }
            spec = BiValued(mapping)
        return perception, spec

    def pack(self, perception: PerceptionParams, spec: CriticalGapSpec) -> np.ndarray:
        if self.relax:
            t0 = np.log(perception.alpha_over_beta)
        else:
            ratio = perception.alpha_over_beta / ALPHA_OVER_BETA_MAX
            t0 = logit(min(max(ratio, 1e-12), 1.0 - 1e-12))
        structural = self._structural_values(spec)
        return np.concatenate(
            ([t0, np.log(perception.k), np.log(perception.v)], np.log(structural))
        )

    def _structural_values(self, spec: CriticalGapSpec) -> np.ndarray:
        kind = self.kind
        if kind == "constant":
            return np.array([spec.tau_scaled])
        if kind == "by_subject":
            return np.array([spec.tau_by_subject[s] for s in self.subjects])
        if kind == "by_subject_opposing":
            return np.array([spec.tau_by_class[pr] for pr in self.pairs])
        if kind in ("waiting_time", "rejected_gaps"):
            out = []
            for pr in self.pairs:
                curve = spec.params_by_class[pr]
                out.extend((curve.amplitude, curve.floor, curve.decay_length))
            return np.array(out)
        out = []
        for pr in self.pairs:
            level = spec.levels_by_class[pr]
            out.extend((level.zero_wait, level.positive_wait))
        return np.array(out)

    def report_values(self, perception: PerceptionParams, spec: CriticalGapSpec) -> dict[str, float]:
        values = [perception.alpha_over_beta, perception.k, perception.v]
        values.extend(self._structural_values(spec).tolist())
        return dict(zip(self.names, (float(x) for x in values)))


def _snap_alpha_bound(theta: np.ndarray, relax: bool) -> tuple[np.ndarray, bool]:
    """Clamp the bias-ratio coordinate onto its cap when it has converged there."""
    if relax or expit(theta[0]) <= 1.0 - _AB_BOUNDARY_REL:
        return theta, False
    out = theta.copy()
    out[0] = logit(1.0 - 1e-12)
    return out, True


def _at_alpha_cap(perception: PerceptionParams) -> PerceptionParams:
    return PerceptionParams(
        alpha_over_beta=ALPHA_OVER_BETA_MAX,
        k=perception.k,
        v=perception.v,
        bias_bound_relaxed=False,
    )


def _central_gradient(func, x: np.ndarray) -> np.ndarray:
    return _subset_gradient(func, x, np.arange(x.size))


def _subset_gradient(func, x: np.ndarray, idx: np.ndarray) -> np.ndarray:
    grad = np.empty(len(idx))
    for a, j in enumerate(idx):
        h = 6.06e-6 * (1.0 + abs(x[j]))
        xp, xm = x.copy(), x.copy()
        xp[j] += h
        xm[j] -= h
        grad[a] = (func(xp) - func(xm)) / (2.0 * h)
    return grad


def _subset_hessian(func, x: np.ndarray, idx: np.ndarray) -> np.ndarray:
    n = len(idx)
    steps = [1.22e-4 * (1.0 + abs(x[j])) for j in idx]
    hess = np.empty((n, n))
    f0 = func(x)
    for a, j in enumerate(idx):
        h = steps[a]
        xp, xm = x.copy(), x.copy()
        xp[j] += h
        xm[j] -= h
        hess[a, a] = (func(xp) - 2.0 * f0 + func(xm)) / (h * h)
    for a in range(n):
        for b in range(a + 1, n):
            ja, jb = idx[a], idx[b]
            ha, hb = steps[a], steps[b]
            xpp, xpm, xmp, xmm = x.copy(), x.copy(), x.copy(), x.copy()
            xpp[ja] += ha
            xpp[jb] += hb
            xpm[ja] += ha
            xpm[jb] -= hb
            xmp[ja] -= ha
            xmp[jb] += hb
            xmm[ja] -= ha
            xmm[jb] -= hb
            hess[a, b] = hess[b, a] = (func(xpp) - func(xpm) - func(xmp) + func(xmm)) / (
                4.0 * ha * hb
            )
    return hess


def _newton_refine(
    func,
    x: np.ndarray,
    free: np.ndarray,
    gtol: float,
    max_iter: int = 4,
    abort=None,
) -> np.ndarray:
    """Push free-coordinate gradients toward zero with damped Newton steps.

    Quasi-Newton polishing stalls once function differences approach
    roundoff; explicit second differences stay informative there. Boundary
    coordinates are excluded via ``free``. Each Hessian is reused for a
    second chord step since it dominates the evaluation count. Returns the
    point with the smallest free-gradient norm encountered, except when
    ``abort(x)`` turns true after a step, in which case that ``x`` is
    returned as-is for the caller to resolve.
    """
    x = np.asarray(x, dtype=float).copy()
    grad = _subset_gradient(func, x, free)
    if grad.size == 0 or not np.all(np.isfinite(grad)):
        return x
    best_x = x
    best_gn = float(np.max(np.abs(grad)))
    gn = best_gn
    for _ in range(max_iter):
        if gn <= 0.5 * gtol:
            break
        hess = _subset_hessian(func, x, free)
        progressed = False
        for _ in range(2):
            try:
                step = np.linalg.solve(hess, -grad)
                if not np.all(np.isfinite(step)):
                    raise np.linalg.LinAlgError
            except np.linalg.LinAlgError:
                step = -grad
            scale = min(1.0, 1.0 / max(float(np.max(np.abs(step))), 1e-12))
            f0 = func(x)
            accept_tol = 1e-11 * (1.0 + abs(f0))
            candidate = None
            for _ in range(25):
                trial = x.copy()
                trial[free] += scale * step
                f_trial = func(trial)
                if np.isfinite(f_trial) and f_trial <= f0 + accept_tol:
                    candidate = trial
                    break
                scale *= 0.5
            if candidate is None:
                break
            x = candidate
            if abort is not None and abort(x):
                return x
            grad = _subset_gradient(func, x, free)
            if not np.all(np.isfinite(grad)):
                return best_x
            gn = float(np.max(np.abs(grad)))
            progressed = True
            if gn < best_gn:
                best_gn, best_x = gn, x
            if gn <= 0.5 * gtol:
                break
        if not progressed:
            break
    return best_x


# ---------------------------------------------------------------------------
# Heuristic starting point
# ---------------------------------------------------------------------------


def _heuristic_center(layout: _Layout, packed: PackedObservations, observations) -> np.ndarray:
    try:
        tau_guess = raff(observations)
    except (DataError,) as exc:  # no accepted or no rejected gaps anywhere
        raise DataError(f"cannot initialize fit: {exc}") from exc
    tau_guess = float(min(max(tau_guess, 0.2), 50.0))
    positive_wait = packed.waiting[packed.waiting > 0.0]
    mean_wait = float(np.mean(positive_wait)) if positive_wait.size else 2.0
    kind = layout.kind
    if kind == "constant":
        structural = [tau_guess]
    elif kind == "by_subject":
        structural = [tau_guess] * len(layout.subjects)
    elif kind == "by_subject_opposing":
        structural = [tau_guess] * len(layout.pairs)
    elif kind == "waiting_time":
        ell = min(max(0.25 * mean_wait, 0.3), 5.0)
        structural = [0.5 * tau_guess, 0.8 * tau_guess, ell] * len(layout.pairs)
    elif kind == "rejected_gaps":
        structural = [0.5 * tau_guess, 0.8 * tau_guess, 0.8] * len(layout.pairs)
    else:
        structural = [1.15 * tau_guess, 0.9 * tau_guess] * len(layout.pairs)
    t0 = np.log(0.5 * ALPHA_OVER_BETA_MAX) if layout.relax else 0.0
    head = np.array([t0, np.log(0.5), np.log(0.3)])
    return np.concatenate((head, np.log(np.asarray(structural, dtype=float))))


def _upcast_warm_start(layout: _Layout, warm: FitResult) -> Optional[np.ndarray]:
    """Express a nested fit's optimum in this layout, if the kinds nest."""
    src = warm.spec
    kind = layout.kind
    try:
        if kind == src.kind:
            return layout.pack(_relaxed_copy(warm.perception, layout.relax), src)
        if MODEL_RANK[src.kind] >= MODEL_RANK[kind]:
            return None
        tau_for_pair = None
        if isinstance(src, Constant):
            tau_for_pair = {pr: src.tau_scaled for pr in layout.pairs}
            tau_for_subject = {s: src.tau_scaled for s in layout.subjects}
        elif isinstance(src, BySubject):
            tau_for_pair = {pr: src.tau_by_subject[pr[0]] for pr in layout.pairs}
            tau_for_subject = dict(src.tau_by_subject)
        elif isinstance(src, BySubjectOpposing):
            tau_for_pair = dict(src.tau_by_class)
            tau_for_subject = None
        else:
            return None
        perception = _relaxed_copy(warm.perception, layout.relax)
        if kind == "by_subject":
            if tau_for_subject is None:
                return None
            return layout.pack(perception, BySubject(tau_for_subject))
        if kind == "by_subject_opposing":
            return layout.pack(perception, BySubjectOpposing(tau_for_pair))
        if kind in ("waiting_time", "rejected_gaps"):
            mapping = {
                pr: DecayCurve(1e-3 * tau_for_pair[pr], tau_for_pair[pr], 1.0)
                for pr in layout.pairs
            }
            spec = WaitingTime(mapping) if kind == "waiting_time" else RejectedGaps(mapping)
            return layout.pack(perception, spec)
        if kind == "bi_valued":
            mapping = {pr: BiLevel(tau_for_pair[pr], tau_for_pair[pr]) for pr in layout.pairs}
            return layout.pack(perception, BiValued(mapping))
    except (KeyError, UsageError):
        return None
    return None


def _relaxed_copy(perception: PerceptionParams, relax: bool) -> PerceptionParams:
    if perception.bias_bound_relaxed == relax:
        return perception
    return PerceptionParams(
        alpha_over_beta=perception.alpha_over_beta,
        k=perception.k,
        v=perception.v,
        bias_bound_relaxed=relax,
    )


# ---------------------------------------------------------------------------
# Fitting
# ---------------------------------------------------------------------------


def _fingerprint(observations: Sequence) -> str:
    digest = hashlib.sha256()
    for o in sorted(observations, key=lambda o: (o.vehicle_id, o.gap_index)):
        digest.update(
            f"{o.vehicle_id},{o.gap_index},{o.gap_size!r},{o.subject_class},"
            f"{o.opposing_class},{o.waiting_time!r},{o.rejected_count},{int(o.accepted)}\n".encode()
        )
    return digest.hexdigest()


def _check_identifiability(packed: PackedObservations) -> None:
    for idx, pair in enumerate(packed.pairs):
        mask = packed.pair_idx == idx
        n_acc = int(np.count_nonzero(packed.accepted[mask]))
        n_rej = int(np.count_nonzero(mask)) - n_acc
        if n_acc == 0 or n_rej == 0:
            warnings.warn(
                f"class pair {','.join(pair)} has {n_acc} accepted and {n_rej} rejected"
                " gaps; its threshold is weakly identified",
                UserWarning,
                stacklevel=3,
            )


def _emulator_labels(spec: CriticalGapSpec) -> list[tuple[str, ClassKey, dict]]:
    if isinstance(spec, Constant):
        return [("all", ClassKey("*"), {})]
    if isinstance(spec, BySubject):
        return [(s, ClassKey(s), {}) for s in sorted(spec.tau_by_subject)]
    if isinstance(spec, BySubjectOpposing):
        return [(f"{s},{o}", ClassKey(s, o), {}) for s, o in sorted(spec.tau_by_class)]
    if isinstance(spec, WaitingTime):
        return [(f"{s},{o}|w=0", ClassKey(s, o), {"w": 0.0}) for s, o in sorted(spec.params_by_class)]
    if isinstance(spec, RejectedGaps):
        return [(f"{s},{o}|r=0", ClassKey(s, o), {"r": 0.0}) for s, o in sorted(spec.params_by_class)]
    labels = []
    for s, o in sorted(spec.levels_by_class):
        labels.append((f"{s},{o}|w=0", ClassKey(s, o), {"w": 0.0}))
        labels.append((f"{s},{o}|w>0", ClassKey(s, o), {"w": 1.0}))
    return labels


def _emulator_gaps_for(
    spec: CriticalGapSpec,
    perception: PerceptionParams,
    d: GapDistribution,
    nodes: int,
    strict: bool = False,
) -> dict[str, float]:
    out = {}
    for label, key, conditioning in _emulator_labels(spec):
        try:
            out[label] = emulator_gap(spec, key, perception, d, nodes=nodes, **conditioning)
        except EmulatorRangeError:
            if strict:
                raise
    return out


def fit(
    data: DataLike,
    config: FitConfig,
    warm_start: Optional[FitResult] = None,
    emulator_dist: Optional[GapDistribution] = None,
) -> FitResult:
    """Maximum-likelihood fit of the configured model.

    ``warm_start`` may carry the result of a nested (restricted) model fit on
    the same data; its optimum is upcast into this model's parameter space
    and added as an extra start, which guarantees the fitted likelihood
    cannot fall below the restricted one.
    """
    observations = as_observations(data)
    packed = pack_observations(observations)
    _check_identifiability(packed)
    layout = _Layout(config.model, packed.subjects, packed.pairs, config.relax_alpha_bound)
    counter = ClampCounter()

    def neg_ll(theta: np.ndarray) -> float:
        perception, spec = layout.build(theta)
        value = log_likelihood_packed(packed, spec, perception, nodes=config.nodes, counter=counter)
        if not np.isfinite(value):
            return 1e18
        return -value

    center = _heuristic_center(layout, packed, observations)
    starts = [center]
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 11]))
    for _ in range(config.multistart - 1):
        starts.append(center + rng.uniform(-np.log(3.0), np.log(3.0), size=layout.n))
    if warm_start is not None:
        upcast = _upcast_warm_start(layout, warm_start)
        if upcast is not None:
            starts.append(upcast)

    best_x: Optional[np.ndarray] = None
    best_f = np.inf
    for x0 in starts:
        result = minimize(
            neg_ll,
            x0,
            method="Nelder-Mead",
            options={
                "xatol": config.xatol,
                "fatol": config.fatol,
                "maxfev": config.maxfev,
                "adaptive": True,
            },
        )
        if np.isfinite(result.fun) and result.fun < best_f:
            best_f = float(result.fun)
            best_x = np.asarray(result.x, dtype=float)
    if best_x is None:
        raise FitError("all starts produced non-finite likelihoods", best_point=None, best_value=None)

    if config.polish:
        polish = minimize(
            neg_ll,
            best_x,
            method="BFGS",
            jac=lambda x: _central_gradient(neg_ll, x),
            options={"gtol": config.gtol, "maxiter": 200},
        )
        if np.isfinite(polish.fun) and polish.fun <= best_f:
            best_f = float(polish.fun)
            best_x = np.asarray(polish.x, dtype=float)

    best_x, snapped = _snap_alpha_bound(best_x, config.relax_alpha_bound)
    flags: list[str] = ["alpha_over_beta"] if snapped else []
    for name, theta_j in zip(layout.names, best_x):
        if theta_j <= _ZERO_BOUND_THETA and name not in flags:
            flags.append(name)
    free = np.array([i for i, name in enumerate(layout.names) if name not in flags], dtype=int)

    if config.polish and free.size:
        best_x = _newton_refine(neg_ll, best_x, free, config.gtol)

    gradient = _central_gradient(neg_ll, best_x)
    gradient_inf = float(np.max(np.abs(gradient)))

    perception, spec = layout.build(best_x)
    if snapped:
        perception = _at_alpha_cap(perception)
    final_counter = ClampCounter()
    max_ll = log_likelihood_packed(packed, spec, perception, nodes=config.nodes, counter=final_counter)

    converged = all(
        abs(g) <= config.gtol or name in flags for name, g in zip(layout.names, gradient)
    )

    n_params = layout.n
    d_emulator = emulator_dist if emulator_dist is not None else EmpiricalGaps(packed.gap)
    emulator_gaps = _emulator_gaps_for(spec, perception, d_emulator, config.nodes)

    return FitResult(
        perception=perception,
        spec=spec,
        max_ll=float(max_ll),
        converged=bool(converged),
        n_obs=packed.n_obs,
        n_vehicles=packed.n_vehicles,
        n_params=n_params,
        aic=float(2.0 * n_params - 2.0 * max_ll),
        boundary_flags=tuple(flags),
        gradient_inf_norm=gradient_inf,
        clamp_count=final_counter.count,
        config=config,
        data_fingerprint=_fingerprint(observations),
        param_values=layout.report_values(perception, spec),
        emulator_gaps=emulator_gaps,
        gap_sample=tuple(float(g) for g in packed.gap),
        standard_errors=None,
        confidence_intervals=None,
        bootstrap_info=None,
    )


# ---------------------------------------------------------------------------
# Bootstrap
# ---------------------------------------------------------------------------


def _subset_packed(packed: PackedObservations, row_blocks: list[tuple[int, int]]) -> PackedObservations:
    gap = np.concatenate([packed.gap[a:b] for a, b in row_blocks])
    waiting = np.concatenate([packed.waiting[a:b] for a, b in row_blocks])
    rejected = np.concatenate([packed.rejected[a:b] for a, b in row_blocks])
    accepted = np.concatenate([packed.accepted[a:b] for a, b in row_blocks])
    subject_idx = np.concatenate([packed.subject_idx[a:b] for a, b in row_blocks])
    pair_idx = np.concatenate([packed.pair_idx[a:b] for a, b in row_blocks])
    slices = []
    ids = []
    offset = 0
    for i, (a, b) in enumerate(row_blocks):
        slices.append((offset, offset + (b - a)))
        ids.append(f"b{i}")
        offset += b - a
    return PackedObservations(
        gap=gap,
        waiting=waiting,
        rejected=rejected,
        accepted=accepted,
        subject_idx=subject_idx,
        pair_idx=pair_idx,
        subjects=packed.subjects,
        pairs=packed.pairs,
        vehicle_ids=tuple(ids),
        vehicle_slices=tuple(slices),
    )


def _wrap_raw_ab(neg_ll):
    """View of the objective with the bias ratio in raw units, walled at its cap."""
    cap = ALPHA_OVER_BETA_MAX

    def wrapped(point: np.ndarray) -> float:
        ab = point[0]
        if not 0.0 < ab < cap:
            return 1e18
        inner = point.copy()
        inner[0] = logit(ab / cap)
        return neg_ll(inner)

    return wrapped


def _replicate_newton(neg_ll, theta_warm: np.ndarray, n: int, relax: bool) -> tuple[np.ndarray, bool]:
    """Warm-started replicate solve; returns (transformed point, converged).

    With the cap active, the solve runs with the bias ratio in raw units,
    where curvature stays numerically clean all the way to the wall. On wall
    contact the sign of the pull just inside decides between finishing at
    the cap (ratio frozen) and re-solving the interior.
    """
    all_idx = np.arange(n)
    if relax:
        theta = _newton_refine(neg_ll, theta_warm, all_idx, _REPLICATE_GTOL, max_iter=8)
        grad = _subset_gradient(neg_ll, theta, all_idx)
        ok = bool(np.all(np.isfinite(grad)) and np.max(np.abs(grad)) <= _REPLICATE_GTOL)
        return theta, ok

    cap = ALPHA_OVER_BETA_MAX
    wall = cap * _WALL_FRACTION
    wrapped = _wrap_raw_ab(neg_ll)
    raw = theta_warm.copy()
    raw[0] = min(cap * float(expit(theta_warm[0])), wall)
    raw = _newton_refine(
        wrapped, raw, all_idx, _REPLICATE_GTOL_AB, max_iter=8, abort=lambda z: z[0] >= wall
    )
    if raw[0] >= wall:
        # Converge the other coordinates with the ratio frozen at the cap,
        # then let a wall-aborted interior solve started from the same point
        # compete; the lower objective value wins. The profile is flat inside
        # the wall whenever the call is close, so either pick is then safe.
        theta = raw.copy()
        theta[0] = _CAP_SNAP_T0
        theta = _newton_refine(neg_ll, theta, all_idx[1:], _REPLICATE_GTOL, max_iter=6)
        f_cap = neg_ll(theta)
        raw = theta.copy()
        raw[0] = wall
        raw = _newton_refine(
            wrapped, raw, all_idx, _REPLICATE_GTOL_AB, max_iter=4, abort=lambda z: z[0] >= wall
        )
        if raw[0] >= wall or wrapped(raw) >= f_cap:
            grad = _subset_gradient(neg_ll, theta, all_idx[1:])
            ok = bool(np.all(np.isfinite(grad)) and np.max(np.abs(grad)) <= _REPLICATE_GTOL)
            return theta, ok

    grad_rest = _subset_gradient(wrapped, raw, all_idx[1:])
    grad_ab = _subset_gradient(wrapped, raw, all_idx[:1])[0]
    ok = bool(
        np.all(np.isfinite(grad_rest))
        and np.isfinite(grad_ab)
        and np.max(np.abs(grad_rest)) <= _REPLICATE_GTOL
        and abs(grad_ab) <= _REPLICATE_GTOL_AB
    )
    theta = raw.copy()
    theta[0] = float(logit(min(max(raw[0] / cap, 1e-12), 1.0 - 1e-12)))
    return theta, ok


def _replicate_estimates(
    packed: PackedObservations,
    layout: _Layout,
    config: FitConfig,
    theta_warm: np.ndarray,
    seed: int,
    index: int,
) -> Optional[dict[str, float]]:
    rng = np.random.default_rng(np.random.SeedSequence([seed, index]))
    if config.resample_unit == "vehicle":
        chosen = rng.integers(0, packed.n_vehicles, packed.n_vehicles)
        blocks = [packed.vehicle_slices[j] for j in chosen]
    else:
        rows = rng.integers(0, packed.n_obs, packed.n_obs)
        blocks = [(int(r), int(r) + 1) for r in rows]
    rep = _subset_packed(packed, blocks)

    def neg_ll(theta: np.ndarray) -> float:
        perception, spec = layout.build(theta)
        value = log_likelihood_packed(rep, spec, perception, nodes=config.nodes)
        if not np.isfinite(value):
            return 1e18
        return -value

    # Damped Newton from the full-data optimum reaches the replicate optimum
    # in a few steps; simplex search is the fallback when it stalls.
    theta, ok = _replicate_newton(neg_ll, theta_warm, layout.n, config.relax_alpha_bound)
    if not ok:
        result = minimize(
            neg_ll,
            theta,
            method="Nelder-Mead",
            options={
                "xatol": max(config.xatol, 1e-4),
                "fatol": max(config.fatol, 1e-6),
                "maxfev": config.maxfev,
                "adaptive": True,
            },
        )
        if not (result.success and np.isfinite(result.fun)):
            return None
        theta = np.asarray(result.x, dtype=float)
    theta, snapped = _snap_alpha_bound(theta, config.relax_alpha_bound)
    perception, spec = layout.build(theta)
    if snapped:
        perception = _at_alpha_cap(perception)
    values = layout.report_values(perception, spec)
    rep_dist = EmpiricalGaps(rep.gap)
    try:
        gaps = _emulator_gaps_for(spec, perception, rep_dist, config.nodes, strict=True)
    except EmulatorRangeError:
        return None
    for label, tau_e in gaps.items():
        values[f"tau_e[{label}]"] = tau_e
    return values


def bootstrap(
    data: DataLike,
    config: FitConfig,
    replicates: int,
    seed: int,
    base: Optional[FitResult] = None,
) -> BootstrapSummary:
    """Resampling standard errors and percentile confidence intervals.

    Vehicles are resampled with all their gaps (gap-level resampling sits
    behind ``config.resample_unit``). Replicate fits warm-start from the
    full-data optimum. Replicate ``i`` draws from an RNG stream derived from
    ``(seed, i)``, so results are identical for any thread count.
    """
    if replicates < 1:
        raise UsageError("replicates must be >= 1")
    if replicates < 200:
        warnings.warn(
            f"B={replicates} replicates is below 200; standard errors will be noisy",
            UserWarning,
            stacklevel=2,
        )
    if replicates < 999:
        warnings.warn(
            f"B={replicates} replicates is below 999; percentile CIs will be coarse",
            UserWarning,
            stacklevel=2,
        )
    observations = as_observations(data)
    packed = pack_observations(observations)
    if base is None:
        base = fit(data, config)
    layout = _Layout(config.model, packed.subjects, packed.pairs, config.relax_alpha_bound)
    theta_warm = layout.pack(base.perception, base.spec)

    def run(index: int) -> Optional[dict[str, float]]:
        return _replicate_estimates(packed, layout, config, theta_warm, seed, index)

    if config.threads > 1:
        with ThreadPoolExecutor(max_workers=config.threads) as pool:
            results = list(pool.map(run, range(replicates)))
    else:
        results = [run(i) for i in range(replicates)]

    kept = [r for r in results if r is not None]
    dropped = replicates - len(kept)
    if dropped > 0.1 * replicates:
        raise BootstrapError(
            f"{dropped} of {replicates} bootstrap replicates failed to converge"
        )
    names = list(kept[0].keys())
    table = {name: np.array([r[name] for r in kept]) for name in names}
    ses = {name: float(np.std(values, ddof=1)) if values.size > 1 else 0.0 for name, values in table.items()}
    cis = {
        name: (float(np.percentile(values, 2.5)), float(np.percentile(values, 97.5)))
        for name, values in table.items()
    }
    return BootstrapSummary(
        standard_errors=ses,
        confidence_intervals=cis,
        n_replicates=replicates,
        n_dropped=dropped,
        seed=seed,
        resample_unit=config.resample_unit,
        replicate_values={name: tuple(map(float, values)) for name, values in table.items()},
    )


def attach_bootstrap(result: FitResult, summary: BootstrapSummary) -> FitResult:
    """Return a copy of ``result`` carrying the bootstrap SEs/CIs."""
    return replace(
        result,
        standard_errors=dict(summary.standard_errors),
        confidence_intervals=dict(summary.confidence_intervals),
        bootstrap_info={
            "n_replicates": summary.n_replicates,
            "n_dropped": summary.n_dropped,
            "seed": summary.seed,
            "resample_unit": summary.resample_unit,
        },
    )


# ---------------------------------------------------------------------------
# Likelihood-ratio test
# ---------------------------------------------------------------------------


def lr_test(restricted: FitResult, unrestricted: FitResult) -> LrTestResult:
    """Chi-square test of a restricted model against a nesting one."""
    kind_r, kind_u = restricted.spec.kind, unrestricted.spec.kind
    rank_r, rank_u = MODEL_RANK[kind_r], MODEL_RANK[kind_u]
    nested = rank_r < rank_u or kind_r == kind_u
    if not nested:
        raise UsageError(f"model {kind_r!r} is not nested in {kind_u!r}")
    if restricted.data_fingerprint != unrestricted.data_fingerprint:
        raise UsageError("the two fits were produced from different datasets")
    df = unrestricted.n_params - restricted.n_params
    if df < 0:
        raise UsageError("unrestricted model has fewer parameters than the restricted one")
    statistic = 2.0 * (unrestricted.max_ll - restricted.max_ll)
    if statistic < -1e-6:
        raise NumericError(
            f"unrestricted log-likelihood is lower than the restricted one by"
            f" {-statistic / 2.0}; refit before testing"
        )
    statistic = max(statistic, 0.0)
    p_value = 1.0 if df == 0 else chi_square_sf(statistic, df)
    return LrTestResult(statistic=float(statistic), df=int(df), p_value=float(p_value))


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def _spec_to_dict(spec: CriticalGapSpec) -> dict:
    if isinstance(spec, Constant):
        values: dict = {"tau": spec.tau_scaled}
    elif isinstance(spec, BySubject):
        values = {s: v for s, v in sorted(spec.tau_by_subject.items())}
    elif isinstance(spec, BySubjectOpposing):
        values = {f"{s},{o}": v for (s, o), v in sorted(spec.tau_by_class.items())}
    elif isinstance(spec, (WaitingTime, RejectedGaps)):
        values = {
            f"{s},{o}": {
                "amplitude": cur.amplitude,
                "floor": cur.floor,
                "decay_length": cur.decay_length,
            }
            for (s, o), cur in sorted(spec.params_by_class.items())
        }
    elif isinstance(spec, BiValued):
        values = {
            f"{s},{o}": {"zero_wait": lv.zero_wait, "positive_wait": lv.positive_wait}
            for (s, o), lv in sorted(spec.levels_by_class.items())
        }
    else:
        raise UsageError(f"cannot serialize spec kind {spec.kind!r}")
    return {"kind": spec.kind, "values": values}


def _spec_from_dict(payload: dict) -> CriticalGapSpec:
    kind = payload["kind"]
    values = payload["values"]
    if kind == "constant":
        return Constant(tau_scaled=float(values["tau"]))
    if kind == "by_subject":
        return BySubject({s: float(v) for s, v in values.items()})
    if kind == "by_subject_opposing":
        return BySubjectOpposing({_pair(lbl): float(v) for lbl, v in values.items()})
    if kind in ("waiting_time", "rejected_gaps"):
        mapping = {
            _pair(lbl): DecayCurve(
                float(v["amplitude"]), float(v["floor"]), float(v["decay_length"])
            )
            for lbl, v in values.items()
        }
        return WaitingTime(mapping) if kind == "waiting_time" else RejectedGaps(mapping)
    if kind == "bi_valued":
        return BiValued(
            {
                _pair(lbl): BiLevel(float(v["zero_wait"]), float(v["positive_wait"]))
                for lbl, v in values.items()
            }
        )
    raise UsageError(f"unknown spec kind {kind!r} in serialized result")


def _pair(label: str) -> tuple[str, str]:
    parts = label.split(",")
    if len(parts) != 2:
        raise UsageError(f"class pair label {label!r} is not 'subject,opposing'")
    return (parts[0], parts[1])


def fit_result_to_dict(result: FitResult) -> dict:
    config = result.config
    payload = {
        "format": _FORMAT,
        "version": _VERSION,
        "config": {
            "model": config.model,
            "relax_alpha_bound": config.relax_alpha_bound,
            "multistart": config.multistart,
            "xatol": config.xatol,
            "fatol": config.fatol,
            "gtol": config.gtol,
            "maxfev": config.maxfev,
            "nodes": config.nodes,
            "seed": config.seed,
            "polish": config.polish,
            "threads": config.threads,
            "resample_unit": config.resample_unit,
        },
        "perception": {
            "alpha_over_beta": result.perception.alpha_over_beta,
            "k": result.perception.k,
            "v": result.perception.v,
            "bias_bound_relaxed": result.perception.bias_bound_relaxed,
        },
        "model": _spec_to_dict(result.spec),
        "fit": {
            "max_ll": result.max_ll,
            "converged": result.converged,
            "n_obs": result.n_obs,
            "n_vehicles": result.n_vehicles,
            "n_params": result.n_params,
            "aic": result.aic,
            "boundary_flags": list(result.boundary_flags),
            "gradient_inf_norm": result.gradient_inf_norm,
            "clamp_count": result.clamp_count,
        },
        "parameters": result.param_values,
        "emulator_gaps": result.emulator_gaps,
        "data_fingerprint": result.data_fingerprint,
        "gap_sample": list(result.gap_sample),
        "bootstrap": None,
    }
    if result.bootstrap_info is not None:
        payload["bootstrap"] = {
            **result.bootstrap_info,
            "standard_errors": result.standard_errors,
            "confidence_intervals": {
                name: list(ci) for name, ci in (result.confidence_intervals or {}).items()
            },
        }
    return payload


def fit_result_from_dict(payload: dict) -> FitResult:
    if payload.get("format") != _FORMAT:
        raise UsageError(f"not a fit-result document (format={payload.get('format')!r})")
    if payload.get("version") != _VERSION:
        raise UsageError(f"unsupported fit-result version {payload.get('version')!r}")
    config = FitConfig(**payload["config"])
    perception = PerceptionParams(**payload["perception"])
    spec = _spec_from_dict(payload["model"])
    fit_block = payload["fit"]
    boot = payload.get("bootstrap")
    ses = cis = info = None
    if boot is not None:
        ses = {k: float(v) for k, v in boot["standard_errors"].items()}
        cis = {k: (float(v[0]), float(v[1])) for k, v in boot["confidence_intervals"].items()}
        info = {k: boot[k] for k in ("n_replicates", "n_dropped", "seed", "resample_unit")}
    return FitResult(
        perception=perception,
        spec=spec,
        max_ll=float(fit_block["max_ll"]),
        converged=bool(fit_block["converged"]),
        n_obs=int(fit_block["n_obs"]),
        n_vehicles=int(fit_block["n_vehicles"]),
        n_params=int(fit_block["n_params"]),
        aic=float(fit_block["aic"]),
        boundary_flags=tuple(fit_block["boundary_flags"]),
        gradient_inf_norm=float(fit_block["gradient_inf_norm"]),
        clamp_count=int(fit_block["clamp_count"]),
        config=config,
        data_fingerprint=str(payload["data_fingerprint"]),
        param_values={k: float(v) for k, v in payload["parameters"].items()},
        emulator_gaps={k: float(v) for k, v in payload["emulator_gaps"].items()},
        gap_sample=tuple(float(g) for g in payload["gap_sample"]),
        standard_errors=ses,
        confidence_intervals=cis,
        bootstrap_info=info,
    )


def dump_fit_result(result: FitResult, path) -> None:
    Path(path).write_text(
        json.dumps(fit_result_to_dict(result), sort_keys=True, indent=2) + "\n",
        encoding="utf-8",
    )


def load_fit_result(path) -> FitResult:
    return fit_result_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
