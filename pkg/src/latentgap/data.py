"""Dataset ingestion, validation, serialization, and the synthetic simulator.

CSV schema (UTF-8, header required):
``vehicle_id,gap_index,gap_size_s,subject_class,opposing_class,waiting_time_s,rejected_count,accepted``
with ``accepted`` in {0,1}. Class label sets default to subjects {2,4} and
opposing {S,B}; a sidecar JSON named ``<data.csv>.classes.json`` with keys
``subject_classes`` / ``opposing_classes`` overrides them.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Optional, Sequence, Union

import numpy as np

from .errors import DataError, DomainError, SimulationError
from .gapdist import GapDistribution
from .models import (
    BiValued,
    Constant,
    CriticalGapSpec,
    GapObservation,
    RejectedGaps,
    WaitingTime,
    tau_scaled_at,
)
from .perception import PerceptionParams

__all__ = [
    "CSV_COLUMNS",
    "ClassSets",
    "DEFAULT_CLASS_SETS",
    "Dataset",
    "as_observations",
    "load_csv",
    "save_csv",
    "simulate",
    "GAP_CAP",
]

CSV_COLUMNS = (
    "vehicle_id",
    "gap_index",
    "gap_size_s",
    "subject_class",
    "opposing_class",
    "waiting_time_s",
    "rejected_count",
    "accepted",
)

# A vehicle rejecting this many gaps indicates a non-terminating configuration.
GAP_CAP = 10_000


@dataclass(frozen=True)
class ClassSets:
    """Declared vehicle class labels for validation."""

    subject: tuple[str, ...] = ("2", "4")
    opposing: tuple[str, ...] = ("S", "B")

    def __post_init__(self) -> None:
        if not self.subject or not self.opposing:
            raise DataError("class sets must be nonempty")
        if len(set(self.subject)) != len(self.subject) or len(set(self.opposing)) != len(self.opposing):
            raise DataError("class sets must not contain duplicates")


DEFAULT_CLASS_SETS = ClassSets()


@dataclass(frozen=True)
class Dataset:
    """Validated observations plus the class sets they were checked against."""

    observations: tuple[GapObservation, ...]
    class_sets: ClassSets = DEFAULT_CLASS_SETS

    @property
    def n_obs(self) -> int:
        return len(self.observations)

    @property
    def vehicle_ids(self) -> tuple[str, ...]:
        seen: dict[str, None] = {}
        for o in self.observations:
            seen.setdefault(o.vehicle_id, None)
        return tuple(seen)

    @property
    def n_vehicles(self) -> int:
        return len({o.vehicle_id for o in self.observations})

    def gap_sizes(self) -> np.ndarray:
        return np.array([o.gap_size for o in self.observations])


DataLike = Union[Dataset, Sequence[GapObservation]]


def as_observations(data: DataLike) -> tuple[GapObservation, ...]:
    if isinstance(data, Dataset):
        return data.observations
    return tuple(data)


def _canonical_rows(observations: Sequence[GapObservation]) -> list[GapObservation]:
    return sorted(observations, key=lambda o: (o.vehicle_id, o.gap_index))


def _validate_vehicle(rows: list[tuple[int, GapObservation]]) -> None:
    """Check one vehicle's sequence; rows are (csv_line, observation)."""
    rows = sorted(rows, key=lambda item: item[1].gap_index)
    indices = [o.gap_index for _, o in rows]
    if len(set(indices)) != len(indices):
        line = rows[0][0]
        raise DataError(f"row {line}: vehicle {rows[0][1].vehicle_id!r} repeats a gap_index")
    first_line, first = rows[0]
    if first.waiting_time != 0.0:
        raise DataError(f"row {first_line}: first gap must have waiting_time_s = 0")
    if first.rejected_count != 0:
        raise DataError(f"row {first_line}: first gap must have rejected_count = 0")
    prev_wait = 0.0
    for position, (line, o) in enumerate(rows):
        last = position == len(rows) - 1
        if o.accepted != last:
            raise DataError(
                f"row {line}: vehicle {o.vehicle_id!r} must reject every gap except the"
                " final accepted one"
            )
        if o.rejected_count != position:
            raise DataError(
                f"row {line}: rejected_count must equal the number of previously"
                f" rejected gaps ({position}), got {o.rejected_count}"
            )
        if o.waiting_time < prev_wait:
            raise DataError(f"row {line}: waiting_time_s decreased along the sequence")
        prev_wait = o.waiting_time


def _validate_dataset(
    numbered: Sequence[tuple[int, GapObservation]], class_sets: ClassSets
) -> None:
    subjects = set(class_sets.subject)
    opposing = set(class_sets.opposing)
    by_vehicle: dict[str, list[tuple[int, GapObservation]]] = {}
    for line, o in numbered:
        if o.subject_class not in subjects:
            raise DataError(
                f"row {line}: unknown subject class {o.subject_class!r};"
                f" declared set is {sorted(subjects)}"
            )
        if o.opposing_class not in opposing:
            raise DataError(
                f"row {line}: unknown opposing class {o.opposing_class!r};"
                f" declared set is {sorted(opposing)}"
            )
        by_vehicle.setdefault(o.vehicle_id, []).append((line, o))
    for rows in by_vehicle.values():
        _validate_vehicle(rows)


def _sidecar_path(path: Path) -> Path:
    return Path(str(path) + ".classes.json")


def _load_class_sets(path: Path) -> ClassSets:
    sidecar = _sidecar_path(path)
    if not sidecar.exists():
        return DEFAULT_CLASS_SETS
    try:
        payload = json.loads(sidecar.read_text(encoding="utf-8"))
        return ClassSets(
            subject=tuple(str(s) for s in payload["subject_classes"]),
            opposing=tuple(str(s) for s in payload["opposing_classes"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"malformed class sidecar {sidecar}: {exc}") from exc


def load_csv(path, class_sets: Optional[ClassSets] = None) -> Dataset:
    """Read and fully validate a gap-observation CSV."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"no such file: {path}")
    if class_sets is None:
        class_sets = _load_class_sets(path)
    numbered: list[tuple[int, GapObservation]] = []
    with path.open(newline="", encoding="utf-8") as handle:
        reader = csv.reader(handle)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: file is empty") from None
        if tuple(header) != CSV_COLUMNS:
            raise DataError(
                f"{path}: header mismatch; expected {','.join(CSV_COLUMNS)},"
                f" got {','.join(header)}"
            )
        for line_no, row in enumerate(reader, start=2):
            if len(row) != len(CSV_COLUMNS):
                raise DataError(f"row {line_no}: expected {len(CSV_COLUMNS)} fields, got {len(row)}")
            try:
                obs = GapObservation(
                    vehicle_id=row[0],
                    gap_index=int(row[1]),
                    gap_size=float(row[2]),
                    subject_class=row[3],
                    opposing_class=row[4],
                    waiting_time=float(row[5]),
                    rejected_count=int(row[6]),
                    accepted=_parse_accepted(row[7]),
                )
            except DataError as exc:
                raise DataError(f"row {line_no}: {exc}") from None
            except ValueError as exc:
                raise DataError(f"row {line_no}: {exc}") from None
            numbered.append((line_no, obs))
    if not numbered:
        raise DataError(f"{path}: no data rows")
    _validate_dataset(numbered, class_sets)
    observations = tuple(_canonical_rows([o for _, o in numbered]))
    return Dataset(observations=observations, class_sets=class_sets)


def _parse_accepted(text: str) -> bool:
    if text == "1":
        return True
    if text == "0":
        return False
    raise ValueError(f"accepted must be 0 or 1, got {text!r}")


def _format_float(x: float) -> str:
    return repr(float(x))


def save_csv(data: DataLike, path) -> None:
    """Write observations in canonical order; floats keep full precision.

    If the dataset declares non-default class sets, a sidecar JSON is written
    next to the file so a reload validates against the same sets.
    """
    path = Path(path)
    observations = _canonical_rows(as_observations(data))
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for o in observations:
            writer.writerow(
                [
                    o.vehicle_id,
                    o.gap_index,
                    _format_float(o.gap_size),
                    o.subject_class,
                    o.opposing_class,
                    _format_float(o.waiting_time),
                    o.rejected_count,
                    1 if o.accepted else 0,
                ]
            )
    class_sets = data.class_sets if isinstance(data, Dataset) else DEFAULT_CLASS_SETS
    if class_sets != DEFAULT_CLASS_SETS:
        sidecar = _sidecar_path(path)
        payload = {
            "subject_classes": list(class_sets.subject),
            "opposing_classes": list(class_sets.opposing),
        }
        sidecar.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def _normalize_mix(class_mix: Mapping) -> dict[tuple[str, str], float]:
    mix: dict[tuple[str, str], float] = {}
    for key, prob in class_mix.items():
        if isinstance(key, str):
            parts = key.split(",")
            if len(parts) != 2:
                raise DomainError(f"class mix key {key!r} is not 'subject,opposing'")
            pair = (parts[0], parts[1])
        else:
            pair = (str(key[0]), str(key[1]))
        prob = float(prob)
        if prob < 0.0 or not math.isfinite(prob):
            raise DomainError(f"class mix probability for {pair} must be >= 0, got {prob}")
        if prob > 0.0:
            mix[pair] = mix.get(pair, 0.0) + prob
    total = sum(mix.values())
    if abs(total - 1.0) > 1e-9:
        raise DomainError(f"class mix probabilities must sum to 1, got {total}")
    return mix


def simulate(
    true_perception: PerceptionParams,
    true_spec: CriticalGapSpec,
    d: GapDistribution,
    class_mix: Mapping,
    n_vehicles: int,
    seed: int,
    class_sets: Optional[ClassSets] = None,
    gap_cap: int = GAP_CAP,
) -> Dataset:
    """Generate a synthetic dataset under the model.

    Each vehicle draws its subject class once, then faces gaps until the
    perceived gap exceeds the applicable threshold; opposing class, gap size,
    gap perception error, and (when needed) waiting-time perception error are
    drawn per gap, in that fixed order. The waiting time accumulates the
    sizes of previously rejected gaps. Vehicle ``i`` uses an RNG stream
    derived from ``(seed, i)``, so output is independent of evaluation order
    and the first n vehicles of a larger run are reproduced exactly.
    """
    if n_vehicles < 1:
        raise DomainError(f"n_vehicles must be >= 1, got {n_vehicles}")
    if seed < 0 or int(seed) != seed:
        raise DomainError(f"seed must be a nonnegative integer, got {seed!r}")
    mix = _normalize_mix(class_mix)
    subjects = sorted({s for s, _ in mix})
    opposing_all = sorted({o for _, o in mix})
    if class_sets is None:
        class_sets = ClassSets(subject=tuple(subjects), opposing=tuple(opposing_all))

    p_subject = {s: sum(pr for (s2, _), pr in mix.items() if s2 == s) for s in subjects}
    cond: dict[str, list[tuple[str, float]]] = {}
    for s in subjects:
        pairs = [(o, mix.get((s, o), 0.0) / p_subject[s]) for o in opposing_all]
        cond[s] = [(o, pr) for o, pr in pairs if pr > 0.0]

    law = true_perception.error_law
    mu, sigma = law.mu, law.sigma
    ab, k = true_perception.alpha_over_beta, true_perception.k
    is_waiting = isinstance(true_spec, WaitingTime)

    def pick(choices: list[tuple[str, float]], u: float) -> str:
        acc = 0.0
        for label, pr in choices:
            acc += pr
            if u <= acc:
                return label
        return choices[-1][0]

    subject_choices = [(s, p_subject[s]) for s in subjects]
    observations: list[GapObservation] = []
    width = max(6, len(str(n_vehicles - 1)))
    for i in range(n_vehicles):
        rng = np.random.default_rng(np.random.SeedSequence([seed, i]))
        subject = pick(subject_choices, rng.random())
        vid = f"v{i:0{width}d}"
        wait = 0.0
        for j in range(gap_cap):
            opposing = pick(cond[subject], rng.random())
            gap = d.sample(rng)
            eps = rng.lognormal(mu, sigma)
            perceived_gap = (ab * math.exp(-gap / k) + 1.0) * gap * eps
            if is_waiting:
                if wait > 0.0:
                    eta = rng.lognormal(mu, sigma)
                    perceived_wait = (ab * math.exp(-wait / k) + 1.0) * wait * eta
                else:
                    perceived_wait = 0.0
                tau = tau_scaled_at(true_spec, _key_for(true_spec, subject, opposing), w_p=perceived_wait)
            elif isinstance(true_spec, RejectedGaps):
                tau = tau_scaled_at(true_spec, _key_for(true_spec, subject, opposing), r=j)
            elif isinstance(true_spec, BiValued):
                tau = tau_scaled_at(true_spec, _key_for(true_spec, subject, opposing), w=wait)
            else:
                tau = tau_scaled_at(true_spec, _key_for(true_spec, subject, opposing))
            accepted = perceived_gap > tau
            observations.append(
                GapObservation(
                    vehicle_id=vid,
                    gap_index=j,
                    gap_size=gap,
                    subject_class=subject,
                    opposing_class=opposing,
                    waiting_time=wait,
                    rejected_count=j,
                    accepted=bool(accepted),
                )
            )
            if accepted:
                break
            wait += gap
        else:
            raise SimulationError(
                f"vehicle {vid} rejected {gap_cap} gaps; spec {true_spec.kind} with"
                f" perception {true_perception} leaves no acceptable gaps"
            )
    return Dataset(observations=tuple(_canonical_rows(observations)), class_sets=class_sets)


def _key_for(spec: CriticalGapSpec, subject: str, opposing: str):
    from .models import ClassKey

    if isinstance(spec, Constant):
        return ClassKey(subject)
    return ClassKey(subject, opposing)
