"""Command-line interface.

Subcommands cover the full pipeline: validate data, fit a model, export
emulator-gap values or profiles, compare waiting times, run classical
baseline estimators, test nested models, and generate synthetic data.

Exit codes: 0 success, 2 data/domain error, 3 convergence error, 4 usage
error. Failures print one ``ExceptionType: message`` line on stderr.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .baselines import ashworth, raff, troutbeck
from .data import Dataset, load_csv, save_csv, simulate
from .emulator import emulator_gap, emulator_profile
from .errors import (
    BootstrapError,
    BracketError,
    ConfigurationError,
    DataError,
    DomainError,
    EmulatorRangeError,
    EstimatorError,
    FitError,
    InfiniteWaitError,
    NumericError,
    SimulationError,
    UsageError,
)
from .estimation import (
    FitConfig,
    attach_bootstrap,
    bootstrap,
    dump_fit_result,
    fit,
    load_fit_result,
    lr_test,
)
from .estimation import _emulator_labels, _spec_from_dict
from .gapdist import EmpiricalGaps, GapDistribution
from .gapdist import fit as fit_gap_distribution
from .models import ClassKey, RejectedGaps, WaitingTime
from .perception import PerceptionParams
from .waiting import c_awt, o_awt

__all__ = ["main"]

_MODEL_NAMES = {
    "const": "constant",
    "s": "by_subject",
    "so": "by_subject_opposing",
    "sow": "waiting_time",
    "sor": "rejected_gaps",
    "so2": "bi_valued",
}

_USAGE_ERRORS = (UsageError, ConfigurationError, BracketError, EmulatorRangeError)
_CONVERGENCE_ERRORS = (FitError, BootstrapError, NumericError, SimulationError)
_DATA_ERRORS = (DataError, DomainError, EstimatorError, InfiniteWaitError)


class _Parser(argparse.ArgumentParser):
    """Raises instead of exiting so errors flow through one handler."""

    def error(self, message: str):
        raise UsageError(message)


def _default_threads() -> int:
    raw = os.environ.get("LATENTGAP_THREADS", "1")
    try:
        value = int(raw)
    except ValueError:
        raise UsageError(f"LATENTGAP_THREADS must be an integer, got {raw!r}")
    if value < 1:
        raise UsageError(f"LATENTGAP_THREADS must be >= 1, got {value}")
    return value


def _build_parser() -> _Parser:
    parser = _Parser(prog="latentgap", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p_validate = sub.add_parser("validate", help="check a CSV dataset and report its shape")
    p_validate.add_argument("data", help="observations CSV")

    p_fit = sub.add_parser("fit", help="maximum-likelihood fit of one model")
    p_fit.add_argument("data", help="observations CSV")
    p_fit.add_argument("--model", required=True, choices=sorted(_MODEL_NAMES))
    p_fit.add_argument(
        "--dist",
        default="empirical",
        choices=("empirical", "exp", "lognormal"),
        help="gap-size law used for emulator gaps (default: empirical)",
    )
    p_fit.add_argument("--relax-alpha", action="store_true", help="lift the bias-ratio cap")
    p_fit.add_argument("--bootstrap", type=int, default=0, metavar="B", help="bootstrap replicates")
    p_fit.add_argument("--seed", type=int, default=0)
    p_fit.add_argument("--nodes", type=int, default=64, help="quadrature nodes")
    p_fit.add_argument("--multistart", type=int, default=8)
    p_fit.add_argument("--threads", type=int, default=None)
    p_fit.add_argument("-o", "--output", required=True, help="result JSON path")

    p_emu = sub.add_parser("emulator", help="emulator critical gaps from a fit result")
    p_emu.add_argument("result", help="fit result JSON")
    p_emu.add_argument("--w-grid", metavar="A:B[:STEP]", help="waiting-time grid (seconds)")
    p_emu.add_argument("--r-grid", metavar="A:B[:STEP]", help="rejected-count grid")
    p_emu.add_argument("-o", "--output", required=True, help="profile CSV path")

    p_awt = sub.add_parser("awt", help="computed vs observed average waiting times")
    p_awt.add_argument("result", help="fit result JSON")
    p_awt.add_argument("data", help="observations CSV")

    p_base = sub.add_parser("baseline", help="classical estimators next to the latent fit")
    p_base.add_argument("data", help="observations CSV")
    p_base.add_argument("--flow", type=float, required=True, help="opposing flow (veh/s)")
    p_base.add_argument("--seed", type=int, default=0)

    p_lr = sub.add_parser("lrtest", help="likelihood-ratio test of nested fits")
    p_lr.add_argument("restricted", help="restricted-model result JSON")
    p_lr.add_argument("unrestricted", help="unrestricted-model result JSON")

    p_sim = sub.add_parser("simulate", help="generate synthetic observations")
    p_sim.add_argument("--params", required=True, help="truth JSON")
    p_sim.add_argument("--n", type=int, required=True, help="number of vehicles")
    p_sim.add_argument("--seed", type=int, default=0)
    p_sim.add_argument("-o", "--output", required=True, help="output CSV path")

    return parser


def _florepr(x: float) -> str:
    return repr(float(x))


# ---------------------------------------------------------------------------
# Subcommand bodies
# ---------------------------------------------------------------------------


def _cmd_validate(args) -> int:
    dataset = load_csv(args.data)
    gaps = dataset.gap_sizes()
    accepted = sum(1 for o in dataset.observations if o.accepted)
    lines = [
        f"rows={dataset.n_obs}",
        f"vehicles={dataset.n_vehicles}",
        f"accepted={accepted}",
        f"rejected={dataset.n_obs - accepted}",
        f"gap_mean={_florepr(np.mean(gaps))}",
        f"gap_min={_florepr(np.min(gaps))}",
        f"gap_max={_florepr(np.max(gaps))}",
        f"subject_classes={','.join(dataset.class_sets.subject)}",
        f"opposing_classes={','.join(dataset.class_sets.opposing)}",
        "ok",
    ]
    print("\n".join(lines))
    return 0


def _emulator_distribution(name: str, dataset: Dataset) -> Optional[GapDistribution]:
    if name == "empirical":
        return None
    family = "exponential" if name == "exp" else name
    return fit_gap_distribution(dataset.gap_sizes(), family)


def _cmd_fit(args) -> int:
    dataset = load_csv(args.data)
    threads = args.threads if args.threads is not None else _default_threads()
    config = FitConfig(
        model=_MODEL_NAMES[args.model],
        relax_alpha_bound=args.relax_alpha,
        multistart=args.multistart,
        nodes=args.nodes,
        seed=args.seed,
        threads=threads,
    )
    emulator_dist = _emulator_distribution(args.dist, dataset)
    result = fit(dataset, config, emulator_dist=emulator_dist)
    if args.bootstrap:
        summary = bootstrap(dataset, config, args.bootstrap, seed=args.seed, base=result)
        result = attach_bootstrap(result, summary)
    dump_fit_result(result, args.output)
    lines = [
        f"model={config.model}",
        f"log_likelihood={_florepr(result.max_ll)}",
        f"aic={_florepr(result.aic)}",
        f"converged={str(result.converged).lower()}",
        f"n_params={result.n_params}",
    ]
    for name in sorted(result.param_values):
        lines.append(f"{name}={_florepr(result.param_values[name])}")
    for label in sorted(result.emulator_gaps):
        lines.append(f"tau_e[{label}]={_florepr(result.emulator_gaps[label])}")
    lines.append(f"wrote={args.output}")
    print("\n".join(lines))
    return 0


def _parse_grid(text: str, what: str) -> list[float]:
    parts = text.split(":")
    if len(parts) not in (2, 3):
        raise UsageError(f"{what} must look like A:B or A:B:STEP, got {text!r}")
    try:
        start, stop = float(parts[0]), float(parts[1])
        step = float(parts[2]) if len(parts) == 3 else 1.0
    except ValueError:
        raise UsageError(f"{what} has a non-numeric part: {text!r}")
    if step <= 0:
        raise UsageError(f"{what} step must be > 0")
    if stop < start:
        raise UsageError(f"{what} end must be >= start")
    n = int(np.floor((stop - start) / step + 1e-9)) + 1
    return [start + i * step for i in range(n)]


def _cmd_emulator(args) -> int:
    result = load_fit_result(args.result)
    if args.w_grid and args.r_grid:
        raise UsageError("choose one of --w-grid and --r-grid")
    d = EmpiricalGaps(np.asarray(result.gap_sample))
    rows: list[tuple[str, str, float]] = []
    if args.w_grid or args.r_grid:
        spec = result.spec
        if args.w_grid and not isinstance(spec, WaitingTime):
            raise UsageError("--w-grid needs a waiting-time model fit")
        if args.r_grid and not isinstance(spec, RejectedGaps):
            raise UsageError("--r-grid needs a rejected-gaps model fit")
        grid = _parse_grid(args.w_grid or args.r_grid, "--w-grid" if args.w_grid else "--r-grid")
        pairs = sorted(spec.params_by_class)
        for s, o in pairs:
            profile = emulator_profile(
                spec, ClassKey(s, o), result.perception, d, grid, nodes=result.config.nodes
            )
            rows.extend((f"{s},{o}", _florepr(x), tau_e) for x, tau_e in profile)
    else:
        for label, key, conditioning in _emulator_labels(result.spec):
            class_key, _, cond = label.partition("|")
            tau_e = emulator_gap(
                result.spec, key, result.perception, d, nodes=result.config.nodes, **conditioning
            )
            rows.append((class_key, cond, tau_e))
    with open(args.output, "w", encoding="utf-8", newline="") as handle:
        handle.write("class_key,conditioning_value,tau_e\n")
        for class_key, cond, tau_e in rows:
            handle.write(f'"{class_key}",{cond},{_florepr(tau_e)}\n')
    print(f"wrote={args.output}")
    return 0


def _cmd_awt(args) -> int:
    result = load_fit_result(args.result)
    dataset = load_csv(args.data)
    d = EmpiricalGaps(dataset.gap_sizes())
    lines = []
    for label, key, conditioning in _emulator_labels(result.spec):
        tau_e = emulator_gap(
            result.spec, key, result.perception, d, nodes=result.config.nodes, **conditioning
        )
        lines.append(f"tau_e[{label}]={_florepr(tau_e)}")
        lines.append(f"c_awt[{label}]={_florepr(c_awt(tau_e, d))}")
    subjects = sorted({o.subject_class for o in dataset.observations})
    for s in subjects:
        try:
            lines.append(f"o_awt[{s}]={_florepr(o_awt(dataset.observations, s))}")
        except DataError:
            lines.append(f"o_awt[{s}]=nan")
    lines.append(f"o_awt[all]={_florepr(o_awt(dataset.observations))}")
    print("\n".join(lines))
    return 0


def _cmd_baseline(args) -> int:
    dataset = load_csv(args.data)
    d = EmpiricalGaps(dataset.gap_sizes())
    rows: list[tuple[str, float]] = []
    rows.append(("raff", raff(dataset.observations)))
    rows.append(("ashworth", ashworth(dataset.observations, args.flow)))
    rows.append(("troutbeck", troutbeck(dataset.observations).critical_gap))
    config = FitConfig(model="constant", multistart=4, nodes=32, seed=args.seed)
    fitted = fit(dataset, config)
    rows.append(("proposed", fitted.emulator_gaps["all"]))
    lines = ["method,critical_gap,c_awt"]
    for method, gap in rows:
        try:
            awt_value = _florepr(c_awt(gap, d))
        except (DomainError, InfiniteWaitError):
            awt_value = "nan"
        lines.append(f"{method},{_florepr(gap)},{awt_value}")
    lines.append(f"o_awt,{_florepr(o_awt(dataset.observations))},")
    print("\n".join(lines))
    return 0


def _cmd_lrtest(args) -> int:
    restricted = load_fit_result(args.restricted)
    unrestricted = load_fit_result(args.unrestricted)
    outcome = lr_test(restricted, unrestricted)
    payload = {
        "statistic": outcome.statistic,
        "df": outcome.df,
        "p_value": outcome.p_value,
        "reject_at_0.05": bool(outcome.p_value < 0.05),
    }
    print(json.dumps(payload, sort_keys=True))
    return 0


def _load_truth(path) -> tuple[PerceptionParams, object, GapDistribution, dict]:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    try:
        perception = PerceptionParams(**payload["perception"])
        spec = _spec_from_dict(payload["model"])
        dist_block = dict(payload["gap_distribution"])
        family = dist_block.pop("family")
        class_mix = payload["class_mix"]
    except KeyError as exc:
        raise UsageError(f"truth JSON is missing key {exc.args[0]!r}")
    if family == "empirical":
        d: GapDistribution = EmpiricalGaps(np.asarray(dist_block["gaps"], dtype=float))
    elif family == "exponential":
        from .gapdist import ExponentialGaps

        d = ExponentialGaps(**dist_block)
    elif family == "lognormal":
        from .gapdist import LognormalGaps

        d = LognormalGaps(**dist_block)
    else:
        raise UsageError(f"unknown gap-distribution family {family!r}")
    return perception, spec, d, class_mix


def _cmd_simulate(args) -> int:
    perception, spec, d, class_mix = _load_truth(args.params)
    dataset = simulate(perception, spec, d, class_mix, n_vehicles=args.n, seed=args.seed)
    save_csv(dataset, args.output)
    print(f"vehicles={dataset.n_vehicles}\nrows={dataset.n_obs}\nwrote={args.output}")
    return 0


_COMMANDS = {
    "validate": _cmd_validate,
    "fit": _cmd_fit,
    "emulator": _cmd_emulator,
    "awt": _cmd_awt,
    "baseline": _cmd_baseline,
    "lrtest": _cmd_lrtest,
    "simulate": _cmd_simulate,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except _USAGE_ERRORS as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 4
    except _CONVERGENCE_ERRORS as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 3
    except _DATA_ERRORS as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"DataError: {exc}", file=sys.stderr)
        return 2
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        print(f"DataError: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
