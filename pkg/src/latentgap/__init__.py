"""Latent critical-gap estimation with perceptual time distortion.

Estimates driver gap-acceptance models in which observed gap durations are
perceived through a multiplicative bias and a lognormal error, converts the
latent thresholds into observable-world emulator critical gaps, and derives
expected waiting times. Includes classical estimators (Raff, Ashworth,
maximum-likelihood on accepted/rejected intervals) for comparison, a
seed-deterministic simulator, and a CLI.
"""

from .baselines import TroutbeckResult, ashworth, raff, troutbeck
from .data import (
    CSV_COLUMNS,
    ClassSets,
    DEFAULT_CLASS_SETS,
    Dataset,
    load_csv,
    save_csv,
    simulate,
)
from .emulator import emulator_gap, emulator_profile, rejection_mass
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
    LatentGapError,
    NumericError,
    SimulationError,
    UsageError,
)
from .estimation import (
    BootstrapSummary,
    FitConfig,
    FitResult,
    LrTestResult,
    MODEL_KINDS,
    attach_bootstrap,
    bootstrap,
    dump_fit_result,
    fit,
    fit_result_from_dict,
    fit_result_to_dict,
    load_fit_result,
    lr_test,
)
from .gapdist import (
    EmpiricalGaps,
    ExponentialGaps,
    GAP_FAMILIES,
    GapDistribution,
    LognormalGaps,
)
from .gapdist import fit as fit_gap_distribution
from .models import (
    BiLevel,
    BiValued,
    BySubject,
    BySubjectOpposing,
    ClassKey,
    Constant,
    CriticalGapSpec,
    DecayCurve,
    GapObservation,
    MODEL_RANK,
    RejectedGaps,
    WaitingTime,
    accept_prob,
    log_likelihood,
    tau_scaled_at,
)
from .numerics import UnitMeanLognormal, lognormal_cdf, lognormal_expectation
from .perception import ALPHA_OVER_BETA_MAX, PerceptionParams, sample_perceived, scaled_bias
from .waiting import c_awt, o_awt

__version__ = "0.1.0"

__all__ = [
    "ALPHA_OVER_BETA_MAX",
    "BiLevel",
    "BiValued",
    "BootstrapError",
    "BootstrapSummary",
    "BracketError",
    "BySubject",
    "BySubjectOpposing",
    "CSV_COLUMNS",
    "ClassKey",
    "ClassSets",
    "ConfigurationError",
    "Constant",
    "CriticalGapSpec",
    "DEFAULT_CLASS_SETS",
    "DataError",
    "Dataset",
    "DecayCurve",
    "DomainError",
    "EmpiricalGaps",
    "EmulatorRangeError",
    "EstimatorError",
    "ExponentialGaps",
    "FitConfig",
    "FitError",
    "FitResult",
    "GAP_FAMILIES",
    "GapDistribution",
    "GapObservation",
    "InfiniteWaitError",
    "LatentGapError",
    "LognormalGaps",
    "LrTestResult",
    "MODEL_KINDS",
    "MODEL_RANK",
    "NumericError",
    "PerceptionParams",
    "RejectedGaps",
    "SimulationError",
    "TroutbeckResult",
    "UnitMeanLognormal",
    "UsageError",
    "WaitingTime",
    "accept_prob",
    "ashworth",
    "attach_bootstrap",
    "bootstrap",
    "c_awt",
    "dump_fit_result",
    "emulator_gap",
    "emulator_profile",
    "fit",
    "fit_gap_distribution",
    "fit_result_from_dict",
    "fit_result_to_dict",
    "load_csv",
    "load_fit_result",
    "log_likelihood",
    "lognormal_cdf",
    "lognormal_expectation",
    "lr_test",
    "o_awt",
    "raff",
    "rejection_mass",
    "sample_perceived",
    "save_csv",
    "scaled_bias",
    "simulate",
    "tau_scaled_at",
    "troutbeck",
    "__version__",
]
