"""Auxiliary-function source extraction from multichannel STFT mixtures.

Blind and steering-informed variants of independent vector extraction,
plus scenario synthesis, SDR scoring, and benchmarking utilities.
"""

__version__ = "0.1.0"

from .evaluation import (
    SdrReport,
    ZeroReference,
    bench_run,
    compute_sdr,
    match_and_score,
)
from .linalg import NotPositiveDefinite, SingularMatrix
from .model import GGDModel, nll_value, source_signals, surrogate_value
from .runner import (
    VARIANTS,
    CovarianceSet,
    DemixingSystem,
    ExtractionConfig,
    ExtractionResult,
    SteeringSet,
    TrajectoryLog,
    run_extraction,
)
from .simulate import (
    Scenario,
    ZeroImage,
    estimate_steering,
    load_scenario,
    load_steering,
    make_scenario,
    sample_sources,
    save_scenario,
)
from .stft import ConfigMismatch, StftConfig, TooShort, analyze, synthesize

__all__ = [
    "__version__",
    "GGDModel",
    "nll_value",
    "source_signals",
    "surrogate_value",
    "StftConfig",
    "analyze",
    "synthesize",
    "TooShort",
    "ConfigMismatch",
    "VARIANTS",
    "ExtractionConfig",
    "ExtractionResult",
    "DemixingSystem",
    "CovarianceSet",
    "SteeringSet",
    "TrajectoryLog",
    "run_extraction",
    "Scenario",
    "make_scenario",
    "sample_sources",
    "estimate_steering",
    "save_scenario",
    "load_scenario",
    "load_steering",
    "ZeroImage",
    "SdrReport",
    "compute_sdr",
    "match_and_score",
    "bench_run",
    "ZeroReference",
    "SingularMatrix",
    "NotPositiveDefinite",
]
