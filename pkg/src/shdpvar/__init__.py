"""Sticky HDP switching-VAR hidden Markov models for skill identification
and anomaly detection in robot manipulation."""
__version__ = "0.1.0"

from ._backend import backend_name
from .errors import (
    ChecksumError,
    ConfigurationError,
    DataError,
    FormatVersionError,
    InsufficientDataError,
    InsufficientHistoryError,
    InvalidParameterError,
    LibraryLoadError,
    NumericalError,
    ShapeError,
    ShdpError,
)
from .inference import GibbsConfig, GibbsDiagnostics, GibbsSampler, fit
from .introspection import (
    IntrospectionReport,
    LikelihoodCurve,
    MonitorState,
    SkillLibrary,
    SkillModel,
    build_curve,
    build_library,
    classify_step,
    decision_time,
    detect_anomaly_step,
    monitor_stream,
)
from .model import (
    ObservationSequence,
    SHDPVARModel,
    StickyHDPState,
    VAREmission,
    forward_cumulative_loglik,
    sample_trajectory,
)
from .stats import rng_stream

__all__ = [
    "__version__",
    "GibbsConfig",
    "GibbsDiagnostics",
    "GibbsSampler",
    "fit",
    "ChecksumError",
    "ConfigurationError",
    "DataError",
    "FormatVersionError",
    "InsufficientDataError",
    "InsufficientHistoryError",
    "InvalidParameterError",
    "LibraryLoadError",
    "NumericalError",
    "ShapeError",
    "ShdpError",
    "IntrospectionReport",
    "LikelihoodCurve",
    "MonitorState",
    "SkillLibrary",
    "SkillModel",
    "build_curve",
    "build_library",
    "classify_step",
    "decision_time",
    "detect_anomaly_step",
    "monitor_stream",
    "ObservationSequence",
    "SHDPVARModel",
    "StickyHDPState",
    "VAREmission",
    "forward_cumulative_loglik",
    "sample_trajectory",
    "backend_name",
    "rng_stream",
]
