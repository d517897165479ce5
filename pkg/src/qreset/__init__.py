"""First detection of a tight-binding quantum walker under stroboscopic measurement and restart."""

from .detection import AmplitudeCache, DetectionSeries, detection_amplitudes, detection_series
from .errors import (
    BudgetError,
    DivergentFdtError,
    FitError,
    InputDomainError,
    ParameterError,
    QResetError,
    SeriesLengthError,
)
from .fdt import mean_fdt, optimal_restart
from .propagation import LatticeConfig, peak_offset
from .protocols import IPR, MPR, AdaptiveMPR, make_schedule, series_under_restart

__version__ = "0.1.0"

__all__ = [
    "IPR",
    "MPR",
    "AdaptiveMPR",
    "AmplitudeCache",
    "BudgetError",
    "DetectionSeries",
    "DivergentFdtError",
    "FitError",
    "InputDomainError",
    "LatticeConfig",
    "ParameterError",
    "QResetError",
    "SeriesLengthError",
    "detection_amplitudes",
    "detection_series",
    "make_schedule",
    "mean_fdt",
    "optimal_restart",
    "peak_offset",
    "series_under_restart",
]
