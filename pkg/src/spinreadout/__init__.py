"""Forward models and fits for dispersive readout of a spin ensemble coupled
to a superconducting microresonator."""

__version__ = "0.1.0"

from .core_model import (
    QGaussianShape,
    RelaxationComponent,
    ResonatorParams,
    SpinEnsembleParams,
    cooperativity,
    dispersive_shift,
    dispersive_validity,
    hz_to_rad,
    purcell_rate,
    qgaussian_density,
    rad_to_hz,
    zeeman_frequency,
)
from .exceptions import (
    ConfigurationError,
    DomainError,
    FitError,
    RankDeficiencyError,
    SpinReadoutError,
    StepSizeError,
)

__all__ = [
    "ConfigurationError",
    "DomainError",
    "FitError",
    "QGaussianShape",
    "RankDeficiencyError",
    "RelaxationComponent",
    "ResonatorParams",
    "SpinEnsembleParams",
    "SpinReadoutError",
    "StepSizeError",
    "cooperativity",
    "dispersive_shift",
    "dispersive_validity",
    "hz_to_rad",
    "purcell_rate",
    "qgaussian_density",
    "rad_to_hz",
    "zeeman_frequency",
]
