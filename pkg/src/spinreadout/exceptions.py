"""Exception types shared across the toolkit."""


class SpinReadoutError(Exception):
    """Base class for all toolkit errors."""


class DomainError(SpinReadoutError, ValueError):
    """An argument lies outside the domain of a physical relation."""


class ConfigurationError(SpinReadoutError, ValueError):
    """Invalid experiment or discretisation configuration."""


class StepSizeError(SpinReadoutError, ValueError):
    """Integration step too coarse for the rotating-frame dynamics."""


class DispersiveWarning(UserWarning):
    """A bin or parameter set violates the dispersive approximation."""


class QuasiStaticWarning(UserWarning):
    """Shift dynamics are too fast for a quasi-static resonator response."""


class FitError(SpinReadoutError, RuntimeError):
    """Nonlinear least-squares failure.

    ``diagnostics`` carries whatever was known when the fit gave up
    (parameter snapshot, residual norm, iteration count).
    """

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})


class RankDeficiencyError(FitError):
    """Normal equations are singular at the current iterate."""


class FitWarning(UserWarning):
    """Fit converged but the result is degenerate or pinned at a bound."""
