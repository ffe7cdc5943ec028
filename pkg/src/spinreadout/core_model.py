"""Static parameters and closed-form relations for a spin ensemble coupled
to a notch-type microresonator.

All rates and frequencies are angular (rad/s).  Conversion to and from Hz
happens only at the I/O boundary, via :func:`hz_to_rad` / :func:`rad_to_hz`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional, Tuple

import numpy as np
from scipy import constants
from scipy.special import gammaln

from .exceptions import DomainError

TWO_PI = 2.0 * math.pi
MU_B = constants.physical_constants["Bohr magneton"][0]
HBAR = constants.hbar
K_B = constants.k

# q is evaluated by the exact Gaussian formula at q == 1
Q_MIN = 1.0
Q_MAX = 3.0


def hz_to_rad(f):
    return TWO_PI * np.asarray(f, dtype=float) if np.ndim(f) else TWO_PI * float(f)


def rad_to_hz(w):
    return np.asarray(w, dtype=float) / TWO_PI if np.ndim(w) else float(w) / TWO_PI


# ---------------------------------------------------------------------------
# Parameter containers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ResonatorParams:
    """Bare notch resonator.

    ``kappa_i`` and ``kappa_c`` enter the transmission as
    ``1 + kappa_c / (i(w - omega0) - (kappa_i + kappa_c))``.
    """

    omega0: float
    kappa_i: float
    kappa_c: float

    def __post_init__(self):
        if not self.omega0 > 0:
            raise DomainError(f"omega0 must be positive, got {self.omega0}")
        if not self.kappa_i >= 0:
            raise DomainError(f"kappa_i must be non-negative, got {self.kappa_i}")
        if not self.kappa_c > 0:
            raise DomainError(f"kappa_c must be positive, got {self.kappa_c}")

    @property
    def kappa(self) -> float:
        return self.kappa_i + self.kappa_c

    @property
    def quality_factor(self) -> float:
        return self.omega0 / self.kappa

    def shifted(self, delta_omega: float) -> "ResonatorParams":
        return replace(self, omega0=self.omega0 + delta_omega)


@dataclass(frozen=True)
class QGaussianShape:
    """Spectral density parameterised by centre, FWHM and shape ``q``.

    q = 1 is the Gaussian, q = 2 the Lorentzian; heavier tails as q -> 3.
    """

    omega_s: float
    fwhm: float
    q: float = 2.0

    def __post_init__(self):
        if not self.fwhm > 0:
            raise DomainError(f"fwhm must be positive, got {self.fwhm}")
        if not (Q_MIN <= self.q < Q_MAX):
            raise DomainError(f"q must lie in [1, 3), got {self.q}")

    def recentred(self, omega_s: float) -> "QGaussianShape":
        return replace(self, omega_s=omega_s)


@dataclass(frozen=True)
class RelaxationComponent:
    amplitude: float
    t1: float
    lineshape: Optional[QGaussianShape] = None

    def __post_init__(self):
        if not (0.0 <= self.amplitude <= 1.0):
            raise DomainError(f"amplitude must lie in [0, 1], got {self.amplitude}")
        if not self.t1 > 0:
            raise DomainError(f"t1 must be positive, got {self.t1}")


@dataclass(frozen=True)
class SpinEnsembleParams:
    """Inhomogeneously broadened S=1/2 ensemble.

    ``lineshape.fwhm`` doubles as the inhomogeneous linewidth gamma2* in the
    input-output transmission.  ``gamma2`` is the homogeneous (per-bin)
    dephasing rate used by the Bloch-equation integrator.
    """

    g_factor: float
    g_ens: float
    lineshape: QGaussianShape
    relaxation: Tuple[RelaxationComponent, ...] = field(
        default_factory=lambda: (RelaxationComponent(1.0, 1e-3),)
    )
    polarization_scale: float = 1.0
    gamma2: float = 1.0e5
    temperature: float = 0.065

    def __post_init__(self):
        object.__setattr__(self, "relaxation", tuple(self.relaxation))
        if not self.g_ens >= 0:
            raise DomainError(f"g_ens must be non-negative, got {self.g_ens}")
        if not (0.0 <= self.polarization_scale <= 1.0):
            raise DomainError("polarization_scale must lie in [0, 1]")
        if not self.relaxation:
            raise DomainError("at least one relaxation component is required")
        total = sum(c.amplitude for c in self.relaxation)
        if abs(total - 1.0) > 1e-9:
            raise DomainError(f"relaxation amplitudes must sum to 1, got {total}")
        if not self.gamma2 > 0:
            raise DomainError(f"gamma2 must be positive, got {self.gamma2}")
        if not self.temperature >= 0:
            raise DomainError(f"temperature must be non-negative, got {self.temperature}")

    @property
    def omega_s(self) -> float:
        return self.lineshape.omega_s

    @property
    def gamma2_star(self) -> float:
        return self.lineshape.fwhm

    def component_shape(self, index: int) -> QGaussianShape:
        """Lineshape of one relaxation component, centred on the ensemble."""
        own = self.relaxation[index].lineshape
        if own is None:
            return self.lineshape
        return own.recentred(self.omega_s)

    def at_frequency(self, omega_s: float) -> "SpinEnsembleParams":
        """Same ensemble with the Zeeman frequency moved to ``omega_s``."""
        return replace(self, lineshape=self.lineshape.recentred(omega_s))

    def equilibrium_sz(self) -> float:
        """Thermal <sigma_z> at the ensemble centre (-1 is the ground state)."""
        if self.temperature == 0:
            return -1.0
        x = HBAR * self.omega_s / (2.0 * K_B * self.temperature)
        return -math.tanh(x)


# ---------------------------------------------------------------------------
# Closed-form relations
# ---------------------------------------------------------------------------


def zeeman_frequency(g_factor: float, b0):
    """Angular Zeeman frequency ``g mu_B B0 / hbar`` for a field in tesla."""
    b = np.asarray(b0, dtype=float)
    if np.any(b < 0):
        raise DomainError("magnetic field must be non-negative")
    w = g_factor * MU_B * b / HBAR
    return float(w) if np.ndim(b0) == 0 else w


def dispersive_shift(g_ens: float, delta: float) -> float:
    """chi = g_ens**2 / delta (delta = omega_s - omega0, signed)."""
    if delta == 0:
        raise DomainError("dispersive shift is singular at zero detuning")
    return g_ens * g_ens / delta


def cooperativity(g_ens: float, kappa: float, gamma2_star: float) -> float:
    if not (kappa > 0 and gamma2_star > 0):
        raise DomainError("kappa and gamma2_star must be positive")
    return g_ens * g_ens / (kappa * gamma2_star)


def purcell_rate(g0: float, kappa: float, delta: float) -> float:
    """Cavity-enhanced emission rate ``kappa g0^2 / (delta^2 + (kappa/2)^2)``."""
    if not kappa > 0:
        raise DomainError("kappa must be positive")
    return kappa * g0 * g0 / (delta * delta + 0.25 * kappa * kappa)


def dispersive_validity(delta: float, g_ens: float, kappa: float) -> float:
    """Smallest of |delta|/g_ens and |delta|/kappa; large means dispersive."""
    d = abs(delta)
    ratios = [d / x if x > 0 else math.inf for x in (g_ens, kappa)]
    return min(ratios)


def _qgauss_width(fwhm: float, q: float) -> float:
    h2 = 0.25 * fwhm * fwhm
    return math.sqrt((q - 1.0) * h2 / math.expm1((q - 1.0) * math.log(2.0)))


def qgaussian_density(omega, shape: QGaussianShape):
    """Unit-normalised q-Gaussian density (s/rad) with half maximum at
    ``omega_s +/- fwhm/2``.

    For 1 < q < 3 the density is ``[1 + (q-1) x^2/d^2]^(-1/(q-1))`` with the
    width ``d`` fixed by the FWHM; q = 1 evaluates the Gaussian exactly.
    """
    x = np.asarray(omega, dtype=float) - shape.omega_s
    q = shape.q
    if q == 1.0:
        s2 = shape.fwhm**2 / (8.0 * math.log(2.0))
        rho = np.exp(-0.5 * x * x / s2) / math.sqrt(2.0 * math.pi * s2)
    else:
        d = _qgauss_width(shape.fwhm, q)
        a = 1.0 / (q - 1.0)
        log_norm = math.log(d) + 0.5 * math.log(math.pi * a) + gammaln(a - 0.5) - gammaln(a)
        rho = np.exp(-a * np.log1p((q - 1.0) * (x / d) ** 2) - log_norm)
    return float(rho) if np.ndim(omega) == 0 else rho


def thermal_polarization(omega: float, temperature: float) -> float:
    if temperature == 0:
        return 1.0
    return math.tanh(HBAR * omega / (2.0 * K_B * temperature))

