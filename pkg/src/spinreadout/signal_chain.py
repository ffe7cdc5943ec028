"""Readout of resonator-shift traces through a fixed-frequency transmission
measurement, an ideal heterodyne chain, and the linear phase calibration."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core_model import TWO_PI, ResonatorParams, SpinEnsembleParams
from .cw_spectra import s21_bare, s21_coupled
from .exceptions import ConfigurationError, QuasiStaticWarning, SpinReadoutError
from .spin_dynamics import ShiftTrace

LINEARITY_TOL = 0.05
MAX_OUT_OF_RANGE = 0.10
QUASI_STATIC_MARGIN = 0.01


class NonLinearRegimeError(SpinReadoutError):
    """Too many samples fall outside the linear phase range; use the G(t) fit."""


@dataclass(frozen=True)
class IqTrace:
    times: np.ndarray
    i_vals: np.ndarray
    q_vals: np.ndarray
    flags: tuple = ()

    def __post_init__(self):
        if not (len(self.times) == len(self.i_vals) == len(self.q_vals)):
            raise ConfigurationError("IQ trace arrays differ in length")

    @property
    def s21(self) -> np.ndarray:
        return np.asarray(self.i_vals) + 1j * np.asarray(self.q_vals)

    @classmethod
    def from_complex(cls, times, s21, flags=()) -> "IqTrace":
        s21 = np.asarray(s21, complex)
        return cls(np.asarray(times, float), s21.real.copy(), s21.imag.copy(), tuple(flags))


@dataclass(frozen=True)
class ReadoutConfig:
    omega_r: float
    if_freq: float = TWO_PI * 40e6
    noise_sigma: float = 0.0
    rng_seed: int = 0

    def __post_init__(self):
        if not self.if_freq > 0:
            raise ConfigurationError("IF frequency must be positive")
        if not self.noise_sigma >= 0:
            raise ConfigurationError("noise sigma must be non-negative")


@dataclass(frozen=True)
class PhaseCalibration:
    """Linear map between transmission phase at ``omega_r`` and resonator pull.

    ``slope`` is d(phase)/d(omega0) in rad per rad/s; ``phi_eq`` the phase
    with the resonator at its calibration position; ``linear_range`` the
    largest |shift| for which the phase stays within 5% of the linear map.
    """

    omega_r: float
    slope: float
    linear_range: float
    phi_eq: float = 0.0

    def __post_init__(self):
        if self.slope == 0:
            raise ConfigurationError("phase calibration slope must be non-zero")


def _complex_noise(n: int, sigma: float, seed: int) -> np.ndarray:
    if sigma == 0:
        return np.zeros(n, dtype=complex)
    z = np.random.default_rng(seed).standard_normal((2, n))
    return sigma * (z[0] + 1j * z[1])


def transmission_trace(shift: ShiftTrace, res: ResonatorParams, cfg: ReadoutConfig) -> IqTrace:
    """Quasi-static transmission at ``cfg.omega_r`` while the resonator is pulled
    by ``shift.delta_omega_r`` from ``res.omega0``; adds seeded complex noise."""
    t = np.asarray(shift.times, float)
    dw = np.asarray(shift.delta_omega_r, float)
    s21 = 1.0 + res.kappa_c / (1j * (cfg.omega_r - (res.omega0 + dw)) - res.kappa)
    flags = []
    if t.size > 1:
        rate = np.max(np.abs(np.diff(dw) / np.diff(t)))
        if rate > QUASI_STATIC_MARGIN * res.kappa**2:
            msg = (f"shift slews at {rate:.3g} rad/s^2, not << kappa^2 = {res.kappa**2:.3g}; "
                   "quasi-static readout not valid")
            warnings.warn(msg, QuasiStaticWarning, stacklevel=2)
            flags.append("quasi_static_violation")
    s21 = s21 + _complex_noise(t.size, cfg.noise_sigma, cfg.rng_seed)
    return IqTrace.from_complex(t, s21, flags)


def effective_coupling(shift: ShiftTrace, res: ResonatorParams, spins: SpinEnsembleParams):
    """Coupling whose single-pole response reproduces the pull ``shift``.

    Inverts ``Re sigma(w0) = G^2 D / (D^2 + gamma2*^2 / 4)`` with
    ``D = w0 - ws``; pulls of the wrong sign give ``G = 0``.
    """
    D = res.omega0 - spins.omega_s
    if D == 0:
        raise ConfigurationError("spins are resonant with the cavity; no dispersive pull to invert")
    half = 0.5 * spins.gamma2_star
    g2 = np.asarray(shift.delta_omega_r, float) * (D * D + half * half) / D
    return np.sqrt(np.clip(g2, 0.0, None))


def coupled_transmission_trace(shift: ShiftTrace, res: ResonatorParams,
                               spins: SpinEnsembleParams, cfg: ReadoutConfig) -> IqTrace:
    """Transmission at ``cfg.omega_r`` using the full single-pole spin response.

    The absolute pull in ``shift`` (relative to the bare ``res.omega0``) is
    converted by :func:`effective_coupling`, so the readout also carries the
    spin-induced damping that :func:`transmission_trace` leaves out.  Needed
    when the spins sit a few linewidths from the cavity.
    """
    t = np.asarray(shift.times, float)
    G = effective_coupling(shift, res, spins)
    w = np.full(t.shape, cfg.omega_r)
    s21 = s21_coupled(w, res, spins, spins.omega_s, coupling=G)
    s21 = s21 + _complex_noise(t.size, cfg.noise_sigma, cfg.rng_seed)
    return IqTrace.from_complex(t, s21)


def heterodyne_roundtrip(trace: IqTrace, cfg: ReadoutConfig, phase_offset: float = 0.0) -> IqTrace:
    """Up-convert to the IF with an ideal single-sideband mixer and demodulate.

    ``phase_offset`` is added to the demodulation reference; the recovered
    phasor is rotated by that angle.
    """
    t = np.asarray(trace.times, float)
    if t.size > 1:
        rate = 1.0 / float(np.min(np.diff(t)))
        if rate <= 2.0 * cfg.if_freq / TWO_PI:
            raise ConfigurationError(
                f"sample rate {rate:.4g} S/s does not resolve the {cfg.if_freq / TWO_PI:.4g} Hz IF")
    carrier = np.exp(1j * cfg.if_freq * t)
    at_if = trace.s21 * carrier
    lo = np.conj(carrier) * np.exp(1j * phase_offset)
    return IqTrace.from_complex(t, at_if * lo, trace.flags)


def _phase(res: ResonatorParams, omega):
    return np.angle(s21_bare(omega, res))


def calibrate_phase(res: ResonatorParams, cfg: Optional[ReadoutConfig] = None,
                    probe_span: Optional[float] = None, points: int = 20001) -> PhaseCalibration:
    """Pick the readout frequency of steepest transmission phase.

    The probe grid is centred on ``res.omega0`` and spans ``probe_span``
    (default 20 kappa).  ``cfg`` is accepted for symmetry with the other
    readout functions; its ``omega_r`` is ignored.
    """
    kappa = res.kappa
    if probe_span is None:
        probe_span = 20.0 * kappa
    w = res.omega0 + np.linspace(-0.5 * probe_span, 0.5 * probe_span, points)
    phi = np.unwrap(_phase(res, w))
    dphi = np.gradient(phi, w)
    i = int(np.argmax(np.abs(dphi)))
    if i in (0, points - 1) or np.abs(dphi[i]) * probe_span < 0.1:
        raise ConfigurationError("no resonance within the probe span")
    # refine on a fine local grid around the coarse maximum
    h = w[1] - w[0]
    fine = w[i] + np.linspace(-h, h, 2001)
    fphi = np.unwrap(_phase(res, fine))
    j = int(np.argmax(np.abs(np.gradient(fphi, fine))))
    omega_r = float(fine[j])
    return calibrate_at(res, omega_r, probe_span)


def calibrate_at(res: ResonatorParams, omega_r: float,
                 probe_span: Optional[float] = None, points: int = 20001) -> PhaseCalibration:
    """Slope, equilibrium phase and linear range for a given readout frequency."""
    kappa = res.kappa
    if probe_span is None:
        probe_span = 20.0 * kappa
    eps = 1e-4 * kappa
    phi_eq = float(_phase(res, np.array([omega_r]))[0])
    up = float(_phase(res, np.array([omega_r - eps]))[0])
    dn = float(_phase(res, np.array([omega_r + eps]))[0])
    # pulling the resonator up by x reads like probing x lower in frequency
    slope = math.remainder(up - dn, TWO_PI) / (2.0 * eps)
    x = np.linspace(0.0, 0.5 * probe_span, points)[1:]
    limit = []
    for sgn in (1.0, -1.0):
        dev = np.remainder(_phase(res, omega_r - sgn * x) - phi_eq + math.pi, TWO_PI) - math.pi
        lin = slope * sgn * x
        bad = np.abs(dev - lin) > LINEARITY_TOL * np.abs(lin)
        limit.append(float(x[np.argmax(bad)] if bad.any() else x[-1]))
    # first failing grid point, stepped back one cell
    return PhaseCalibration(omega_r, slope, max(min(limit) - (x[1] - x[0]), 0.0), phi_eq)


def phase_to_shift(trace: IqTrace, cal: PhaseCalibration,
                   pulse_end: Optional[float] = None) -> ShiftTrace:
    """Invert the linear calibration: ``dw(t) = (phi(t) - phi_eq) / slope``.

    Samples beyond ``cal.linear_range`` are marked in ``out_of_range`` on the
    returned trace; more than 10% of them raises :class:`NonLinearRegimeError`.
    """
    s = trace.s21
    rel = np.angle(s * np.exp(-1j * cal.phi_eq))
    rel = np.unwrap(rel)
    dw = rel / cal.slope
    out = np.abs(dw) > cal.linear_range
    frac = float(out.mean()) if out.size else 0.0
    if frac > MAX_OUT_OF_RANGE:
        raise NonLinearRegimeError(
            f"{100 * frac:.1f}% of samples lie outside the linear phase range "
            f"(+/-{cal.linear_range / TWO_PI:.4g} Hz); fit |S21(t)| with the time-dependent "
            "coupling model instead")
    return ShiftTrace(np.asarray(trace.times, float), dw, pulse_end, out)
