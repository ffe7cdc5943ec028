"""Continuous-wave transmission of the bare and spin-dressed resonator."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core_model import (
    ResonatorParams,
    SpinEnsembleParams,
    qgaussian_density,
    zeeman_frequency,
)
from .exceptions import ConfigurationError


@dataclass(frozen=True)
class FrequencyGrid:
    start: float
    stop: float
    points: int

    def __post_init__(self):
        if self.points < 2:
            raise ConfigurationError("a frequency grid needs at least two points")
        if not self.stop > self.start:
            raise ConfigurationError("grid stop must exceed start")

    @property
    def values(self) -> np.ndarray:
        return np.linspace(self.start, self.stop, self.points)

    @property
    def spacing(self) -> float:
        return (self.stop - self.start) / (self.points - 1)


@dataclass(frozen=True)
class SpectrumMap:
    field_axis: np.ndarray
    freq_axis: np.ndarray
    s21: np.ndarray  # shape (len(field_axis), len(freq_axis))

    def __post_init__(self):
        if self.s21.shape != (len(self.field_axis), len(self.freq_axis)):
            raise ConfigurationError("S21 matrix does not match the axes")

    @property
    def power(self) -> np.ndarray:
        return np.abs(self.s21) ** 2

    def dip_frequencies(self) -> np.ndarray:
        """Frequency of the deepest transmission dip in each field column."""
        return self.freq_axis[np.argmin(np.abs(self.s21), axis=1)]


def s21_bare(omega, res: ResonatorParams):
    """Notch transmission ``1 + kc / (i(w - w0) - (kc + ki))``."""
    w = np.asarray(omega, dtype=float)
    return 1.0 + res.kappa_c / (1j * (w - res.omega0) - (res.kappa_c + res.kappa_i))


def ensemble_self_energy(omega, spins: SpinEnsembleParams, omega_s: float,
                         n_bins: Optional[int] = None, span: Optional[float] = None,
                         coupling=None):
    """Spin contribution added to the cavity denominator.

    Without ``n_bins`` this is the single-pole form
    ``g^2 P / (i(w - ws) - gamma2*/2)``.  With ``n_bins`` the ensemble is
    summed bin by bin over each component's q-Gaussian, every bin carrying
    the homogeneous width ``spins.gamma2``.  ``coupling`` overrides the
    effective ``g_ens sqrt(P)`` (it may be an array matching ``omega``).
    """
    w = np.asarray(omega, dtype=float)
    if coupling is None:
        g2 = spins.g_ens**2 * spins.polarization_scale
    else:
        g2 = np.asarray(coupling, dtype=float) ** 2
        if n_bins is not None:
            g2 = g2[..., None]
    if n_bins is None:
        return g2 / (1j * (w - omega_s) - 0.5 * spins.gamma2_star)
    total = np.zeros(w.shape, dtype=complex)
    for idx, comp in enumerate(spins.relaxation):
        shape = spins.component_shape(idx).recentred(omega_s)
        width = span if span is not None else 8.0 * shape.fwhm
        wk = omega_s + np.linspace(-0.5 * width, 0.5 * width, n_bins)
        rho = qgaussian_density(wk, shape)
        weights = comp.amplitude * rho / rho.sum()
        denom = 1j * (w[..., None] - wk) - 0.5 * spins.gamma2
        total += (g2 * weights / denom).sum(axis=-1)
    return total


def s21_coupled(omega, res: ResonatorParams, spins: SpinEnsembleParams, omega_s: float,
                n_bins: Optional[int] = None, span: Optional[float] = None, coupling=None):
    """Transmission of the resonator dressed by the spin ensemble at ``omega_s``."""
    w = np.asarray(omega, dtype=float)
    sigma = ensemble_self_energy(w, spins, omega_s, n_bins=n_bins, span=span,
                                 coupling=coupling)
    return 1.0 + res.kappa_c / (1j * (w - res.omega0) - (res.kappa_c + res.kappa_i) + sigma)


def avoided_crossing_map(field_axis, freq_grid: FrequencyGrid, res: ResonatorParams,
                         spins: SpinEnsembleParams, threads: int = 1) -> SpectrumMap:
    """|S21(w, B0)| map for a field sweep; spins tune as ``g mu_B B0 / hbar``."""
    fields = np.asarray(field_axis, dtype=float)
    if fields.size == 0:
        raise ConfigurationError("field axis is empty")
    freqs = freq_grid.values
    omega_s = zeeman_frequency(spins.g_factor, fields)

    def column(i):
        return s21_coupled(freqs, res, spins, float(omega_s[i]))

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(column, range(fields.size)))
    else:
        rows = [column(i) for i in range(fields.size)]
    return SpectrumMap(fields, freqs, np.vstack(rows))


def normal_mode_frequencies(omega0: float, omega_s: float, g: float):
    """Undamped branch positions ``(w0+ws)/2 -/+ sqrt(D^2/4 + g^2)``."""
    mid = 0.5 * (omega0 + omega_s)
    half = np.sqrt(0.25 * (omega_s - omega0) ** 2 + g * g)
    return mid - half, mid + half
