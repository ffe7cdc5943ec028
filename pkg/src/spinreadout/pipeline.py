"""End-to-end experiment runs assembled from a validated configuration."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np
from scipy.signal import argrelmin

from . import config as C
from .core_model import ResonatorParams, SpinEnsembleParams
from .cw_spectra import FrequencyGrid, SpectrumMap, avoided_crossing_map
from .exceptions import ConfigurationError
from .fitting import FitResult, fit_biexponential, fit_qgaussian
from .signal_chain import (
    IqTrace,
    NonLinearRegimeError,
    PhaseCalibration,
    ReadoutConfig,
    calibrate_at,
    calibrate_phase,
    coupled_transmission_trace,
    heterodyne_roundtrip,
    phase_to_shift,
    transmission_trace,
)
from .spin_dynamics import ShiftTrace, discretize_ensemble, saturation_recovery

# ---------------------------------------------------------------------------
# CW map
# ---------------------------------------------------------------------------


def branch_dips(smap: SpectrumMap) -> np.ndarray:
    """The two deepest transmission minima per field column (rad/s, ascending).

    Columns with a single resolved dip report it in both slots.
    """
    mag = np.abs(smap.s21)
    out = np.empty((mag.shape[0], 2))
    order = max(1, mag.shape[1] // 400)
    for i, row in enumerate(mag):
        idx = argrelmin(row, order=order, mode="wrap")[0]
        idx = idx[(idx > 0) & (idx < row.size - 1)]
        if idx.size == 0:
            idx = np.array([int(np.argmin(row))])
        two = np.sort(smap.freq_axis[idx[np.argsort(row[idx])[:2]]])
        out[i] = (two[0], two[-1])
    return out


def simulate_cw(cfg, threads: int = 1):
    res = C.build_resonator(cfg)
    spins = C.build_spins(cfg, omega_s=res.omega0)
    fields = C.field_sweep(cfg)
    cw = C.section(cfg, "cw")
    try:
        grid = FrequencyGrid(C.TWO_PI * cw["freq_start_hz"], C.TWO_PI * cw["freq_stop_hz"],
                             cw["points"])
    except KeyError as exc:
        raise ConfigurationError(f"missing key 'cw.{exc.args[0]}'") from exc
    smap = avoided_crossing_map(fields, grid, res, spins, threads=threads)
    return smap, branch_dips(smap)


# ---------------------------------------------------------------------------
# pulsed runs
# ---------------------------------------------------------------------------


@dataclass
class PulseRun:
    resonator: ResonatorParams
    spins: SpinEnsembleParams
    shift: ShiftTrace           # absolute pull from the bare resonator
    iq: IqTrace
    omega_r: float
    equilibrium_shift: float
    calibration: Optional[PhaseCalibration] = None
    measured: Optional[ShiftTrace] = None  # phase-inverted shift, linear regime only
    notes: List[str] = field(default_factory=list)


def _ensemble(cfg):
    res = C.build_resonator(cfg)
    ws = C.spin_frequency(cfg, res)
    return res, ws, C.build_spins(cfg, omega_s=ws)


def readout(shift: ShiftTrace, res: ResonatorParams, spins: SpinEnsembleParams,
            settings: Dict, seed: Optional[int] = None) -> PulseRun:
    """Turn a simulated pull into IQ data and, where possible, a measured shift."""
    eq = float(shift.delta_omega_r[0])
    dressed = res.shifted(eq)
    notes = []
    cal = None
    if settings["omega_r"] is not None:
        omega_r = settings["omega_r"]
    elif settings["model"] == "dispersive" and settings["offset"] == 0.0:
        cal = calibrate_phase(dressed, probe_span=settings["probe_span"])
        omega_r = cal.omega_r
    else:
        omega_r = dressed.omega0 + settings["offset"]
    if cal is None:
        cal = calibrate_at(dressed, omega_r, settings["probe_span"])
    rc = ReadoutConfig(omega_r, settings["if_freq"], settings["noise_sigma"],
                       settings["seed"] if seed is None else seed)
    if settings["model"] == "coupled":
        iq = coupled_transmission_trace(shift, res, spins, rc)
    else:
        iq = transmission_trace(shift, res, rc)
    if settings["heterodyne"]:
        iq = heterodyne_roundtrip(iq, rc)
    measured = None
    try:
        measured = phase_to_shift(iq, cal, shift.pulse_end)
    except NonLinearRegimeError as exc:
        notes.append(str(exc))
    return PulseRun(res, spins, shift, iq, omega_r, eq, cal, measured, notes)


def simulate_pulse(cfg, seed: Optional[int] = None) -> PulseRun:
    res, ws, spins = _ensemble(cfg)
    pulse = C.build_pulse(cfg, ws)
    sim = C.simulation_settings(cfg)
    shift = saturation_recovery(spins, res, pulse, sim["t_max"], sim["dt"],
                                sample_interval=sim["sample_interval"],
                                n_bins=sim["n_bins"], span=sim["span"])
    return readout(shift, res, spins, C.readout_settings(cfg), seed)


# ---------------------------------------------------------------------------
# pump sweep
# ---------------------------------------------------------------------------


@dataclass
class SweepResult:
    offsets: np.ndarray          # pump offset from the spin frequency, rad/s
    times: np.ndarray            # from the pulse end, s
    shifts: np.ndarray           # (n_offsets, n_times) pull relative to equilibrium, rad/s
    amplitudes: np.ndarray       # (n_offsets, 2) recovery amplitudes A1, A2, rad/s
    amplitude_err: np.ndarray
    cross_section: np.ndarray    # shift at ``cross_section_time`` per offset, rad/s
    cross_section_time: float
    center_fit: FitResult
    lineshape_fits: Dict[str, FitResult]


def sweep_pump(cfg, threads: int = 1) -> SweepResult:
    """Saturation recovery at a row of pump frequencies and the lineshape fits.

    The decay at the pump offset nearest zero fixes both time constants; the
    per-offset amplitudes then follow from fits with those constants held,
    and each amplitude profile is fitted with a q-Gaussian.
    """
    res, ws, spins = _ensemble(cfg)
    sim = C.simulation_settings(cfg)
    sw = C.section(cfg, "sweep")
    try:
        offsets = C.TWO_PI * np.linspace(sw["offset_start_hz"], sw["offset_stop_hz"], sw["points"])
    except KeyError as exc:
        raise ConfigurationError(f"missing key 'sweep.{exc.args[0]}'") from exc
    t_cross = sw.get("cross_section_s", 1e-4)
    state = discretize_ensemble(spins, sim["n_bins"], sim["span"])

    def run(i):
        pulse = C.build_pulse(cfg, ws, offset=float(offsets[i]))
        tr = saturation_recovery(spins, res, pulse, sim["t_max"], sim["dt"],
                                 sample_interval=sim["sample_interval"], state=state)
        after = tr.after_pulse()
        return after.times, after.delta_omega_r - tr.delta_omega_r[0]

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            runs = list(pool.map(run, range(offsets.size)))
    else:
        runs = [run(i) for i in range(offsets.size)]
    times = runs[0][0]
    shifts = np.vstack([r[1] for r in runs])

    c = int(np.argmin(np.abs(offsets)))
    center = fit_biexponential(times, shifts[c])
    single = center["A1"] == 0.0 or center["T1_fast"] == center["T1_slow"]
    t1 = (center["T1_fast"], center["T1_slow"])
    amps = np.zeros((offsets.size, 2))
    errs = np.zeros((offsets.size, 2))
    for i, y in enumerate(shifts):
        a, e = fixed_t1_amplitudes(times, y, t1[1:] if single else t1)
        amps[i, 2 - a.size:] = a
        errs[i, 2 - e.size:] = e
    cross = np.array([np.interp(t_cross, times, y) for y in shifts])

    # profiles are fitted with the sign that makes the central response positive
    sign = -1.0 if center["A1"] + center["A2"] < 0 else 1.0
    fits = {}
    if not single:
        fits["fast"] = fit_qgaussian(offsets, sign * amps[:, 0])
    fits["slow"] = fit_qgaussian(offsets, sign * amps[:, 1])
    fits["cross_section"] = fit_qgaussian(offsets, sign * cross)
    return SweepResult(offsets, times, shifts, amps, errs, cross, t_cross, center, fits)


def fixed_t1_amplitudes(t, y, t1s):
    """Amplitudes (and standard errors) of ``sum_c A_c exp(-t/T1_c) + offset``
    for known time constants; the problem is linear in the amplitudes."""
    X = np.column_stack([np.exp(-t / tc) for tc in t1s] + [np.ones_like(t)])
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    dof = max(t.size - X.shape[1], 1)
    s2 = float(np.sum((X @ coef - y) ** 2)) / dof
    cov = s2 * np.linalg.pinv(X.T @ X)
    k = len(t1s)
    return coef[:k], np.sqrt(np.clip(np.diag(cov)[:k], 0.0, None))
