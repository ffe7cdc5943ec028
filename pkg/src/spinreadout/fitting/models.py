"""Fit models: bare notch, spin-dressed spectrum, q-Gaussian lineshape,
bi-exponential recovery, and the time-dependent-coupling transmission."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import brentq

from ..core_model import QGaussianShape, ResonatorParams, SpinEnsembleParams, qgaussian_density
from ..cw_spectra import s21_bare, s21_coupled
from ..exceptions import FitError, FitWarning, RankDeficiencyError
from ..spin_dynamics import g_of_t
from .engine import FitProblem, FitResult, least_squares, with_warnings

Q_LOWER = 1.0
Q_UPPER = 2.999


def _warn(result: FitResult, messages):
    for msg in messages:
        warnings.warn(msg, FitWarning, stacklevel=3)
    return with_warnings(result, list(messages))


# ---------------------------------------------------------------------------
# Bare notch
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NotchFit:
    resonator: ResonatorParams
    quality_factor: float
    quality_factor_err: float
    result: FitResult


def notch_model(p, omega):
    return s21_bare(omega, ResonatorParams(p[0], abs(p[1]), abs(p[2]) or 1e-300))


def _notch_guess(omega, s21):
    mag2 = np.abs(s21) ** 2
    i0 = int(np.argmin(mag2))
    base = float(np.median(np.sort(mag2)[-max(3, mag2.size // 10):]))
    depth = base - mag2[i0]
    noise = float(np.median(np.abs(np.diff(mag2)))) if mag2.size > 2 else 0.0
    if depth < max(1e-3, 5.0 * noise) or i0 in (0, mag2.size - 1):
        raise FitError("no resonance dip found in the data")
    half = mag2[i0] + 0.5 * depth
    lo = i0
    while lo > 0 and mag2[lo] < half:
        lo -= 1
    hi = i0
    while hi < mag2.size - 1 and mag2[hi] < half:
        hi += 1
    kappa = max(0.5 * (omega[hi] - omega[lo]), abs(omega[1] - omega[0]))
    ki = math.sqrt(max(mag2[i0], 0.0)) * kappa
    return float(omega[i0]), ki, kappa - ki


def fit_notch(omega, s21, p0: Optional[Sequence[float]] = None, weights=None) -> NotchFit:
    """Fit the complex bare-notch transmission for ``omega0, kappa_i, kappa_c``."""
    omega = np.asarray(omega, float)
    s21 = np.asarray(s21, complex)
    if p0 is None:
        p0 = _notch_guess(omega, s21)
    w0, ki, kc = map(float, p0)
    ref = w0
    kap = ki + kc

    def model(p, x):
        return notch_model((ref + p[0], p[1], p[2]), x)

    prob = FitProblem(model, omega, s21, [w0 - ref, ki, kc],
                      names=("omega0", "kappa_i", "kappa_c"),
                      lower=[-np.inf, 0.0, 0.0], weights=weights,
                      x_scale=[kap, kap, kap], label="notch")
    r = least_squares(prob)
    params = r.params.copy()
    params[0] += ref
    r = replace(r, params=params)
    res = ResonatorParams(params[0], params[1], params[2])
    # Q = w0 / (ki + kc), first-order propagation
    grad = np.array([1.0 / res.kappa, -res.omega0 / res.kappa**2, -res.omega0 / res.kappa**2])
    q_err = float(np.sqrt(max(grad @ r.covariance @ grad, 0.0)))
    return NotchFit(res, res.quality_factor, q_err, r)


# ---------------------------------------------------------------------------
# Spin-dressed spectrum
# ---------------------------------------------------------------------------


def coupled_model(p, omega, res: ResonatorParams, g_factor: float = 2.0):
    """``|S21|^2`` for parameters ``(g_ens, gamma2_star, omega_s)``."""
    g, gam, ws = p[0], p[1], p[2]
    spins = SpinEnsembleParams(g_factor, abs(g), QGaussianShape(ws, abs(gam) or 1e-300, 2.0))
    return np.abs(s21_coupled(omega, res, spins, ws)) ** 2


def _coupled_guess(omega, power, res):
    from scipy.ndimage import gaussian_filter1d
    from scipy.signal import argrelmin

    smooth = gaussian_filter1d(power, max(1.0, power.size / 400.0), mode="nearest")
    idx = argrelmin(smooth, order=max(1, power.size // 100))[0]
    if idx.size >= 2:
        two = idx[np.argsort(smooth[idx])[:2]]
        lo, hi = np.sort(omega[two])
        split = hi - lo
        ws = lo + hi - res.omega0
        g = math.sqrt(max(0.25 * split * split - 0.25 * (ws - res.omega0) ** 2, (0.25 * split) ** 2))
    else:
        ws = res.omega0
        g = (omega[-1] - omega[0]) / 16.0
    return g, g, ws


def fit_coupled(omega, power, res: ResonatorParams, p0: Optional[Sequence[float]] = None,
                free_kappa: bool = False, weights=None) -> FitResult:
    """Fit ``|S21|^2`` of the dressed resonator for ``g_ens, gamma2_star, omega_s``.

    The resonator is held fixed; ``free_kappa`` releases ``kappa_i``.
    """
    omega = np.asarray(omega, float)
    power = np.asarray(power, float)
    if p0 is None:
        p0 = _coupled_guess(omega, power, res)
    g, gam, ws = map(float, p0)
    ref = res.omega0

    def model(p, x):
        r = ResonatorParams(res.omega0, abs(p[3]), res.kappa_c)
        return coupled_model((p[0], p[1], ref + p[2]), x, r)

    prob = FitProblem(model, omega, power, [g, gam, ws - ref, res.kappa_i],
                      names=("g_ens", "gamma2_star", "omega_s", "kappa_i"),
                      lower=[0.0, 0.0, -np.inf, 0.0],
                      fixed=[False, False, False, not free_kappa], weights=weights,
                      x_scale=[g, gam, max(g, abs(ws - ref)), res.kappa], label="coupled")
    r = least_squares(prob)
    params = r.params.copy()
    params[2] += ref
    r = replace(r, params=params)
    msgs = []
    if r["g_ens"] < 0.25 * r["gamma2_star"]:
        msgs.append("normal-mode splitting unresolved (g_ens < gamma2*/4); fit may be degenerate")
    return _warn(r, msgs)


# ---------------------------------------------------------------------------
# q-Gaussian lineshape
# ---------------------------------------------------------------------------


def qgaussian_model(p, omega):
    """``amplitude * rho(w) / rho(center)`` for ``(center, fwhm, q, amplitude)``."""
    shape = QGaussianShape(p[0], abs(p[1]) or 1e-300, min(max(p[2], Q_LOWER), Q_UPPER))
    return p[3] * qgaussian_density(omega, shape) / qgaussian_density(p[0], shape)


def _qgauss_guess(omega, amp):
    i = int(np.argmax(np.abs(amp)))
    peak = float(amp[i])
    above = np.abs(amp) >= 0.5 * abs(peak)
    fwhm = float(omega[above].max() - omega[above].min())
    if fwhm <= 0:
        fwhm = 2.0 * float(np.mean(np.diff(omega)))
    return float(omega[i]), fwhm, 1.5, peak


def fit_qgaussian(omega, amplitudes, p0: Optional[Sequence[float]] = None,
                  weights=None) -> FitResult:
    """Fit a peak-normalised q-Gaussian; parameters ``center, fwhm, q, amplitude``."""
    omega = np.asarray(omega, float)
    amp = np.asarray(amplitudes, float)
    order = np.argsort(omega)
    omega, amp = omega[order], amp[order]
    if weights is not None:
        weights = np.asarray(weights, float)[order]
    if omega.size < 7:
        raise FitError("a lineshape fit needs at least 7 points")
    if p0 is None:
        p0 = _qgauss_guess(omega, amp)
    c, fwhm, q, a = map(float, p0)
    if omega[-1] - omega[0] <= fwhm:
        raise FitError("data must span more than one FWHM")
    q = min(max(q, Q_LOWER), Q_UPPER)
    prob = FitProblem(qgaussian_model, omega, amp, [c, fwhm, q, a],
                      names=("center", "fwhm", "q", "amplitude"),
                      lower=[-np.inf, 0.0, Q_LOWER, -np.inf], upper=[np.inf, np.inf, Q_UPPER, np.inf],
                      weights=weights, x_scale=[fwhm, fwhm, 1.0, max(abs(a), 1e-300)],
                      label="qgaussian")
    r = least_squares(prob)
    msgs = []
    if r["q"] <= Q_LOWER + 1e-3 or r["q"] >= Q_UPPER - 1e-3:
        msgs.append(f"q pinned at its bound ({r['q']:.4f})")
    return _warn(r, msgs)


# ---------------------------------------------------------------------------
# Bi-exponential recovery
# ---------------------------------------------------------------------------


def biexp_model(p, t):
    """``A1 exp(-t/T1_fast) + A2 exp(-t/T1_slow) + offset``."""
    a1, t1f, a2, t1s, off = p
    return a1 * np.exp(-t / t1f) + a2 * np.exp(-t / t1s) + off


def _log_linear(t, y):
    ok = y > 0
    if ok.sum() < 3:
        return None
    slope, icpt = np.polyfit(t[ok], np.log(y[ok]), 1)
    if slope >= 0:
        return None
    return math.exp(icpt), -1.0 / slope


def _t1_floor(t):
    """Smallest resolvable time constant: half the finest sample spacing."""
    step = np.diff(np.unique(t))
    return 0.5 * float(step.min()) if step.size else np.finfo(float).tiny


def _linear_amplitudes(t, y, t1f, t1s):
    X = np.column_stack([np.exp(-t / t1f), np.exp(-t / t1s), np.ones_like(t)])
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    return coef, float(np.sum((X @ coef - y) ** 2))


def _biexp_guess(t, y):
    """Log-linear tail slope for T1_slow, then the residual for T1_fast.

    The heuristic pair competes with a coarse log-spaced grid of time-constant
    pairs; amplitudes and offset are solved linearly for every candidate.
    """
    n = t.size
    t = t - t[0]
    off = float(np.mean(y[-max(3, n // 10):]))
    dev = y - off
    sign = 1.0 if np.sum(dev[: max(3, n // 10)]) >= 0 else -1.0
    dev = sign * dev
    span = t[-1]
    tail = (t > 0.2 * span) & (t < 0.6 * span)
    slow = _log_linear(t[tail], dev[tail])
    t1s = slow[1] if slow is not None else span / 5.0
    rest = dev - (slow[0] if slow is not None else dev[0]) * np.exp(-t / t1s)
    head = t < min(t1s, 0.2 * span)
    fast = _log_linear(t[head], rest[head])
    t1f = fast[1] if fast is not None and fast[1] < t1s else 0.2 * t1s

    step = float(np.min(np.diff(t))) if n > 1 else span
    taus = np.geomspace(max(2.0 * step, 1e-3 * span), 0.5 * span, 24)
    pairs = [(t1f, t1s)] + [(a, b) for i, a in enumerate(taus) for b in taus[i + 2:]]
    best = min(pairs, key=lambda ab: _linear_amplitudes(t, y, *ab)[1])
    (a1, a2, off), _ = _linear_amplitudes(t, y, *best)
    return float(a1), float(best[0]), float(a2), float(best[1]), float(off)


def fit_biexponential(t, y, p0: Optional[Sequence[float]] = None, weights=None,
                      fixed_t1: Optional[Sequence[float]] = None) -> FitResult:
    """Fit ``A1, T1_fast, A2, T1_slow, offset``; the faster constant is reported first.

    ``fixed_t1=(T1_fast, T1_slow)`` holds both time constants and fits only the
    amplitudes and offset.
    """
    t = np.asarray(t, float)
    y = np.asarray(y, float)
    if p0 is None:
        p0 = list(_biexp_guess(t, y))
    p0 = list(map(float, p0))
    fixed = [False] * 5
    if fixed_t1 is not None:
        p0[1], p0[3] = map(float, fixed_t1)
        fixed[1] = fixed[3] = True
    floor = _t1_floor(t)
    if fixed_t1 is None:
        p0[1], p0[3] = max(p0[1], floor), max(p0[3], floor)
    amp_scale = max(abs(p0[0]), abs(p0[2]), float(np.std(y)), 1e-300)
    prob = FitProblem(biexp_model, t, y, p0,
                      names=("A1", "T1_fast", "A2", "T1_slow", "offset"),
                      lower=[-np.inf, floor, -np.inf, floor, -np.inf], fixed=fixed, weights=weights,
                      x_scale=[amp_scale, p0[1], amp_scale, p0[3], amp_scale],
                      label="biexp")
    msgs = []
    try:
        r = least_squares(prob)
    except RankDeficiencyError:
        if fixed_t1 is not None:
            raise
        # collapse to a single exponential: the fast term carries no information
        big = 0 if abs(p0[0]) > abs(p0[2]) else 2
        p1 = [0.0, p0[big + 1], p0[big], p0[big + 1], p0[4]]
        prob.p0 = np.array(p1)
        prob.fixed = np.array([True, True, False, False, False])
        r = least_squares(prob)
        params = r.params.copy()
        params[1] = params[3]
        stderr = r.stderr.copy()
        stderr[1] = stderr[3]
        r = replace(r, params=params, stderr=stderr)
        msgs.append("single exponential: fast component unidentifiable (A1 = 0)")
    r = _order_biexp(r)
    if r["T1_slow"] > 0 and abs(r["T1_slow"] - r["T1_fast"]) < 0.2 * r["T1_slow"] and not msgs:
        msgs.append("time constants within 20% of each other; components not identifiable")
    if t[-1] - t[0] < 3.0 * r["T1_slow"]:
        msgs.append("trace spans less than 3x the slow time constant")
    return _warn(r, msgs)


def _order_biexp(r: FitResult) -> FitResult:
    if r["T1_fast"] <= r["T1_slow"]:
        return r
    perm = [2, 3, 0, 1, 4]
    return replace(r, params=r.params[perm], stderr=r.stderr[perm],
                   covariance=r.covariance[np.ix_(perm, perm)])


# ---------------------------------------------------------------------------
# Time-dependent coupling (non-linear readout regime)
# ---------------------------------------------------------------------------


def gt_model(p, t, res: ResonatorParams, spins: SpinEnsembleParams, omega_r: float):
    """``|S21(omega_r)|`` with the ensemble coupling replaced by G(t).

    Parameters are ``(P, A1, A2, T1_fast, T1_slow)``.
    """
    P, a1, a2, t1f, t1s = p
    G = g_of_t(spins.g_ens, P, (a1, a2), (t1f, t1s), t)
    w = np.full(np.shape(t), omega_r)
    return np.abs(s21_coupled(w, res, spins, spins.omega_s, coupling=G))


def _crossings(vals, level, fallback=True):
    diff = vals - level
    idx = np.flatnonzero(np.sign(diff[:-1]) != np.sign(diff[1:]))
    if idx.size == 0 and fallback:
        idx = np.array([int(np.argmin(np.abs(diff)))])
    return idx


def _gt_guess(t, y, res, spins, omega_r):
    """Start values from the late and early |S21| levels.

    Every coupling that reproduces the late level is a candidate for
    ``g_ens P``; the candidate reaching the early level with the smallest
    deficit is kept.  The deficit is split between the components using the
    bi-exponential heuristic on the raw trace.
    """
    n = t.size
    late = float(np.mean(y[-max(3, n // 10):]))
    early = float(np.mean(y[: max(2, n // 100)]))
    g = spins.g_ens
    if g == 0:
        return 1.0, 0.0, 0.0, 0.1 * (t[-1] - t[0]), 0.3 * (t[-1] - t[0])
    grid = np.linspace(0.0, g, 801)
    w = np.full(grid.shape, omega_r)
    vals = np.abs(s21_coupled(w, res, spins, spins.omega_s, coupling=grid))
    frac = np.linspace(0.0, 0.95, 381)
    best = None
    for i in _crossings(vals, late):
        Gc = max(float(grid[i]), 0.05 * g)
        sub = np.abs(s21_coupled(np.full(frac.shape, omega_r), res, spins, spins.omega_s,
                                 coupling=Gc * (1.0 - frac)))
        j = _crossings(sub, early, fallback=False)
        if j.size and (best is None or frac[j[0]] < best[1]):
            best = (Gc, float(frac[j[0]]), sub)
    if best is None:
        return (min(max(float(grid[_crossings(vals, late)[0]]) / g, 0.05), 1.0),
                0.03, 0.07) + _biexp_guess(t, y)[1:4:2]
    Gc, D0, sub = best
    P = min(max(Gc / g, 0.05), 1.0)
    # map |S21| back to a coupling deficit on the monotonic stretch of this branch
    k = int(round(D0 / frac[1])) + 1
    k = min(k + max(2, k // 2), frac.size)
    slope = np.diff(sub[:k])
    mono = np.flatnonzero(np.sign(slope) != np.sign(slope[0]))
    k = int(mono[0]) + 1 if mono.size else k
    xs, fs = sub[:k], frac[:k]
    if xs[-1] < xs[0]:
        xs, fs = xs[::-1], fs[::-1]
    deficit = np.interp(y, xs, fs)
    a1, t1f, a2, t1s, _ = _biexp_guess(t, deficit)
    if not (0 < t1f < t1s):
        t1f, t1s = 0.1 * (t[-1] - t[0]), 0.3 * (t[-1] - t[0])
    return P, a1, a2, t1f, t1s


def fit_nonlinear_gt(t, magnitude, res: ResonatorParams, spins: SpinEnsembleParams,
                     omega_r: float, p0: Optional[Sequence[float]] = None,
                     weights=None) -> FitResult:
    """Fit ``P, A1, A2, T1_fast, T1_slow`` to ``|S21(t)|`` at a fixed readout frequency.

    ``spins`` supplies ``g_ens``, the linewidth gamma2* and ``omega_s``
    (i.e. the detuning); time zero is the end of the saturating pulse.
    """
    t = np.asarray(t, float)
    y = np.asarray(magnitude, float)
    if p0 is None:
        p0 = _gt_guess(t, y, res, spins, omega_r)
    p0 = [float(v) for v in p0]
    p0[0] = min(max(p0[0], 0.0), 1.0)

    def model(p, x):
        return gt_model(p, x, res, spins, omega_r)

    names = ("P", "A1", "T1_fast", "A2", "T1_slow")

    def wrapped(p, x):
        return model((p[0], p[1], p[3], p[2], p[4]), x)

    floor = _t1_floor(t)
    start = [p0[0], p0[1], max(p0[3], floor), p0[2], max(p0[4], floor)]
    prob = FitProblem(wrapped, t, y, start, names=names,
                      lower=[0.0, -1.0, floor, -1.0, floor], upper=[1.0, 1.0, np.inf, 1.0, np.inf],
                      weights=weights, x_scale=[1.0, 0.1, start[2], 0.1, start[4]], label="gt")
    msgs = []
    try:
        r = least_squares(prob)
    except RankDeficiencyError:
        prob.p0 = np.array([p0[0], 0.0, start[2], 0.0, start[4]])
        prob.fixed = np.array([False, True, True, True, True])
        r = least_squares(prob)
        params = r.params.copy()
        params[[2, 4]] = np.nan
        stderr = r.stderr.copy()
        stderr[[2, 4]] = np.nan
        r = replace(r, params=params, stderr=stderr)
        msgs.append("no recovery transient: T1 values unidentifiable")
    else:
        if r["T1_fast"] > r["T1_slow"]:
            perm = [0, 3, 4, 1, 2]
            r = replace(r, params=r.params[perm], stderr=r.stderr[perm],
                        covariance=r.covariance[np.ix_(perm, perm)])
        if abs(r["A1"]) < 1e-6 and abs(r["A2"]) < 1e-6:
            msgs.append("no recovery transient: T1 values unidentifiable")
    if r["P"] >= 1.0 - 1e-9:
        msgs.append("P pinned at 1: saturation model may be inadequate")
    return _warn(r, msgs)
