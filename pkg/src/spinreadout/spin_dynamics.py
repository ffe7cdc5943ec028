"""Bloch-equation dynamics of a frequency-binned spin ensemble and the
dispersive pull it exerts on the resonator.

Each bin is a semiclassical two-level system in the frame rotating at the
pump frequency, with state ``(Re s-, Im s-, sz)`` where ``s- = (sx - i sy)/2``
and ``sz = -1`` is the ground state:

    d s-/dt = -(i(w_k - w_p) + gamma2) s- + (i/2) Omega sz
    d sz/dt = -Gamma1 (sz - sz_eq) + i (Omega* s- - Omega s-*)

Integration is classic fixed-step RK4.  Within a pulse segment the right-hand
side is affine and time-independent, so one RK4 step is an affine map; it is
built once per segment from :func:`rk4_step` and then iterated (or raised to
a power when only every m-th step is recorded).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .core_model import ResonatorParams, SpinEnsembleParams, qgaussian_density
from .exceptions import ConfigurationError, DispersiveWarning, StepSizeError

MAX_PHASE_PER_STEP = 0.1


@dataclass(frozen=True)
class SpinBin:
    omega_k: float
    weight: float
    g_k: float
    sz: float
    s_minus: complex
    component_index: int


@dataclass(frozen=True)
class PulseSegment:
    duration: float
    omega_p: float
    rabi_amplitude: float = 0.0
    phase: float = 0.0

    def __post_init__(self):
        if self.duration < 0:
            raise ConfigurationError("segment duration must be non-negative")
        if self.rabi_amplitude < 0:
            raise ConfigurationError("Rabi amplitude must be non-negative")

    @property
    def rabi(self) -> complex:
        return self.rabi_amplitude * complex(math.cos(self.phase), math.sin(self.phase))


@dataclass(frozen=True)
class PulseSequence:
    segments: Tuple[PulseSegment, ...]

    def __post_init__(self):
        object.__setattr__(self, "segments", tuple(self.segments))

    @property
    def duration(self) -> float:
        return sum(s.duration for s in self.segments)

    @classmethod
    def single(cls, duration: float, omega_p: float, rabi_amplitude: float,
               pre_trigger: float = 0.0) -> "PulseSequence":
        segs = []
        if pre_trigger > 0:
            segs.append(PulseSegment(pre_trigger, omega_p, 0.0))
        segs.append(PulseSegment(duration, omega_p, rabi_amplitude))
        return cls(tuple(segs))


@dataclass(frozen=True)
class EnsembleState:
    """Per-bin arrays plus the rotating-frame frequency they are expressed in."""

    omega: np.ndarray
    weight: np.ndarray
    g: np.ndarray
    sz: np.ndarray
    s_minus: np.ndarray
    component: np.ndarray
    gamma1: np.ndarray
    sz_eq: np.ndarray
    gamma2: float
    time: float = 0.0
    frame: Optional[float] = None

    @property
    def n_bins(self) -> int:
        return self.omega.size

    @property
    def bins(self) -> List[SpinBin]:
        return [
            SpinBin(float(w), float(a), float(g), float(z), complex(s), int(c))
            for w, a, g, z, s, c in zip(self.omega, self.weight, self.g, self.sz,
                                        self.s_minus, self.component)
        ]

    def coupling_sq(self) -> float:
        """Sum of weight * g_k^2."""
        return float(np.sum(self.weight * self.g**2))

    def bloch_radius_sq(self) -> np.ndarray:
        return self.sz**2 + 4.0 * np.abs(self.s_minus) ** 2

    def with_spins(self, sz, s_minus, time, frame=None) -> "EnsembleState":
        return replace(self, sz=np.asarray(sz, float), s_minus=np.asarray(s_minus, complex),
                       time=time, frame=self.frame if frame is None else frame)


@dataclass(frozen=True)
class Trajectory:
    times: np.ndarray
    sz: np.ndarray       # (n_samples, n_bins)
    s_minus: np.ndarray  # (n_samples, n_bins)
    final: EnsembleState


@dataclass(frozen=True)
class ShiftTrace:
    times: np.ndarray
    delta_omega_r: np.ndarray
    pulse_end: Optional[float] = None
    out_of_range: Optional[np.ndarray] = None  # samples beyond the linear readout range

    def __post_init__(self):
        if len(self.times) != len(self.delta_omega_r):
            raise ConfigurationError("times and shifts differ in length")
        if len(self.times) > 1 and np.any(np.diff(self.times) <= 0):
            raise ConfigurationError("trace times must be strictly increasing")

    def after_pulse(self) -> "ShiftTrace":
        """Portion from the end of the pulse on, time re-zeroed at the pulse end."""
        t0 = 0.0 if self.pulse_end is None else self.pulse_end
        keep = self.times >= t0 - 1e-12
        flags = None if self.out_of_range is None else self.out_of_range[keep]
        return ShiftTrace(self.times[keep] - t0, self.delta_omega_r[keep], 0.0, flags)


# ---------------------------------------------------------------------------
# Ensemble construction
# ---------------------------------------------------------------------------


def discretize_ensemble(spins: SpinEnsembleParams, n_bins: int = 2001,
                        span: Optional[float] = None) -> EnsembleState:
    """Sample every relaxation component's lineshape on ``n_bins`` uniform bins.

    Component weights sum to the component amplitude and every bin couples
    with ``g_ens sqrt(P)``, so that the weighted sum of ``g_k^2`` equals
    ``g_ens^2 P``.  Spins start in thermal equilibrium.
    """
    if n_bins < 1:
        raise ConfigurationError("n_bins must be positive")
    widest = max(spins.component_shape(i).fwhm for i in range(len(spins.relaxation)))
    if span is None:
        span = 8.0 * widest
    if n_bins > 1:
        if span < 3.0 * widest:
            raise ConfigurationError(
                f"span {span:.4g} rad/s is narrower than 3x the FWHM ({3 * widest:.4g} rad/s)"
            )
        if span < 6.0 * widest:
            warnings.warn("discretisation span covers less than 6x FWHM", stacklevel=2)

    ws = spins.omega_s
    offsets = np.linspace(-0.5 * span, 0.5 * span, n_bins) if n_bins > 1 else np.zeros(1)
    g_k = spins.g_ens * math.sqrt(spins.polarization_scale)
    sz_eq = spins.equilibrium_sz()

    omega, weight, comp, gamma1 = [], [], [], []
    for idx, c in enumerate(spins.relaxation):
        wk = ws + offsets
        rho = qgaussian_density(wk, spins.component_shape(idx)) if n_bins > 1 else np.ones(1)
        omega.append(wk)
        weight.append(c.amplitude * rho / rho.sum())
        comp.append(np.full(n_bins, idx))
        gamma1.append(np.full(n_bins, 1.0 / c.t1))

    omega = np.concatenate(omega)
    nb = omega.size
    return EnsembleState(
        omega=omega,
        weight=np.concatenate(weight),
        g=np.full(nb, g_k),
        sz=np.full(nb, sz_eq),
        s_minus=np.zeros(nb, dtype=complex),
        component=np.concatenate(comp),
        gamma1=np.concatenate(gamma1),
        sz_eq=np.full(nb, sz_eq),
        gamma2=spins.gamma2,
    )


# ---------------------------------------------------------------------------
# Integrator
# ---------------------------------------------------------------------------


def rk4_step(f, x, h):
    """One classic fourth-order Runge-Kutta step of the autonomous ODE x' = f(x)."""
    k1 = f(x)
    k2 = f(x + 0.5 * h * k1)
    k3 = f(x + 0.5 * h * k2)
    k4 = f(x + h * k3)
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def bloch_generator(detuning, rabi: complex, gamma1, gamma2: float, sz_eq):
    """Per-bin affine generator ``(A, b)`` with ``d/dt (u, v, w) = A x + b``.

    ``u, v`` are the real and imaginary parts of ``s-``, ``w`` is ``sz``.
    """
    d = np.asarray(detuning, float)
    nb = d.size
    orr, oi = rabi.real, rabi.imag
    A = np.zeros((nb, 3, 3))
    A[:, 0, 0] = -gamma2
    A[:, 0, 1] = d
    A[:, 0, 2] = -0.5 * oi
    A[:, 1, 0] = -d
    A[:, 1, 1] = -gamma2
    A[:, 1, 2] = 0.5 * orr
    A[:, 2, 0] = 2.0 * oi
    A[:, 2, 1] = -2.0 * orr
    A[:, 2, 2] = -np.asarray(gamma1, float)
    b = np.zeros((nb, 3))
    b[:, 2] = np.asarray(gamma1, float) * np.asarray(sz_eq, float)
    return A, b


def bloch_rhs(x, detuning, rabi: complex, gamma1, gamma2: float, sz_eq):
    """Right-hand side on stacked states ``x`` of shape (n_bins, 3)."""
    u, v, w = x[:, 0], x[:, 1], x[:, 2]
    orr, oi = rabi.real, rabi.imag
    du = -gamma2 * u + detuning * v - 0.5 * oi * w
    dv = -detuning * u - gamma2 * v + 0.5 * orr * w
    dw = -gamma1 * (w - sz_eq) + 2.0 * oi * u - 2.0 * orr * v
    return np.stack([du, dv, dw], axis=1)


def rk4_affine_map(A, b, h):
    """Homogeneous 4x4 matrices of one RK4 step for x' = A x + b (batched).

    Obtained by pushing the zero vector and the unit vectors through
    :func:`rk4_step`, so the map is exactly the RK4 update.
    """
    nb = A.shape[0]

    def f(x):
        return np.einsum("nij,nj->ni", A, x) + b

    c = rk4_step(f, np.zeros((nb, 3)), h)
    T = np.zeros((nb, 4, 4))
    for j in range(3):
        e = np.zeros((nb, 3))
        e[:, j] = 1.0
        T[:, :3, j] = rk4_step(f, e, h) - c
    T[:, :3, 3] = c
    T[:, 3, 3] = 1.0
    return T


def check_step(dt: float, detuning, rabi_amplitude: float):
    fastest = max(float(np.max(np.abs(detuning))) if np.size(detuning) else 0.0,
                  abs(rabi_amplitude))
    if dt * fastest >= MAX_PHASE_PER_STEP:
        raise StepSizeError(
            f"dt={dt:.3g} s too coarse: dt*max(|w_k - w_p|, Omega) = {dt * fastest:.3g} "
            f"(must be < {MAX_PHASE_PER_STEP})"
        )


def _step_count(duration: float, dt: float) -> int:
    n = duration / dt
    k = int(round(n))
    if abs(n - k) > 1e-6 * max(1.0, n):
        raise ConfigurationError(
            f"duration {duration:.6g} s is not an integer number of steps of {dt:.6g} s"
        )
    return k


def _to_frame(state: EnsembleState, omega_p: float) -> EnsembleState:
    if state.frame is None or state.frame == omega_p:
        return replace(state, frame=omega_p)
    rot = np.exp(1j * (omega_p - state.frame) * state.time)
    return replace(state, s_minus=state.s_minus * rot, frame=omega_p)


def evolve(state: EnsembleState, pulse: PulseSegment, dt: float,
           record_every: int = 1) -> Trajectory:
    """Integrate one pulse segment with fixed-step RK4.

    Every ``record_every``-th step is recorded (the initial state is always
    the first sample).  The integration itself is identical regardless of
    ``record_every``; only the number of stored samples changes.
    """
    if dt <= 0:
        raise StepSizeError("dt must be positive")
    state = _to_frame(state, pulse.omega_p)
    detuning = state.omega - pulse.omega_p
    check_step(dt, detuning, pulse.rabi_amplitude)
    n_steps = _step_count(pulse.duration, dt)
    m = max(1, int(record_every))

    A, b = bloch_generator(detuning, pulse.rabi, state.gamma1, state.gamma2, state.sz_eq)
    T = rk4_affine_map(A, b, dt)

    x = np.empty((state.n_bins, 4))
    x[:, 0] = state.s_minus.real
    x[:, 1] = state.s_minus.imag
    x[:, 2] = state.sz
    x[:, 3] = 1.0

    n_rec = n_steps // m
    out = np.empty((n_rec + 1, state.n_bins, 3))
    out[0] = x[:, :3]
    if m == 1:
        for k in range(n_steps):
            x = np.einsum("nij,nj->ni", T, x)
            out[k + 1] = x[:, :3]
    else:
        Tm = np.linalg.matrix_power(T, m)
        for k in range(n_rec):
            x = np.einsum("nij,nj->ni", Tm, x)
            out[k + 1] = x[:, :3]
        rest = n_steps - n_rec * m
        if rest:
            x = np.einsum("nij,nj->ni", np.linalg.matrix_power(T, rest), x)

    times = state.time + dt * m * np.arange(n_rec + 1)
    t_end = state.time + n_steps * dt
    final = state.with_spins(x[:, 2].copy(), x[:, 0] + 1j * x[:, 1], t_end)
    return Trajectory(times, out[:, :, 2], out[:, :, 0] + 1j * out[:, :, 1], final)


# ---------------------------------------------------------------------------
# Readout of the ensemble through the cavity
# ---------------------------------------------------------------------------


def cavity_shift(state: EnsembleState, omega0: float, sz=None) -> float:
    """Dispersive pull of the resonator, ``sum_k w_k g_k^2 sz_k / (w_k - w0)``.

    Ground-state spins (sz = -1) below the resonator push it up.  ``sz`` may
    be a (n_samples, n_bins) array to evaluate a whole trajectory at once.
    """
    delta_k = state.omega - omega0
    close = np.abs(delta_k) < 10.0 * state.gamma2
    if np.any(close):
        warnings.warn(
            f"{int(close.sum())} bins lie within 10*gamma2 of the resonator; "
            "dispersive approximation violated", DispersiveWarning, stacklevel=2)
    coef = state.weight * state.g**2 / delta_k
    z = state.sz if sz is None else np.asarray(sz)
    out = z @ coef
    return float(out) if np.ndim(out) == 0 else out


def saturation_recovery(spins: SpinEnsembleParams, res: ResonatorParams,
                        pulse: PulseSequence, t_max: float, dt: float,
                        sample_interval: Optional[float] = None,
                        n_bins: int = 2001, span: Optional[float] = None,
                        state: Optional[EnsembleState] = None) -> ShiftTrace:
    """Resonator pull versus time through a pulse sequence and free recovery.

    The trace starts at t = 0 (beginning of the sequence) and ends at
    ``t_max``; after the last segment the spins relax with the drive off.
    ``pulse_end`` on the returned trace marks the end of the sequence.
    """
    if state is None:
        state = discretize_ensemble(spins, n_bins, span)
    if sample_interval is None:
        sample_interval = dt
    m = _step_count(sample_interval, dt)
    if t_max < pulse.duration:
        raise ConfigurationError("t_max must cover the whole pulse sequence")

    segments = list(pulse.segments)
    free = t_max - pulse.duration
    if free > 0:
        last = segments[-1].omega_p if segments else spins.omega_s
        segments.append(PulseSegment(free, last, 0.0))

    times, shifts = [], []
    for seg in segments:
        if seg.duration == 0:
            continue
        traj = evolve(state, seg, dt, record_every=m)
        start = 0 if not times else 1
        times.append(traj.times[start:])
        shifts.append(np.atleast_1d(cavity_shift(state, res.omega0, traj.sz[start:])))
        state = traj.final
    if not times:
        return ShiftTrace(np.array([0.0]), np.array([cavity_shift(state, res.omega0)]),
                          pulse.duration)
    return ShiftTrace(np.concatenate(times), np.concatenate(shifts), pulse.duration)


def g_of_t(g_ens: float, polarization: float, amplitudes: Sequence[float],
           t1s: Sequence[float], t):
    """``g_ens P (1 - sum_c A_c exp(-t/T1_c))``."""
    t = np.asarray(t, dtype=float)
    deficit = np.zeros_like(t)
    for a, t1 in zip(amplitudes, t1s):
        deficit = deficit + a * np.exp(-t / t1)
    return g_ens * polarization * (1.0 - deficit)


def coupling_vs_time(spins: SpinEnsembleParams, t, amplitudes: Optional[Iterable[float]] = None):
    """Time-dependent ensemble coupling after a saturating pulse ends at t = 0.

    ``amplitudes`` are the polarisation deficits per relaxation component at
    t = 0; by default each component is fully saturated.
    """
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < 0):
        raise ConfigurationError("time must be non-negative")
    amps = [c.amplitude for c in spins.relaxation] if amplitudes is None else list(amplitudes)
    t1s = [c.t1 for c in spins.relaxation]
    if len(amps) != len(t1s):
        raise ConfigurationError("one amplitude per relaxation component is required")
    out = g_of_t(spins.g_ens, spins.polarization_scale, amps, t1s, t_arr)
    return float(out) if np.ndim(t) == 0 else out
