"""Levenberg-Marquardt least squares with finite-difference Jacobians."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from ..exceptions import FitError, RankDeficiencyError

REL_STEP = 1e-6
RTOL = 1e-10
MAX_ITER = 500


@dataclass
class FitProblem:
    """A residual-minimisation problem ``min |w * (model(p, x) - y)|^2``.

    Complex ``y`` is fitted on stacked real and imaginary parts.  ``x_scale``
    gives the typical magnitude of each parameter; it sets the floor of the
    finite-difference step for parameters that sit near zero.
    """

    model: Callable[[np.ndarray, np.ndarray], np.ndarray]
    x: np.ndarray
    y: np.ndarray
    p0: Sequence[float]
    names: Sequence[str] = ()
    lower: Optional[Sequence[float]] = None
    upper: Optional[Sequence[float]] = None
    fixed: Optional[Sequence[bool]] = None
    weights: Optional[np.ndarray] = None
    x_scale: Optional[Sequence[float]] = None
    scale_covariance: bool = True
    label: str = "custom"

    def __post_init__(self):
        self.x = np.asarray(self.x)
        self.y = np.asarray(self.y)
        self.p0 = np.asarray(self.p0, dtype=float)
        n = self.p0.size
        if not self.names:
            self.names = tuple(f"p{i}" for i in range(n))
        if len(self.names) != n:
            raise ValueError("one name per parameter is required")
        self.lower = np.full(n, -np.inf) if self.lower is None else np.asarray(self.lower, float)
        self.upper = np.full(n, np.inf) if self.upper is None else np.asarray(self.upper, float)
        self.fixed = np.zeros(n, bool) if self.fixed is None else np.asarray(self.fixed, bool)
        if self.x_scale is None:
            self.x_scale = np.where(self.p0 != 0, np.abs(self.p0), 1.0)
        self.x_scale = np.asarray(self.x_scale, float)
        if self.weights is not None:
            self.weights = np.asarray(self.weights, float)
            if self.weights.shape != self.y.shape:
                raise ValueError("weights must match the data shape")
        if np.any(self.p0 < self.lower) or np.any(self.p0 > self.upper):
            raise ValueError("initial parameters lie outside their bounds")

    def residuals(self, p) -> np.ndarray:
        r = np.asarray(self.model(p, self.x)) - self.y
        if self.weights is not None:
            r = r * self.weights
        if np.iscomplexobj(r):
            return np.concatenate([r.real.ravel(), r.imag.ravel()])
        return np.asarray(r, float).ravel()


@dataclass(frozen=True)
class FitResult:
    names: tuple
    params: np.ndarray
    stderr: np.ndarray
    covariance: np.ndarray
    residual_norm: float
    iterations: int
    converged: bool
    dof: int
    warnings: tuple = field(default_factory=tuple)

    def __getitem__(self, name: str) -> float:
        return float(self.params[self.names.index(name)])

    def err(self, name: str) -> float:
        return float(self.stderr[self.names.index(name)])

    def as_dict(self) -> Dict[str, float]:
        return {n: float(v) for n, v in zip(self.names, self.params)}


def numeric_jacobian(fun, p, free, scale, lower, upper):
    """Central differences with relative step ``REL_STEP``; one-sided at bounds."""
    cols = []
    for i in np.flatnonzero(free):
        h = REL_STEP * max(abs(p[i]), scale[i])
        up, dn = p.copy(), p.copy()
        up[i] = p[i] + h
        dn[i] = p[i] - h
        if up[i] > upper[i]:
            up[i] = p[i]
            cols.append((fun(up) - fun(dn)) / h)
        elif dn[i] < lower[i]:
            dn[i] = p[i]
            cols.append((fun(up) - fun(dn)) / h)
        else:
            cols.append((fun(up) - fun(dn)) / (2.0 * h))
    return np.column_stack(cols)


def _snapshot(problem, p, it, norm):
    return {"params": dict(zip(problem.names, map(float, p))), "iteration": it,
            "residual_norm": norm}


def least_squares(problem: FitProblem) -> FitResult:
    """Damped Gauss-Newton (Levenberg-Marquardt) minimisation.

    The first trial at every iterate is the undamped Gauss-Newton step; the
    damping grows tenfold on each rejected trial and shrinks tenfold on
    acceptance.  Terminates when the residual norm changes by less than
    ``RTOL`` relatively, when no damped step can lower it, or after
    ``MAX_ITER`` iterations (reported as not converged).
    """
    p = problem.p0.copy()
    free = ~problem.fixed
    n_free = int(free.sum())
    if n_free == 0:
        raise FitError("all parameters are fixed")
    lo, hi = problem.lower, problem.upper

    def fun(q):
        return problem.residuals(q)

    r = fun(p)
    if not np.all(np.isfinite(r)):
        raise FitError("residuals are not finite at the initial point", _snapshot(problem, p, 0, math.nan))
    m = r.size
    if m < n_free:
        raise FitError(f"{m} residuals cannot determine {n_free} free parameters")
    norm = float(np.linalg.norm(r))
    lam = 0.0
    converged = False
    it = 0
    while it < MAX_ITER:
        it += 1
        J = numeric_jacobian(fun, p, free, problem.x_scale, lo, hi)
        if not np.all(np.isfinite(J)):
            raise FitError("non-finite Jacobian", _snapshot(problem, p, it, norm))
        A = J.T @ J
        g = J.T @ r
        d = np.diag(A).copy()
        if np.any(d <= 0):
            bad = [problem.names[i] for i, z in zip(np.flatnonzero(free), d) if z <= 0]
            raise RankDeficiencyError(f"model is insensitive to {bad}", _snapshot(problem, p, it, norm))
        # column scaling keeps the normal equations well conditioned
        s = 1.0 / np.sqrt(d)
        As = A * np.outer(s, s)
        gs = g * s
        if np.linalg.cond(As) > 1e15:
            raise RankDeficiencyError("normal equations are singular", _snapshot(problem, p, it, norm))

        accepted = False
        while True:
            try:
                step = -np.linalg.solve(As + lam * np.eye(n_free), gs) * s
            except np.linalg.LinAlgError as exc:
                raise RankDeficiencyError(str(exc), _snapshot(problem, p, it, norm)) from exc
            trial = p.copy()
            trial[free] = np.clip(p[free] + step, lo[free], hi[free])
            r_new = fun(trial)
            norm_new = float(np.linalg.norm(r_new)) if np.all(np.isfinite(r_new)) else math.inf
            if norm_new < norm:
                accepted = True
                break
            lam = max(10.0 * lam, 1e-3)
            if lam > 1e12:
                break
        if not accepted:
            converged = True
            break
        change = (norm - norm_new) / norm if norm > 0 else 0.0
        p, r, norm = trial, r_new, norm_new
        lam = lam / 10.0 if lam > 1e-9 else 0.0
        if change < RTOL or norm == 0.0:
            converged = True
            break
        if np.all(np.abs(step) <= 1e-15 * np.maximum(np.abs(p[free]), problem.x_scale[free])):
            converged = True
            break

    J = numeric_jacobian(fun, p, free, problem.x_scale, lo, hi)
    if not np.all(np.isfinite(J)):
        raise FitError("non-finite Jacobian at the optimum", _snapshot(problem, p, it, norm))
    try:
        cov_free = np.linalg.inv(J.T @ J)
    except np.linalg.LinAlgError as exc:
        raise RankDeficiencyError("singular covariance at the optimum", _snapshot(problem, p, it, norm)) from exc
    dof = m - n_free
    if problem.scale_covariance and dof > 0:
        cov_free = cov_free * (norm * norm / dof)
    cov_free = 0.5 * (cov_free + cov_free.T)
    n = p.size
    cov = np.zeros((n, n))
    idx = np.flatnonzero(free)
    cov[np.ix_(idx, idx)] = cov_free
    stderr = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    return FitResult(tuple(problem.names), p, stderr, cov, norm, it, converged, dof)


def with_warnings(result: FitResult, messages: List[str]) -> FitResult:
    if not messages:
        return result
    return FitResult(result.names, result.params, result.stderr, result.covariance,
                     result.residual_norm, result.iterations, result.converged, result.dof,
                     tuple(result.warnings) + tuple(messages))
