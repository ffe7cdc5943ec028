import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from spinreadout.core_model import (
    TWO_PI,
    QGaussianShape,
    RelaxationComponent,
    ResonatorParams,
    qgaussian_density,
)
from spinreadout.cw_spectra import s21_bare, s21_coupled
from spinreadout.exceptions import FitError, FitWarning, RankDeficiencyError
from spinreadout.fitting import (
    FitProblem,
    biexp_model,
    coupled_model,
    fit_biexponential,
    fit_coupled,
    fit_nonlinear_gt,
    fit_notch,
    fit_qgaussian,
    gt_model,
    least_squares,
    notch_model,
    numeric_jacobian,
    qgaussian_model,
)
from spinreadout.spin_dynamics import coupling_vs_time

from conftest import make_spins

RES = ResonatorParams(TWO_PI * 5.51e9, TWO_PI * 85e3, TWO_PI * 85e3)


# -- engine -------------------------------------------------------------------


def test_linear_exact_in_two_iterations():
    x = np.linspace(-1, 1, 50)
    prob = FitProblem(lambda p, x: p[0] * x + p[1], x, 3.0 * x - 2.0, [1.0, 1.0])
    r = least_squares(prob)
    assert r.params == pytest.approx([3.0, -2.0], abs=1e-10)
    assert r.iterations <= 2
    assert r.converged


def test_rosenbrock():
    prob = FitProblem(lambda p, x: np.array([10 * (p[1] - p[0] ** 2), 1 - p[0]]),
                      np.zeros(2), np.zeros(2), [-1.2, 1.0], scale_covariance=False)
    r = least_squares(prob)
    assert r.params == pytest.approx([1.0, 1.0], abs=1e-8)


def test_jacobian_matches_analytic():
    t = np.linspace(0, 5, 40)
    p = np.array([2.0, 1.3])

    def f(q):
        return q[0] * np.exp(-t / q[1])

    J = numeric_jacobian(f, p, np.ones(2, bool), np.abs(p), np.full(2, -np.inf), np.full(2, np.inf))
    exact = np.column_stack([np.exp(-t / p[1]), p[0] * t / p[1] ** 2 * np.exp(-t / p[1])])
    np.testing.assert_allclose(J, exact, rtol=1e-6, atol=1e-12)


def test_stderr_matches_monte_carlo():
    """Covariance estimate of an exponential fit agrees with the scatter over 200 seeds."""
    t = np.linspace(0, 5, 1000)
    truth = np.array([2.0, 1.3, 0.1])
    sigma = 0.05

    def model(p, x):
        return p[0] * np.exp(-x / p[1]) + p[2]

    fits, errs = [], []
    for seed in range(200):
        y = model(truth, t) + sigma * np.random.default_rng(seed).standard_normal(t.size)
        r = least_squares(FitProblem(model, t, y, [1.5, 1.0, 0.0], x_scale=[1, 1, 1]))
        fits.append(r.params)
        errs.append(r.stderr)
    scatter = np.std(fits, axis=0, ddof=1)
    mean_err = np.mean(errs, axis=0)
    np.testing.assert_allclose(mean_err, scatter, rtol=0.2)


def test_fixed_parameters_and_bounds():
    x = np.linspace(0, 1, 20)
    prob = FitProblem(lambda p, x: p[0] * x + p[1], x, 2 * x + 1, [1.0, 5.0], fixed=[False, True])
    r = least_squares(prob)
    assert r["p1"] == 5.0 and r.err("p1") == 0.0
    prob = FitProblem(lambda p, x: p[0] * x, x, -2 * x, [1.0], lower=[0.0])
    assert least_squares(prob)["p0"] == 0.0
    with pytest.raises(ValueError):
        FitProblem(lambda p, x: x, x, x, [2.0], upper=[1.0])


def test_rank_deficiency():
    x = np.linspace(0, 1, 20)
    prob = FitProblem(lambda p, x: (p[0] + p[1]) * x, x, 2 * x, [1.0, 0.5])
    with pytest.raises(RankDeficiencyError) as info:
        least_squares(prob)
    assert "params" in info.value.diagnostics


def test_non_finite_start():
    x = np.linspace(0, 1, 5)
    with pytest.raises(FitError):
        with np.errstate(invalid="ignore"):
            least_squares(FitProblem(lambda p, x: np.log(p[0] - 2) * x, x, x, [1.0]))


def test_complex_residuals_stacked():
    x = np.linspace(0, 1, 30)
    y = (1 + 2j) * np.exp(1j * x)
    prob = FitProblem(lambda p, x: (p[0] + 1j * p[1]) * np.exp(1j * x), x, y, [0.5, 0.5])
    r = least_squares(prob)
    assert r.params == pytest.approx([1, 2], abs=1e-10)
    assert r.dof == 2 * x.size - 2


def test_result_invariants():
    t = np.linspace(0, 5, 200)
    y = 2 * np.exp(-t / 1.3) + 0.02 * np.random.default_rng(0).standard_normal(t.size)
    r = least_squares(FitProblem(lambda p, x: p[0] * np.exp(-x / p[1]), t, y, [1.0, 1.0]))
    assert np.all(r.stderr >= 0)
    np.testing.assert_allclose(r.covariance, r.covariance.T)
    assert np.all(np.linalg.eigvalsh(r.covariance) >= -1e-12 * np.abs(r.covariance).max())
    assert r.as_dict()["p0"] == r["p0"]


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_permutation_invariance(seed):
    rng = np.random.default_rng(seed)
    t = np.linspace(0, 5, 300)
    y = 2 * np.exp(-t / 1.3) + 0.5 + 0.02 * rng.standard_normal(t.size)
    perm = rng.permutation(t.size)

    def model(p, x):
        return p[0] * np.exp(-x / p[1]) + p[2]

    a = least_squares(FitProblem(model, t, y, [1.0, 1.0, 0.0], x_scale=[1, 1, 1]))
    b = least_squares(FitProblem(model, t[perm], y[perm], [1.0, 1.0, 0.0], x_scale=[1, 1, 1]))
    np.testing.assert_allclose(a.params, b.params, rtol=1e-10, atol=1e-12)


# -- formula identities -------------------------------------------------------


def test_model_identities():
    w = RES.omega0 + np.linspace(-20, 20, 401) * TWO_PI * 1e6
    assert np.max(np.abs(notch_model((RES.omega0, RES.kappa_i, RES.kappa_c), w) - s21_bare(w, RES))) <= 1e-12

    spins = make_spins(RES.omega0 + TWO_PI * 0.3e6)
    got = coupled_model((spins.g_ens, spins.gamma2_star, spins.omega_s), w, RES)
    np.testing.assert_allclose(got, np.abs(s21_coupled(w, RES, spins, spins.omega_s)) ** 2, rtol=1e-12, atol=1e-12)

    shape = QGaussianShape(spins.omega_s, TWO_PI * 4.9e6, 1.7)
    got = qgaussian_model((shape.omega_s, shape.fwhm, shape.q, 2.5), w)
    want = 2.5 * qgaussian_density(w, shape) / qgaussian_density(shape.omega_s, shape)
    np.testing.assert_allclose(got, want, rtol=1e-12)

    comps = (RelaxationComponent(0.3, 0.11e-3), RelaxationComponent(0.7, 1.0e-3))
    sp = make_spins(RES.omega0 + TWO_PI * 32e6, components=comps, polarization_scale=0.9)
    t = np.linspace(0, 5e-3, 300)
    G = coupling_vs_time(sp, t, [0.05, 0.1])
    want = np.abs(s21_coupled(np.full(t.shape, RES.omega0), RES, sp, sp.omega_s, coupling=G))
    got = gt_model((0.9, 0.05, 0.1, 0.11e-3, 1.0e-3), t, RES, sp, RES.omega0)
    np.testing.assert_allclose(got, want, rtol=1e-12, atol=1e-12)


# -- notch --------------------------------------------------------------------


def _notch_data(res, sigma=0.0, seed=0, n=801):
    w = res.omega0 + np.linspace(-6, 6, n) * res.kappa
    s = s21_bare(w, res)
    rng = np.random.default_rng(seed)
    return w, s + sigma * (rng.standard_normal(n) + 1j * rng.standard_normal(n))


def test_notch_exact():
    w, s = _notch_data(RES)
    nf = fit_notch(w, s)
    assert nf.resonator.omega0 == pytest.approx(RES.omega0, rel=1e-12)
    assert nf.resonator.kappa_i == pytest.approx(RES.kappa_i, rel=1e-9)
    assert nf.resonator.kappa_c == pytest.approx(RES.kappa_c, rel=1e-9)
    assert nf.quality_factor == pytest.approx(RES.quality_factor, rel=1e-9)


def test_notch_reference_grade():
    w, s = _notch_data(RES, sigma=0.02, seed=1)
    nf = fit_notch(w, s)
    k_err = math.hypot(nf.result.err("kappa_i"), nf.result.err("kappa_c"))
    assert nf.resonator.kappa == pytest.approx(RES.kappa, abs=4 * k_err)
    assert nf.quality_factor == pytest.approx(3.3e4, rel=0.05)


def test_notch_needs_a_dip():
    w = np.linspace(1.0, 2.0, 100)
    with pytest.raises(FitError):
        fit_notch(w, np.ones(100, complex))


# -- coupled spectrum ---------------------------------------------------------


def _coupled_data(sigma=0.0, seed=0):
    spins = make_spins(RES.omega0)
    w = RES.omega0 + TWO_PI * np.linspace(-20e6, 20e6, 2001)
    p = np.abs(s21_coupled(w, RES, spins, spins.omega_s)) ** 2
    p = p * (1 + sigma * np.random.default_rng(seed).standard_normal(w.size))
    return w, p, spins


def test_coupled_exact():
    w, p, spins = _coupled_data()
    r = fit_coupled(w, p, RES)
    assert r["g_ens"] == pytest.approx(spins.g_ens, rel=1e-6)
    assert r["gamma2_star"] == pytest.approx(spins.gamma2_star, rel=1e-6)
    assert r["omega_s"] == pytest.approx(spins.omega_s, rel=1e-12)
    assert r["kappa_i"] == RES.kappa_i


def test_coupled_free_kappa_inflates_errors():
    w, p, _ = _coupled_data(sigma=0.01, seed=2)
    fixed = fit_coupled(w, p, RES)
    free = fit_coupled(w, p, RES, free_kappa=True)
    assert free.err("g_ens") > fixed.err("g_ens")
    assert np.trace(free.covariance[:3, :3]) > np.trace(fixed.covariance[:3, :3])


def test_coupled_degeneracy_warning():
    spins = make_spins(RES.omega0, g_hz=0.5e6)
    w = RES.omega0 + TWO_PI * np.linspace(-20e6, 20e6, 2001)
    p = np.abs(s21_coupled(w, RES, spins, spins.omega_s)) ** 2
    with pytest.warns(FitWarning):
        r = fit_coupled(w, p, RES, p0=(spins.g_ens, spins.gamma2_star, spins.omega_s))
    assert any("unresolved" in m for m in r.warnings)


# -- q-Gaussian ---------------------------------------------------------------


def test_qgaussian_exact():
    shape = QGaussianShape(0.0, TWO_PI * 6.2e6, 1.4)
    w = TWO_PI * np.linspace(-10e6, 10e6, 21)
    y = 3.0 * qgaussian_density(w, shape) / qgaussian_density(0.0, shape)
    r = fit_qgaussian(w, y)
    assert r["fwhm"] == pytest.approx(shape.fwhm, rel=1e-6)
    assert r["q"] == pytest.approx(1.4, rel=1e-6)
    assert r["center"] == pytest.approx(0.0, abs=1e-6 * shape.fwhm)
    assert r["amplitude"] == pytest.approx(3.0, rel=1e-6)


def test_qgaussian_lorentzian_input():
    gam = TWO_PI * 3.1e6
    w = TWO_PI * np.linspace(-15e6, 15e6, 61)
    qs = []
    for seed in range(10):
        y = gam**2 / (w**2 + gam**2)
        y = y * (1 + 0.01 * np.random.default_rng(seed).standard_normal(w.size))
        qs.append(fit_qgaussian(w, y)["q"])
    assert np.all(np.abs(np.array(qs) - 2.0) < 0.05)


def test_qgaussian_boundary_warning_and_size():
    w = np.linspace(-10, 10, 41)
    y = np.where(np.abs(w) < 2, 1.0, 0.0)
    with pytest.warns(FitWarning):
        r = fit_qgaussian(w, y)
    assert any("bound" in m for m in r.warnings)
    with pytest.raises(FitError):
        fit_qgaussian(w[:5], y[:5])


# -- bi-exponential -----------------------------------------------------------


T = np.arange(0, 5e-3, 2e-6)
TRUTH = (-300.0, 0.23e-3, -2700.0, 1.24e-3, 0.0)


def test_biexp_exact_and_ordered():
    r = fit_biexponential(T, biexp_model(TRUTH, T))
    np.testing.assert_allclose(r.params, TRUTH, rtol=1e-6, atol=1e-6)
    swapped = (TRUTH[2], TRUTH[3], TRUTH[0], TRUTH[1], 0.0)
    r = fit_biexponential(T, biexp_model(TRUTH, T), p0=[v * 1.1 if v else 1.0 for v in swapped])
    assert r["T1_fast"] < r["T1_slow"]
    assert r["T1_fast"] == pytest.approx(0.23e-3, rel=1e-6)


def test_biexp_single_exponential_flagged():
    y = 5.0 * np.exp(-T / 1e-3) + 1.0
    with pytest.warns(FitWarning):
        r = fit_biexponential(T, y)
    single = abs(r["A1"]) < 1e-6 * 5 or r["T1_fast"] == pytest.approx(r["T1_slow"], rel=0.2)
    assert single
    assert r.warnings
    assert r["T1_slow"] == pytest.approx(1e-3, rel=1e-6)


def test_biexp_close_time_constants_warn():
    y = biexp_model((1.0, 1.0e-3, 1.0, 1.1e-3, 0.0), T)
    with pytest.warns(FitWarning):
        r = fit_biexponential(T, y, p0=(1.0, 1.0e-3, 1.0, 1.1e-3, 0.0))
    assert any("20%" in m for m in r.warnings)


def test_biexp_monte_carlo_stderr():
    sigma = 30.0
    fits, errs = [], []
    for seed in range(200):
        y = biexp_model(TRUTH, T) + sigma * np.random.default_rng(seed).standard_normal(T.size)
        r = fit_biexponential(T, y)
        fits.append([r["T1_fast"], r["T1_slow"]])
        errs.append([r.err("T1_fast"), r.err("T1_slow")])
    np.testing.assert_allclose(np.mean(errs, axis=0), np.std(fits, axis=0, ddof=1), rtol=0.2)


@settings(max_examples=15, deadline=None)
@given(st.sampled_from([-0.3, 0.3]), st.sampled_from([-0.3, 0.3]), st.sampled_from([-0.3, 0.3]),
       st.sampled_from([-0.3, 0.3]))
def test_biexp_round_trip_from_offset_start(a, b, c, d):
    p0 = [TRUTH[0] * (1 + a), TRUTH[1] * (1 + b), TRUTH[2] * (1 + c), TRUTH[3] * (1 + d), 10.0]
    r = fit_biexponential(T, biexp_model(TRUTH, T), p0=p0)
    np.testing.assert_allclose(r.params[:4], TRUTH[:4], rtol=1e-6)


# -- G(t) model ---------------------------------------------------------------


def _gt_setup():
    comps = (RelaxationComponent(0.3, 0.11e-3), RelaxationComponent(0.7, 1.0e-3))
    spins = make_spins(RES.omega0 - TWO_PI * 32e6, components=comps)
    omega_r = RES.omega0 + TWO_PI * 0.45e6
    return spins, omega_r


GT_TRUTH = (0.96, 0.03, 0.11e-3, 0.09, 1.0e-3)


def _gt_data(spins, omega_r, sigma=0.0, seed=0):
    t = np.arange(0, 5e-3, 2e-6)
    p = GT_TRUTH
    y = gt_model((p[0], p[1], p[3], p[2], p[4]), t, RES, spins, omega_r)
    return t, y + sigma * np.random.default_rng(seed).standard_normal(t.size)


def test_gt_exact():
    spins, omega_r = _gt_setup()
    t, y = _gt_data(spins, omega_r)
    r = fit_nonlinear_gt(t, y, RES, spins, omega_r)
    np.testing.assert_allclose(r.params, GT_TRUTH, rtol=1e-6)


@settings(max_examples=10, deadline=None)
@given(st.sampled_from([-0.3, 0.3]), st.sampled_from([-0.3, 0.3]), st.sampled_from([-0.3, 0.3]))
def test_gt_round_trip_from_offset_start(a, b, c):
    spins, omega_r = _gt_setup()
    t, y = _gt_data(spins, omega_r)
    p = GT_TRUTH
    # start order is (P, A1, A2, T1_fast, T1_slow)
    start = (min(p[0] * (1 + 0.03 * a), 1.0), p[1] * (1 + a), p[3] * (1 + c),
             p[2] * (1 + b), p[4] * (1 - b))
    r = fit_nonlinear_gt(t, y, RES, spins, omega_r, p0=start)
    np.testing.assert_allclose(r.params, GT_TRUTH, rtol=1e-6)


def test_gt_noisy_recovery():
    spins, omega_r = _gt_setup()
    t, y = _gt_data(spins, omega_r, sigma=1e-3, seed=5)
    r = fit_nonlinear_gt(t, y, RES, spins, omega_r)
    assert r["T1_fast"] == pytest.approx(0.11e-3, rel=0.2)
    assert r["T1_slow"] == pytest.approx(1.0e-3, rel=0.2)


def test_gt_flat_trace_flagged():
    spins, omega_r = _gt_setup()
    t = np.arange(0, 5e-3, 2e-6)
    y = gt_model((0.9, 0.0, 0.0, 1e-4, 1e-3), t, RES, spins, omega_r)
    with pytest.warns(FitWarning):
        r = fit_nonlinear_gt(t, y, RES, spins, omega_r)
    assert any("unidentifiable" in m for m in r.warnings)


def test_gt_p_at_bound_warns():
    spins, omega_r = _gt_setup()
    t = np.arange(0, 5e-3, 2e-6)
    y = gt_model((1.0, 0.03, 0.09, 0.11e-3, 1.0e-3), t, RES, spins, omega_r)
    with pytest.warns(FitWarning):
        r = fit_nonlinear_gt(t, y, RES, spins, omega_r)
    assert any("P pinned" in m for m in r.warnings)
