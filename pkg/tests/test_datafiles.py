import numpy as np
import pytest

from spinreadout import datafiles as D
from spinreadout.core_model import TWO_PI
from spinreadout.cw_spectra import SpectrumMap
from spinreadout.exceptions import ConfigurationError
from spinreadout.fitting import FitProblem, least_squares
from spinreadout.signal_chain import IqTrace
from spinreadout.spin_dynamics import ShiftTrace


def test_map_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    fields = np.array([0.19, 0.195])
    freqs = TWO_PI * np.linspace(5.5e9, 5.52e9, 7)
    s21 = rng.standard_normal((2, 7)) + 1j * rng.standard_normal((2, 7))
    path = D.write_map(tmp_path / "m.csv", SpectrumMap(fields, freqs, s21))
    assert path.read_text().splitlines()[0] == "b0_tesla,freq_hz,re_s21,im_s21"
    w, s = D.read_spectrum(path, 0.195)
    np.testing.assert_allclose(w, freqs, rtol=1e-15)
    np.testing.assert_array_equal(s, s21[1])
    with pytest.raises(ConfigurationError, match="fit.b0_tesla"):
        D.read_spectrum(path)
    with pytest.raises(ConfigurationError):
        D.read_spectrum(path, 0.3)


def test_traces_round_trip(tmp_path):
    t = np.linspace(0, 1e-3, 11)
    sh = ShiftTrace(t, TWO_PI * np.arange(11.0))
    p = D.write_shift(tmp_path / "s.csv", sh)
    assert p.read_text().splitlines()[0] == "time_s,delta_f_hz"
    back = D.read_shift(p, 5e-4)
    np.testing.assert_allclose(back.delta_omega_r, sh.delta_omega_r, rtol=1e-15)
    assert back.pulse_end == 5e-4
    iq = IqTrace(t, np.sin(t), np.cos(t))
    p = D.write_iq(tmp_path / "iq.csv", iq)
    assert p.read_text().splitlines()[0] == "time_s,i,q"
    np.testing.assert_array_equal(D.read_iq(p).s21, iq.s21)


def test_bad_files(tmp_path):
    with pytest.raises(ConfigurationError):
        D.read_table(tmp_path / "missing.csv")
    p = tmp_path / "x.csv"
    p.write_text("a,b\n1,2\n")
    with pytest.raises(ConfigurationError, match="time_s"):
        D.read_shift(p)


def test_fit_report(tmp_path):
    x = np.linspace(0, 1, 20)
    y = 2 * x + 1 + 0.01 * np.random.default_rng(0).standard_normal(20)
    r = least_squares(FitProblem(lambda p, x: p[0] * x + p[1], x, y, [1, 0], names=("a", "b")))
    txt, csv = D.write_fit_report(tmp_path / "fit", r, scale={"a": 2.0}, units={"a": "Hz"},
                                  extra={"Q": (3.0, 0.1)})
    lines = txt.read_text().splitlines()
    assert lines[0].startswith("a = ") and "±" in lines[0] and lines[0].endswith("Hz")
    assert any(line.startswith("Q = 3 ± 0.1") for line in lines)
    assert "converged = true" in lines
    tab = csv.read_text().splitlines()
    assert tab[0] == "param,value,stderr"
    a = float(tab[1].split(",")[1])
    assert a == pytest.approx(r["a"] / 2.0, rel=1e-15)
