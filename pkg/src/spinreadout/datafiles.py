"""CSV readers and writers for maps, traces and fit reports (Hz at the boundary)."""

from __future__ import annotations

import math
from pathlib import Path
from typing import Dict, Sequence

import numpy as np

from .core_model import TWO_PI
from .cw_spectra import SpectrumMap
from .exceptions import ConfigurationError
from .fitting.engine import FitResult
from .signal_chain import IqTrace
from .spin_dynamics import ShiftTrace

FMT = "%.17g"


def write_table(path, columns: Dict[str, Sequence[float]]) -> Path:
    path = Path(path)
    data = np.column_stack([np.asarray(v, float) for v in columns.values()])
    np.savetxt(path, data, delimiter=",", header=",".join(columns), comments="", fmt=FMT)
    return path


def read_table(path) -> Dict[str, np.ndarray]:
    path = Path(path)
    if not path.is_file():
        raise ConfigurationError(f"data file not found: {path}")
    try:
        arr = np.genfromtxt(path, delimiter=",", names=True, dtype=float)
    except ValueError as exc:
        raise ConfigurationError(f"cannot parse {path}: {exc}") from exc
    if arr.dtype.names is None:
        raise ConfigurationError(f"{path} has no header row")
    arr = np.atleast_1d(arr)
    return {name: np.asarray(arr[name], float) for name in arr.dtype.names}


def _require(table, path, *names):
    missing = [n for n in names if n not in table]
    if missing:
        raise ConfigurationError(f"{path}: missing column(s) {', '.join(missing)}")


# maps -----------------------------------------------------------------------


def write_map(path, smap: SpectrumMap) -> Path:
    nb, nf = smap.s21.shape
    return write_table(path, {
        "b0_tesla": np.repeat(smap.field_axis, nf),
        "freq_hz": np.tile(smap.freq_axis / TWO_PI, nb),
        "re_s21": smap.s21.real.ravel(),
        "im_s21": smap.s21.imag.ravel(),
    })


def read_spectrum(path, b0_tesla=None):
    """Frequencies (rad/s) and complex S21 of one field column of a map CSV.

    A file without a ``b0_tesla`` column is taken as a single sweep.
    """
    tab = read_table(path)
    _require(tab, path, "freq_hz", "re_s21", "im_s21")
    keep = np.ones(tab["freq_hz"].size, bool)
    if "b0_tesla" in tab:
        fields = np.unique(tab["b0_tesla"])
        if b0_tesla is None:
            if fields.size > 1:
                raise ConfigurationError(
                    f"{path} holds {fields.size} field columns; set fit.b0_tesla to pick one")
            b0_tesla = fields[0]
        keep = np.isclose(tab["b0_tesla"], b0_tesla, rtol=0, atol=1e-9)
        if not keep.any():
            raise ConfigurationError(f"{path} has no column at b0 = {b0_tesla} T")
    omega = TWO_PI * tab["freq_hz"][keep]
    s21 = tab["re_s21"][keep] + 1j * tab["im_s21"][keep]
    order = np.argsort(omega)
    return omega[order], s21[order]


# traces ---------------------------------------------------------------------


def write_shift(path, trace: ShiftTrace) -> Path:
    return write_table(path, {"time_s": trace.times,
                              "delta_f_hz": np.asarray(trace.delta_omega_r) / TWO_PI})


def read_shift(path, pulse_end=None) -> ShiftTrace:
    tab = read_table(path)
    _require(tab, path, "time_s", "delta_f_hz")
    return ShiftTrace(tab["time_s"], TWO_PI * tab["delta_f_hz"], pulse_end)


def write_iq(path, trace: IqTrace) -> Path:
    return write_table(path, {"time_s": trace.times, "i": trace.i_vals, "q": trace.q_vals})


def read_iq(path) -> IqTrace:
    tab = read_table(path)
    _require(tab, path, "time_s", "i", "q")
    return IqTrace(tab["time_s"], tab["i"], tab["q"])


# fit reports ----------------------------------------------------------------


def _fmt(v: float) -> str:
    return "nan" if math.isnan(v) else format(v, ".10g")


def write_fit_report(stem, result: FitResult, scale: Dict[str, float] = None,
                     units: Dict[str, str] = None, extra: Dict[str, float] = None):
    """Write ``<stem>.txt`` (``key = value ± stderr``) and ``<stem>.csv``.

    ``scale`` divides parameters for output (e.g. 2 pi to report Hz) and
    ``units`` labels them in the text report.
    """
    scale = scale or {}
    units = units or {}
    stem = Path(stem)
    rows = []
    for name, v, e in zip(result.names, result.params, result.stderr):
        s = scale.get(name, 1.0)
        rows.append((name, float(v) / s, float(e) / s))
    for name, (v, e) in (extra or {}).items():
        rows.append((name, float(v), float(e)))
    lines = [f"{n} = {_fmt(v)} ± {_fmt(e)}" + (f" {units[n]}" if n in units else "")
             for n, v, e in rows]
    lines += [f"residual_norm = {_fmt(result.residual_norm)}",
              f"iterations = {result.iterations}",
              f"converged = {str(result.converged).lower()}",
              f"dof = {result.dof}"]
    lines += [f"warning = {w}" for w in result.warnings]
    txt = stem.with_suffix(".txt")
    txt.write_text("\n".join(lines) + "\n", encoding="utf-8")
    csv = stem.with_suffix(".csv")
    with open(csv, "w", encoding="utf-8") as fh:
        fh.write("param,value,stderr\n")
        for n, v, e in rows:
            fh.write(f"{n},{FMT % v},{FMT % e}\n")
    return [txt, csv]
