"""Experiment configuration: TOML with unit-suffixed keys (``_hz``, ``_tesla``, ``_s``).

Frequencies in the file are ordinary frequencies in Hz; they are converted to
angular frequencies when the physical parameter objects are built.
"""

from __future__ import annotations

import copy
import sys
from pathlib import Path
from typing import Any, Dict, Optional

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .core_model import (
    TWO_PI,
    QGaussianShape,
    RelaxationComponent,
    ResonatorParams,
    SpinEnsembleParams,
    zeeman_frequency,
)
from .exceptions import ConfigurationError
from .spin_dynamics import PulseSegment, PulseSequence

CONFIG_DIR = Path(__file__).with_name("configs")

# allowed keys per section; "component" and "segment" are arrays of tables
SCHEMA: Dict[str, Dict[str, Any]] = {
    "resonator": {"freq_hz": float, "kappa_i_hz": float, "kappa_c_hz": float},
    "spins": {"g_factor": float, "g_ens_hz": float, "fwhm_hz": float, "q": float,
              "polarization": float, "t1_s": float, "t2_s": float, "temperature_k": float,
              "component": list},
    "component": {"amplitude": float, "t1_s": float, "fwhm_hz": float, "q": float},
    "field": {"b0_tesla": float, "detuning_hz": float, "sweep_start_tesla": float,
              "sweep_stop_tesla": float, "sweep_points": int},
    "cw": {"freq_start_hz": float, "freq_stop_hz": float, "points": int},
    "pulse": {"pre_trigger_s": float, "segment": list},
    "segment": {"duration_s": float, "rabi_hz": float, "phase_rad": float,
                "offset_hz": float, "freq_hz": float},
    "simulation": {"dt_s": float, "sample_interval_s": float, "t_max_s": float,
                   "n_bins": int, "span_hz": float},
    "readout": {"readout_freq_hz": float, "readout_offset_hz": float, "if_freq_hz": float,
                "noise_sigma": float, "seed": int, "model": str, "probe_span_hz": float,
                "heterodyne": bool},
    "sweep": {"offset_start_hz": float, "offset_stop_hz": float, "points": int,
              "cross_section_s": float},
    "fit": {"b0_tesla": float, "column": str, "free_kappa": bool, "readout_freq_hz": float,
            "pulse_end_s": float},
    "output": {"dir": str},
}

READOUT_MODELS = ("dispersive", "coupled")


def _check_table(name: str, table: Dict[str, Any], where: str):
    allowed = SCHEMA[name]
    for key, value in table.items():
        if key not in allowed:
            raise ConfigurationError(f"unknown key '{where}.{key}'")
        kind = allowed[key]
        if kind is float:
            ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        elif kind is int:
            ok = isinstance(value, int) and not isinstance(value, bool)
        else:
            ok = isinstance(value, kind)
        if not ok:
            raise ConfigurationError(f"'{where}.{key}' must be of type {kind.__name__}")
        if kind is list:
            for i, sub in enumerate(value):
                if not isinstance(sub, dict):
                    raise ConfigurationError(f"'{where}.{key}[{i}]' must be a table")
                _check_table(key, sub, f"{where}.{key}[{i}]")


def validate(cfg: Dict[str, Any]) -> Dict[str, Any]:
    for section, table in cfg.items():
        if section not in SCHEMA or section in ("component", "segment"):
            raise ConfigurationError(f"unknown section '{section}'")
        if not isinstance(table, dict):
            raise ConfigurationError(f"'{section}' must be a table")
        _check_table(section, table, section)
    return cfg


def resolve_path(name) -> Path:
    """A config path, or the name of a shipped config such as ``paper_fig4``."""
    p = Path(name)
    if p.is_file():
        return p
    shipped = CONFIG_DIR / (p.name if p.suffix == ".toml" else p.name + ".toml")
    if shipped.is_file():
        return shipped
    raise ConfigurationError(f"config not found: {name}")


def load_config(path) -> Dict[str, Any]:
    p = resolve_path(path)
    try:
        with open(p, "rb") as fh:
            cfg = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigurationError(f"{p}: {exc}") from exc
    return validate(cfg)


def loads_config(text: str) -> Dict[str, Any]:
    try:
        return validate(tomllib.loads(text))
    except tomllib.TOMLDecodeError as exc:
        raise ConfigurationError(str(exc)) from exc


def section(cfg, name: str, required: bool = True) -> Dict[str, Any]:
    if name not in cfg:
        if required:
            raise ConfigurationError(f"missing section [{name}]")
        return {}
    return cfg[name]


def _get(table, key, where, default=None):
    if key in table:
        return table[key]
    if default is None:
        raise ConfigurationError(f"missing key '{where}.{key}'")
    return default


# ---------------------------------------------------------------------------
# builders
# ---------------------------------------------------------------------------


def build_resonator(cfg) -> ResonatorParams:
    r = section(cfg, "resonator")
    return ResonatorParams(TWO_PI * _get(r, "freq_hz", "resonator"),
                           TWO_PI * _get(r, "kappa_i_hz", "resonator"),
                           TWO_PI * _get(r, "kappa_c_hz", "resonator"))


def spin_frequency(cfg, res: Optional[ResonatorParams] = None) -> float:
    """Spin frequency from ``field.b0_tesla`` or ``field.detuning_hz`` (ws - w0)."""
    f = section(cfg, "field")
    if "b0_tesla" in f and "detuning_hz" in f:
        raise ConfigurationError("give either field.b0_tesla or field.detuning_hz, not both")
    if "detuning_hz" in f:
        res = res or build_resonator(cfg)
        return res.omega0 + TWO_PI * f["detuning_hz"]
    if "b0_tesla" in f:
        g = _get(section(cfg, "spins"), "g_factor", "spins")
        return float(zeeman_frequency(g, f["b0_tesla"]))
    raise ConfigurationError("field section needs b0_tesla or detuning_hz")


def build_spins(cfg, omega_s: Optional[float] = None) -> SpinEnsembleParams:
    s = section(cfg, "spins")
    if omega_s is None:
        omega_s = spin_frequency(cfg) if "field" in cfg and (
            "b0_tesla" in cfg["field"] or "detuning_hz" in cfg["field"]) else 0.0
    fwhm = TWO_PI * _get(s, "fwhm_hz", "spins")
    q = s.get("q", 2.0)
    shape = QGaussianShape(omega_s, fwhm, q)
    comps = s.get("component")
    if comps:
        relax = tuple(
            RelaxationComponent(
                _get(c, "amplitude", f"spins.component[{i}]"),
                _get(c, "t1_s", f"spins.component[{i}]"),
                QGaussianShape(omega_s, TWO_PI * c["fwhm_hz"], c.get("q", q)) if "fwhm_hz" in c
                else None)
            for i, c in enumerate(comps))
    else:
        relax = (RelaxationComponent(1.0, s.get("t1_s", 1e-3)),)
    return SpinEnsembleParams(
        g_factor=_get(s, "g_factor", "spins"),
        g_ens=TWO_PI * _get(s, "g_ens_hz", "spins"),
        lineshape=shape,
        relaxation=relax,
        polarization_scale=s.get("polarization", 1.0),
        gamma2=1.0 / s.get("t2_s", 2e-5),
        temperature=s.get("temperature_k", 0.065),
    )


def field_sweep(cfg) -> np.ndarray:
    f = section(cfg, "field")
    try:
        start, stop, n = f["sweep_start_tesla"], f["sweep_stop_tesla"], f["sweep_points"]
    except KeyError as exc:
        raise ConfigurationError(f"missing key 'field.{exc.args[0]}' for a field sweep") from exc
    if n < 1:
        raise ConfigurationError("field.sweep_points must be positive")
    return np.linspace(start, stop, n)


def build_pulse(cfg, omega_s: float, offset: float = None) -> PulseSequence:
    """Pulse sequence with an equilibrium pre-trigger segment.

    Segments give either ``freq_hz`` (absolute) or ``offset_hz`` from the
    spin frequency; ``offset`` (rad/s) overrides every segment's offset, as
    used by the pump sweep.
    """
    p = section(cfg, "pulse")
    segs = p.get("segment", [])
    if not segs:
        raise ConfigurationError("pulse section needs at least one [[pulse.segment]]")
    out = []
    pre = p.get("pre_trigger_s", 0.0)
    for i, s in enumerate(segs):
        where = f"pulse.segment[{i}]"
        if "freq_hz" in s and "offset_hz" in s:
            raise ConfigurationError(f"{where}: give freq_hz or offset_hz, not both")
        if offset is not None:
            wp = omega_s + offset
        elif "freq_hz" in s:
            wp = TWO_PI * s["freq_hz"]
        else:
            wp = omega_s + TWO_PI * s.get("offset_hz", 0.0)
        out.append(PulseSegment(_get(s, "duration_s", where), wp,
                                TWO_PI * s.get("rabi_hz", 0.0), s.get("phase_rad", 0.0)))
    if pre > 0:
        out.insert(0, PulseSegment(pre, out[0].omega_p, 0.0))
    return PulseSequence(tuple(out))


def simulation_settings(cfg) -> Dict[str, Any]:
    s = section(cfg, "simulation")
    out = {"dt": _get(s, "dt_s", "simulation"),
           "sample_interval": s.get("sample_interval_s", s["dt_s"] if "dt_s" in s else None),
           "t_max": _get(s, "t_max_s", "simulation"),
           "n_bins": s.get("n_bins", 2001),
           "span": TWO_PI * s["span_hz"] if "span_hz" in s else None}
    return out


def readout_settings(cfg) -> Dict[str, Any]:
    r = section(cfg, "readout", required=False)
    model = r.get("model", "dispersive")
    if model not in READOUT_MODELS:
        raise ConfigurationError(f"readout.model must be one of {READOUT_MODELS}")
    if "readout_freq_hz" in r and "readout_offset_hz" in r:
        raise ConfigurationError("give readout.readout_freq_hz or readout_offset_hz, not both")
    return {
        "omega_r": TWO_PI * r["readout_freq_hz"] if "readout_freq_hz" in r else None,
        "offset": TWO_PI * r.get("readout_offset_hz", 0.0),
        "if_freq": TWO_PI * r.get("if_freq_hz", 40e6),
        "noise_sigma": r.get("noise_sigma", 0.0),
        "seed": r.get("seed", 0),
        "model": model,
        "probe_span": TWO_PI * r["probe_span_hz"] if "probe_span_hz" in r else None,
        "heterodyne": r.get("heterodyne", False),
    }


def with_overrides(cfg, seed: Optional[int] = None) -> Dict[str, Any]:
    """Copy of ``cfg`` with command-line overrides applied."""
    out = copy.deepcopy(cfg)
    if seed is not None:
        out.setdefault("readout", {})["seed"] = int(seed)
    return validate(out)
