"""Command-line front end: ``spinreadout <subcommand> --config <file> --out <dir>``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure, 4 fit failure.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import hashlib
import json
import logging
import sys
import warnings
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from . import __version__
from . import config as C
from . import datafiles as D
from . import pipeline as P
from .core_model import TWO_PI
from .exceptions import ConfigurationError, FitError, SpinReadoutError
from .fitting import (
    fit_biexponential,
    fit_coupled,
    fit_nonlinear_gt,
    fit_notch,
    fit_qgaussian,
)
from .cw_spectra import s21_bare
from .signal_chain import calibrate_phase

log = logging.getLogger("spinreadout")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_FIT = 0, 2, 3, 4
FIT_MODELS = ("notch", "coupled", "qgaussian", "biexp", "gt")


class FitFailure(SpinReadoutError):
    """A fit ran but did not converge; diagnostics were written."""


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out: Path, command: str, cfg, seed, outputs: List[Path], started: str,
                   info: Optional[Dict] = None) -> Path:
    """RunManifest: config snapshot, version, seed, timestamps and output digests."""
    manifest = {
        "command": command,
        "version": __version__,
        "seed": seed,
        "started": started,
        "finished": _now(),
        "config": cfg,
        "outputs": [{"path": p.name, "sha256": _sha256(p)} for p in outputs],
    }
    if info:
        manifest["info"] = info
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=float) + "\n",
                    encoding="utf-8")
    return path


def _hz(result_names, names):
    return {n: TWO_PI for n in result_names if n in names}


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_simulate_cw(cfg, out: Path, threads: int = 1):
    smap, dips = P.simulate_cw(cfg, threads=threads)
    files = [D.write_map(out / "cw_map.csv", smap),
             D.write_table(out / "cw_dips.csv", {"b0_tesla": smap.field_axis,
                                                 "lower_dip_hz": dips[:, 0] / TWO_PI,
                                                 "upper_dip_hz": dips[:, 1] / TWO_PI})]
    return files, {}


def cmd_simulate_pulse(cfg, out: Path, seed=None):
    run = P.simulate_pulse(cfg, seed=seed)
    files = [D.write_shift(out / "shift.csv", run.shift), D.write_iq(out / "iq.csv", run.iq)]
    if run.measured is not None:
        files.append(D.write_shift(out / "measured_shift.csv", run.measured))
    info = {"readout_freq_hz": run.omega_r / TWO_PI,
            "equilibrium_shift_hz": run.equilibrium_shift / TWO_PI,
            "pulse_end_s": run.shift.pulse_end,
            "notes": run.notes}
    if run.calibration is not None:
        info["linear_range_hz"] = run.calibration.linear_range / TWO_PI
    info_path = out / "pulse_info.json"
    info_path.write_text(json.dumps(info, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    files.append(info_path)
    return files, info


def cmd_sweep_pump(cfg, out: Path, threads: int = 1):
    sw = P.sweep_pump(cfg, threads=threads)
    n_t = sw.times.size
    files = [
        D.write_table(out / "sweep_recovery.csv", {
            "offset_hz": np.repeat(sw.offsets / TWO_PI, n_t),
            "time_s": np.tile(sw.times, sw.offsets.size),
            "delta_f_hz": sw.shifts.ravel() / TWO_PI}),
        D.write_table(out / "sweep_amplitudes.csv", {
            "offset_hz": sw.offsets / TWO_PI,
            "A1_hz": sw.amplitudes[:, 0] / TWO_PI, "A1_err_hz": sw.amplitude_err[:, 0] / TWO_PI,
            "A2_hz": sw.amplitudes[:, 1] / TWO_PI, "A2_err_hz": sw.amplitude_err[:, 1] / TWO_PI,
            "cross_section_hz": sw.cross_section / TWO_PI}),
    ]
    c = sw.center_fit
    files += D.write_fit_report(out / "fit_center_biexp", c,
                                scale={"A1": TWO_PI, "A2": TWO_PI, "offset": TWO_PI},
                                units={"A1": "Hz", "A2": "Hz", "offset": "Hz",
                                       "T1_fast": "s", "T1_slow": "s"})
    info = {"T1_fast_s": c["T1_fast"], "T1_slow_s": c["T1_slow"]}
    for key, r in sw.lineshape_fits.items():
        files += D.write_fit_report(out / f"fit_lineshape_{key}", r,
                                    scale={"center": TWO_PI, "fwhm": TWO_PI, "amplitude": TWO_PI},
                                    units={"center": "Hz", "fwhm": "Hz", "amplitude": "Hz"})
        info[f"{key}_fwhm_hz"] = r["fwhm"] / TWO_PI
        info[f"{key}_q"] = r["q"]
    if "fast" not in sw.lineshape_fits:
        info["fast_profile"] = "flat at 0 (single relaxation component)"
    return files, info


def cmd_calibrate(cfg, out: Path):
    res = C.build_resonator(cfg)
    rs = C.readout_settings(cfg)
    cal = calibrate_phase(res, probe_span=rs["probe_span"])
    span = rs["probe_span"] or 20.0 * res.kappa
    w = res.omega0 + np.linspace(-0.5 * span, 0.5 * span, 2001)
    # probing at w reads like the resonator pulled by omega_r - w
    files = [D.write_table(out / "calibration_phase.csv", {
        "freq_hz": w / TWO_PI, "phase_rad": np.angle(s21_bare(w, res)),
        "linear_rad": cal.phi_eq + cal.slope * (cal.omega_r - w)})]
    txt = out / "calibration.txt"
    txt.write_text(
        f"readout_freq_hz = {cal.omega_r / TWO_PI:.10g}\n"
        f"slope_rad_per_hz = {cal.slope * TWO_PI:.10g}\n"
        f"linear_range_hz = {cal.linear_range / TWO_PI:.10g}\n"
        f"phi_eq_rad = {cal.phi_eq:.10g}\n", encoding="utf-8")
    files.append(txt)
    return files, {"readout_freq_hz": cal.omega_r / TWO_PI,
                   "linear_range_hz": cal.linear_range / TWO_PI}


def _pulse_info(data: Path) -> Dict:
    p = data.parent / "pulse_info.json"
    if p.is_file():
        return json.loads(p.read_text(encoding="utf-8"))
    return {}


def _pulse_end(cfg, data: Path):
    fit = cfg.get("fit", {})
    if "pulse_end_s" in fit:
        return fit["pulse_end_s"]
    info = _pulse_info(data)
    if info.get("pulse_end_s") is not None:
        return info["pulse_end_s"]
    if "pulse" in cfg:
        res = C.build_resonator(cfg)
        return C.build_pulse(cfg, res.omega0).duration
    return None


def run_fit(model: str, data: Path, cfg):
    """Dispatch a fit; returns the result, output scaling, units and extra rows."""
    fit_cfg = cfg.get("fit", {})
    hz = {}
    units = {}
    extra = {}
    if model == "notch":
        omega, s21 = D.read_spectrum(data, fit_cfg.get("b0_tesla"))
        nf = fit_notch(omega, s21)
        r = nf.result
        hz = _hz(r.names, ("omega0", "kappa_i", "kappa_c"))
        units = {n: "Hz" for n in hz}
        extra = {"Q": (nf.quality_factor, nf.quality_factor_err)}
    elif model == "coupled":
        omega, s21 = D.read_spectrum(data, fit_cfg.get("b0_tesla"))
        res = C.build_resonator(cfg)
        r = fit_coupled(omega, np.abs(s21) ** 2, res, free_kappa=fit_cfg.get("free_kappa", False))
        hz = _hz(r.names, ("g_ens", "gamma2_star", "omega_s", "kappa_i"))
        units = {n: "Hz" for n in hz}
    elif model == "qgaussian":
        tab = D.read_table(data)
        xcol = "offset_hz" if "offset_hz" in tab else "freq_hz"
        col = fit_cfg.get("column", "A2_hz")
        if xcol not in tab or col not in tab:
            raise ConfigurationError(f"{data}: need columns {xcol} and {col}")
        y = tab[col]
        y = y if y[np.argmax(np.abs(y))] >= 0 else -y
        r = fit_qgaussian(TWO_PI * tab[xcol], TWO_PI * y)
        hz = _hz(r.names, ("center", "fwhm", "amplitude"))
        units = {n: "Hz" for n in hz}
    elif model == "biexp":
        trace = D.read_shift(data, _pulse_end(cfg, data))
        if trace.pulse_end is not None:
            trace = trace.after_pulse()
        r = fit_biexponential(trace.times, trace.delta_omega_r / TWO_PI)
        units = {"A1": "Hz", "A2": "Hz", "offset": "Hz", "T1_fast": "s", "T1_slow": "s"}
    elif model == "gt":
        iq = D.read_iq(data)
        res = C.build_resonator(cfg)
        spins = C.build_spins(cfg, omega_s=C.spin_frequency(cfg, res))
        info = _pulse_info(data)
        if "readout_freq_hz" in fit_cfg:
            omega_r = TWO_PI * fit_cfg["readout_freq_hz"]
        elif "readout_freq_hz" in info:
            omega_r = TWO_PI * info["readout_freq_hz"]
        else:
            raise ConfigurationError("gt fit needs fit.readout_freq_hz (or pulse_info.json)")
        t0 = _pulse_end(cfg, data) or 0.0
        keep = iq.times >= t0 - 1e-12
        r = fit_nonlinear_gt(iq.times[keep] - t0, np.abs(iq.s21[keep]), res, spins, omega_r)
        units = {"T1_fast": "s", "T1_slow": "s"}
    else:
        raise ConfigurationError(f"unknown fit model '{model}' (choose from {FIT_MODELS})")
    return r, hz, units, extra


def cmd_fit(model: str, data: Path, cfg, out: Path):
    try:
        r, hz, units, extra = run_fit(model, data, cfg)
    except FitError as exc:
        diag = out / f"fit_{model}_diagnostics.json"
        diag.write_text(json.dumps({"error": str(exc), "diagnostics": exc.diagnostics},
                                   indent=2, default=float) + "\n", encoding="utf-8")
        exc.diagnostics["dump"] = str(diag)
        raise
    files = D.write_fit_report(out / f"fit_{model}", r, scale=hz, units=units, extra=extra)
    info = {"converged": r.converged, "params": {n: float(v) / hz.get(n, 1.0)
                                                 for n, v in zip(r.names, r.params)}}
    if not r.converged:
        diag = out / f"fit_{model}_diagnostics.json"
        diag.write_text(json.dumps({"error": "fit did not converge", **info}, indent=2,
                                   default=float) + "\n", encoding="utf-8")
        raise FitFailure(f"{model} fit did not converge after {r.iterations} iterations; "
                         f"see {diag}")
    return files, info


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spinreadout", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True,
                        help="TOML config file or shipped name (paper_fig3, paper_fig4, paper_fig5)")
    common.add_argument("--out", default=None, help="output directory (default: output.dir or .)")
    common.add_argument("--seed", type=int, default=None, help="override readout.seed")
    common.add_argument("--threads", type=int, default=1, help="worker threads")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate-cw", parents=[common], help="CW field sweep through the crossing")
    sub.add_parser("simulate-pulse", parents=[common], help="pulsed saturation recovery")
    sub.add_parser("sweep-pump", parents=[common], help="pump-frequency sweep and lineshapes")
    sub.add_parser("calibrate", parents=[common], help="phase calibration of the resonator")
    fp = sub.add_parser("fit", parents=[common], help="fit a data file")
    fp.add_argument("model", choices=FIT_MODELS)
    fp.add_argument("data", type=Path)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    started = _now()
    try:
        if args.seed is not None and args.seed < 0:
            raise ConfigurationError("--seed must be non-negative")
        if args.threads < 1:
            raise ConfigurationError("--threads must be at least 1")
        cfg = C.with_overrides(C.load_config(args.config), seed=args.seed)
        out = Path(args.out or cfg.get("output", {}).get("dir", "."))
        out.mkdir(parents=True, exist_ok=True)
        seed = cfg.get("readout", {}).get("seed", 0)
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            if args.command == "simulate-cw":
                files, info = cmd_simulate_cw(cfg, out, args.threads)
            elif args.command == "simulate-pulse":
                files, info = cmd_simulate_pulse(cfg, out)
            elif args.command == "sweep-pump":
                files, info = cmd_sweep_pump(cfg, out, args.threads)
            elif args.command == "calibrate":
                files, info = cmd_calibrate(cfg, out)
            else:
                files, info = cmd_fit(args.model, args.data, cfg, out)
        write_manifest(out, args.command if args.command != "fit" else f"fit {args.model}",
                       cfg, seed, files, started, info)
        for f in files:
            log.info("wrote %s", f)
        return EXIT_OK
    except (FitError, FitFailure) as exc:
        print(f"spinreadout: fit failed: {exc}", file=sys.stderr)
        return EXIT_FIT
    except ConfigurationError as exc:
        print(f"spinreadout: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SpinReadoutError, ArithmeticError, ValueError, np.linalg.LinAlgError) as exc:
        print(f"spinreadout: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
