"""
Command-line front end.

    rydcav spectrum CONFIG [--grid START:STOP:N] [--out DIR]
    rydcav fit CSV [--lock-detuning MHZ] [--out DIR]
    rydcav sweep CONFIG --var {E_LO,E_SIG} [--range START:STOP:N] [--repeats N]
    rydcav validate CONFIG

Exit codes: 0 success, 1 input error, 2 degenerate result (partial output
written). RYD_SEED overrides the scenario seed.
"""

import argparse
import logging
import math
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .calib import MHZ, parse_quantity
from .cavity import finesse
from .errors import (ConfigError, DataFormatError, DegenerateDoublet, LinearRegionNotFound,
                     NoInteriorMax, RydcavError)
from .hetdyne import sweep_lo, sweep_sig
from .io import (fit_record, metric_record, quantity, write_csv, write_json, write_spectrum_csv,
                 write_svg)
from .scenario import load_scenario
from .spectro import (at_splitting_to_field, extract_kappa, fit_voigt_doublet, peak_curve,
                      read_spectrum_csv, scan_spectrum)

log = logging.getLogger("rydcav")

DEGENERATE = (DegenerateDoublet, NoInteriorMax, LinearRegionNotFound)


def _triple(text, kind, what):
    parts = text.split(":")
    if len(parts) != 3:
        raise ConfigError(f"{what} must look like START:STOP:N, got {text!r}")
    try:
        start = parse_quantity(parts[0].strip(), kind)
        stop = parse_quantity(parts[1].strip(), kind)
        n = int(parts[2])
    except ValueError as exc:
        raise ConfigError(f"{what}: {exc}") from None
    if not stop > start:
        raise ConfigError(f"{what}: STOP must exceed START")
    return start, stop, n


def _scenario_block(scn):
    rx = scn.receiver
    out = {
        "name": scn.name,
        "mode": scn.mode,
        "probe_rabi": quantity(scn.drives.probe_rabi / MHZ, "2pi_MHz", "config"),
        "probe_rabi_in_cell": quantity(rx.probe_rabi / MHZ, "2pi_MHz", "derived"),
        "coupling_rabi": quantity(scn.drives.coupling_rabi / MHZ, "2pi_MHz", "derived"),
        "e_lo": quantity(scn.e_lo * 1e3 / 100, "mV/cm", "config"),
        "lo_rabi": quantity(rx.lo_rabi / MHZ, "2pi_MHz", "derived"),
        "density": quantity(scn.cell.density, "m^-3", "derived"),
    }
    if scn.cavity is not None:
        t_atom = float(rx.single_pass_transmission())
        out["cell_transmission"] = quantity(rx.cavity.cell_transmission, "1", "derived")
        out["empty_finesse"] = quantity(finesse(rx.cavity.with_cell_transmission(1.0)), "1", "derived")
        out["loaded_finesse"] = quantity(finesse(rx.cavity, t_atom), "1", "derived")
        out["single_pass_transmission"] = quantity(t_atom, "1", "derived")
    return out


def _write_fit_outputs(out, trace, fit, kappa, extra):
    x = trace.detuning
    write_csv(out / "overlay.csv", ["detuning_MHz", "data", "fit", "peak_1", "peak_2"],
              [x / MHZ, trace.values, fit.evaluate(x), peak_curve(fit, 0, x), peak_curve(fit, 1, x)],
              [f"kernel: {fit.kernel}"])
    write_json(out / "fit.json", {"status": "ok", **extra, "fit": fit_record(fit, kappa)})
    write_svg(out / "spectrum.svg", [(x / MHZ, trace.values, "data"), (x / MHZ, fit.evaluate(x), "fit")],
              "coupling detuning (MHz)", "transmission (a.u.)")


def cmd_spectrum(args):
    scn = load_scenario(args.config)
    out = Path(args.out or scn.output_dir)
    if args.grid:
        start, stop, n = _triple(args.grid, "angular", "--grid")
        grid = np.linspace(start, stop, n)
    else:
        grid = scn.spectrum_grid()
    if grid.size < 50:
        raise ConfigError(f"--grid needs at least 50 points, got {grid.size}")
    trace = scan_spectrum(scn.receiver, grid)
    write_spectrum_csv(out / "spectrum.csv", trace, [f"scenario: {scn.name}"])
    extra = {"scenario": _scenario_block(scn)}
    try:
        fit = fit_voigt_doublet(trace, kernel=scn.spectrum["kernel"], slope=scn.spectrum["slope"])
    except DegenerateDoublet as exc:
        write_json(out / "fit.json", {"status": "degenerate", "diagnostic": str(exc), **extra})
        write_svg(out / "spectrum.svg", [(trace.detuning_mhz, trace.values, "data")],
                  "coupling detuning (MHz)", "transmission (a.u.)")
        raise
    kappa = extract_kappa(fit, scn.lock_detuning)
    e_fit = at_splitting_to_field(fit, scn.system)
    extra["e_lo_from_splitting"] = quantity(e_fit * 1e3 / 100, "mV/cm", "derived")
    _write_fit_outputs(out, trace, fit, kappa, extra)
    print(f"kappa = {kappa.value:.6g} {kappa.unit}  splitting = {fit.splitting / MHZ:.4f} MHz  -> {out}")
    return 0


def cmd_fit(args):
    trace = read_spectrum_csv(args.csv, args.config_tag)
    out = Path(args.out or Path(args.csv).parent)
    lock = args.lock_detuning * MHZ
    fit = fit_voigt_doublet(trace, kernel=args.kernel, slope=args.slope)
    kappa = extract_kappa(fit, lock)
    _write_fit_outputs(out, trace, fit, kappa, {"source": str(args.csv)})
    print(f"kappa = {kappa.value:.6g} {kappa.unit}  splitting = {fit.splitting / MHZ:.4f} MHz  -> {out}")
    return 0


def _sweep_outputs(out, res, scn, settings, status="ok", diagnostic=None):
    var = res.variable
    if var == "E_LO":
        with np.errstate(divide="ignore"):
            mean_db = 20 * np.log10(res.mean)
            std_db = 20 / math.log(10) * res.std / res.mean
        cols = [res.grid, mean_db, std_db]
        header = ["value", "mean_dB", "std_dB"]
        unit = "dB re P_max"
    else:
        cols = [res.grid, res.mean, res.std, res.snr, res.noise_dbm]
        header = ["value", "mean_dB", "std_dB", "snr_dB", "noise_dB"]
        unit = "dBm"
    write_csv(out / f"sweep_{var}.csv", header, cols,
              [f"scenario: {scn.name} ({scn.mode})", f"variable: {var}", "value unit: V/m",
               f"mean_dB unit: {unit}", f"repeats: {res.repeats}"])
    payload = {
        "status": status,
        "scenario": scn.name,
        "mode": scn.mode,
        "variable": var,
        "settings": settings,
        "metrics": {k: metric_record(m) for k, m in res.metrics.items()},
    }
    if diagnostic:
        payload["diagnostic"] = diagnostic
    write_json(out / f"sweep_{var}.json", payload)
    if var == "E_LO":
        write_svg(out / f"sweep_{var}.svg", [(res.grid * 10, res.mean, "P/P_max")], "E_LO (mV/cm)", "P/P_max")
    else:
        write_svg(out / f"sweep_{var}.svg", [(res.grid * 10, res.mean, "signal"),
                                             (res.grid * 10, res.noise_dbm, "noise")],
                  "E_SIG (mV/cm)", "power (dBm)", logx=True)


def cmd_sweep(args):
    scn = load_scenario(args.config)
    out = Path(args.out or scn.output_dir)
    run = scn.run_settings()
    repeats = args.repeats if args.repeats is not None else run["repeats"]
    if repeats < 1:
        raise ConfigError("--repeats must be >= 1")
    start = stop = n = None
    if args.range:
        start, stop, n = _triple(args.range, "field", "--range")
    grid = scn.sweep_grid(args.var, start, stop, n)
    measured = not args.model
    if measured and scn.seed is None:
        raise ConfigError("noisy sweeps need a seed (scenario 'seed' or RYD_SEED)", scn.path)
    seed = scn.seed if scn.seed is not None else 0
    het = scn.heterodyne
    settings = {
        "repeats": quantity(repeats if measured else 1, "count", "config"),
        "seed": quantity(seed, "1", "config"),
        "rbw": quantity(run["rbw"], "Hz", "config"),
        "sample_rate": quantity(run["sample_rate"], "Hz", "config"),
        "duration": quantity(run["duration"], "s", "config"),
        "delta_f": quantity(het.delta_f, "Hz", "config"),
        "e_lo": quantity(het.e_lo * 10, "mV/cm", "derived"),
        "e_sig": quantity(het.e_sig * 10, "mV/cm", "config"),
        "noise_nep": quantity(het.noise.nep, "W/Hz^0.5", "derived"),
        "detected_power": quantity(het.detected_power, "W", "derived"),
    }
    kw = dict(repeats=repeats, seed=seed, rbw=run["rbw"], sample_rate=run["sample_rate"],
              duration=run["duration"], workers=args.workers)
    try:
        if args.var == "E_LO":
            res = sweep_lo(het, grid, measured=measured, **kw)
        else:
            res = sweep_sig(het, grid, measured=measured, cal=scn.calibration, **kw)
    except (NoInteriorMax, LinearRegionNotFound) as exc:
        if getattr(exc, "result", None) is not None:
            _sweep_outputs(out, exc.result, scn, settings, "degenerate", str(exc))
        raise
    _sweep_outputs(out, res, scn, settings)
    for k, m in res.metrics.items():
        print(f"{k:>22s} = {m.value:.6g} {m.unit}")
    return 0


def cmd_validate(args):
    scn = load_scenario(args.config)
    rx = scn.receiver
    print(f"{args.config}: OK ({scn.mode})")
    print(f"  probe Rabi     {rx.probe_rabi / MHZ:.4f} x 2pi MHz (in cell)")
    print(f"  coupling Rabi  {scn.drives.coupling_rabi / MHZ:.4f} x 2pi MHz")
    print(f"  LO Rabi        {rx.lo_rabi / MHZ:.4f} x 2pi MHz at {scn.e_lo * 10:.4g} mV/cm")
    print(f"  density        {scn.cell.density:.4e} m^-3")
    if scn.cavity is not None:
        t = float(rx.single_pass_transmission())
        print(f"  cell T         {rx.cavity.cell_transmission:.4f}")
        print(f"  finesse        {finesse(rx.cavity.with_cell_transmission(1.0)):.2f} empty, "
              f"{finesse(rx.cavity, t):.2f} loaded")
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="rydcav", description="Cavity-enhanced Rydberg receiver simulator")
    p.add_argument("--version", action="version", version=f"rydcav {__version__}")
    p.add_argument("--log-level", default="WARNING")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("spectrum", help="scan and fit an EIT-AT spectrum")
    s.add_argument("config")
    s.add_argument("--grid", help="coupling detuning START:STOP:N, e.g. -8MHz:8MHz:400")
    s.add_argument("--out")
    s.set_defaults(func=cmd_spectrum)

    f = sub.add_parser("fit", help="fit a measured spectrum CSV")
    f.add_argument("csv")
    f.add_argument("--lock-detuning", type=float, default=0.0, help="MHz")
    f.add_argument("--kernel", choices=["pseudo-voigt", "voigt"], default="pseudo-voigt")
    f.add_argument("--slope", action="store_true", help="fit a linear background")
    f.add_argument("--config-tag", choices=["free-space", "cavity"], default="free-space")
    f.add_argument("--out")
    f.set_defaults(func=cmd_fit)

    w = sub.add_parser("sweep", help="E_LO working-point or E_SIG sensitivity sweep")
    w.add_argument("config")
    w.add_argument("--var", choices=["E_LO", "E_SIG"], required=True)
    w.add_argument("--range", help="START:STOP:N with field units, e.g. 10nV/cm:10mV/cm:25")
    w.add_argument("--repeats", type=int)
    w.add_argument("--model", action="store_true", help="analytic tone and floor instead of traces")
    w.add_argument("--workers", type=int, default=1)
    w.add_argument("--out")
    w.set_defaults(func=cmd_sweep)

    v = sub.add_parser("validate", help="check a scenario file")
    v.add_argument("config")
    v.set_defaults(func=cmd_validate)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 1 if exc.code not in (0, None) else 0
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    if not logging.getLogger().isEnabledFor(logging.INFO):
        warnings.simplefilter("ignore", RuntimeWarning)
    try:
        return args.func(args)
    except DEGENERATE as exc:
        print(f"degenerate result: {exc}", file=sys.stderr)
        return 2
    except (ConfigError, DataFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (RydcavError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # never leak a traceback to the user
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
