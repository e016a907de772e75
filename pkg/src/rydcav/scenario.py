"""
Scenario files: a versioned YAML tree with unit-suffixed values.

Every value is validated against ``SCHEMA``; errors name the file, the
dotted key and the line it came from. The presence of a ``cavity`` section
selects the cavity configuration.
"""

import math
import os
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
import yaml

from . import atomphys as ap
from .calib import (EA0, MHZ, TWO_PI, AntennaCalibration, optical_rabi, parse_quantity,
                    rabi_from_field, watts_to_dbm)
from .cavity import CavityGeometry
from .chain import Quadrature, Receiver
from .errors import ConfigError

SCHEMA_VERSION = 1

# key -> (kind, required, default)
SCHEMA = {
    "atoms": {
        "probe_wavelength": ("length", False, 852.347e-9),
        "coupling_wavelength": ("length", False, 509.0e-9),
        "mw_frequency": ("frequency", False, 6.947e9),
        "gamma_e": ("angular", False, TWO_PI * 5.234e6),
        "gamma_r1": ("angular", False, TWO_PI * 10e3),
        "gamma_r2": ("angular", False, TWO_PI * 10e3),
        "dephasing_r1": ("angular", False, TWO_PI * 100e3),
        "dephasing_r2": ("angular", False, TWO_PI * 100e3),
        "mu_ge": ("dipole", False, None),
        "mu_er1": ("dipole", True, None),
        "mu_mw": ("dipole", True, None),
    },
    "cell": {
        "length": ("length", False, 0.01),
        "temperature": ("temperature", False, 293.0),
        "probe_waist": ("length", False, 50e-6),
        "coupling_waist": ("length", False, 80e-6),
        "participation": ("dimensionless", False, 0.19),
        "number_density": ("dimensionless", False, None),
    },
    "drives": {
        "probe_power": ("power", False, None),
        "probe_rabi": ("angular", False, None),
        "probe_reference_power": ("power", False, None),
        "probe_reference_rabi": ("angular", False, None),
        "coupling_power": ("power", False, None),
        "coupling_rabi": ("angular", False, None),
        "e_lo": ("field", True, None),
        "probe_detuning": ("angular", False, 0.0),
        "lock_detuning": ("angular", False, 0.0),
        "mw_detuning": ("angular", False, 0.0),
    },
    "spectrum": {
        "start": ("angular", False, None),
        "stop": ("angular", False, None),
        "span": ("dimensionless", False, 2.0),
        "points": ("int", False, 400),
        "kernel": ("str", False, "pseudo-voigt"),
        "slope": ("bool", False, False),
    },
    "quadrature": {
        "method": ("str", False, "sinh"),
        "n_start": ("int", False, 257),
        "rtol": ("dimensionless", False, 1e-5),
        "max_nodes": ("int", False, 16385),
    },
    "cavity": {
        "R1": ("dimensionless", False, 0.95),
        "R2": ("dimensionless", False, 0.98),
        "R3": ("dimensionless", False, 0.999),
        "R4": ("dimensionless", False, 0.999),
        "round_trip_length": ("length", False, 0.480),
        "cell_transmission": ("auto_or_dimensionless", False, "auto"),
        "target_finesse": ("dimensionless", False, 20.0),
    },
    "heterodyne": {
        "e_lo": ("field_or_optimum", False, "optimum"),
        "e_sig": ("field", False, 0.0),
        "delta_f": ("frequency", False, 150e3),
        "delta_phi": ("angle", False, 0.0),
        "responsivity": ("dimensionless", False, 1.0),
        "detected_power": ("power", False, None),
        "nep": ("dimensionless", False, None),
        "flicker_corner": ("frequency", False, 0.0),
        "rin": ("dimensionless", False, 0.0),
        "load": ("dimensionless", False, 50.0),
        "phase_samples": ("int", False, 32),
        "rbw": ("frequency", False, 1.0),
        "sample_rate": ("frequency", False, 2e6),
        "duration": ("time", False, 2.0),
        "repeats": ("int", False, 100),
        "anchor": ("mapping", False, None),
    },
    "anchor": {
        "field": ("field", False, None),
        "floor": ("power", False, None),
        "rbw": ("frequency", False, 1.0),
        "config": ("str", False, None),
    },
    "sweeps.e_lo": {
        "start": ("field", True, None),
        "stop": ("field", True, None),
        "points": ("int", False, 15),
    },
    "sweeps.e_sig": {
        "start": ("field", True, None),
        "stop": ("field", True, None),
        "points": ("int", False, 19),
    },
    "calibration": {
        "c_ant": ("dimensionless", False, None),
        "anchor_power": ("power", False, None),
        "anchor_field": ("field", False, None),
        "frequency": ("frequency", False, 6.947e9),
    },
}
TOP_LEVEL = {"schema_version", "name", "seed", "output_dir", "atoms", "cell", "drives", "spectrum",
             "quadrature", "cavity", "heterodyne", "sweeps", "calibration"}


def _line_map(node, prefix=(), out=None):
    """Map key paths to 1-based source lines using the composed YAML nodes."""
    out = {} if out is None else out
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            key = prefix + (k.value,)
            out[key] = k.start_mark.line + 1
            _line_map(v, key, out)
    return out


class _Reader:
    def __init__(self, path, data, lines):
        self.path = str(path)
        self.data = data
        self.lines = lines

    def line(self, keys):
        keys = tuple(keys)
        while keys:
            if keys in self.lines:
                return self.lines[keys]
            keys = keys[:-1]
        return None

    def fail(self, message, keys=()):
        raise ConfigError(message, self.path, self.line(keys))

    def section(self, keys, schema_key, present_required=False):
        node = self.data
        for k in keys:
            node = node.get(k) if isinstance(node, dict) else None
        if node is None:
            if present_required:
                self.fail(f"missing section '{'.'.join(keys)}'", keys[:-1])
            node = {}
        if not isinstance(node, dict):
            self.fail(f"section '{'.'.join(keys)}' must be a mapping", keys)
        schema = SCHEMA[schema_key]
        for k in node:
            if k not in schema:
                self.fail(f"unknown key '{'.'.join(keys + (k,))}'", keys + (k,))
        out = {}
        for k, (kind, required, default) in schema.items():
            kp = keys + (k,)
            if k not in node or node[k] is None:
                if required:
                    self.fail(f"missing required field '{'.'.join(kp)}'", keys)
                out[k] = default
                continue
            out[k] = self.convert(node[k], kind, kp)
        return out

    def convert(self, value, kind, keys):
        name = ".".join(keys)
        try:
            if kind == "int":
                if isinstance(value, bool) or not isinstance(value, int):
                    raise ValueError("expected an integer")
                return value
            if kind == "str":
                if not isinstance(value, str):
                    raise ValueError("expected a string")
                return value
            if kind == "bool":
                if not isinstance(value, bool):
                    raise ValueError("expected true or false")
                return value
            if kind == "mapping":
                if not isinstance(value, dict):
                    raise ValueError("expected a mapping")
                return value
            if kind == "auto_or_dimensionless":
                return "auto" if value == "auto" else parse_quantity(value, "dimensionless")
            if kind == "field_or_optimum":
                return "optimum" if value == "optimum" else parse_quantity(value, "field")
            return parse_quantity(value, kind)
        except ValueError as exc:
            self.fail(f"{name}: {exc}", keys)


@dataclass
class Scenario:
    """Parsed scenario; see ``presets/*.yaml`` for annotated examples."""

    path: str
    name: str
    seed: int
    output_dir: str
    system: ap.LadderSystem
    cell: ap.VaporCell
    drives: ap.DriveFields
    e_lo: float
    lock_detuning: float
    quadrature: Quadrature
    spectrum: dict
    cavity: CavityGeometry = None
    cavity_settings: dict = None
    heterodyne_settings: dict = field(default_factory=dict)
    sweeps: dict = field(default_factory=dict)
    calibration: AntennaCalibration = None

    @property
    def mode(self):
        return "cavity" if self.cavity is not None else "free-space"

    @cached_property
    def receiver(self):
        """Receiver at the spectroscopy LO; fixes the cavity's passive loss."""
        target = None
        if self.cavity is not None and self.cavity_settings["cell_transmission"] == "auto":
            target = self.cavity_settings["target_finesse"]
        return Receiver(self.system, self.cell, self.drives, self.cavity, target,
                        rabi_from_field(self.e_lo, self.system.mu_mw), self.lock_detuning, self.quadrature)

    def spectrum_grid(self, start=None, stop=None, points=None):
        sp = self.spectrum
        lo = self.receiver.lo_rabi
        start = start if start is not None else (sp["start"] if sp["start"] is not None else -sp["span"] * lo)
        stop = stop if stop is not None else (sp["stop"] if sp["stop"] is not None else sp["span"] * lo)
        return np.linspace(start, stop, points or sp["points"])

    def sweep_grid(self, var, start=None, stop=None, points=None):
        key = "e_lo" if var == "E_LO" else "e_sig"
        cfg = self.sweeps.get(key)
        if cfg is None and (start is None or stop is None):
            raise ConfigError(f"no sweeps.{key} section and no --range given", self.path)
        start = start if start is not None else cfg["start"]
        stop = stop if stop is not None else cfg["stop"]
        points = points or (cfg["points"] if cfg else 15)
        if var == "E_LO":
            return np.linspace(start, stop, points)
        return np.geomspace(start, stop, points)

    def _base_heterodyne(self, e_lo):
        h = self.heterodyne_settings
        from .hetdyne import HeterodyneScenario, NoiseModel
        noise = NoiseModel(h["nep"] or 0.0, h["flicker_corner"], h["rin"])
        return HeterodyneScenario(self.receiver, e_lo, h["e_sig"], h["delta_f"], h["delta_phi"], noise,
                                  h["responsivity"], h["detected_power"] or 1e-6, h["load"],
                                  h["phase_samples"])

    @cached_property
    def working_point(self):
        """Heterodyne LO field: configured, or the optimum of the E_LO sweep."""
        e = self.heterodyne_settings["e_lo"]
        if e != "optimum":
            return e
        from .hetdyne import sweep_lo
        res = sweep_lo(self._base_heterodyne(self.e_lo), self.sweep_grid("E_LO"), measured=False)
        return res.metrics["optimum_e_lo"].value

    @cached_property
    def heterodyne(self):
        """Heterodyne scenario at the working point with the noise scale resolved."""
        from .hetdyne import anchor_noise
        h = self.heterodyne_settings
        scn = self._base_heterodyne(self.working_point)
        anchor = h["anchor"]
        if anchor is None:
            return scn
        if anchor.get("config"):
            ref = load_scenario(Path(self.path).parent / anchor["config"]).heterodyne
            return scn.replace(noise=ref.noise, detected_power=ref.detected_power,
                               responsivity=ref.responsivity, load=ref.load)
        return anchor_noise(scn, anchor["field"], float(watts_to_dbm(anchor["floor"])), anchor["rbw"])

    def run_settings(self):
        h = self.heterodyne_settings
        return {k: h[k] for k in ("rbw", "sample_rate", "duration", "repeats")}


def _require_seed(data, reader):
    env = os.environ.get("RYD_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise ConfigError(f"RYD_SEED must be an integer, got {env!r}") from None
    seed = data.get("seed")
    if seed is None:
        return None
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        reader.fail("seed must be a non-negative integer", ("seed",))
    return seed


def load_scenario(path):
    """Parse and validate a scenario file."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(str(exc), str(path)) from None
    try:
        node = yaml.compose(text, Loader=yaml.SafeLoader)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError(f"YAML syntax error: {getattr(exc, 'problem', exc)}", str(path),
                          mark.line + 1 if mark else None) from None
    if not isinstance(data, dict):
        raise ConfigError("scenario must be a mapping at top level", str(path), 1)
    r = _Reader(path, data, _line_map(node))
    for k in data:
        if k not in TOP_LEVEL:
            r.fail(f"unknown top-level key '{k}'", (k,))
    if data.get("schema_version") != SCHEMA_VERSION:
        r.fail(f"schema_version must be {SCHEMA_VERSION}", ("schema_version",))

    at = r.section(("atoms",), "atoms", present_required=True)
    try:
        system = ap.LadderSystem(at["probe_wavelength"], at["coupling_wavelength"], at["mw_frequency"],
                                 at["gamma_e"], at["gamma_r1"], at["gamma_r2"], at["dephasing_r1"],
                                 at["dephasing_r2"], at["mu_ge"], at["mu_er1"], at["mu_mw"])
    except ValueError as exc:
        r.fail(f"atoms: {exc}", ("atoms",))

    ce = r.section(("cell",), "cell")
    try:
        cell = ap.VaporCell(ce["length"], ce["temperature"], ce["probe_waist"], ce["coupling_waist"],
                            ce["participation"], ce["number_density"])
    except ValueError as exc:
        r.fail(f"cell: {exc}", ("cell",))

    dr = r.section(("drives",), "drives", present_required=True)
    if dr["probe_rabi"] is not None:
        probe = dr["probe_rabi"]
    elif dr["probe_power"] is not None:
        if dr["probe_reference_power"] is not None and dr["probe_reference_rabi"] is not None:
            probe = dr["probe_reference_rabi"] * math.sqrt(dr["probe_power"] / dr["probe_reference_power"])
        else:
            probe = optical_rabi(dr["probe_power"], cell.probe_waist, system.mu_ge)
    else:
        r.fail("drives needs probe_rabi or probe_power", ("drives",))
    if dr["coupling_rabi"] is not None:
        coupling = dr["coupling_rabi"]
    elif dr["coupling_power"] is not None:
        coupling = optical_rabi(dr["coupling_power"], cell.coupling_waist, system.mu_er1)
    else:
        r.fail("drives needs coupling_rabi or coupling_power", ("drives",))
    if not dr["e_lo"] > 0:
        r.fail("drives.e_lo must be > 0", ("drives", "e_lo"))
    drives = ap.DriveFields(probe, coupling, 0.0, dr["probe_detuning"], dr["lock_detuning"], dr["mw_detuning"])

    q = r.section(("quadrature",), "quadrature")
    if q["method"] not in ("sinh", "trapezoid", "gauss-hermite"):
        r.fail("quadrature.method must be sinh, trapezoid or gauss-hermite", ("quadrature", "method"))
    if q["n_start"] < 3 or q["n_start"] % 2 == 0:
        r.fail("quadrature.n_start must be odd and >= 3", ("quadrature", "n_start"))
    quad = Quadrature(q["method"], q["n_start"], q["rtol"], q["max_nodes"])

    sp = r.section(("spectrum",), "spectrum")
    if sp["points"] < 50:
        r.fail("spectrum.points must be >= 50", ("spectrum", "points"))
    if sp["kernel"] not in ("pseudo-voigt", "voigt"):
        r.fail("spectrum.kernel must be pseudo-voigt or voigt", ("spectrum", "kernel"))

    cavity = cav_cfg = None
    if "cavity" in data:
        cav_cfg = r.section(("cavity",), "cavity")
        t_cell = 1.0 if cav_cfg["cell_transmission"] == "auto" else cav_cfg["cell_transmission"]
        try:
            cavity = CavityGeometry(cav_cfg["R1"], cav_cfg["R2"], cav_cfg["R3"], cav_cfg["R4"],
                                    cav_cfg["round_trip_length"], t_cell)
        except ValueError as exc:
            r.fail(f"cavity: {exc}", ("cavity",))

    het = r.section(("heterodyne",), "heterodyne")
    if het["anchor"] is not None:
        het["anchor"] = r.section(("heterodyne", "anchor"), "anchor")
        a = het["anchor"]
        if a["config"] is None and (a["field"] is None or a["floor"] is None):
            r.fail("heterodyne.anchor needs either config or both field and floor", ("heterodyne", "anchor"))
    if het["delta_f"] == 0:
        r.fail("heterodyne.delta_f must be non-zero", ("heterodyne", "delta_f"))
    if het["repeats"] < 1:
        r.fail("heterodyne.repeats must be >= 1", ("heterodyne", "repeats"))

    sweeps = {}
    if "sweeps" in data:
        sw = data["sweeps"]
        if not isinstance(sw, dict):
            r.fail("sweeps must be a mapping", ("sweeps",))
        for k in sw:
            if k not in ("e_lo", "e_sig"):
                r.fail(f"unknown key 'sweeps.{k}'", ("sweeps", k))
            sweeps[k] = r.section(("sweeps", k), f"sweeps.{k}")

    cal = None
    if "calibration" in data:
        c = r.section(("calibration",), "calibration")
        if c["c_ant"] is not None:
            cal = AntennaCalibration(c["c_ant"], c["frequency"])
        elif c["anchor_power"] is not None and c["anchor_field"] is not None:
            cal = AntennaCalibration.from_anchor(float(watts_to_dbm(c["anchor_power"])), c["anchor_field"],
                                                 c["frequency"])
        else:
            r.fail("calibration needs c_ant or anchor_power + anchor_field", ("calibration",))

    return Scenario(str(path), str(data.get("name", path.stem)), _require_seed(data, r),
                    str(data.get("output_dir", "out")), system, cell, drives, dr["e_lo"],
                    dr["lock_detuning"], quad, sp, cavity, cav_cfg, het, sweeps, cal)


def preset_path(name):
    """Path of a bundled preset ("free_space" or "cavity")."""
    return Path(__file__).parent / "presets" / f"{name}.yaml"


__all__ = ["Scenario", "load_scenario", "preset_path", "SCHEMA", "SCHEMA_VERSION", "EA0", "MHZ"]
