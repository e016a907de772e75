"""
Unit and reference conversions between the physics and the instruments.

Everything inside the package is SI (V/m, rad/s, Hz, W, m). V/cm, MHz and
dBm only appear at the I/O boundary, through the helpers below.
"""

import math
import re
from dataclasses import dataclass

import numpy as np
import scipy.constants as const

HBAR = const.hbar
EA0 = const.e * const.physical_constants["Bohr radius"][0]
TWO_PI = 2.0 * math.pi

# angular <-> cyclic
MHZ = TWO_PI * 1e6


def rabi_from_field(field, dipole):
    """Microwave Rabi frequency (rad/s) for a field amplitude (V/m).

    Uses the sqrt(2) convention of the heterodyne small-signal relation,
    Omega = sqrt(2) * mu * E / hbar.
    """
    field = np.asarray(field, dtype=float)
    if np.any(field < 0):
        raise ValueError("field amplitude must be >= 0")
    if dipole <= 0:
        raise ValueError("dipole moment must be > 0")
    out = math.sqrt(2.0) * dipole * field / HBAR
    return float(out) if out.ndim == 0 else out


def field_from_rabi(rabi, dipole):
    """Exact inverse of :func:`rabi_from_field`."""
    rabi = np.asarray(rabi, dtype=float)
    if dipole <= 0:
        raise ValueError("dipole moment must be > 0")
    out = HBAR * rabi / (math.sqrt(2.0) * dipole)
    return float(out) if out.ndim == 0 else out


def optical_rabi(power, waist, dipole):
    """Peak Rabi frequency (rad/s) of a Gaussian beam of given power and waist."""
    intensity = 2.0 * power / (math.pi * waist**2)
    field = math.sqrt(2.0 * intensity / (const.c * const.epsilon_0))
    return dipole * field / HBAR


@dataclass(frozen=True)
class AntennaCalibration:
    """Field at the cell per square-root generator power.

    Attributes
    ----------
    c_ant : float
        V/m per sqrt(mW).
    frequency : float
        Frequency (Hz) at which the calibration is valid.
    """

    c_ant: float
    frequency: float = 6.947e9

    def __post_init__(self):
        if not self.c_ant > 0:
            raise ValueError("c_ant must be > 0")

    @classmethod
    def from_anchor(cls, power_dbm, field, frequency=6.947e9):
        """Calibration that maps ``power_dbm`` onto ``field`` (V/m)."""
        return cls(field / math.sqrt(10.0 ** (power_dbm / 10.0)), frequency)


def field_from_dbm(power_dbm, cal):
    """Field at the cell (V/m) for a generator power in dBm."""
    return cal.c_ant * np.sqrt(10.0 ** (np.asarray(power_dbm, dtype=float) / 10.0))


def dbm_from_field(field, cal):
    """Generator power in dBm that produces ``field`` (V/m)."""
    field = np.asarray(field, dtype=float)
    return 20.0 * np.log10(field / cal.c_ant)


def sensitivity_from_min_field(e_min, rbw):
    """Normalise a minimum detectable field by the resolution bandwidth.

    Returns V m^-1 Hz^-1/2.
    """
    if not (e_min > 0 and rbw > 0):
        raise ValueError("e_min and rbw must be > 0")
    return e_min / math.sqrt(rbw)


def v_per_m_to_v_per_cm(x):
    return x / 100.0


def v_per_cm_to_v_per_m(x):
    return x * 100.0


def dbm_to_watts(p_dbm):
    return 1e-3 * 10.0 ** (np.asarray(p_dbm, dtype=float) / 10.0)


def watts_to_dbm(p_w):
    return 10.0 * np.log10(np.asarray(p_w, dtype=float) / 1e-3)


# --- quantity parsing for scenario files -----------------------------------

_UNITS = {
    "field": {"V/m": 1.0, "V/cm": 100.0, "mV/cm": 0.1, "uV/cm": 1e-4, "µV/cm": 1e-4,
              "nV/cm": 1e-7, "mV/m": 1e-3, "uV/m": 1e-6},
    "frequency": {"Hz": 1.0, "kHz": 1e3, "MHz": 1e6, "GHz": 1e9},
    "power": {"W": 1.0, "mW": 1e-3, "uW": 1e-6, "µW": 1e-6, "nW": 1e-9, "dBm": None},
    "length": {"m": 1.0, "cm": 1e-2, "mm": 1e-3, "um": 1e-6, "µm": 1e-6, "nm": 1e-9},
    "temperature": {"K": 1.0},
    "dipole": {"C m": 1.0, "C*m": 1.0, "ea0": EA0},
    "time": {"s": 1.0, "ms": 1e-3, "us": 1e-6},
    "angle": {"rad": 1.0, "deg": math.pi / 180.0},
    "dimensionless": {},
}
# angular quantities: cyclic units carry an implicit factor 2*pi
_UNITS["angular"] = {"rad/s": 1.0, **{k: TWO_PI * v for k, v in _UNITS["frequency"].items()}}

_QUANTITY = re.compile(r"^\s*([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)\s*(.*?)\s*$")


def parse_quantity(value, kind):
    """Convert a scenario value such as ``"2.04 mV/cm"`` to SI.

    Bare numbers are taken as already SI. For ``kind="angular"`` a cyclic
    unit (Hz, kHz, MHz, GHz) is multiplied by 2*pi, so ``"5 MHz"`` means
    2*pi*5e6 rad/s.
    """
    if isinstance(value, bool):
        raise ValueError(f"expected a {kind} quantity, got a boolean")
    if isinstance(value, (int, float)):
        return float(value)
    if not isinstance(value, str):
        raise ValueError(f"expected a {kind} quantity, got {type(value).__name__}")
    m = _QUANTITY.match(value)
    if not m:
        raise ValueError(f"cannot parse {value!r} as a {kind} quantity")
    number, unit = float(m.group(1)), m.group(2)
    if not unit:
        return number
    table = _UNITS[kind]
    if unit not in table:
        allowed = ", ".join(u for u in table) or "none"
        raise ValueError(f"unit {unit!r} not valid for {kind} (allowed: {allowed})")
    if kind == "power" and unit == "dBm":
        return float(dbm_to_watts(number))
    return number * table[unit]
