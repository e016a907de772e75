"""
Four-mirror bow-tie ring cavity around the vapor cell.

Light enters through M1, circulates M1 -> cell -> M2 -> M3 -> M4 -> M1 and
is detected behind M2. All reflectivities and transmissions are power
quantities; the round-trip field factor is the square root of their
product. The cavity is assumed locked on the probe resonance, so only the
atomic phase can detune it.
"""

import math
from dataclasses import dataclass

import numpy as np
import scipy.constants as const

from .errors import LosslessCavity, LossTooHigh


@dataclass(frozen=True)
class CavityGeometry:
    """Mirror reflectivities, round-trip length and passive cell loss."""

    R1: float = 0.95
    R2: float = 0.98
    R3: float = 0.999
    R4: float = 0.999
    round_trip_length: float = 0.480
    cell_transmission: float = 1.0
    locked: bool = True

    def __post_init__(self):
        for name in ("R1", "R2", "R3", "R4"):
            r = getattr(self, name)
            if not 0 < r <= 1:
                raise ValueError(f"{name} must be in (0, 1], got {r}")
        if not 0 < self.cell_transmission <= 1:
            raise ValueError("cell_transmission must be in (0, 1]")
        if not self.round_trip_length > 0:
            raise ValueError("round_trip_length must be > 0")

    @property
    def mirror_product(self):
        return self.R1 * self.R2 * self.R3 * self.R4

    @property
    def fsr(self):
        """Free spectral range (Hz)."""
        return const.c / self.round_trip_length

    def with_cell_transmission(self, t_cell):
        return CavityGeometry(self.R1, self.R2, self.R3, self.R4,
                              self.round_trip_length, t_cell, self.locked)


def round_trip_factor(g, t_atom=1.0):
    """Round-trip field amplitude factor a = sqrt(R1 R2 R3 R4 T_cell t_atom)."""
    if not 0 < t_atom <= 1:
        raise ValueError("t_atom must be in (0, 1]")
    return math.sqrt(g.mirror_product * g.cell_transmission * t_atom)


def finesse_from_factor(a):
    """F = pi sqrt(a) / (1 - a), guarded against the meaningless regimes."""
    if a >= 1:
        raise LosslessCavity("round-trip factor a = 1: finesse diverges")
    if a <= 0.5:
        raise LossTooHigh(a)
    return math.pi * math.sqrt(a) / (1 - a)


def factor_from_finesse(f):
    """Inverse of :func:`finesse_from_factor` (root of F x^2 + pi x - F, x = sqrt(a))."""
    if not f > 0:
        raise ValueError("finesse must be > 0")
    x = (-math.pi + math.sqrt(math.pi**2 + 4 * f * f)) / (2 * f)
    return x * x


def finesse(g, t_atom=1.0):
    """Cavity finesse with a single-pass atomic power transmission ``t_atom``."""
    return finesse_from_factor(round_trip_factor(g, t_atom))


def linewidth(g, t_atom=1.0):
    """Resonance full width (Hz)."""
    return g.fsr / finesse(g, t_atom)


def solve_cell_transmission(g, target_finesse=20.0, t_atom=1.0):
    """Passive cell transmission T_cell that yields ``target_finesse``.

    Raises ``ValueError`` if even T_cell = 1 falls short of the target.
    """
    a = factor_from_finesse(target_finesse)
    t_cell = a * a / (g.mirror_product * t_atom)
    if t_cell > 1 + 1e-12:
        raise ValueError(f"finesse {target_finesse} unreachable: needs T_cell = {t_cell:.4f} > 1")
    return min(t_cell, 1.0)


def intracavity_buildup(g, t_atom=1.0):
    """Circulating-to-incident power ratio B = T1 / (1 - a)^2 on resonance.

    Unlike :func:`finesse` this stays meaningful for heavy loss and tends
    to the single-pass value T1 as a -> 0.
    """
    if not g.locked:
        raise ValueError("buildup is defined for a cavity locked on resonance")
    a = round_trip_factor(g, t_atom)
    if a >= 1:
        raise LosslessCavity("round-trip factor a = 1: buildup diverges")
    return (1 - g.R1) / (1 - a) ** 2


def _feedback(g):
    return math.sqrt(g.mirror_product * g.cell_transmission)


def cavity_transmission(g, t_amp):
    """Power transmission at the output coupler M2.

    ``t_amp`` is the complex single-pass field transmission of the atoms,
    exp(i k chi L / 2); its phase detunes the otherwise locked cavity.

        T_out = T1 T2 R3 R4 T_cell |t|^2 / |1 - rho t|^2,
        rho = sqrt(R1 R2 R3 R4 T_cell)
    """
    t_amp = np.asarray(t_amp, dtype=complex)
    if np.any(np.abs(t_amp) > 1 + 1e-12):
        raise ValueError("|t_atom| must be <= 1")
    rho = _feedback(g)
    if rho * np.max(np.abs(t_amp)) >= 1:
        raise LosslessCavity("round-trip factor a = 1: transmission diverges on resonance")
    pre = (1 - g.R1) * (1 - g.R2) * g.R3 * g.R4 * g.cell_transmission
    out = pre * np.abs(t_amp) ** 2 / np.abs(1 - rho * t_amp) ** 2
    return float(out) if out.ndim == 0 else out


def effective_kappa_gain(g, t_amp, d_t=None):
    """Cavity-over-single-pass enhancement of the fractional transmission slope.

    ``d_t`` is the derivative of the single-pass amplitude with respect to
    whatever parameter is being scanned; when omitted the perturbation is
    taken as pure absorption (d_t proportional to t). The single-pass slope
    of ln|t|^2 is 2 Re(d_t / t); the cavity adds 2 Re(rho d_t / (1 - rho t)).
    For pure absorption the ratio is 1 / (1 - a), i.e. about F / pi passes
    for a ring resonator.
    """
    t_amp = complex(t_amp)
    d_t = t_amp if d_t is None else complex(d_t)
    single = (d_t / t_amp).real
    if single == 0:
        raise ValueError("single-pass slope vanishes; enhancement undefined")
    rho = _feedback(g)
    return 1 + (rho * d_t / (1 - rho * t_amp)).real / single
