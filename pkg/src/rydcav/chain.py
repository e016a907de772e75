"""
Optical measurement chain shared by the spectroscopy and heterodyne code.

A :class:`Receiver` fixes everything that does not change during a scan
(atoms, cell, probe and coupling strength, cavity, the LO working point)
and evaluates the normalised probe signal as a function of the microwave
Rabi frequency and coupling detuning.

The signal is reported as S = T / T_ref, where T_ref is the output with the
coupling laser blocked. This plays the role of the "a.u." transmission
axis: it is 1 far from any EIT feature in free space.
"""

import logging
import math
import warnings
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from . import atomphys as ap
from .cavity import (CavityGeometry, cavity_transmission, factor_from_finesse,
                     intracavity_buildup, round_trip_factor)
from .errors import InvalidCoherence

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Quadrature:
    """Velocity-quadrature settings. ``n_start`` nodes, refined until ``rtol``."""

    method: str = "sinh"
    n_start: int = 257
    rtol: float = 1e-5
    max_nodes: int = 16385


class Receiver:
    """Steady-state probe signal of the free-space or cavity receiver.

    Parameters
    ----------
    system, cell : LadderSystem, VaporCell
    drives : DriveFields
        ``probe_rabi`` is the free-space (incident) probe Rabi frequency.
        ``mw_rabi`` and ``coupling_detuning`` are ignored in favour of the
        per-call arguments.
    cavity : CavityGeometry or None
        ``None`` selects the free-space configuration.
    target_finesse : float or None
        When given, the passive cell transmission is solved so that the
        loaded cavity has this finesse at the working point.
    lo_rabi, lock_detuning : float
        Working point (rad/s) used to fix the intracavity probe strength and
        the velocity grid.
    """

    def __init__(self, system, cell, drives, cavity=None, target_finesse=None,
                 lo_rabi=0.0, lock_detuning=0.0, quadrature=Quadrature()):
        self.system = system
        self.cell = cell
        self.drives = drives
        self.lo_rabi = float(lo_rabi)
        self.lock_detuning = float(lock_detuning)
        self.quadrature = quadrature
        self.target_finesse = target_finesse
        self.cavity = cavity
        self.probe_rabi = drives.probe_rabi
        if cavity is not None:
            self._resolve_cavity(cavity, target_finesse)
        self._nodes = None

    # --- setup ---------------------------------------------------------------

    def _op_drive(self, probe_rabi):
        return self.drives.replace(probe_rabi=probe_rabi, mw_rabi=self.lo_rabi,
                                   coupling_detuning=self.lock_detuning)

    def _t_atom(self, probe_rabi):
        q = self.quadrature
        rho = ap.doppler_averaged_coherence(self.system, self._op_drive(probe_rabi), self.cell,
                                            q.n_start, q.method, q.rtol, q.max_nodes)
        return ap.probe_transmission(rho, self.system, self.cell, probe_rabi)

    def _resolve_cavity(self, g, target_finesse):
        p_in = self.drives.probe_rabi
        if target_finesse is not None:
            a = factor_from_finesse(target_finesse)
            p_cav = p_in * math.sqrt((1 - g.R1) / (1 - a) ** 2)
            t_cell = a * a / (g.mirror_product * self._t_atom(p_cav))
            if t_cell <= 1:
                self.cavity = g.with_cell_transmission(t_cell)
                self.probe_rabi = p_cav
                return
            warnings.warn(f"atoms alone load the cavity below finesse {target_finesse}; "
                          "using a lossless cell", RuntimeWarning)
            g = g.with_cell_transmission(1.0)
        # fixed point: the intracavity probe sets t_atom, which sets the buildup
        p_cav = p_in
        for _ in range(100):
            b = intracavity_buildup(g, self._t_atom(p_cav))
            nxt = p_in * math.sqrt(b)
            if abs(nxt - p_cav) <= 1e-10 * nxt:
                break
            p_cav = nxt
        self.cavity = g
        self.probe_rabi = nxt

    def at_lo(self, lo_rabi):
        """Receiver with a new LO working point and the same physical cavity."""
        if lo_rabi == self.lo_rabi:
            return self
        return Receiver(self.system, self.cell, self.drives, self.cavity, None, lo_rabi,
                        self.lock_detuning, self.quadrature)

    @property
    def nodes(self):
        """Velocity nodes and weights, converged at the working point."""
        if self._nodes is None:
            q = self.quadrature
            half = 0.5 * self.lo_rabi
            checks = [self._op_drive(self.probe_rabi),
                      self._op_drive(self.probe_rabi).replace(coupling_detuning=self.lock_detuning + half),
                      self._op_drive(self.probe_rabi).replace(coupling_detuning=self.lock_detuning - half),
                      self.drives.replace(probe_rabi=self.probe_rabi, coupling_rabi=0.0, mw_rabi=0.0)]
            n, _ = ap.converge_node_count(self.system, checks, self.cell, q.n_start, q.method,
                                          q.rtol, q.max_nodes)
            self._nodes = ap.velocity_nodes(self.cell.temperature, n, q.method, self.system.mass)
            log.debug("receiver uses %d velocity nodes", n)
        return self._nodes

    # --- evaluation ----------------------------------------------------------

    def coherence(self, mw_rabi, coupling_detuning=None, coupling_rabi=None):
        """Doppler-averaged probe coherence, broadcast over the inputs."""
        if coupling_detuning is None:
            coupling_detuning = self.lock_detuning
        if coupling_rabi is None:
            coupling_rabi = self.drives.coupling_rabi
        mw, dc, oc = np.broadcast_arrays(np.asarray(mw_rabi, float), np.asarray(coupling_detuning, float),
                                         np.asarray(coupling_rabi, float))
        v, w = self.nodes
        b = None
        mats = []
        for m, d, c in zip(mw.ravel(), dc.ravel(), oc.ravel()):
            drv = self.drives.replace(probe_rabi=self.probe_rabi, mw_rabi=m, coupling_detuning=d,
                                      coupling_rabi=c)
            a, b = ap.liouvillian_parts(self.system, drv)
            mats.append(a)
        rho = ap._solve_coherences(np.stack(mats), b, v) @ w
        return rho.reshape(mw.shape)

    def chi(self, rho):
        chi = ap.susceptibility(rho, self.system, self.cell, self.probe_rabi)
        if np.any(chi.imag < -1e-9):
            raise InvalidCoherence(f"Im(chi) = {np.min(chi.imag):.3e} < 0 implies gain")
        return chi

    def transmission_from_coherence(self, rho):
        """Detected power fraction for given coherences."""
        chi = self.chi(rho)
        if self.cavity is None:
            return np.exp(-self.system.k_probe * chi.imag * self.cell.length)
        return cavity_transmission(self.cavity, ap.single_pass_amplitude(chi, self.system, self.cell))

    def transmission(self, mw_rabi, coupling_detuning=None):
        return self.transmission_from_coherence(self.coherence(mw_rabi, coupling_detuning))

    @cached_property
    def reference(self):
        """Detected power fraction with the coupling laser blocked."""
        return float(self.transmission_from_coherence(self.coherence(0.0, 0.0, coupling_rabi=0.0)))

    def signal(self, mw_rabi, coupling_detuning=None):
        """Normalised signal S = T / T_ref."""
        return self.transmission(mw_rabi, coupling_detuning) / self.reference

    def single_pass_transmission(self, mw_rabi=None, coupling_detuning=None):
        """Atomic single-pass power transmission at the working point by default."""
        mw = self.lo_rabi if mw_rabi is None else mw_rabi
        chi = self.chi(self.coherence(mw, coupling_detuning))
        return np.exp(-self.system.k_probe * chi.imag * self.cell.length)

    def loaded_round_trip(self):
        """Round-trip field factor with atoms at the working point (cavity only)."""
        if self.cavity is None:
            raise ValueError("free-space receiver has no cavity")
        return round_trip_factor(self.cavity, float(self.single_pass_transmission()))

    @property
    def is_cavity(self):
        return self.cavity is not None


def free_space_twin(rx):
    """Same atoms and drives with the cavity path blocked."""
    return Receiver(rx.system, rx.cell, rx.drives, None, None, rx.lo_rabi, rx.lock_detuning, rx.quadrature)


__all__ = ["Quadrature", "Receiver", "free_space_twin", "CavityGeometry"]
