"""
Steady-state optics of the four-level cesium ladder
g = 6S1/2, e = 6P3/2, r1 = 47D5/2, r2 = 48P3/2.

The probe drives g-e, the coupling laser e-r1 and the microwave r1-r2.
Probe and coupling counter-propagate, so an atom moving with velocity v
along the probe sees the probe detuning shifted by -k_p v and the coupling
detuning by +k_c v. The microwave Doppler shift is neglected.

Vectorisation convention: density matrices are flattened row-major,
``vec(rho) = rho.reshape(-1)``, so ``vec(A X B) = kron(A, B.T) vec(X)``.
"""

import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.constants as const

from .calib import EA0, HBAR, TWO_PI
from .errors import InvalidCoherence, NonConverged, SingularSystem

log = logging.getLogger(__name__)

G, E, R1, R2 = 0, 1, 2, 3
CS133_MASS = 132.905451933 * const.atomic_mass
_TRACE_IDX = (0, 5, 10, 15)


def dipole_from_decay(gamma, wavelength):
    """Two-level dipole moment (C m) consistent with a spontaneous decay rate."""
    omega = TWO_PI * const.c / wavelength
    return math.sqrt(3 * math.pi * const.epsilon_0 * HBAR * const.c**3 * gamma / omega**3)


@dataclass(frozen=True)
class LadderSystem:
    """Static atomic data of the ladder. Rates in rad/s, dipoles in C m."""

    probe_wavelength: float = 852.347e-9
    coupling_wavelength: float = 509.0e-9
    mw_frequency: float = 6.947e9
    gamma_e: float = TWO_PI * 5.234e6
    gamma_r1: float = TWO_PI * 10e3
    gamma_r2: float = TWO_PI * 10e3
    dephasing_r1: float = TWO_PI * 100e3
    dephasing_r2: float = TWO_PI * 100e3
    mu_ge: float = None
    mu_er1: float = 0.0175 * EA0
    mu_mw: float = 1000.0 * EA0
    mass: float = CS133_MASS
    labels: tuple = ("6S1/2", "6P3/2", "47D5/2", "48P3/2")

    def __post_init__(self):
        if self.mu_ge is None:
            object.__setattr__(self, "mu_ge", dipole_from_decay(self.gamma_e, self.probe_wavelength))
        rates = (self.gamma_e, self.gamma_r1, self.gamma_r2, self.dephasing_r1, self.dephasing_r2)
        if min(rates) < 0:
            raise ValueError("decay and dephasing rates must be >= 0")
        if min(self.probe_wavelength, self.coupling_wavelength, self.mw_frequency) <= 0:
            raise ValueError("wavelengths and microwave frequency must be > 0")
        if min(self.mu_ge, self.mu_er1, self.mu_mw) <= 0:
            raise ValueError("dipole moments must be > 0")
        if not self.gamma_e > 10 * self.gamma_r1:
            raise ValueError("gamma_e must exceed 10 * gamma_r1")

    @property
    def k_probe(self):
        return TWO_PI / self.probe_wavelength

    @property
    def k_coupling(self):
        return TWO_PI / self.coupling_wavelength


@dataclass(frozen=True)
class DriveFields:
    """Rabi frequencies and detunings, all rad/s."""

    probe_rabi: float = 0.0
    coupling_rabi: float = 0.0
    mw_rabi: float = 0.0
    probe_detuning: float = 0.0
    coupling_detuning: float = 0.0
    mw_detuning: float = 0.0

    def __post_init__(self):
        if min(self.probe_rabi, self.coupling_rabi, self.mw_rabi) < 0:
            raise ValueError("Rabi frequencies must be >= 0")

    def replace(self, **changes):
        return DriveFields(**{**self.__dict__, **changes})


@dataclass(frozen=True)
class VaporCell:
    """Vapor cell geometry and atomic density.

    ``participation`` is the fraction of the vapor density that the probe
    addresses as an effective two-level transition (ground hyperfine
    population times relative line strength). ``number_density`` overrides
    the vapor-pressure value when given.
    """

    length: float = 0.01
    temperature: float = 293.0
    probe_waist: float = 50e-6
    coupling_waist: float = 80e-6
    participation: float = 0.19
    number_density: float = None

    def __post_init__(self):
        if not (self.length > 0 and self.temperature > 0):
            raise ValueError("cell length and temperature must be > 0")
        if self.coupling_waist < self.probe_waist:
            raise ValueError("coupling waist must cover the probe (w_c >= w_p)")
        if not 0 < self.participation <= 1:
            raise ValueError("participation must be in (0, 1]")
        if self.number_density is not None and not self.number_density > 0:
            raise ValueError("number density must be > 0")

    @property
    def density(self):
        if self.number_density is not None:
            return self.number_density
        return self.participation * cesium_density(self.temperature)


def cesium_vapor_pressure(temperature):
    """Saturated Cs vapor pressure in Pa (solid below 301.59 K, liquid above)."""
    if temperature < 301.59:
        log10_torr = 2.881 + 4.711 - 3999.0 / temperature
    else:
        log10_torr = 2.881 + 4.165 - 3830.0 / temperature
    return 10.0**log10_torr * 133.322368


def cesium_density(temperature):
    """Ideal-gas number density (m^-3) of saturated Cs vapor."""
    return cesium_vapor_pressure(temperature) / (const.k * temperature)


def most_probable_speed(temperature, mass=CS133_MASS):
    return math.sqrt(2 * const.k * temperature / mass)


@dataclass
class DensityMatrix4:
    """4x4 density matrix in the (g, e, r1, r2) basis."""

    rho: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.rho = np.asarray(self.rho, dtype=complex).reshape(4, 4)

    @property
    def probe_coherence(self):
        """<g|rho|e>; its imaginary part is positive for absorption."""
        return self.rho[G, E]

    @property
    def populations(self):
        return self.rho.diagonal().real.copy()

    def check(self, tol=1e-10, psd_tol=1e-8):
        """Raise ``ValueError`` if any density-matrix invariant fails."""
        if abs(np.trace(self.rho) - 1) > tol:
            raise ValueError(f"trace {np.trace(self.rho)} != 1")
        if np.max(np.abs(self.rho - self.rho.conj().T)) > tol:
            raise ValueError("rho is not Hermitian")
        if np.linalg.eigvalsh(0.5 * (self.rho + self.rho.conj().T)).min() < -psd_tol:
            raise ValueError("rho has a negative eigenvalue")
        return self


def build_hamiltonian(sys, drv, v=0.0):
    """Rotating-frame Hamiltonian (rad/s, hbar = 1) for velocity ``v``.

    ``v`` may be an array, in which case the result has shape
    ``v.shape + (4, 4)``.
    """
    v = np.asarray(v, dtype=float)
    dp = drv.probe_detuning - sys.k_probe * v
    dc = drv.coupling_detuning + sys.k_coupling * v
    h = np.zeros(v.shape + (4, 4), dtype=complex)
    h[..., E, E] = dp
    h[..., R1, R1] = dp + dc
    h[..., R2, R2] = dp + dc + drv.mw_detuning
    h[..., G, E] = h[..., E, G] = drv.probe_rabi / 2
    h[..., E, R1] = h[..., R1, E] = drv.coupling_rabi / 2
    h[..., R1, R2] = h[..., R2, R1] = drv.mw_rabi / 2
    return h


def _collapse_operators(sys):
    ops = []
    for lower, upper, rate in ((G, E, sys.gamma_e), (E, R1, sys.gamma_r1), (R1, R2, sys.gamma_r2)):
        if rate > 0:
            c = np.zeros((4, 4))
            c[lower, upper] = math.sqrt(rate)
            ops.append(c)
    # sqrt(2 gamma)|r><r| damps every coherence with r by gamma
    for level, rate in ((R1, sys.dephasing_r1), (R2, sys.dephasing_r2)):
        if rate > 0:
            c = np.zeros((4, 4))
            c[level, level] = math.sqrt(2 * rate)
            ops.append(c)
    return ops


def _dissipator(sys):
    eye = np.eye(4)
    d = np.zeros((16, 16), dtype=complex)
    for c in _collapse_operators(sys):
        cdc = c.conj().T @ c
        d += np.kron(c, c.conj()) - 0.5 * np.kron(cdc, eye) - 0.5 * np.kron(eye, cdc.T)
    return d


def _commutator_superop(h):
    eye = np.eye(4)
    ht = np.swapaxes(h, -1, -2)
    return -1j * (np.einsum("...ij,kl->...ikjl", h, eye) - np.einsum("ij,...kl->...ikjl", eye, ht)).reshape(
        h.shape[:-2] + (16, 16)
    )


def build_liouvillian(h, sys):
    """Lindblad superoperator with d vec(rho)/dt = L vec(rho).

    Decay channels e->g, r1->e, r2->r1 plus pure dephasing of the Rydberg
    coherences. Accepts a batch of Hamiltonians.
    """
    return _commutator_superop(np.asarray(h, dtype=complex)) + _dissipator(sys)


def steady_state(lv):
    """Steady state of a 16x16 Liouvillian.

    One population equation is replaced by the trace constraint and the
    linear system solved directly.
    """
    lv = np.asarray(lv, dtype=complex)
    scale = np.max(np.abs(lv))
    if scale == 0:
        raise SingularSystem("Liouvillian is identically zero")
    m = lv / scale
    sv = np.linalg.svd(m, compute_uv=False)
    if sv[-2] < 1e-12 * sv[0]:
        raise SingularSystem("Liouvillian has more than one stationary state")
    m = m.copy()
    m[0, :] = 0
    m[0, list(_TRACE_IDX)] = 1
    b = np.zeros(16, dtype=complex)
    b[0] = 1
    x = np.linalg.solve(m, b)
    rho = x.reshape(4, 4)
    return DensityMatrix4(0.5 * (rho + rho.conj().T))


# --- fast real-basis machinery for velocity averaging ----------------------

def _real_basis():
    t = np.zeros((16, 16), dtype=complex)
    col = 0
    for i in range(4):
        t[5 * i, col] = 1
        col += 1
    pairs = []
    for i in range(4):
        for j in range(i + 1, 4):
            t[4 * i + j, col], t[4 * j + i, col] = 1, 1
            t[4 * i + j, col + 1], t[4 * j + i, col + 1] = 1j, -1j
            pairs.append((i, j, col))
            col += 2
    return t, np.linalg.inv(t), pairs


_T, _TINV, _PAIRS = _real_basis()
_GE_RE = next(c for i, j, c in _PAIRS if (i, j) == (G, E))


def _to_real(lv):
    out = _TINV @ lv @ _T
    return out.real


def liouvillian_parts(sys, drv):
    """Real-basis Liouvillian split as ``L(v) = A + v * B``."""
    a = _to_real(build_liouvillian(build_hamiltonian(sys, drv, 0.0), sys))
    hv = np.diag([0.0, -sys.k_probe, sys.k_coupling - sys.k_probe, sys.k_coupling - sys.k_probe])
    b = _to_real(_commutator_superop(hv.astype(complex)))
    return a, b


def _solve_states(a, b, v, chunk=200_000):
    """Real-basis steady states for every (drive, velocity) pair.

    ``a`` has shape (m, 16, 16); returns an (m, len(v), 16) array.
    """
    m = a.shape[0]
    nv = v.size
    out = np.empty((m, nv, 16))
    # normalise by the largest rate for conditioning
    scale = np.max(np.abs(a), axis=(1, 2))[:, None, None]
    bs = b[None] / scale
    an = a / scale
    rhs = np.zeros(16)
    rhs[0] = 1.0
    per = max(1, chunk // nv)
    for s in range(0, m, per):
        block = an[s:s + per, None] + v[None, :, None, None] * bs[s:s + per, None]
        block[..., 0, :] = 0.0
        block[..., 0, :4] = 1.0
        out[s:s + per] = np.linalg.solve(block, np.broadcast_to(rhs, block.shape[:-1])[..., None])[..., 0]
    return out


def real_to_coherence(x):
    """Probe coherence rho_ge from real-basis state vectors (last axis)."""
    return x[..., _GE_RE] + 1j * x[..., _GE_RE + 1]


def _solve_coherences(a, b, v):
    """Probe coherence rho_ge for every (drive, velocity) pair, shape (m, len(v))."""
    return real_to_coherence(_solve_states(a, b, v))


def velocity_nodes(temperature, n_v, method="sinh", mass=CS133_MASS, span=5.0):
    """Quadrature nodes and weights for the 1-D Maxwell-Boltzmann average.

    Weights sum to one. ``"sinh"`` is a trapezoid rule in s with
    v = a sinh(s), clustering nodes around v = 0 where the sub-Doppler
    EIT structure lives; ``"trapezoid"`` is uniform in v; ``"gauss-hermite"``
    integrates the Gaussian weight exactly for polynomial integrands.
    """
    if n_v < 3 or n_v % 2 == 0:
        raise ValueError("n_v must be odd and >= 3")
    u = most_probable_speed(temperature, mass)
    if method == "gauss-hermite":
        x, w = np.polynomial.hermite.hermgauss(n_v)
        return u * x, w / math.sqrt(math.pi)
    if method == "trapezoid":
        v = np.linspace(-span * u, span * u, n_v)
        jac = np.ones_like(v)
    elif method == "sinh":
        a = 0.2 * u
        s = np.linspace(-math.asinh(span / 0.2), math.asinh(span / 0.2), n_v)
        v = a * np.sinh(s)
        jac = np.cosh(s)
    else:
        raise ValueError(f"unknown quadrature method {method!r}")
    w = np.exp(-((v / u) ** 2)) * jac
    w[0] *= 0.5
    w[-1] *= 0.5
    return v, w / w.sum()


def _averaged(a, b, temperature, mass, n_v, method):
    v, w = velocity_nodes(temperature, n_v, method, mass)
    return _solve_coherences(a, b, v) @ w


def converge_node_count(sys, drives, cell, n_v=257, method="sinh", rtol=1e-5, max_nodes=16385):
    """Smallest refinement level at which every drive setting has converged.

    Returns ``(n_nodes, values)`` with ``values`` the Doppler-averaged
    coherences at the converged level.
    """
    if n_v < 3 or n_v % 2 == 0:
        raise ValueError("n_v must be odd and >= 3")
    parts = [liouvillian_parts(sys, d) for d in drives]
    a = np.stack([p[0] for p in parts])
    b = parts[0][1]
    prev = _averaged(a, b, cell.temperature, sys.mass, n_v, method)
    n = n_v
    while True:
        n2 = 2 * n - 1
        cur = _averaged(a, b, cell.temperature, sys.mass, n2, method)
        err = np.max(np.abs(cur - prev) / np.maximum(np.abs(cur), 1e-300))
        if err < rtol:
            return n2, cur
        if n2 >= max_nodes:
            if err > 1e-3:
                raise NonConverged(f"velocity average disagrees by {err:.2e} at {n2} nodes")
            warnings.warn(f"velocity average only converged to {err:.1e} at {n2} nodes", RuntimeWarning)
            return n2, cur
        n, prev = n2, cur


def doppler_averaged_coherence(sys, drv, cell, n_v=257, method="sinh", rtol=1e-5, max_nodes=16385):
    """Maxwell-Boltzmann averaged probe coherence at ``cell.temperature``.

    Starting from ``n_v`` nodes the grid is refined (n -> 2n - 1) until two
    successive levels agree to ``rtol``. Raises ``NonConverged`` if the
    disagreement still exceeds 1e-3 at ``max_nodes``.
    """
    _, vals = converge_node_count(sys, [drv], cell, n_v, method, rtol, max_nodes)
    return complex(vals[0])


def coherence_at_velocity(sys, drv, v=0.0):
    """Probe coherence of a single velocity class (direct steady state)."""
    return steady_state(build_liouvillian(build_hamiltonian(sys, drv, v), sys)).probe_coherence


def susceptibility(rho_ge, sys, cell, probe_rabi):
    """Linear susceptibility from the probe coherence.

    chi = 2 n mu rho / (eps0 E_p) with E_p = hbar Omega_p / mu, so the probe
    Rabi frequency fixes the field amplitude.
    """
    if not probe_rabi > 0:
        raise ValueError("probe Rabi frequency must be > 0")
    return 2 * cell.density * sys.mu_ge**2 * np.asarray(rho_ge) / (const.epsilon_0 * HBAR * probe_rabi)


def single_pass_amplitude(chi, sys, cell):
    """Complex field transmission exp(i k chi L / 2) through the cell."""
    return np.exp(0.5j * sys.k_probe * np.asarray(chi) * cell.length)


def probe_transmission(rho_ge, sys, cell, probe_rabi):
    """Beer-Lambert power transmission exp(-k Im(chi) L), in (0, 1]."""
    chi = susceptibility(rho_ge, sys, cell, probe_rabi)
    if np.any(chi.imag < -1e-9):
        raise InvalidCoherence(f"Im(chi) = {np.min(chi.imag):.3e} < 0 implies gain")
    out = np.exp(-sys.k_probe * np.maximum(chi.imag, 0.0) * cell.length)
    return float(out) if out.ndim == 0 else out


def resonant_cross_section(sys):
    """sigma_0 = 2 k mu^2 / (eps0 hbar Gamma) for the probe transition."""
    return 2 * sys.k_probe * sys.mu_ge**2 / (const.epsilon_0 * HBAR * sys.gamma_e)


def eit_linewidth(sys, drv):
    """Rough EIT full width (rad/s): power broadening plus Rydberg dephasing."""
    return (drv.coupling_rabi**2 + drv.probe_rabi**2) / sys.gamma_e + 2 * sys.dephasing_r1 + sys.gamma_r1
