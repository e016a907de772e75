"""Independent reference computations used only by the tests."""

import math

import numpy as np
import scipy.constants as const


def lindblad_rhs(rho, h, ops):
    """d rho / dt in plain matrix form (no superoperators); batched over axis 0."""
    out = -1j * (h @ rho - rho @ h)
    for c in ops:
        cd = np.conj(np.swapaxes(c, -1, -2))
        cdc = cd @ c
        out = out + c @ rho @ cd - 0.5 * (cdc @ rho + rho @ cdc)
    return out


def ladder_ops(gamma_e, gamma_r1, gamma_r2, deph1, deph2):
    """Collapse operators written out by hand, batched over parameter sets."""
    n = np.size(gamma_e)
    ops = []
    for (i, j), rate in (((0, 1), gamma_e), ((1, 2), gamma_r1), ((2, 3), gamma_r2)):
        c = np.zeros((n, 4, 4), complex)
        c[:, i, j] = np.sqrt(rate)
        ops.append(c)
    for k, rate in ((2, deph1), (3, deph2)):
        c = np.zeros((n, 4, 4), complex)
        c[:, k, k] = np.sqrt(2 * np.asarray(rate))
        ops.append(c)
    return ops


def rk4_steady(h, ops, t_end, dt):
    """Integrate from |g><g| with classic RK4 and return rho(t_end)."""
    n = h.shape[0]
    rho = np.zeros((n, 4, 4), complex)
    rho[:, 0, 0] = 1
    steps = int(math.ceil(t_end / dt))
    for _ in range(steps):
        k1 = lindblad_rhs(rho, h, ops)
        k2 = lindblad_rhs(rho + 0.5 * dt * k1, h, ops)
        k3 = lindblad_rhs(rho + 0.5 * dt * k2, h, ops)
        k4 = lindblad_rhs(rho + dt * k3, h, ops)
        rho = rho + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    return rho


def three_level_weak_probe(probe_rabi, coupling_rabi, dp, dc, gamma_e, gamma_r, dephasing):
    """Closed-form first-order rho_ge of the g-e-r ladder at v = 0."""
    g_rg = gamma_r / 2 + dephasing
    rho_eg = -(probe_rabi / 2) / (dp - 1j * gamma_e / 2 - (coupling_rabi**2 / 4) / (dp + dc - 1j * g_rg))
    return np.conj(rho_eg)


def resonant_absorption(density, wavelength, length):
    """Two-level Beer-Lambert transmission with sigma_0 = 3 lambda^2 / 2 pi."""
    sigma0 = 3 * wavelength**2 / (2 * math.pi)
    return math.exp(-density * sigma0 * length)


def ring_buildup_series(r1, round_trip, passes=10_000):
    """Circulating power from a coherent sum of ``passes`` round trips."""
    field = math.sqrt(1 - r1) * sum(round_trip**k for k in range(passes))
    return field**2


def maxwell_trapezoid(fun, u, n=10001, span=5.0):
    v = np.linspace(-span * u, span * u, n)
    w = np.exp(-(v / u) ** 2) / (math.sqrt(math.pi) * u)
    integrate = getattr(np, "trapezoid", None) or np.trapz
    return integrate(fun(v) * w, v)


def cs_vapor_pressure_pa(t):
    """Solid-phase cesium vapor pressure, independent transcription (Pa)."""
    return 133.322368 * 10 ** (7.592 - 3999.0 / t)


def kp_v(v, wavelength):
    return 2 * math.pi * v / wavelength


BOLTZMANN = const.k
