import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import expm

import oracles
from rydcav import atomphys as ap
from rydcav.calib import MHZ
from rydcav.errors import InvalidCoherence, NonConverged, SingularSystem

SYS = ap.LadderSystem()
GE = SYS.gamma_e


def random_case(rng):
    sys = ap.LadderSystem(gamma_e=GE, gamma_r1=rng.uniform(0.02, 0.09) * GE,
                          gamma_r2=rng.uniform(0.02, 0.09) * GE,
                          dephasing_r1=rng.uniform(0.01, 0.1) * GE, dephasing_r2=rng.uniform(0.01, 0.1) * GE)
    drv = ap.DriveFields(*(rng.uniform(0.2, 3.0, 3) * GE), *(rng.uniform(-2, 2, 3) * GE))
    return sys, drv, rng.uniform(-3, 3)


def rk4_reference(cases):
    h = np.stack([ap.build_hamiltonian(s, d, v) for s, d, v in cases])
    ops = oracles.ladder_ops(*[np.array([getattr(s, k) for s, _, _ in cases]) for k in
                               ("gamma_e", "gamma_r1", "gamma_r2", "dephasing_r1", "dephasing_r2")])
    slowest = min(min(s.gamma_r1, s.gamma_r2, s.dephasing_r1, s.dephasing_r2) for s, _, _ in cases)
    return oracles.rk4_steady(h, ops, 50 / slowest, 0.1 / GE)


# --- Hamiltonian -----------------------------------------------------------

def test_hamiltonian_zero():
    assert np.all(ap.build_hamiltonian(SYS, ap.DriveFields()) == 0)


def test_hamiltonian_single_link():
    h = ap.build_hamiltonian(SYS, ap.DriveFields(probe_rabi=2 * math.pi * 1e6))
    expect = np.zeros((4, 4))
    expect[0, 1] = expect[1, 0] = math.pi * 1e6
    assert np.allclose(h, expect, rtol=0, atol=1e-9)


def test_hamiltonian_doppler_shift():
    sys = ap.LadderSystem(probe_wavelength=852e-9)
    h = ap.build_hamiltonian(sys, ap.DriveFields(), 100.0)
    assert h[1, 1].real == pytest.approx(-oracles.kp_v(100.0, 852e-9), rel=1e-14)
    # 1 m/s shifts the probe by 1/lambda Hz
    assert -h[1, 1].real / 100 / (2 * math.pi) == pytest.approx(1.1737e6, rel=1e-4)


def test_hamiltonian_counterpropagating_coupling():
    h = ap.build_hamiltonian(SYS, ap.DriveFields(coupling_detuning=1.0), 10.0)
    assert (h[2, 2] - h[1, 1]).real == pytest.approx(1.0 + SYS.k_coupling * 10.0)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-1e8, 1e8), min_size=6, max_size=6), st.floats(-500, 500))
def test_hamiltonian_hermitian(vals, v):
    drv = ap.DriveFields(*[abs(x) for x in vals[:3]], *vals[3:])
    h = ap.build_hamiltonian(SYS, drv, v)
    assert np.array_equal(h, h.conj().T)


def test_hamiltonian_batched_matches_scalar():
    drv = ap.DriveFields(MHZ, 5 * MHZ, 2 * MHZ, 0.1 * MHZ)
    v = np.array([-3.0, 0.0, 7.5])
    hb = ap.build_hamiltonian(SYS, drv, v)
    for k, vk in enumerate(v):
        assert np.array_equal(hb[k], ap.build_hamiltonian(SYS, drv, vk))


# --- Liouvillian -----------------------------------------------------------

def test_liouvillian_zero():
    sys = ap.LadderSystem()
    for k in ("gamma_e", "gamma_r1", "gamma_r2", "dephasing_r1", "dephasing_r2"):
        object.__setattr__(sys, k, 0.0)  # bypass the validator on purpose
    lv = ap.build_liouvillian(np.zeros((4, 4)), sys)
    assert np.all(lv == 0)


def test_liouvillian_trace_preserving(rng):
    sys, drv, v = random_case(rng)
    lv = ap.build_liouvillian(ap.build_hamiltonian(sys, drv, v), sys)
    scale = np.abs(lv).max()
    for _ in range(100):
        a = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
        rho = a @ a.conj().T
        rho /= np.trace(rho)
        d = (lv @ rho.reshape(-1)).reshape(4, 4)
        assert abs(np.trace(d)) < 1e-12 * scale


def test_liouvillian_matches_matrix_form(rng):
    sys, drv, v = random_case(rng)
    h = ap.build_hamiltonian(sys, drv, v)
    lv = ap.build_liouvillian(h, sys)
    ops = [o[0] for o in oracles.ladder_ops(sys.gamma_e, sys.gamma_r1, sys.gamma_r2,
                                             sys.dephasing_r1, sys.dephasing_r2)]
    a = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
    rho = a @ a.conj().T
    ref = oracles.lindblad_rhs(rho, h, ops)
    assert np.allclose((lv @ rho.reshape(-1)).reshape(4, 4), ref, rtol=1e-12, atol=1e-12 * np.abs(ref).max())


def test_pure_decay_exponential():
    sys = ap.LadderSystem(gamma_r1=0.0, gamma_r2=0.0, dephasing_r1=0.0, dephasing_r2=0.0)
    lv = ap.build_liouvillian(np.zeros((4, 4)), sys)
    rho0 = np.zeros((4, 4))
    rho0[1, 1] = 1
    for t in np.array([0.1, 0.5, 1.0, 3.0]) / GE:
        pe = (expm(lv * t) @ rho0.reshape(-1)).reshape(4, 4)[1, 1].real
        assert pe == pytest.approx(math.exp(-GE * t), abs=1e-6)


# --- steady state ----------------------------------------------------------

def test_no_drive_relaxes_to_ground():
    dm = ap.steady_state(ap.build_liouvillian(ap.build_hamiltonian(SYS, ap.DriveFields()), SYS))
    expect = np.zeros((4, 4))
    expect[0, 0] = 1
    assert np.allclose(dm.rho, expect, atol=1e-12)


def test_singular_system_raises():
    sys = ap.LadderSystem(gamma_r1=0.0, gamma_r2=0.0, dephasing_r1=0.0, dephasing_r2=0.0)
    with pytest.raises(SingularSystem):
        ap.steady_state(ap.build_liouvillian(ap.build_hamiltonian(sys, ap.DriveFields()), sys))


def test_steady_state_matches_rk4(rng):
    cases = [random_case(rng) for _ in range(3)]
    ref = rk4_reference(cases)
    for (s, d, v), r in zip(cases, ref):
        dm = ap.steady_state(ap.build_liouvillian(ap.build_hamiltonian(s, d, v), s))
        assert np.max(np.abs(dm.rho - r)) < 1e-8


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_steady_state_invariants(seed):
    sys, drv, v = random_case(np.random.default_rng(seed))
    dm = ap.steady_state(ap.build_liouvillian(ap.build_hamiltonian(sys, drv, v), sys))
    dm.check(tol=1e-10, psd_tol=1e-8)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_real_basis_solver_matches_direct(seed):
    rng = np.random.default_rng(seed)
    sys, drv, _ = random_case(rng)
    v = rng.uniform(-20, 20, 5)
    a, b = ap.liouvillian_parts(sys, drv)
    fast = ap._solve_coherences(a[None], b, v)[0]
    slow = [ap.coherence_at_velocity(sys, drv, x) for x in v]
    assert np.allclose(fast, slow, rtol=1e-9, atol=1e-12)


def test_eit_dip():
    base = ap.DriveFields(probe_rabi=0.05 * MHZ)
    two = ap.coherence_at_velocity(SYS, base)
    eit = ap.coherence_at_velocity(SYS, base.replace(coupling_rabi=5 * MHZ))
    assert abs(eit.imag) < abs(two.imag)


@pytest.mark.parametrize("dp,dc", [(0.0, 0.0), (0.5 * MHZ, -0.5 * MHZ), (1.3 * MHZ, 0.2 * MHZ)])
def test_three_level_weak_probe_oracle(dp, dc):
    op, oc = 1e-3 * MHZ, 4 * MHZ
    drv = ap.DriveFields(probe_rabi=op, coupling_rabi=oc, probe_detuning=dp, coupling_detuning=dc)
    got = ap.coherence_at_velocity(SYS, drv)
    ref = oracles.three_level_weak_probe(op, oc, dp, dc, SYS.gamma_e, SYS.gamma_r1, SYS.dephasing_r1)
    assert got == pytest.approx(ref, rel=1e-4)


def test_absorption_sign():
    rho = ap.coherence_at_velocity(SYS, ap.DriveFields(probe_rabi=MHZ))
    assert rho.imag > 0


def test_density_matrix_check_rejects():
    with pytest.raises(ValueError):
        ap.DensityMatrix4(np.eye(4)).check()


# --- Doppler averaging -----------------------------------------------------

def test_velocity_nodes_normalised():
    for m in ("sinh", "trapezoid", "gauss-hermite"):
        v, w = ap.velocity_nodes(293.0, 101, m)
        assert w.sum() == pytest.approx(1.0, abs=1e-12)
        assert np.allclose(v, -v[::-1]) and np.allclose(w, w[::-1])
        assert v[50] == pytest.approx(0.0, abs=1e-12)


def test_velocity_nodes_second_moment():
    u = ap.most_probable_speed(293.0)
    v, w = ap.velocity_nodes(293.0, 2049, "sinh")
    assert np.sum(w * v**2) == pytest.approx(u**2 / 2, rel=1e-9)


@pytest.mark.parametrize("n", [2, 4, 1])
def test_grid_size_validation(n):
    with pytest.raises(ValueError):
        ap.doppler_averaged_coherence(SYS, ap.DriveFields(probe_rabi=MHZ), ap.VaporCell(), n_v=n)


def test_cold_limit_equals_v0():
    # at 1 mK kp*u is still ~2pi*0.4 MHz, so the delta limit needs a colder gas
    drv = ap.DriveFields(probe_rabi=MHZ, probe_detuning=0.7 * MHZ)
    cold = ap.doppler_averaged_coherence(SYS, drv, ap.VaporCell(temperature=1e-9))
    assert cold == pytest.approx(ap.coherence_at_velocity(SYS, drv), rel=1e-6)


def test_dense_trapezoid_oracle():
    drv = ap.DriveFields(MHZ, 5 * MHZ, 3 * MHZ, 0.0, 0.8 * MHZ)
    cell = ap.VaporCell(temperature=300.0)
    got = ap.doppler_averaged_coherence(SYS, drv, cell)
    a, b = ap.liouvillian_parts(SYS, drv)
    u = ap.most_probable_speed(300.0)
    ref = oracles.maxwell_trapezoid(lambda v: ap._solve_coherences(a[None], b, v)[0], u)
    assert abs(got - ref) / abs(ref) < 1e-5


def test_doppler_symmetry_in_coupling_detuning():
    cell = ap.VaporCell()
    base = ap.DriveFields(MHZ, 5 * MHZ, 4 * MHZ)
    for dc in (0.7 * MHZ, 2.1 * MHZ):
        plus = ap.doppler_averaged_coherence(SYS, base.replace(coupling_detuning=dc), cell)
        minus = ap.doppler_averaged_coherence(SYS, base.replace(coupling_detuning=-dc), cell)
        assert plus.imag == pytest.approx(minus.imag, rel=1e-6)


def test_nonconverged_raises():
    drv = ap.DriveFields(MHZ, 5 * MHZ, 4 * MHZ)
    with pytest.raises(NonConverged):
        ap.doppler_averaged_coherence(SYS, drv, ap.VaporCell(), n_v=3, method="trapezoid", max_nodes=9)


# --- transmission ----------------------------------------------------------

def test_zero_coherence_transparent():
    assert ap.probe_transmission(0j, SYS, ap.VaporCell(), MHZ) == 1.0


def test_vanishing_density_transparent():
    cell = ap.VaporCell(number_density=1e-3)
    assert ap.probe_transmission(0.3j, SYS, cell, MHZ) == pytest.approx(1.0, abs=1e-15)


def test_gain_rejected():
    with pytest.raises(InvalidCoherence):
        ap.probe_transmission(-0.1j, SYS, ap.VaporCell(), MHZ)


def test_two_level_absorption_oracle():
    cell = ap.VaporCell(temperature=1e-3, number_density=2e15)
    drv = ap.DriveFields(probe_rabi=1e-3 * MHZ)
    rho = ap.doppler_averaged_coherence(SYS, drv, cell)
    got = ap.probe_transmission(rho, SYS, cell, drv.probe_rabi)
    ref = oracles.resonant_absorption(cell.density, SYS.probe_wavelength, cell.length)
    assert math.log(got) == pytest.approx(math.log(ref), rel=0.02)


def test_cross_section_closed_form():
    assert ap.resonant_cross_section(SYS) == pytest.approx(3 * SYS.probe_wavelength**2 / (2 * math.pi), rel=1e-12)


def test_vapor_pressure_oracle():
    for t in (273.0, 293.0, 300.0):
        assert ap.cesium_vapor_pressure(t) == pytest.approx(oracles.cs_vapor_pressure_pa(t), rel=1e-12)
    n = ap.cesium_density(293.0)
    assert n == pytest.approx(oracles.cs_vapor_pressure_pa(293.0) / (oracles.BOLTZMANN * 293.0), rel=1e-12)
    assert 2e16 < n < 4e16


def test_type_invariants():
    with pytest.raises(ValueError):
        ap.LadderSystem(gamma_r1=GE)
    with pytest.raises(ValueError):
        ap.DriveFields(probe_rabi=-1.0)
    with pytest.raises(ValueError):
        ap.VaporCell(probe_waist=100e-6, coupling_waist=80e-6)
    with pytest.raises(ValueError):
        ap.VaporCell(length=0.0)
