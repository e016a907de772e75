import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from rydcav import cavity as cv
from rydcav.errors import LosslessCavity, LossTooHigh

G = cv.CavityGeometry()


def test_empty_cavity_finesse():
    assert cv.finesse(G) == pytest.approx(85, abs=2)


def test_loaded_cavity_solve():
    t_cell = cv.solve_cell_transmission(G, 20.0)
    a = cv.round_trip_factor(G.with_cell_transmission(t_cell))
    assert a == pytest.approx(0.855, abs=1e-3)
    assert t_cell == pytest.approx(0.79, abs=0.01)
    # independent root find on the finesse formula
    from scipy.optimize import brentq
    x = brentq(lambda tc: math.pi * math.sqrt(math.sqrt(G.mirror_product * tc))
               / (1 - math.sqrt(G.mirror_product * tc)) - 20, 0.3, 1.0, xtol=1e-14)
    assert t_cell == pytest.approx(x, rel=1e-10)
    assert cv.finesse(G.with_cell_transmission(t_cell)) == pytest.approx(20, rel=1e-12)


def test_factor_inverse_roundtrip():
    for f in (5.0, 20.0, 85.0, 1e3):
        assert cv.finesse_from_factor(cv.factor_from_finesse(f)) == pytest.approx(f, rel=1e-12)


def test_unreachable_finesse():
    with pytest.raises(ValueError):
        cv.solve_cell_transmission(G, 200.0)


def test_lossless_cavity():
    g = cv.CavityGeometry(1, 1, 1, 1)
    with pytest.raises(LosslessCavity):
        cv.finesse(g)
    with pytest.raises(LosslessCavity):
        cv.intracavity_buildup(g)


def test_loss_too_high():
    with pytest.raises(LossTooHigh) as err:
        cv.finesse(G, t_atom=0.2)
    assert err.value.round_trip <= 0.5


def test_buildup_series_oracle():
    a = cv.round_trip_factor(G)
    assert cv.intracavity_buildup(G) == pytest.approx(oracles.ring_buildup_series(G.R1, a), rel=1e-6)


def test_buildup_limits():
    assert cv.intracavity_buildup(cv.CavityGeometry(R1=1.0)) == 0.0
    g = cv.CavityGeometry(cell_transmission=1e-30)
    assert cv.intracavity_buildup(g) == pytest.approx(1 - g.R1, rel=1e-12)


def test_buildup_requires_lock():
    with pytest.raises(ValueError):
        cv.intracavity_buildup(cv.CavityGeometry(locked=False))


def test_transmission_lossless_path_fabry_perot():
    g = cv.CavityGeometry(R1=0.95, R2=0.95, R3=1.0, R4=1.0)
    # symmetric two-mirror limit: impedance matched, full transmission
    assert cv.cavity_transmission(g, 1.0) == pytest.approx(1.0, rel=1e-12)
    g = cv.CavityGeometry(R1=0.9, R2=0.98, R3=1.0, R4=1.0)
    r1, r2 = g.R1, g.R2
    fp = (1 - r1) * (1 - r2) / (1 - math.sqrt(r1 * r2)) ** 2
    assert cv.cavity_transmission(g, 1.0) == pytest.approx(fp, rel=1e-12)


def test_loaded_cavity_transmission_finite():
    g = G.with_cell_transmission(cv.solve_cell_transmission(G, 20.0))
    t = cv.cavity_transmission(g, 1.0)
    assert 0 < t < 1


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(0.01, 0.9999), min_size=5, max_size=5),
       st.floats(0.0, 1.0), st.floats(-math.pi, math.pi))
def test_transmission_energy_bound(rs, mag, phase):
    g = cv.CavityGeometry(*rs[:4], cell_transmission=rs[4])
    t = cv.cavity_transmission(g, mag * np.exp(1j * phase))
    assert 0 <= t <= 1 + 1e-12


def test_transmission_phase_detunes():
    g = G.with_cell_transmission(0.8)
    assert cv.cavity_transmission(g, np.exp(0.1j)) < cv.cavity_transmission(g, 1.0)


def test_kappa_gain_matches_finite_difference():
    g = G.with_cell_transmission(cv.solve_cell_transmission(G, 20.0))
    t0, h = 0.97 * np.exp(0.02j), 1e-6

    def slope(model):
        # fractional slope vs extra single-pass power absorption delta
        f = lambda d: model(t0 * math.exp(-d / 2))
        return (math.log(f(h)) - math.log(f(-h))) / (2 * h)

    fd = slope(lambda t: cv.cavity_transmission(g, t)) / slope(lambda t: abs(t) ** 2)
    assert cv.effective_kappa_gain(g, t0) == pytest.approx(fd, rel=1e-6)


def test_kappa_gain_is_ring_pass_number():
    g = G.with_cell_transmission(cv.solve_cell_transmission(G, 20.0))
    a = cv.round_trip_factor(g)
    gain = cv.effective_kappa_gain(g, 1.0)
    assert gain == pytest.approx(1 / (1 - a), rel=1e-12)
    # ring resonator: about F/pi effective passes
    assert gain == pytest.approx(cv.finesse(g) / math.pi, rel=0.1)


def test_kappa_gain_lossy_limit():
    g = cv.CavityGeometry(R1=1e-6, cell_transmission=1e-6)
    assert cv.effective_kappa_gain(g, 0.9) == pytest.approx(1.0, abs=1e-5)


def test_kappa_gain_decreases_with_loss():
    t_cell = cv.solve_cell_transmission(G, 20.0)
    g1 = G.with_cell_transmission(t_cell)
    g2 = G.with_cell_transmission(1 - 2 * (1 - t_cell))
    assert cv.effective_kappa_gain(g2, 0.95) < cv.effective_kappa_gain(g1, 0.95)


@pytest.mark.parametrize("field", ["R1", "R2", "R3", "R4", "cell_transmission"])
def test_monotone_in_loss(field):
    lo = dict(R1=0.95, R2=0.98, R3=0.999, R4=0.999, cell_transmission=0.95)
    hi = dict(lo)
    hi[field] = lo[field] - 0.01
    g_lo, g_hi = cv.CavityGeometry(**lo), cv.CavityGeometry(**hi)
    assert cv.finesse(g_hi) < cv.finesse(g_lo)
    if field != "R1":  # R1 is also the input coupler, so B is not monotone in it
        assert cv.intracavity_buildup(g_hi) < cv.intracavity_buildup(g_lo)
    assert cv.finesse(G, 0.9) < cv.finesse(G, 1.0)
    assert cv.intracavity_buildup(G, 0.9) < cv.intracavity_buildup(G, 1.0)


def test_single_pass_consistency_limit():
    # no feedback and fully transmitting couplers: the ring is a single pass
    g = cv.CavityGeometry(R1=1e-12, R2=1e-12, R3=1.0, R4=1.0)
    for t in (1.0, 0.8 * np.exp(0.3j), 0.05):
        assert cv.cavity_transmission(g, t) == pytest.approx(abs(t) ** 2, rel=1e-6)


def test_geometry_validation():
    with pytest.raises(ValueError):
        cv.CavityGeometry(R1=0.0)
    with pytest.raises(ValueError):
        cv.CavityGeometry(cell_transmission=1.5)
    with pytest.raises(ValueError):
        cv.CavityGeometry(round_trip_length=0)
    with pytest.raises(ValueError):
        cv.cavity_transmission(G, 1.1)


def test_fsr_and_linewidth():
    assert G.fsr == pytest.approx(299792458 / 0.48)
    assert cv.linewidth(G) == pytest.approx(G.fsr / cv.finesse(G))
