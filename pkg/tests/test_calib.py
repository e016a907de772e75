import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rydcav.calib import (EA0, HBAR, MHZ, AntennaCalibration, dbm_from_field, field_from_dbm,
                          field_from_rabi, parse_quantity, rabi_from_field,
                          sensitivity_from_min_field, v_per_cm_to_v_per_m, v_per_m_to_v_per_cm)

MU = 1000 * EA0
fields = st.floats(min_value=1e-12, max_value=1e3, allow_nan=False)


def test_zero_field_zero_rabi():
    assert rabi_from_field(0.0, MU) == 0.0


def test_rabi_definition_sqrt2():
    e = 0.204  # 2.04 mV/cm
    assert rabi_from_field(e, MU) == pytest.approx(math.sqrt(2) * MU * e / HBAR, rel=1e-15)


@given(fields)
def test_rabi_round_trip(e):
    assert field_from_rabi(rabi_from_field(e, MU), MU) == pytest.approx(e, rel=1e-12)


@given(fields, fields)
def test_rabi_monotone(a, b):
    if a < b:
        assert rabi_from_field(a, MU) < rabi_from_field(b, MU)


def test_rabi_rejects_bad_inputs():
    with pytest.raises(ValueError):
        rabi_from_field(-1.0, MU)
    with pytest.raises(ValueError):
        rabi_from_field(1.0, 0.0)


def test_dbm_decade_law():
    cal = AntennaCalibration(0.37)
    assert field_from_dbm(-40, cal) / field_from_dbm(-60, cal) == pytest.approx(10.0, rel=1e-14)


def test_anchor_pair_maps_minus37_dbm():
    # -107 dBm <-> 1.53 uV/cm; +70 dB in power is x10^3.5 in field
    cal = AntennaCalibration.from_anchor(-107.0, v_per_cm_to_v_per_m(1.53e-6))
    e = v_per_m_to_v_per_cm(field_from_dbm(-37.0, cal))
    assert e == pytest.approx(1.53e-6 * 10**3.5, rel=1e-12)
    assert e == pytest.approx(4.84e-3, rel=2e-3)


@given(st.floats(min_value=-150, max_value=30))
def test_dbm_round_trip(p):
    cal = AntennaCalibration(0.0123)
    assert dbm_from_field(field_from_dbm(p, cal), cal) == pytest.approx(p, abs=1e-12)


def test_calibration_invariant():
    with pytest.raises(ValueError):
        AntennaCalibration(0.0)


def test_sensitivity_identity_at_1hz():
    assert sensitivity_from_min_field(168e-9, 1.0) == pytest.approx(168e-9)
    assert sensitivity_from_min_field(1.53e-6, 1.0) == pytest.approx(1.53e-6)


def test_sensitivity_square_root_law():
    assert sensitivity_from_min_field(2e-7, 4.0) == pytest.approx(0.5 * sensitivity_from_min_field(2e-7, 1.0))


@pytest.mark.parametrize("text,kind,expected", [
    ("2.04 mV/cm", "field", 0.204),
    ("168 nV/cm", "field", 1.68e-5),
    ("150 kHz", "frequency", 150e3),
    ("5 MHz", "angular", 2 * math.pi * 5e6),
    ("-107 dBm", "power", 1e-3 * 10**-10.7),
    ("1000 ea0", "dipole", 1000 * EA0),
    ("480 mm", "length", 0.48),
    (0.95, "dimensionless", 0.95),
])
def test_parse_quantity(text, kind, expected):
    assert parse_quantity(text, kind) == pytest.approx(expected, rel=1e-12)


@pytest.mark.parametrize("text,kind", [("3 furlongs", "length"), ("abc", "field"), ("5 MHz", "field")])
def test_parse_quantity_rejects(text, kind):
    with pytest.raises(ValueError):
        parse_quantity(text, kind)


def test_mhz_constant():
    assert MHZ == pytest.approx(2 * np.pi * 1e6)
