import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from ecosom import synthetic
from ecosom.fuelmodel import (CLUTCH, CO2_PER_FUEL_MASS, VehicleParams, co2_per_km, fuel_flow, fuel_flows,
                              infer_gear, infer_gears, label_windows, percent_reduction, simulate_session,
                              traction_power_kw, window_consumption)
from ecosom.features import make_windows
from ecosom.telemetry import TelemetrySample, from_arrays

from conftest import make_session

P = VehicleParams()

# carbon balance with exact decimal molar masses (C 12.011, H 1.008, O 15.999), density 835 g/L
CO2_446 = 117.54566226780463
CO2_261 = 68.78793240335652


def sample(vs, erpm, xacc=0.0):
    return TelemetrySample(0.0, vs, 20.0, erpm, 5.0, 0.0, xacc)


def test_co2_ratio_constant():
    assert CO2_PER_FUEL_MASS == pytest.approx(3.1564, abs=1e-4)


def test_infer_gear_exact():
    rpm = 2000.0
    assert infer_gear(P.kmh_per_rpm[2] * rpm, rpm, P) == 3


def test_infer_gear_midway_is_clutch():
    r = 0.5 * (P.kmh_per_rpm[2] + P.kmh_per_rpm[3])
    assert infer_gear(r * 2500, 2500, P) == CLUTCH


def test_infer_gear_errors():
    with pytest.raises(ValueError):
        infer_gear(-1.0, 2000, P)
    with pytest.raises(ValueError):
        infer_gear(50.0, 0.0, P)


def test_infer_gear_sweep_monotone():
    gears = [g for g in infer_gears(np.linspace(1, 200, 2000), np.full(2000, 2500.0), P) if g != CLUTCH]
    assert gears == sorted(gears)
    assert set(gears) == {1, 2, 3, 4, 5}


@settings(max_examples=100, deadline=None)
@given(st.floats(1.0, 200.0), st.floats(600.0, 6000.0), st.floats(0.2, 5.0))
def test_infer_gear_scale_consistent(vs, erpm, k):
    assert infer_gear(vs, erpm, P) == infer_gear(vs * k, erpm * k, P)


def test_flow_idle_and_cutoff():
    assert fuel_flow(sample(0.0, 800.0), CLUTCH, P) == P.idle_flow
    assert fuel_flow(sample(0.0, 800.0), 1, P) == P.idle_flow
    assert fuel_flow(sample(60.0, 3000.0), CLUTCH, P) == P.idle_flow
    assert fuel_flow(sample(60.0, 3000.0, xacc=-1.5), 3, P) == 0.0


def test_flow_no_cutoff_at_idle_rpm():
    # overrun at idle speed keeps the engine fed
    vs = P.kmh_per_rpm[0] * 780.0
    assert fuel_flow(sample(vs, 780.0, xacc=-2.0), 1, P) == P.idle_flow


def test_flow_hand_value():
    # 100 km/h, steady, 5th gear rpm; P = (rolling + aero) * v
    v = 100 / 3.6
    erpm = 100 / P.kmh_per_rpm[4]
    power = (P.mass * 9.81 * P.rolling_coeff + 0.5 * 1.2 * P.drag_area_coeff * v * v) * v / 1000
    expected = P.idle_flow * erpm / P.idle_rpm + P.willans_slope * power
    assert fuel_flow(sample(100.0, erpm), 5, P) == pytest.approx(expected, rel=1e-12)


def test_flow_increases_with_power():
    acc = np.linspace(0.0, 3.0, 50)
    flows = fuel_flows(np.full(50, 80.0), np.full(50, 2500.0), acc, np.full(50, 4), P)
    power = traction_power_kw(np.full(50, 80.0), acc, P)
    assert np.all(np.diff(power) > 0)
    assert np.all(np.diff(flows) > 0)


@settings(max_examples=100, deadline=None)
@given(st.floats(0, 200), st.floats(100, 7000), st.floats(-8, 8), st.integers(0, 5))
def test_flow_non_negative(vs, erpm, xacc, gear):
    f = fuel_flows([vs], [erpm], [xacc], [gear], P)[0]
    assert f >= 0.0 and math.isfinite(f)


def test_window_consumption():
    assert window_consumption([5.0] * 10, [100.0] * 10) == 5.0
    assert window_consumption([5.0] * 10, [200.0] * 10) == 2.5
    with pytest.raises(ValueError):
        window_consumption([1.0, 2.0], [0.0, 0.0])


def test_window_consumption_vs_integral():
    rng = np.random.default_rng(0)
    for _ in range(50):
        speeds = 90 * (1 + 0.1 * rng.uniform(-1, 1, 256))
        flows = rng.uniform(2, 8, 256)
        dt = 1 / 32
        litres = np.sum(flows) * dt / 3600
        km = np.sum(speeds) * dt / 3600
        assert window_consumption(flows, speeds) == pytest.approx(100 * litres / km, rel=0.02)


def test_co2_values():
    assert co2_per_km(0.0) == 0.0
    assert co2_per_km(4.46) == pytest.approx(CO2_446, rel=1e-12)
    assert co2_per_km(2.61) == pytest.approx(CO2_261, rel=1e-12)
    assert round(co2_per_km(4.46), 1) == 117.5
    with pytest.raises(ValueError):
        co2_per_km(-1.0)


def test_co2_reduction_matches_consumption():
    red = percent_reduction(co2_per_km(4.46), co2_per_km(2.61))
    assert red == pytest.approx(percent_reduction(4.46, 2.61), abs=1e-12)
    assert red == pytest.approx(41.48, abs=0.01)


@settings(max_examples=50, deadline=None)
@given(st.floats(0, 30), st.floats(0, 10))
def test_co2_linear(c, a):
    assert co2_per_km(a * c) == pytest.approx(a * co2_per_km(c), rel=1e-12, abs=1e-12)


def test_co2_uses_density():
    light = VehicleParams(fuel_density=750.0)
    assert co2_per_km(5.0, light) / co2_per_km(5.0, P) == pytest.approx(750 / 835)


def cruise(n=2048, gear=5, vs=90.0):
    erpm = vs / P.kmh_per_rpm[gear - 1]
    return make_session(n, vs=vs, erpm=erpm, xacc=0.0)


def test_simulate_constant_cruise():
    tr = simulate_session(cruise())
    assert np.all(tr.gear == 5)
    assert np.ptp(tr.flow_lph) == 0.0
    assert len(tr.window_l100km) == (2048 - 256) // 128 + 1


def test_simulate_liters_vs_trapezoid():
    s = synthetic.style_session(synthetic.STYLES[2], 120, seed=1)
    tr = simulate_session(s)
    trap = integrate.trapezoid(tr.flow_lph, s.t) / 3600
    # rectangle rule over n samples vs trapezoid over n - 1 intervals
    assert tr.liters == pytest.approx(trap, rel=5e-3)


def test_simulate_additive_over_concatenation():
    a = synthetic.style_session(synthetic.STYLES[1], 60, seed=2)
    b = synthetic.style_session(synthetic.STYLES[3], 60, seed=3)
    joined = from_arrays("d", "s", np.concatenate([a.t, b.t + a.t[-1] + 1 / 32]), rate_hz=32,
                         **{c: np.concatenate([getattr(a, c), getattr(b, c)])
                            for c in ("vs", "pgp", "erpm", "gp", "bp", "xacc")})
    ta, tb, tj = simulate_session(a), simulate_session(b), simulate_session(joined)
    assert tj.liters == pytest.approx(ta.liters + tb.liters, rel=1e-12)
    assert tj.km == pytest.approx(ta.km + tb.km, rel=1e-12)


def test_simulate_aggressive_costs_more():
    smooth = simulate_session(synthetic.style_session(synthetic.SMOOTH, 300, seed=5))
    rough = simulate_session(synthetic.style_session(synthetic.AGGRESSIVE, 300, seed=5))
    assert rough.l100km >= 1.2 * smooth.l100km


def test_simulate_reference_errors():
    s = synthetic.style_session(synthetic.STYLES[2], 60, seed=4)
    tr = simulate_session(s, reference={"erpm": s.erpm, "vs": s.vs})
    assert 0.0 < tr.rpm_rel_err < 0.01
    assert 0.0 < tr.speed_rel_err < 0.01
    assert simulate_session(s).rpm_rel_err is None


def test_label_windows():
    s = cruise(1024)
    tr = simulate_session(s)
    wins = label_windows(make_windows(s), tr)
    assert len(wins) == 7
    assert all(w.fuel_l_per_100km == pytest.approx(tr.l100km) for w in wins)
    stopped = make_session(512, vs=0.0, erpm=800.0)
    assert label_windows(make_windows(stopped), simulate_session(stopped))[0].fuel_l_per_100km is None


def test_trace_csv(tmp_path):
    tr = simulate_session(cruise(512))
    path = tmp_path / "f.csv"
    tr.write_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "t_s,gear,flow_lph,l100km_window"
    assert len(lines) == 513
    assert lines[255].endswith(",") and not lines[256].endswith(",")


def test_vehicle_params_validation(tmp_path):
    with pytest.raises(ValueError):
        VehicleParams(gear_ratios=(3.0, 4.0))
    with pytest.raises(ValueError):
        VehicleParams(mass=0.0)
    with pytest.raises(ValueError):
        VehicleParams.from_dict({"mass": 1200, "colour": "red"})
    path = tmp_path / "v.json"
    path.write_text(json.dumps({**P.to_dict(), "mass": 1500.0}))
    loaded = VehicleParams.load(path)
    assert loaded.mass == 1500.0 and loaded.gear_ratios == P.gear_ratios
    assert np.all(np.diff(P.kmh_per_rpm) > 0)
