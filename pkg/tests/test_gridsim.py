import json
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ambientload.errors import (InstabilityDetected, LowVoltage, NonConvergence, ParseError,
                                ValidationError)
from ambientload.estimator import phasors_to_states
from ambientload.gridsim import (Event, SimConfig, build_admittance, load_case, read_pmu_csv,
                                 read_sidecar, shipped_case, simulate, solve_power_flow,
                                 write_pmu_csv, write_sidecar)
from ambientload.gridsim.pmu import iter_csv_records, iter_ndjson_records, parse_header
from ambientload.ou import build_load_ou_model, stationary_covariance


def two_bus(x=0.1, b=0.0, load=None, passive=False):
    doc = {
        "buses": [{"id": 1, "type": "slack", "voltage": 1.0},
                  {"id": 2, "type": "passive" if passive else "load"}],
        "branches": [{"from": 1, "to": 2, "r": 0.0, "x": x, "b": b}],
        "generators": [],
        "loads": [] if load is None else [dict(bus=2, **load)],
    }
    return load_case(json.dumps(doc))


def three_bus_doc():
    return shipped_case("three_bus").to_dict()


# ---------------------------------------------------------------- case parsing

def test_shipped_three_bus_is_valid():
    case = shipped_case("three_bus")
    assert case.n_bus == 3 and len(case.generators) == 2 and len(case.loads) == 1
    assert [b.type for b in case.buses] == ["slack", "generator", "load"]


def test_case_dict_roundtrip():
    case = shipped_case("twelve_bus")
    again = load_case(json.dumps(case.to_dict()))
    assert again.to_dict() == case.to_dict()


def test_two_slack_buses_rejected():
    doc = three_bus_doc()
    doc["buses"][1]["type"] = "slack"
    with pytest.raises(ValidationError, match="slack"):
        load_case(json.dumps(doc))


def test_branch_to_missing_bus_rejected():
    doc = three_bus_doc()
    doc["branches"][0]["to"] = 99
    with pytest.raises(ValidationError, match="missing bus 99"):
        load_case(json.dumps(doc))


def test_zero_impedance_rejected():
    doc = three_bus_doc()
    doc["branches"][0].update(r=0.0, x=0.0)
    with pytest.raises(ValidationError, match="zero impedance"):
        load_case(json.dumps(doc))


def test_two_loads_on_one_bus_rejected():
    doc = three_bus_doc()
    doc["loads"].append(dict(doc["loads"][0]))
    with pytest.raises(ValidationError, match="distinct"):
        load_case(json.dumps(doc))


def test_nonpositive_time_constant_rejected():
    doc = three_bus_doc()
    doc["loads"][0]["tau_g"] = 0.0
    with pytest.raises(ValidationError, match="time constants"):
        load_case(json.dumps(doc))


def test_json_syntax_error_has_location():
    with pytest.raises(ParseError, match=r"line 2, column"):
        load_case('{"buses": [\n  {"id": 1,, }]}')


def test_missing_field_has_context():
    doc = three_bus_doc()
    del doc["generators"][1]["x_d"]
    with pytest.raises(ParseError, match=r"generators\[1\].*x_d"):
        load_case(json.dumps(doc))


def test_non_numeric_field_has_context():
    doc = three_bus_doc()
    doc["loads"][0]["p_s"] = "lots"
    with pytest.raises(ParseError, match=r"loads\[0\]\.p_s"):
        load_case(json.dumps(doc))


def test_with_load_param_and_unknown_name():
    case = shipped_case("three_bus")
    assert case.with_load_param(0, "tau_g", 3.0).loads[0].tau_g == 3.0
    with pytest.raises(ValidationError):
        case.with_load_param(0, "colour", 1.0)


# ---------------------------------------------------------------- admittance

def test_single_branch_admittance():
    Y = build_admittance(two_bus(x=0.1))
    np.testing.assert_allclose(Y, [[-10j, 10j], [10j, -10j]], atol=1e-12)


def test_line_charging_adds_half_to_each_end():
    Y0 = build_admittance(two_bus(x=0.1))
    Y1 = build_admittance(two_bus(x=0.1, b=0.02))
    np.testing.assert_allclose(np.diag(Y1 - Y0), [0.01j, 0.01j], atol=1e-15)
    np.testing.assert_allclose(Y1 - Y0 - np.diag(np.diag(Y1 - Y0)), 0, atol=1e-15)


def test_three_bus_admittance_by_hand():
    z12, z13, z23 = 0.005 + 0.05j, 0.004 + 0.04j, 0.005 + 0.05j
    y12, y13, y23 = 1 / z12, 1 / z13, 1 / z23
    sh = 0.5j * 0.02
    Y = np.array([[y12 + y13 + sh, -y12, -y13],
                  [-y12, y12 + y23 + sh, -y23],
                  [-y13, -y23, y13 + y23 + 2 * sh]])
    np.testing.assert_allclose(build_admittance(shipped_case("three_bus")), Y, rtol=0, atol=1e-12)


def test_admittance_symmetric_twelve_bus():
    Y = build_admittance(shipped_case("twelve_bus"))
    np.testing.assert_array_equal(Y, Y.T)


# ---------------------------------------------------------------- power flow

THREE_BUS_V = np.array([1.02 + 0.0j,
                        1.0099970287597868 + 0.00244987681371862j,
                        1.007353929166899 - 0.01581341582120709j])


def test_three_bus_power_flow_fixture():
    op = solve_power_flow(shipped_case("three_bus"))
    assert op.iterations <= 6
    assert op.mismatch <= 1e-8
    assert np.all((np.abs(op.voltage) >= 0.95) & (np.abs(op.voltage) <= 1.05))
    np.testing.assert_allclose(op.voltage, THREE_BUS_V, rtol=0, atol=1e-10)


def test_twelve_bus_power_flow():
    case = shipped_case("twelve_bus")
    op = solve_power_flow(case)
    assert op.mismatch <= 1e-8
    V2 = op.load_voltages(case) ** 2
    spec = case.load_block_spec()
    np.testing.assert_allclose(op.g_eq * V2, spec.p_s, rtol=1e-12)
    np.testing.assert_allclose(op.b_eq * V2, spec.q_s, rtol=1e-12)


def test_power_flow_satisfies_injection_equations():
    case = shipped_case("twelve_bus")
    op = solve_power_flow(case)
    Y = build_admittance(case)
    S = op.voltage * np.conj(Y @ op.voltage)
    np.testing.assert_allclose(S, op.s_injection, atol=1e-9)


def test_flat_start_zero_loading():
    op = solve_power_flow(two_bus(passive=True))
    np.testing.assert_array_equal(op.voltage, [1.0, 1.0])


def test_grossly_infeasible_dispatch_fails():
    doc = three_bus_doc()
    for g in doc["generators"]:
        g["p_m"] = (g["p_m"] or 0.4) * 100
    with pytest.raises((NonConvergence, LowVoltage)):
        solve_power_flow(load_case(json.dumps(doc)))


def test_nonconvergence_reports_mismatch():
    doc = three_bus_doc()
    doc["generators"][1]["p_m"] = 40.0
    try:
        solve_power_flow(load_case(json.dumps(doc)))
    except NonConvergence as exc:
        assert exc.mismatch is not None and exc.mismatch > 1e-8
    except LowVoltage:
        pass
    else:
        pytest.fail("expected the infeasible case to fail")


# ---------------------------------------------------------------- simulation

@pytest.mark.parametrize("name", ["three_bus", "twelve_bus"])
def test_zero_noise_stays_at_equilibrium(name):
    case = shipped_case(name)
    w = simulate(case, SimConfig(duration=10.0, sigma_scale=0.0))
    assert np.max(np.abs(w.states - w.states[0])) <= 1e-9
    assert np.max(np.abs(w.voltage - w.voltage[0])) <= 1e-9
    op = solve_power_flow(case)
    np.testing.assert_allclose(w.states[0], np.concatenate([op.g_eq, op.b_eq]), rtol=1e-12)


def test_deterministic_under_seed():
    case = shipped_case("three_bus")
    cfg = SimConfig(duration=20.0, seed=42)
    a, b = simulate(case, cfg), simulate(case, cfg)
    np.testing.assert_array_equal(a.voltage, b.voltage)
    np.testing.assert_array_equal(a.current, b.current)
    c = simulate(case, replace(cfg, seed=43))
    assert not np.array_equal(a.current, c.current)


def test_current_matches_state_and_network_residual():
    case = shipped_case("twelve_bus")
    w = simulate(case, SimConfig(duration=20.0, seed=1))
    m = len(case.loads)
    y = w.states[:, :m] + 1j * w.states[:, m:]
    np.testing.assert_allclose(w.current, y * w.load_voltage(), rtol=0, atol=1e-12)
    assert w.meta["max_network_residual"] <= 1e-12


def test_states_recovered_from_phasors():
    w = simulate(shipped_case("twelve_bus"), SimConfig(duration=20.0, seed=2))
    np.testing.assert_allclose(phasors_to_states(w).x, w.states, rtol=0, atol=1e-12)


def test_sample_std_matches_analytic_three_bus_unit_sigma():
    # sigma_scale 20 turns the shipped 0.05 intensities into 1.0
    w = simulate(shipped_case("three_bus"), SimConfig(duration=500.0, seed=42, sigma_scale=20))
    model = build_load_ou_model(w.truth)
    C = stationary_covariance(model)
    x = w.states[:, 0]
    n = x.size
    rho = np.exp(model.drift[0, 0] * w.dt)
    se_var = C[0, 0] * np.sqrt(2.0 / n * (1 + rho ** 2) / (1 - rho ** 2))
    se_std = se_var / (2 * np.sqrt(C[0, 0]))
    assert abs(x.std(ddof=1) - np.sqrt(C[0, 0])) <= 3 * se_std


def test_noise_scaling_doubles_std():
    case = shipped_case("three_bus")
    ratios = []
    for seed in range(10):
        s1 = simulate(case, SimConfig(duration=100.0, seed=seed)).states[:, 0].std()
        s2 = simulate(case, SimConfig(duration=100.0, seed=seed, sigma_scale=2.0)).states[:, 0].std()
        ratios.append(s2 / s1)
    ratios = np.array(ratios)
    se = ratios.std(ddof=1) / np.sqrt(ratios.size)
    assert abs(ratios.mean() - 2.0) <= max(3 * se, 1e-3)


def test_events_change_parameters_mid_run():
    case = shipped_case("twelve_bus")
    w = simulate(case, SimConfig(duration=10.0, sigma_scale=0.0),
                 events=[Event(5.0, "p_s1", 0.7)])
    g = w.states[:, 0]
    k = int(round(5.0 / w.dt))
    np.testing.assert_allclose(g[:k + 1], g[0], rtol=0, atol=1e-12)
    assert g[-1] > g[k]


def test_event_outside_horizon_rejected():
    with pytest.raises(ValidationError):
        simulate(shipped_case("three_bus"), SimConfig(duration=10.0), events=[Event(11.0, "tau_g1", 1.0)])


@pytest.mark.parametrize("name", ["tau_x1", "tau_g9", "tau_g"])
def test_bad_event_parameter_rejected(name):
    with pytest.raises(ValidationError):
        Event(1.0, name, 1.0).resolve(4)


def test_event_parse():
    e = Event.parse("400:tau_g1:0.12")
    assert (e.t, e.parameter, e.value) == (400.0, "tau_g1", 0.12)
    with pytest.raises(ValidationError):
        Event.parse("400:tau_g1")


def test_instability_detected():
    with pytest.raises(InstabilityDetected):
        simulate(shipped_case("three_bus"), SimConfig(duration=50.0, seed=0, sigma_scale=2000))


@pytest.mark.parametrize("kw", [dict(h=0.0), dict(h=0.02, dt_pmu=0.03), dict(h=0.02, dt_pmu=0.01),
                                dict(sigma_scale=-1), dict(load_scheme="rk4")])
def test_bad_sim_config(kw):
    with pytest.raises(ValidationError):
        SimConfig(duration=1.0, **kw)


def test_pmu_decimation():
    w = simulate(shipped_case("three_bus"), SimConfig(duration=10.0, h=0.01, dt_pmu=0.02, seed=0))
    assert w.n == 500 and w.dt == pytest.approx(0.02)


def test_short_duration_warns(caplog):
    simulate(shipped_case("twelve_bus"), SimConfig(duration=1.0))
    assert any("shorter than 10" in r.getMessage() for r in caplog.records)


def test_euler_scheme_available():
    w = simulate(shipped_case("three_bus"), SimConfig(duration=5.0, load_scheme="euler"))
    assert np.all(np.isfinite(w.states))


# ---------------------------------------------------------------- PMU files

def test_csv_roundtrip(tmp_path):
    w = simulate(shipped_case("twelve_bus"), SimConfig(duration=4.0, seed=5))
    path = tmp_path / "pmu.csv"
    write_pmu_csv(w, path)
    r = read_pmu_csv(path)
    np.testing.assert_array_equal(r.voltage, w.voltage)
    np.testing.assert_array_equal(r.current, w.current)
    assert r.bus_ids == w.bus_ids and r.load_buses == w.load_buses
    assert r.dt == pytest.approx(w.dt, rel=1e-12)
    lines = path.read_text().splitlines()
    assert lines[0].split(",")[:3] == ["t", "V1_re", "V1_im"]
    assert len(lines) == w.n + 1


def test_sidecar_roundtrip(tmp_path):
    w = simulate(shipped_case("twelve_bus"), SimConfig(duration=4.0, seed=5))
    path = tmp_path / "pmu.json"
    ev = [Event(2.0, "tau_g1", 0.2)]
    write_sidecar(path, w, seed=5, events=ev, case_name="twelve_bus")
    d = read_sidecar(path)
    assert d["schema"] == "pmu-sidecar-v1" and d["seed"] == 5
    assert d["events"] == [ev[0].to_dict()]
    np.testing.assert_array_equal(d["truth_spec"].tau_g, w.truth.tau_g)


def test_header_validation():
    assert parse_header(["t", "V1_re", "V1_im", "I1_re", "I1_im"]) == ((1,), (1,))
    for bad in (["x", "V1_re", "V1_im", "I1_re", "I1_im"], ["t", "V1_re", "V2_im", "I1_re", "I1_im"],
                ["t", "I1_re", "I1_im", "V1_re", "V1_im"], ["t", "V1_re", "V1_im"]):
        with pytest.raises(ParseError):
            parse_header(bad)


def test_streaming_readers_agree(tmp_path):
    w = simulate(shipped_case("three_bus"), SimConfig(duration=1.0, seed=5))
    path = tmp_path / "pmu.csv"
    write_pmu_csv(w, path)
    with path.open() as fh:
        rows = [r for _, r in iter_csv_records(fh)]
    header = w.header()
    nd = [json.dumps(dict(zip(header, map(float, r)))) for r in w.to_array()]
    json_rows = [r for _, r in iter_ndjson_records(nd)]
    np.testing.assert_array_equal(np.array(rows), w.to_array())
    np.testing.assert_array_equal(np.array(json_rows), w.to_array())


def test_ragged_csv_row_rejected(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("t,V1_re,V1_im,I1_re,I1_im\n0,1,0,1,0\n0.02,1,0,1\n")
    with path.open() as fh, pytest.raises(ParseError, match="line 3"):
        list(iter_csv_records(fh))


@given(scale=st.floats(0.5, 1.5), angle=st.floats(-np.pi, np.pi))
def test_two_bus_load_power_flow(scale, angle):
    # a pure inductive load on a lossless line: consumed power equals p_s, q_s
    case = two_bus(x=0.05, load=dict(tau_g=1.0, tau_b=1.0, p_s=0.5 * scale, q_s=-0.1 * scale))
    op = solve_power_flow(case)
    V = abs(op.voltage[1])
    assert op.g_eq[0] * V ** 2 == pytest.approx(0.5 * scale, rel=1e-10)
