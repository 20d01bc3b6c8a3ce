import logging

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ambientload.errors import (DimensionMismatch, InsufficientSamples, NegativeRealAxisEigenvalue,
                                SingularCovariance, ValidationError, ZeroVoltageSample)
from ambientload.estimator import (StateSeries, drift_from_moments, error_report, estimate,
                                   estimate_drift, extract_time_constants, moments,
                                   phasors_to_states, sample_stats, window_sweep)
from ambientload.experiments import KAPPA, ou_state_series, ten_load_spec
from ambientload.gridsim import PhasorWindow, SimConfig, shipped_case, simulate
from ambientload.ou import (LoadBlockSpec, OuModel, build_load_ou_model, simulate_exact,
                            stationary_covariance, stationary_stats)

from conftest import random_diffusion, random_stable


def window_from(V, I, dt=0.02):
    V = np.atleast_2d(np.asarray(V, dtype=complex)).reshape(-1, 1)
    I = np.atleast_2d(np.asarray(I, dtype=complex)).reshape(-1, 1)
    return PhasorWindow(dt=dt, voltage=V, current=I, bus_ids=(1,), load_buses=(1,))


# ---------------------------------------------------------------- phasors -> states

def test_unit_phasors():
    s = phasors_to_states(window_from([1, 1], [1, 1]))
    np.testing.assert_allclose(s.x, [[1, 0], [1, 0]])
    np.testing.assert_allclose(s.v_bar, [1.0])


def test_inductive_current():
    s = phasors_to_states(window_from([1, 1], [0.5 - 0.3j, 0.5 - 0.3j]))
    np.testing.assert_allclose(s.x[0], [0.5, -0.3], atol=1e-15)


def test_rotated_phasors_give_same_states():
    rot = np.exp(0.7j)
    s = phasors_to_states(window_from([1.02 * rot] * 2, [(0.5 - 0.3j) * 1.02 * rot] * 2))
    np.testing.assert_allclose(s.x[0], [0.5, -0.3], atol=1e-14)
    np.testing.assert_allclose(s.v_bar, [1.02])


def test_near_zero_voltage_rejected():
    with pytest.raises(ZeroVoltageSample):
        phasors_to_states(window_from([1, 1e-8], [1, 1]))


def test_state_series_validation():
    with pytest.raises(ValidationError):
        StateSeries(np.zeros((5, 3)), 0.02, v_bar=[1.0])
    with pytest.raises(DimensionMismatch):
        StateSeries(np.zeros((5, 2)), 0.02, v=np.ones((4, 1)))
    with pytest.raises(ValidationError):
        StateSeries(np.zeros((5, 2)), 0.02)
    with pytest.raises(ValidationError):
        StateSeries(np.zeros((5, 2)), 0.02, v_bar=[0.0])


# ---------------------------------------------------------------- sample statistics

def test_constant_series_zero_stats():
    s = StateSeries(np.full((50, 4), 0.3), 0.02, v_bar=[1, 1])
    st_ = sample_stats(s, 2)
    np.testing.assert_array_equal(st_.cov, 0)
    np.testing.assert_array_equal(st_.lag_corr, 0)
    with pytest.raises(SingularCovariance):
        estimate(s, 2)


def test_hand_computed_three_samples():
    x = np.array([[1.0, 0.0], [2.0, 0.0], [3.0, 0.0]])
    st_ = sample_stats(StateSeries(x, 0.02, v_bar=[1.0]), 1)
    assert st_.mean[0] == 2.0
    assert st_.cov[0, 0] == 1.0
    assert st_.lag_corr[0, 0] == 0.0
    assert st_.lag == pytest.approx(0.02)


def test_lag_correlation_orientation():
    # channel 1 copies channel 0 one step later, so
    # G[1, 0] (state 1 at t+lag vs state 0 at t) uses lag_corr of a shifted copy
    rng = np.random.default_rng(0)
    z = rng.standard_normal(5001)
    x = np.column_stack([z[1:], z[:-1]])
    mean, cov, G = moments(x, 1)
    # x1[t+1] = x0[t], so G[1, 0] ~ var while G[0, 1] ~ lag-2 correlation ~ 0
    assert G[1, 0] == pytest.approx(cov[0, 0], rel=1e-2)
    assert abs(G[0, 1]) < 0.05


def test_insufficient_samples():
    with pytest.raises(InsufficientSamples):
        sample_stats(StateSeries(np.zeros((11, 2)), 0.02, v_bar=[1.0]), 10)
    with pytest.raises(ValidationError):
        sample_stats(StateSeries(np.zeros((11, 2)), 0.02, v_bar=[1.0]), 0)


@given(seed=st.integers(0, 2**32 - 1), n=st.integers(5, 200), d=st.integers(1, 6))
def test_covariance_symmetric_psd(seed, n, d):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, 2 * d)) * rng.uniform(0.1, 10, 2 * d)
    _, C, _ = moments(x, 1)
    assert np.max(np.abs(C - C.T)) <= 1e-12 * max(1.0, np.max(np.abs(C)))
    assert np.linalg.eigvalsh(C).min() >= -1e-10 * max(1.0, np.max(np.abs(C)))


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_ten_load_sample_covariance_matches_analytic(seed):
    spec = ten_load_spec()
    model = build_load_ou_model(spec)
    C = stationary_covariance(model)
    series, _ = ou_state_series(spec, 500, seed=seed)
    Ch = sample_stats(series, KAPPA).cov
    n = series.n
    rho = np.exp(np.diag(model.drift) * series.dt)
    s2 = np.diag(C)
    var = np.outer(s2, s2) / n * (1 + np.outer(rho, rho)) / (1 - np.outer(rho, rho))
    var[np.diag_indices_from(var)] *= 2
    z = ((Ch - C) / np.sqrt(var))[np.triu_indices(20)]
    # 210 distinct entries: allow the ~0.3% per-entry chance of a 3-SE miss
    assert np.mean(np.abs(z) > 3) <= 0.01
    assert np.max(np.abs(z)) <= 4.5
    assert 0.7 <= np.mean(z ** 2) <= 1.4


# ---------------------------------------------------------------- drift recovery

@given(seed=st.integers(0, 2**32 - 1), dim=st.integers(1, 10),
       lag=st.sampled_from([0.05, 0.2, 1.0]))
def test_analytic_moments_recover_drift(seed, dim, lag):
    rng = np.random.default_rng(seed)
    model = OuModel(random_stable(rng, dim), random_diffusion(rng, dim))
    stats = stationary_stats(model, lag)
    A, diag = drift_from_moments(stats.lag_autocorr, lag, C=stats.covariance)
    assert np.linalg.norm(A - model.drift) <= 1e-8 * np.linalg.norm(model.drift)
    assert diag["imag_residual_fraction"] < 1e-8


def test_scalar_ou_ensemble():
    model = OuModel([[-5.0]], [[1.0]])
    est = []
    for seed in range(20):
        x = simulate_exact(model, 25000, 0.02, np.random.default_rng(seed))
        _, C, G = moments(x, 10)
        est.append(drift_from_moments(G, 0.2, C=C)[0][0, 0])
    assert abs(np.median(est) + 5.0) <= 0.15 * 5.0


def test_estimate_drift_uses_stats_lag():
    spec = ten_load_spec()
    series, _ = ou_state_series(spec, 100, seed=0)
    stats = sample_stats(series, KAPPA)
    A1, d1 = estimate_drift(stats)
    A2, d2 = estimate_drift(stats, lag=2 * stats.lag)
    np.testing.assert_allclose(A1, 2 * A2, rtol=1e-14)
    assert d1["lag"] == pytest.approx(0.2)
    for key in ("imag_residual_fraction", "imag_warning", "cond_c", "matlog_method"):
        assert key in d1


def test_singular_covariance_from_duplicate_channels():
    rng = np.random.default_rng(1)
    z = rng.standard_normal((400, 1))
    x = np.hstack([z, z])
    with pytest.raises(SingularCovariance):
        estimate(StateSeries(x, 0.02, v_bar=[1.0]), 1)


def test_ill_conditioned_covariance_warns(caplog):
    rng = np.random.default_rng(2)
    model = OuModel(np.diag([-1.0, -1.0]), np.diag([1.0, 1e-5]))
    x = simulate_exact(model, 20000, 0.02, rng)
    _, C, G = moments(x, 10)
    with caplog.at_level(logging.WARNING):
        _, diag = drift_from_moments(G, 0.2, C=C)
    assert diag["cond_c"] > 1e8
    assert any("ill-conditioned" in r.getMessage() for r in caplog.records)


def test_negative_eigenvalue_propagates():
    C = np.eye(2)
    G = np.diag([0.5, -0.01])
    with pytest.raises(NegativeRealAxisEigenvalue):
        drift_from_moments(G, 0.2, C=C)


# ---------------------------------------------------------------- time constants

def test_extract_single_load():
    res = extract_time_constants(np.diag([-10.0, -2.0]), [1.0])
    np.testing.assert_allclose(res.tau_g_hat, [0.1])
    np.testing.assert_allclose(res.tau_b_hat, [0.5])
    assert res.nonphysical == []
    assert res.diagnostics["offdiag_fraction"] == 0.0


def test_extract_uses_voltage_squared():
    res = extract_time_constants(np.diag([-10.0, -2.0]), [1.1])
    np.testing.assert_allclose(res.tau_hat, [0.121, 0.605])


def test_positive_diagonal_flagged():
    res = extract_time_constants(np.diag([-10.0, 0.5]), [1.0])
    assert res.nonphysical == ["tau_b1"]
    assert res.tau_b_hat[0] < 0


def test_offdiagonal_mass_reported():
    A = np.array([[-1.0, 1.0], [0.0, -1.0]])
    res = extract_time_constants(A, [1.0])
    assert res.diagnostics["offdiag_fraction"] == pytest.approx(1 / np.sqrt(3))


def test_extract_dimension_check():
    with pytest.raises(DimensionMismatch):
        extract_time_constants(np.eye(3), [1.0])


# ---------------------------------------------------------------- error report

def test_error_report_zero_for_truth():
    spec = ten_load_spec()
    res = extract_time_constants(build_load_ou_model(spec).drift, spec.v_bar)
    rep = error_report(res, spec)
    np.testing.assert_allclose(rep.rel_errors, 0, atol=1e-15)
    assert rep.frobenius == pytest.approx(0, abs=1e-15)


def test_error_report_percent_arithmetic():
    spec = LoadBlockSpec(tau_g=[0.1], tau_b=[0.5], v_bar=[1.0], p_s=[1], q_s=[1], sigma_p=[1],
                         sigma_q=[1])
    # prints as 0.1043 and +4.2536% at four decimals
    res = extract_time_constants(np.diag([-1 / 0.1042536, -2.0]), [1.0])
    rep = error_report(res, spec)
    assert round(float(res.tau_g_hat[0]), 4) == 0.1043
    assert round(100 * float(rep.rel_err_g[0]), 4) == 4.2536


def test_error_report_dimension_mismatch():
    res = extract_time_constants(np.diag([-10.0, -2.0]), [1.0])
    with pytest.raises(DimensionMismatch):
        error_report(res, ten_load_spec())


def test_twelve_bus_frozen_errors():
    w = simulate(shipped_case("twelve_bus"), SimConfig(duration=200, seed=7), record_states=False)
    rep = estimate(phasors_to_states(w), KAPPA, w.truth).errors
    np.testing.assert_allclose(
        rep.rel_err_g, [0.02480021958681064, -0.13026599361114444, -0.04225255209586003,
                        -0.11651618993695809], rtol=1e-7, atol=1e-9)
    np.testing.assert_allclose(
        rep.rel_err_b, [0.00948677196950243, -0.07520105371569819, -0.01063251759172257,
                        0.35189176057022625], rtol=1e-7, atol=1e-9)
    assert rep.frobenius == pytest.approx(1.0048754932252206, rel=1e-7)
    assert rep.frobenius_projected == pytest.approx(0.027579339009364493, rel=1e-6)


def test_result_to_dict_is_json_ready():
    import json
    spec = ten_load_spec()
    series, _ = ou_state_series(spec, 100, seed=3)
    d = estimate(series, KAPPA, spec).to_dict()
    again = json.loads(json.dumps(d))
    assert len(again["a_hat"]) == 20 and len(again["a_hat"][0]) == 20
    assert set(again["errors_vs_truth"]) >= {"rel_err_g", "rel_err_b", "frobenius"}


# ---------------------------------------------------------------- invariances

@given(c=st.floats(0.05, 20.0), seed=st.integers(0, 1000))
def test_current_scale_equivariance(c, seed):
    w = simulate(shipped_case("three_bus"), SimConfig(duration=40, seed=seed), record_states=False)
    s1 = phasors_to_states(w)
    w2 = PhasorWindow(dt=w.dt, voltage=w.voltage, current=c * w.current, bus_ids=w.bus_ids,
                      load_buses=w.load_buses)
    s2 = phasors_to_states(w2)
    np.testing.assert_allclose(s2.x, c * s1.x, rtol=1e-12)
    a, b = sample_stats(s1, KAPPA), sample_stats(s2, KAPPA)
    np.testing.assert_allclose(b.cov, c ** 2 * a.cov, rtol=1e-10)
    np.testing.assert_allclose(b.lag_corr, c ** 2 * a.lag_corr, rtol=1e-9, atol=1e-14 * c ** 2)
    r1, r2 = estimate(s1, KAPPA), estimate(s2, KAPPA)
    np.testing.assert_allclose(r2.a_hat, r1.a_hat, rtol=1e-10, atol=1e-10)
    np.testing.assert_allclose(r2.tau_hat, r1.tau_hat, rtol=1e-10)


def test_lag_robustness():
    # ensemble median over 50 seeds; a failed matrix log counts as a miss
    spec = ten_load_spec()
    truth = np.concatenate([spec.tau_g, spec.tau_b])
    for kappa in (5, 10, 20):
        errs = []
        for seed in range(50):
            series, _ = ou_state_series(spec, 500, seed=seed)
            try:
                errs.append(np.abs(estimate(series, kappa).tau_hat - truth) / truth)
            except NegativeRealAxisEigenvalue:
                errs.append(np.full(20, np.inf))
        assert np.all(np.median(errs, axis=0) <= 0.25), kappa


def test_window_sweep_lengths_and_trend():
    spec = ten_load_spec()
    series, _ = ou_state_series(spec, 500, seed=0)
    sweep = window_sweep(series, KAPPA, [100, 300, 500], spec)
    assert [L for L, _ in sweep] == [100.0, 300.0, 500.0]
    assert sweep[-1][1].errors.frobenius < sweep[0][1].errors.frobenius
    with pytest.raises(InsufficientSamples):
        window_sweep(series, KAPPA, [600], spec)
