import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from slopecp.diagnostics import (
    DiagnosticsError,
    FitReport,
    Thresholds,
    bw_nrd0,
    convergence_gate,
    dic,
    ess,
    fit_report,
    gate,
    geweke,
    is_degenerate,
    overlap_index,
    report_from_arrays,
    spectrum0_ar,
)
from slopecp.meanmodel import ChangePointConfig, build_design
from slopecp.panel import TemperaturePanel, scaled_time
from slopecp.sampler import ModelSpec, PosteriorSamples, Priors, Protocol, run_chain


def ar1(rho, n, seed):
    rng = np.random.default_rng(seed)
    e = rng.standard_normal(n)
    x = np.empty(n)
    x[0] = e[0] / math.sqrt(1 - rho**2)
    for t in range(1, n):
        x[t] = rho * x[t - 1] + e[t]
    return x


def test_ess_iid():
    x = np.random.default_rng(0).standard_normal(10_000)
    assert abs(ess(x) - 10_000) / 10_000 < 0.15


@pytest.mark.parametrize("rho", [0.0, 0.5, 0.9])
def test_ess_ar1(rho):
    S = 100_000
    target = S * (1 - rho) / (1 + rho)
    assert abs(ess(ar1(rho, S, 1)) - target) / target < 0.15


def test_ess_constant_and_short():
    assert ess(np.full(500, 2.0)) == 500
    assert is_degenerate(np.full(5, 1.0))
    with pytest.raises(DiagnosticsError):
        ess(np.zeros(99))


@settings(max_examples=30, deadline=None)
@given(st.integers(100, 5000), st.floats(-0.5, 0.95), st.integers(0, 10_000))
def test_ess_upper_bound(S, rho, seed):
    assert ess(ar1(rho, S, seed)) <= S * 1.2


def test_spectrum_iid_and_ar1():
    x = np.random.default_rng(2).standard_normal(50_000)
    assert spectrum0_ar(x) == pytest.approx(1.0, rel=0.05)
    y = ar1(0.5, 50_000, 3)
    assert spectrum0_ar(y) == pytest.approx(1 / (1 - 0.5) ** 2, rel=0.1)


def test_geweke_null_and_shift():
    rng = np.random.default_rng(0)
    zs = [geweke(rng.standard_normal(2000))[0] for _ in range(200)]
    assert np.mean(np.abs(zs) < 3) > 0.97
    x = rng.standard_normal(2000)
    x[1000:] += 5
    assert abs(geweke(x)[0]) > 3


def test_geweke_constant_and_short():
    assert geweke(np.ones(1000)) == (0.0, True)
    with pytest.raises(DiagnosticsError):
        geweke(np.zeros(999))


@settings(max_examples=20, deadline=None)
@given(st.floats(0.01, 100), st.floats(-100, 100), st.integers(0, 1000))
def test_geweke_affine_invariance(scale, shift, seed):
    x = ar1(0.6, 1500, seed)
    assert geweke(scale * x + shift)[0] == pytest.approx(geweke(x)[0], abs=1e-9)


def test_overlap_examples():
    x = np.random.default_rng(0).standard_normal(500)
    assert overlap_index(x, x) >= 0.95
    h = bw_nrd0(x)
    assert overlap_index(x, x + (x.max() - x.min()) + 10 * h) < 0.01
    with pytest.raises(DiagnosticsError):
        overlap_index([1.0], x)


def test_overlap_normal_oracle():
    rng = np.random.default_rng(5)
    a, b = rng.standard_normal(20_000), rng.standard_normal(20_000) + 1.0
    exact = 2 * stats.norm.cdf(-0.5)
    assert overlap_index(a, b) == pytest.approx(exact, abs=0.02)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 1000), st.floats(-50, 50), st.floats(0.1, 20))
def test_overlap_symmetric_and_affine(seed, shift, scale):
    rng = np.random.default_rng(seed)
    a, b = rng.standard_normal(300), rng.standard_normal(250) * 1.5 + 0.7
    v = overlap_index(a, b)
    assert v == pytest.approx(overlap_index(b, a), abs=1e-12)
    assert overlap_index(scale * a + shift, scale * b + shift) == pytest.approx(v, abs=1e-3)
    assert 0 <= v <= 1


def test_gate_reported_boundaries():
    assert gate(309, 20_000, 1154) == (True, [])
    ok, failing = gate(9.36, 24_000, 0.0)
    assert not ok and failing == ["ess"]
    ok, failing = gate(10_000, 24_000, 2500.0)
    assert not ok and failing == ["tau_sd"]
    assert gate(240, 24_000, 2499.9)[0]
    assert not gate(239.99, 24_000, 10.0)[0]


def _toy(N=50, seed=0):
    rng = np.random.default_rng(seed)
    y = 0.5 + 1.2 * scaled_time(N) + rng.standard_normal(N)
    panel = TemperaturePanel.from_array(y[None, :], center=False)
    spec = ModelSpec(panel, ChangePointConfig((0,)), priors=Priors(bound=2, gap=2))
    return spec, run_chain(spec, Protocol(3000, 500, 1, 3))


def test_dic_identity_and_brute_force():
    spec, s = _toy()
    value, p_d, mean_dev, d_bar = dic(s, spec)
    assert value == pytest.approx(p_d + mean_dev, abs=1e-9)
    assert value == pytest.approx(2 * mean_dev - d_bar, abs=1e-9)
    y = spec.panel.values[0]
    X = build_design(0, [], spec.panel.t_star)
    devs = [-2 * stats.norm.logpdf(y, X @ b, math.sqrt(v)).sum() for b, v in zip(s.beta, s.sigma2)]
    assert mean_dev == pytest.approx(float(np.mean(devs)), rel=1e-12)
    plug = -2 * stats.norm.logpdf(y, X @ s.beta.mean(axis=0), math.sqrt(s.sigma2.mean())).sum()
    assert d_bar == pytest.approx(plug, rel=1e-12)


def test_dic_degenerate_chain():
    spec, s = _toy()
    one = PosteriorSamples(np.repeat(s.beta[:1], 10, 0), np.zeros((10, 0)), np.repeat(s.sigma2[:1], 10),
                           np.zeros((10, 0)), np.repeat(s.loglik[:1], 10), s.config, [], s.param_names)
    value, p_d, _, d_bar = dic(one, spec)
    assert p_d == pytest.approx(0.0, abs=1e-8) and value == pytest.approx(d_bar, abs=1e-8)
    with pytest.raises(DiagnosticsError):
        dic(s.head(1), spec)


def test_fit_report_round_trip():
    spec, s = _toy()
    rep = fit_report(s, spec, Thresholds())
    assert rep.dic == pytest.approx(rep.p_d + rep.mean_deviance, abs=1e-9)
    assert set(rep.ess) == set(s.param_names) and rep.tau_sd == {}
    assert rep.geweke is not None and rep.converged
    assert convergence_gate(rep) == (True, [])
    d = rep.to_dict()
    assert d["min_ess"] == rep.min_ess
    same = report_from_arrays(s.matrix(), s.param_names, s.loglik, rep.deviance_at_mean)
    assert same.dic == rep.dic


def test_report_flags_degenerate_column():
    mat = np.column_stack([np.random.default_rng(0).standard_normal(200), np.ones(200)])
    rep = report_from_arrays(mat, ["a", "tau[0,0]"], np.zeros(200), 0.0, with_geweke=False)
    assert rep.degenerate == ["tau[0,0]"] and rep.tau_sd["tau[0,0]"] == 0.0
    assert isinstance(rep, FitReport)
