import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from sklearn.base import clone

from slopecp.basis import (
    BasisError,
    SpatioTemporalBasis,
    build_eof,
    build_fourier,
    choose_from_mse,
    condition_number,
    fourier_column,
    residuals_for_eof,
    select_K,
    select_L,
    spatiotemporal_design,
)
from slopecp.panel import TemperaturePanel, scaled_time


def test_fourier_column_values():
    assert fourier_column(1, 0.0) == 1.0
    assert fourier_column(2, 365.25 / 4) == pytest.approx(1.0, abs=1e-15)
    assert fourier_column(1, 365.25) == pytest.approx(1.0, abs=1e-12)


def test_fourier_layout():
    H = build_fourier(10, 4, 365.25).H
    t = np.arange(1, 11)
    np.testing.assert_allclose(H[:, 0], np.cos(2 * np.pi * t / 365.25))
    np.testing.assert_allclose(H[:, 1], np.sin(2 * np.pi * t / 365.25))
    np.testing.assert_allclose(H[:, 2], np.cos(4 * np.pi * t / 365.25))
    np.testing.assert_allclose(H[:, 3], np.sin(4 * np.pi * t / 365.25))
    assert np.all(np.abs(H).sum(axis=0) > 0)


@pytest.mark.parametrize("L,A", [(0, 365.25), (2, 0.0), (2, -1.0)])
def test_fourier_errors(L, A):
    with pytest.raises(BasisError):
        build_fourier(10, L, A)


def test_even_columns_zero_mean_over_whole_periods():
    H = build_fourier(3650, 6, 365.0).H
    np.testing.assert_allclose(H[:, 1::2].mean(axis=0), 0.0, atol=1e-6)


def _panel(rows):
    return TemperaturePanel.from_array(np.asarray(rows), center=False)


def test_residuals_zero_for_line():
    ts = scaled_time(200)
    H = build_fourier(200, 2)
    r = residuals_for_eof(_panel([3 + 2 * ts, -1 + 0.5 * ts]), H)
    np.testing.assert_allclose(r, 0.0, atol=1e-10)


def test_residuals_zero_for_seasonal():
    H = build_fourier(500, 4)
    r = residuals_for_eof(_panel([H.H @ [1.0, -2.0, 0.5, 0.3]]), H)
    np.testing.assert_allclose(r, 0.0, atol=1e-8)


def test_residual_variance_matches_noise():
    rng = np.random.default_rng(1)
    N = 5000
    H = build_fourier(N, 4)
    y = 1 + 2 * scaled_time(N) + H.H @ [3.0, 1.0, 0.5, 0.2] + rng.standard_normal(N)
    r = residuals_for_eof(_panel([y]), H)
    assert abs(r.var() - 1.0) < 0.05


def test_residuals_rank_deficient():
    vals = np.full((1, 50), np.nan)
    vals[0, :3] = [1.0, 2.0, 3.0]
    with pytest.raises(BasisError, match="rank"):
        residuals_for_eof(_panel(vals), build_fourier(50, 4))


def test_eof_identical_rows():
    rng = np.random.default_rng(0)
    row = rng.standard_normal(100)
    sb = build_eof(np.vstack([row, row]), 1)
    np.testing.assert_allclose(sb.eigenvalues, [2, 0], atol=1e-12)
    np.testing.assert_allclose(sb.B[:, 0], [2**-0.5, 2**-0.5])


def test_eof_uncorrelated_rows():
    rng = np.random.default_rng(0)
    sb = build_eof(rng.standard_normal((2, 200_000)), 2)
    np.testing.assert_allclose(sb.eigenvalues, [1, 1], atol=0.02)


def test_eof_full_decomposition_orthogonal_and_sign():
    rng = np.random.default_rng(4)
    R = rng.standard_normal((5, 300)) + rng.standard_normal(300)
    sb = build_eof(R, 5)
    np.testing.assert_allclose(sb.B @ sb.B.T, np.eye(5), atol=1e-8)
    assert sb.eigenvalues.sum() == pytest.approx(5, abs=1e-8)
    assert np.all(np.diff(sb.eigenvalues) <= 1e-12)
    idx = np.argmax(np.abs(sb.B), axis=0)
    assert np.all(sb.B[idx, np.arange(5)] > 0)


def test_eof_missing_values_pairwise():
    rng = np.random.default_rng(2)
    R = rng.standard_normal((3, 500))
    R[0, :40] = np.nan
    sb = build_eof(R, 2)
    np.testing.assert_allclose(sb.B.T @ sb.B, np.eye(2), atol=1e-8)


def test_eof_errors():
    with pytest.raises(BasisError):
        build_eof(np.vstack([np.ones(10), np.arange(10.0)]), 1)
    with pytest.raises(BasisError):
        build_eof(np.random.default_rng(0).standard_normal((2, 10)), 3)


def test_choose_from_mse_rule():
    assert choose_from_mse([2, 4, 6, 8, 10], [100, 90, 89.5, 89.3, 89.2]) == 6
    assert choose_from_mse([2, 4, 6, 8, 10], [100, 80, 60, 40, 20]) == 10
    with pytest.raises(BasisError):
        choose_from_mse([2], [1.0])


def test_select_L_recovers_harmonics():
    rng = np.random.default_rng(5)
    N = 2000
    H = build_fourier(N, 4).H
    y = np.vstack([H @ [5.0, 3.0, 2.0, 1.5] + rng.standard_normal(N) for _ in range(2)])
    assert select_L(_panel(y)) == 6


def test_select_L_validates_candidates():
    p = _panel(np.random.default_rng(0).standard_normal((1, 100)))
    with pytest.raises(BasisError):
        select_L(p, [4])
    with pytest.raises(BasisError):
        select_L(p, [4, 2])


def test_select_K_examples():
    assert select_K([2, 0]) == 1
    assert select_K([4, 3, 1]) == 3
    assert select_K([4, 3, 1], 0.85) == 2
    with pytest.raises(BasisError):
        select_K([])


def test_kronecker_identity():
    rng = np.random.default_rng(0)
    B, H = rng.standard_normal((4, 2)), rng.standard_normal((10, 3))
    lhs = np.kron(B, np.eye(10)) @ np.kron(np.eye(2), H)
    assert np.max(np.abs(lhs - spatiotemporal_design(B, H))) < 1e-12


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 5), st.integers(1, 3), st.integers(1, 8), st.integers(1, 4), st.integers(0, 999))
def test_kronecker_identity_property(M, K, N, L, seed):
    rng = np.random.default_rng(seed)
    B, H = rng.standard_normal((M, K)), rng.standard_normal((N, L))
    lhs = np.kron(B, np.eye(N)) @ np.kron(np.eye(K), H)
    np.testing.assert_allclose(lhs, spatiotemporal_design(B, H), atol=1e-12)


def test_condition_number_guard():
    X = np.column_stack([np.ones(20), np.arange(20.0)])
    assert np.isfinite(condition_number(X, None))
    with pytest.raises(BasisError, match="collinear"):
        condition_number(X, X[:, :1] * 2.0)


def test_transformer_api():
    rng = np.random.default_rng(0)
    N = 730
    H = build_fourier(N, 2).H
    common = rng.standard_normal(N)
    X = np.column_stack([H @ [4.0, 1.0] + common + 0.3 * rng.standard_normal(N) for _ in range(3)])
    est = SpatioTemporalBasis(n_temporal=2)
    R = est.fit_transform(X)
    assert R.shape == (N, 3)
    assert est.H.shape == (N, 2)
    assert est.B.shape == (3, 1)
    assert clone(est).get_params()["n_temporal"] == 2
