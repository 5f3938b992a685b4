"""Temporal Fourier and spatial EOF bases for the spatio-temporal effect."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .panel import TemperaturePanel, as_panel

DEFAULT_PERIOD = 365.25
DEFAULT_L_CANDIDATES = (2, 4, 6, 8, 10)
MAX_CONDITION = 1e10


class BasisError(ValueError):
    pass


@dataclass(frozen=True)
class TemporalBasis:
    H: np.ndarray
    period: float

    @property
    def L(self):
        return self.H.shape[1]


@dataclass(frozen=True)
class SpatialBasis:
    B: np.ndarray
    eigenvalues: np.ndarray

    @property
    def K(self):
        return self.B.shape[1]


def fourier_column(ell, t, period=DEFAULT_PERIOD):
    """Fourier basis function ``ell >= 1`` at days ``t``.

    Odd ``ell`` gives ``cos((ell + 1) pi t / A)``, even ``ell`` gives
    ``sin(ell pi t / A)``.
    """
    t = np.asarray(t, dtype=float)
    if ell % 2:
        return np.cos((ell + 1) / period * np.pi * t)
    return np.sin(ell / period * np.pi * t)


def build_fourier(n_days, L, period=DEFAULT_PERIOD):
    """``N x L`` Fourier design evaluated at the integer days ``1..N``."""
    if L < 1:
        raise BasisError(f"L must be >= 1, got {L}")
    if period <= 0:
        raise BasisError(f"period must be positive, got {period}")
    t = np.arange(1, n_days + 1, dtype=float)
    H = np.column_stack([fourier_column(ell, t, period) for ell in range(1, L + 1)])
    return TemporalBasis(H, float(period))


def _zero_cp_design(t_star):
    return np.column_stack([np.ones_like(t_star), t_star])


def residuals_for_eof(panel: TemperaturePanel, H):
    """Per-location least-squares residuals after removing line + seasonal fit.

    Returns an ``M x N`` array with ``nan`` at unobserved cells.
    """
    H = H.H if isinstance(H, TemporalBasis) else np.asarray(H)
    if H.shape[0] != panel.n_days:
        raise BasisError("temporal basis and panel disagree on N")
    design = np.hstack([_zero_cp_design(panel.t_star), H])
    out = np.full(panel.values.shape, np.nan)
    for i in range(panel.n_locations):
        obs = panel.observed[i]
        Xo = design[obs]
        if np.linalg.matrix_rank(Xo) < design.shape[1]:
            raise BasisError(f"rank-deficient trend design for location {panel.location_ids[i]}")
        coef, *_ = np.linalg.lstsq(Xo, panel.values[i, obs], rcond=None)
        out[i, obs] = panel.values[i, obs] - Xo @ coef
    return out


def _pairwise_corr(resid):
    M = resid.shape[0]
    obs = np.isfinite(resid)
    C = np.eye(M)
    for i in range(M):
        for j in range(i + 1, M):
            both = obs[i] & obs[j]
            a, b = resid[i, both], resid[j, both]
            a = a - a.mean()
            b = b - b.mean()
            denom = np.sqrt((a @ a) * (b @ b))
            if denom == 0:
                raise BasisError(f"constant residual series for locations {i}/{j}")
            C[i, j] = C[j, i] = (a @ b) / denom
    return C


def build_eof(residuals, K):
    """Leading ``K`` eigenvectors of the residual correlation matrix.

    Correlations are pairwise-complete over finite entries. Each column is
    signed so that its largest-magnitude entry is positive.
    """
    residuals = np.asarray(residuals, dtype=float)
    M = residuals.shape[0]
    if not 1 <= K <= M:
        raise BasisError(f"K must lie in [1, {M}], got {K}")
    for i, row in enumerate(residuals):
        row = row[np.isfinite(row)]
        if row.size < 2 or np.ptp(row) == 0:
            raise BasisError(f"residual row {i} has zero variance")
    C = _pairwise_corr(residuals)
    vals, vecs = np.linalg.eigh(C)
    order = np.argsort(vals)[::-1]
    vals, vecs = vals[order], vecs[:, order]
    idx = np.argmax(np.abs(vecs), axis=0)
    vecs = vecs * np.sign(vecs[idx, np.arange(M)])
    return SpatialBasis(vecs[:, :K].copy(), vals)


def mse_for_L(panel, L, period=DEFAULT_PERIOD):
    resid = residuals_for_eof(panel, build_fourier(panel.n_days, L, period))
    return float(np.nansum(resid**2))


def choose_from_mse(candidates, mse, tol=0.01):
    """First candidate whose MSE improves on its predecessor by less than ``tol``."""
    if len(candidates) < 2:
        raise BasisError("need at least two L candidates")
    for k in range(1, len(candidates)):
        if (mse[k - 1] - mse[k]) / mse[k - 1] < tol:
            return candidates[k]
    return candidates[-1]


def select_L(panel, candidates=DEFAULT_L_CANDIDATES, period=DEFAULT_PERIOD, tol=0.01):
    candidates = list(candidates)
    if len(candidates) < 2:
        raise BasisError("need at least two L candidates")
    if any(b <= a for a, b in zip(candidates, candidates[1:])):
        raise BasisError("L candidates must be strictly ascending")
    mse = [mse_for_L(panel, L, period) for L in candidates]
    return choose_from_mse(candidates, mse, tol)


def select_K(eigenvalues, threshold=0.90):
    """Smallest K whose leading eigenvalues reach ``threshold`` of the trace."""
    ev = np.asarray(eigenvalues, dtype=float)
    if ev.size == 0:
        raise BasisError("no eigenvalues given")
    frac = np.cumsum(ev) / ev.sum()
    return int(np.searchsorted(frac, threshold - 1e-12) + 1)


def spatiotemporal_design(B, H):
    """Dense ``NM x KL`` design ``B kron H`` (rows ordered location-major)."""
    return np.kron(np.asarray(B), np.asarray(H))


def condition_number(X, BH):
    """Condition number of ``[X | BH]``; raises if above ``MAX_CONDITION``."""
    X = X.toarray() if hasattr(X, "toarray") else np.asarray(X)
    full = np.hstack([X, BH]) if BH is not None and BH.size else X
    cond = float(np.linalg.cond(full))
    if not np.isfinite(cond) or cond > MAX_CONDITION:
        raise BasisError(f"design is collinear (condition number {cond:.3g})")
    return cond


class SpatioTemporalBasis(TransformerMixin, BaseEstimator):
    """Fourier-in-time, EOF-in-space basis fitted to a panel.

    Parameters
    ----------
    n_temporal : int or None
        Number of Fourier columns ``L``. ``None`` selects it with the
        1% MSE-improvement rule over ``L_candidates``.
    n_spatial : int or None
        Number of EOFs ``K``. ``None`` uses the cumulative eigenvalue
        fraction ``eof_threshold``.
    fourier_period : float
    L_candidates : tuple of int
    eof_threshold : float

    Attributes
    ----------
    temporal_ : TemporalBasis
    spatial_ : SpatialBasis
    """

    def __init__(self, n_temporal=None, n_spatial=None, fourier_period=DEFAULT_PERIOD,
                 L_candidates=DEFAULT_L_CANDIDATES, eof_threshold=0.90):
        self.n_temporal = n_temporal
        self.n_spatial = n_spatial
        self.fourier_period = fourier_period
        self.L_candidates = L_candidates
        self.eof_threshold = eof_threshold

    def fit(self, X, y=None):
        panel = as_panel(X)
        L = self.n_temporal
        if L is None:
            L = select_L(panel, self.L_candidates, self.fourier_period)
        self.temporal_ = build_fourier(panel.n_days, L, self.fourier_period)
        self.residuals_ = residuals_for_eof(panel, self.temporal_)
        full = build_eof(self.residuals_, panel.n_locations)
        K = self.n_spatial if self.n_spatial is not None else select_K(full.eigenvalues, self.eof_threshold)
        self.spatial_ = SpatialBasis(full.B[:, :K].copy(), full.eigenvalues)
        return self

    def transform(self, X):
        """Detrended, deseasonalised residuals, shaped ``(n_days, n_locations)``."""
        check_is_fitted(self, "temporal_")
        return residuals_for_eof(as_panel(X), self.temporal_).T

    @property
    def H(self):
        check_is_fitted(self, "temporal_")
        return self.temporal_.H

    @property
    def B(self):
        check_is_fitted(self, "spatial_")
        return self.spatial_.B
