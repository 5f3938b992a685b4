"""scikit-learn style estimators wrapping the sampler and the selection search."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .basis import DEFAULT_L_CANDIDATES, DEFAULT_PERIOD, SpatioTemporalBasis
from .diagnostics import Thresholds
from .meanmodel import ChangePointConfig, build_design
from .panel import as_panel
from .sampler import ModelSpec, Priors, Protocol, ScamSettings
from .selection import fit_model, run_forward_selection


def _resolve_basis(basis, panel, n_temporal, n_spatial, fourier_period, L_candidates, eof_threshold):
    if basis is None:
        return None, None
    if isinstance(basis, tuple):
        H, B = basis
        return np.asarray(H, float), np.asarray(B, float)
    if isinstance(basis, SpatioTemporalBasis):
        try:
            check_is_fitted(basis, "temporal_")
        except Exception:
            basis = basis.fit(panel)
        return basis.H, basis.B
    if basis == "auto":
        fitted = SpatioTemporalBasis(n_temporal, n_spatial, fourier_period, L_candidates, eof_threshold).fit(panel)
        return fitted.H, fitted.B
    raise ValueError(f"unsupported basis {basis!r}")


def _seed(random_state):
    if random_state is None:
        return int(np.random.SeedSequence().generate_state(1)[0])
    return int(random_state)


class _ChangePointBase(BaseEstimator):

    def _priors(self):
        return Priors(self.sigma_beta, self.sigma_alpha, self.a_sigma, self.b_sigma, self.bound, self.gap)

    def _thresholds(self):
        return Thresholds(self.ess_floor, self.tau_sd_ceiling)

    def _scam(self):
        return ScamSettings(initial_sd=self.scam_initial_sd)

    def _prepare(self, X):
        panel = as_panel(X)
        H, B = _resolve_basis(self.basis, panel, self.n_temporal, self.n_spatial, self.fourier_period,
                              self.L_candidates, self.eof_threshold)
        self.panel_ = panel
        self.H_, self.B_ = H, B
        return panel, H, B

    def _store_fit(self, spec, samples, report):
        self.spec_ = spec
        self.samples_ = samples
        self.report_ = report
        self.dic_ = report.dic
        self.converged_ = report.converged
        self.change_points_ = self._tau_by_location(samples.tau.mean(axis=0)) if samples.n_draws else None

    def _tau_by_location(self, flat):
        out, pos = [], 0
        for qi in self.config_.q:
            out.append(np.asarray(flat[pos:pos + qi]))
            pos += qi
        return out

    def mean_process(self, draw):
        """Trend ``mu`` for saved draw ``draw`` as ``(n_days, n_locations)``."""
        check_is_fitted(self, "samples_")
        s = self.samples_
        taus = self._tau_by_location(s.tau[draw])
        t_star = self.panel_.t_star
        cols = []
        for qi, sl, tau in zip(self.config_.q, self.config_.beta_slices(), taus):
            cols.append(build_design(qi, tau, t_star) @ s.beta[draw, sl])
        return np.column_stack(cols)

    def sample_mean_process(self, n=100, random_state=0):
        """``n`` posterior realisations of the trend, shaped ``(n, n_days, n_locations)``."""
        check_is_fitted(self, "samples_")
        rng = np.random.default_rng(random_state)
        S = self.samples_.n_draws
        idx = rng.choice(S, size=min(n, S), replace=False)
        return np.stack([self.mean_process(k) for k in np.sort(idx)])

    def predict(self, X=None):
        """Posterior mean of the trend ``mu`` as ``(n_days, n_locations)``.

        The fitted panel is always used; ``X`` is accepted for pipeline
        compatibility only.
        """
        check_is_fitted(self, "samples_")
        s = self.samples_
        acc = np.zeros((self.panel_.n_days, self.panel_.n_locations))
        for k in range(s.n_draws):
            acc += self.mean_process(k)
        return acc / s.n_draws


class ChangePointRegressor(_ChangePointBase):
    """Bayesian slope change-point model for a fixed change-point configuration.

    Parameters
    ----------
    config : str, tuple or None
        Change points per location, e.g. ``"0,1,1,2"``. ``None`` fits no
        change points anywhere.
    n_iter, burn_in, thin : int
        Chain length, discarded warm-up and thinning interval.
    random_state : int or None
    sigma_beta, sigma_alpha : float or ndarray
        Prior covariances of trend and basis coefficients.
    a_sigma, b_sigma : float
        Inverse-gamma shape and scale for the noise variance.
    bound, gap : float
        Change-point exclusion zone at each end, and minimum spacing (days).
    basis : {"auto", None}, tuple or SpatioTemporalBasis
        ``"auto"`` fits Fourier/EOF bases to the data; ``None`` drops the
        spatio-temporal term; ``(H, B)`` supplies them directly.
    n_temporal, n_spatial, fourier_period, L_candidates, eof_threshold
        Passed to :class:`SpatioTemporalBasis` when ``basis="auto"``.
    ess_floor, tau_sd_ceiling : float
        Convergence thresholds used for ``converged_``.
    q_max : int
    scam_initial_sd : float or None

    Attributes
    ----------
    samples_ : PosteriorSamples
    report_ : FitReport
    dic_ : float
    converged_ : bool
    change_points_ : list of ndarray
        Posterior-mean change points (days) per location.
    """

    def __init__(self, config=None, n_iter=122_000, burn_in=2_000, thin=5, random_state=None,
                 sigma_beta=10_000.0, sigma_alpha=10_000.0, a_sigma=10.0, b_sigma=1.0,
                 bound=2000.0, gap=2000.0, basis="auto", n_temporal=None, n_spatial=None,
                 fourier_period=DEFAULT_PERIOD, L_candidates=DEFAULT_L_CANDIDATES, eof_threshold=0.90,
                 ess_floor=0.01, tau_sd_ceiling=2500.0, q_max=2, scam_initial_sd=None):
        self.config = config
        self.n_iter = n_iter
        self.burn_in = burn_in
        self.thin = thin
        self.random_state = random_state
        self.sigma_beta = sigma_beta
        self.sigma_alpha = sigma_alpha
        self.a_sigma = a_sigma
        self.b_sigma = b_sigma
        self.bound = bound
        self.gap = gap
        self.basis = basis
        self.n_temporal = n_temporal
        self.n_spatial = n_spatial
        self.fourier_period = fourier_period
        self.L_candidates = L_candidates
        self.eof_threshold = eof_threshold
        self.ess_floor = ess_floor
        self.tau_sd_ceiling = tau_sd_ceiling
        self.q_max = q_max
        self.scam_initial_sd = scam_initial_sd

    def fit(self, X, y=None):
        panel, H, B = self._prepare(X)
        if self.config is None:
            config = ChangePointConfig.zeros(panel.n_locations, self.q_max)
        elif isinstance(self.config, ChangePointConfig):
            config = self.config
        elif isinstance(self.config, str):
            config = ChangePointConfig.parse(self.config, self.q_max)
        else:
            config = ChangePointConfig(tuple(self.config), self.q_max)
        self.config_ = config
        protocol = Protocol(self.n_iter, self.burn_in, self.thin, _seed(self.random_state))
        spec, samples, report = fit_model(panel, config, H, B, self._priors(), self._scam(), protocol,
                                          self._thresholds())
        self._store_fit(spec, samples, report)
        return self


class ForwardChangePointSelector(_ChangePointBase):
    """Choose per-location change-point counts by gated DIC search.

    Accepts every parameter of :class:`ChangePointRegressor` except
    ``config``, plus:

    Parameters
    ----------
    strategy : {"forward", "backward", "stepwise"}
    n_jobs : int
        Candidates fitted in parallel within a step.
    continue_on_nonconvergence : bool

    Attributes
    ----------
    trace_ : SelectionTrace
    config_ : ChangePointConfig
        Selected configuration (``None`` if nothing converged).
    samples_, report_, dic_ :
        The selected model's fit.
    """

    def __init__(self, n_iter=122_000, burn_in=2_000, thin=5, random_state=None,
                 sigma_beta=10_000.0, sigma_alpha=10_000.0, a_sigma=10.0, b_sigma=1.0,
                 bound=2000.0, gap=2000.0, basis="auto", n_temporal=None, n_spatial=None,
                 fourier_period=DEFAULT_PERIOD, L_candidates=DEFAULT_L_CANDIDATES, eof_threshold=0.90,
                 ess_floor=0.01, tau_sd_ceiling=2500.0, q_max=2, scam_initial_sd=None,
                 strategy="forward", n_jobs=1, continue_on_nonconvergence=False):
        self.n_iter = n_iter
        self.burn_in = burn_in
        self.thin = thin
        self.random_state = random_state
        self.sigma_beta = sigma_beta
        self.sigma_alpha = sigma_alpha
        self.a_sigma = a_sigma
        self.b_sigma = b_sigma
        self.bound = bound
        self.gap = gap
        self.basis = basis
        self.n_temporal = n_temporal
        self.n_spatial = n_spatial
        self.fourier_period = fourier_period
        self.L_candidates = L_candidates
        self.eof_threshold = eof_threshold
        self.ess_floor = ess_floor
        self.tau_sd_ceiling = tau_sd_ceiling
        self.q_max = q_max
        self.scam_initial_sd = scam_initial_sd
        self.strategy = strategy
        self.n_jobs = n_jobs
        self.continue_on_nonconvergence = continue_on_nonconvergence

    def fit(self, X, y=None):
        panel, H, B = self._prepare(X)
        seed = _seed(self.random_state)
        trace, fits = run_forward_selection(
            panel, H, B, self._priors(), Protocol(self.n_iter, self.burn_in, self.thin, 0),
            self._thresholds(), self.q_max, seed, self.n_jobs, self.strategy,
            self.continue_on_nonconvergence, self._scam(), return_fits=True)
        self.trace_ = trace
        self.fits_ = fits
        if trace.final is None:
            self.config_ = None
            return self
        self.config_ = ChangePointConfig.parse(trace.final, self.q_max)
        samples, report = fits[trace.final]
        spec = ModelSpec(panel, self.config_, H, B, self._priors(), self._scam())
        self._store_fit(spec, samples, report)
        return self
