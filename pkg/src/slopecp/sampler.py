"""Single-chain MCMC for a fixed change-point configuration.

Each iteration runs blocked Gibbs draws for the trend coefficients, the
basis coefficients and the noise variance, then one single-component
adaptive Metropolis (SCAM) step per change point.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, asdict

import numpy as np
from scipy.linalg.lapack import dpotrf, dtrtrs

from .meanmodel import ChangePointConfig, build_design, tau_bounds
from .panel import TemperaturePanel

logger = logging.getLogger(__name__)

LOG_2PI = math.log(2.0 * math.pi)


class SamplerAbort(RuntimeError):
    """Numerical failure inside a chain; ``partial`` holds the draws so far."""

    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial


@dataclass
class Priors:
    """Prior hyperparameters.

    ``sigma_beta`` / ``sigma_alpha`` are prior covariances, either a scalar
    variance (times identity) or a full matrix. ``bound`` and ``gap`` are
    in days and may be scalars or per-location sequences.
    """

    sigma_beta: float | np.ndarray = 10_000.0
    sigma_alpha: float | np.ndarray = 10_000.0
    a_sigma: float = 10.0
    b_sigma: float = 1.0
    bound: float | tuple = 2000.0
    gap: float | tuple = 2000.0

    def bound_for(self, i):
        return float(self.bound[i]) if np.ndim(self.bound) else float(self.bound)

    def gap_for(self, i):
        return float(self.gap[i]) if np.ndim(self.gap) else float(self.gap)

    def validate(self, n_days, n_locations, q_max):
        if self.a_sigma <= 1:
            raise ValueError("a_sigma must exceed 1")
        if self.b_sigma <= 0:
            raise ValueError("b_sigma must be positive")
        for i in range(n_locations):
            b, d = self.bound_for(i), self.gap_for(i)
            if 2 * b + d * max(q_max - 1, 0) >= n_days:
                raise ValueError(f"empty change-point support at location {i}: bound={b}, gap={d}, N={n_days}")

    def to_dict(self):
        out = asdict(self)
        for k, v in out.items():
            if isinstance(v, np.ndarray):
                out[k] = v.tolist()
            elif isinstance(v, tuple):
                out[k] = list(v)
        return out


def prior_precision(cov, n):
    if n == 0:
        return np.zeros((0, 0))
    if np.ndim(cov) == 0:
        return np.eye(n) / float(cov)
    cov = np.asarray(cov, dtype=float)
    if cov.shape != (n, n):
        raise ValueError(f"prior covariance must be {n}x{n}, got {cov.shape}")
    if not np.allclose(cov, cov.T):
        raise ValueError("prior covariance must be symmetric")
    return np.linalg.inv(cov)


@dataclass
class ScamSettings:
    """Constants of the single-component adaptive Metropolis proposal.

    ``initial_sd`` (days) defaults to ``N / 200`` when ``None``.
    """

    scale: float = 2.4**2
    eps: float = 0.01
    warmup: int = 100
    initial_sd: float | None = None
    adapt_after_burn_in: bool = True


class ScamAdapter:
    """Running-moment proposal scale for one scalar component."""

    def __init__(self, initial_sd, scale=2.4**2, eps=0.01, warmup=100):
        self.initial_sd = float(initial_sd)
        self.scale = scale
        self.eps = eps
        self.warmup = warmup
        self.n = 0
        self.mean = 0.0
        self.m2 = 0.0
        self.accepted = 0
        self.proposed = 0
        self.adapting = True

    @property
    def variance(self):
        return self.m2 / (self.n - 1) if self.n > 1 else 0.0

    @property
    def sd(self):
        if self.n <= self.warmup:
            return self.initial_sd
        return math.sqrt(self.scale * (self.variance + self.eps))

    def observe(self, x):
        if not self.adapting:
            return
        self.n += 1
        d = x - self.mean
        self.mean += d / self.n
        self.m2 += d * (x - self.mean)

    def state(self):
        return {"n": self.n, "mean": self.mean, "variance": self.variance, "sd": self.sd,
                "acceptance_rate": self.accepted / self.proposed if self.proposed else float("nan")}


def scam_step(x, log_target, adapter, rng, current_lp=None):
    """One random-walk Metropolis step with an adapted 1-D proposal.

    ``log_target`` returns ``-inf`` outside the support; such proposals are
    rejections. Returns ``(x_new, lp_new, accepted)``.
    """
    if current_lp is None:
        current_lp = log_target(x)
    prop = x + adapter.sd * rng.standard_normal()
    lp = log_target(prop)
    adapter.proposed += 1
    accepted = bool(np.isfinite(lp) and math.log(rng.random()) < lp - current_lp)
    if accepted:
        x, current_lp = prop, lp
        adapter.accepted += 1
    adapter.observe(x)
    return x, current_lp, accepted


@dataclass
class ModelSpec:
    """Everything needed to run one chain."""

    panel: TemperaturePanel
    config: ChangePointConfig
    H: np.ndarray | None = None
    B: np.ndarray | None = None
    priors: Priors = field(default_factory=Priors)
    scam: ScamSettings = field(default_factory=ScamSettings)

    def __post_init__(self):
        if self.config.M != self.panel.n_locations:
            raise ValueError(f"config has {self.config.M} locations, panel has {self.panel.n_locations}")
        if (self.H is None) != (self.B is None):
            raise ValueError("H and B must be given together")
        if self.H is not None:
            self.H = np.asarray(self.H, dtype=float)
            self.B = np.asarray(self.B, dtype=float)
            if self.H.shape[0] != self.panel.n_days or self.B.shape[0] != self.panel.n_locations:
                raise ValueError("basis dimensions do not match the panel")
        self.priors.validate(self.panel.n_days, self.panel.n_locations, max(self.config.q + (1,)))

    @property
    def n_alpha(self):
        return 0 if self.H is None else self.H.shape[1] * self.B.shape[1]

    def tau_labels(self):
        return [(i, j) for i, qi in enumerate(self.config.q) for j in range(qi)]

    def param_names(self):
        names = []
        for i, qi in enumerate(self.config.q):
            names += [f"beta[{i},{j}]" for j in range(qi + 2)]
        if self.n_alpha:
            K, L = self.B.shape[1], self.H.shape[1]
            names += [f"alpha[{k},{l}]" for k in range(K) for l in range(L)]
        names.append("sigma2")
        names += [f"tau[{i},{j}]" for i, j in self.tau_labels()]
        return names


@dataclass(frozen=True)
class Protocol:
    iterations: int = 122_000
    burn_in: int = 2_000
    thin: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.iterations <= 0 or self.thin <= 0 or self.burn_in < 0:
            raise ValueError("iterations and thin must be positive, burn_in non-negative")
        if self.burn_in >= self.iterations:
            raise ValueError("burn_in must be smaller than iterations")

    @property
    def n_saved(self):
        return (self.iterations - self.burn_in) // self.thin


@dataclass
class ChainState:
    beta: np.ndarray
    alpha: np.ndarray
    sigma2: float
    tau: list
    scam: list


@dataclass
class PosteriorSamples:
    """Thinned post-burn-in draws of one chain."""

    beta: np.ndarray
    alpha: np.ndarray
    sigma2: np.ndarray
    tau: np.ndarray
    loglik: np.ndarray
    config: ChangePointConfig
    tau_labels: list
    param_names: list
    meta: dict = field(default_factory=dict)

    @property
    def n_draws(self):
        return self.sigma2.size

    def matrix(self):
        """All parameters as an ``S x P`` array in ``param_names`` order."""
        return np.column_stack([self.beta, self.alpha, self.sigma2[:, None], self.tau])

    def head(self, n):
        """The first ``n`` saved draws."""
        return PosteriorSamples(self.beta[:n], self.alpha[:n], self.sigma2[:n], self.tau[:n],
                                self.loglik[:n], self.config, self.tau_labels, self.param_names,
                                dict(self.meta, n_draws=int(min(n, self.n_draws))))


class Chain:
    """Mutable single-chain sampler bound to one :class:`ModelSpec`."""

    def __init__(self, spec: ModelSpec, rng):
        self.spec = spec
        self.rng = rng
        panel = spec.panel
        self.N = panel.n_days
        self.M = panel.n_locations
        self.t_star = panel.t_star
        self.Y = panel.filled(0.0)
        self.W = panel.observed.astype(float)
        self.n_obs = panel.n_obs
        self.q = spec.config.q
        self.slices = spec.config.beta_slices()
        self.P_beta = prior_precision(spec.priors.sigma_beta, spec.config.n_beta)
        self.P_alpha = prior_precision(spec.priors.sigma_alpha, spec.n_alpha)
        self.bounds = [spec.priors.bound_for(i) for i in range(self.M)]
        self.gaps = [spec.priors.gap_for(i) for i in range(self.M)]
        if spec.n_alpha:
            H, B = spec.H, spec.B
            self.H, self.B = H, B
            K, L = B.shape[1], H.shape[1]
            # sum_i (b_i b_i') kron (H_i' H_i) over observed days of location i
            HtWH = np.einsum("tl,it,tm->ilm", H, self.W, H)
            G = np.einsum("ik,ij,ilm->kljm", B, B, HtWH).reshape(K * L, K * L)
            self.G = 0.5 * (G + G.T)
        self.phi = np.zeros((self.M, self.N))
        self.mu = np.zeros((self.M, self.N))

    # -- helpers -----------------------------------------------------------

    def initial_tau(self, i):
        qi = self.q[i]
        b, d = self.bounds[i], self.gaps[i]
        if qi == 0:
            return np.empty(0)
        tau = b + (self.N - 2 * b) * np.arange(1, qi + 1) / (qi + 1)
        if not tau_bounds(tau, self.N, b, d):
            raise ValueError(f"cannot place {qi} change points at location {i} inside the prior support")
        return tau

    def log_prior_tau(self, i, tau):
        """Sequential uniform prior: ``tau_1 ~ U(b, N-b)``, ``tau_j | tau_{j-1} ~ U(tau_{j-1}+gap, N-b)``."""
        b, d = self.bounds[i], self.gaps[i]
        upper = self.N - b
        tau = tau.tolist()
        if not (tau[0] > b and tau[-1] < upper):
            return -math.inf
        lp = -math.log(upper - b)
        for prev, nxt in zip(tau, tau[1:]):
            if nxt < prev + d:
                return -math.inf
            lp -= math.log(upper - prev - d)
        return lp

    def _set_design(self, i, tau):
        X = build_design(self.q[i], tau, self.t_star)
        self.X[i] = X
        Xw = X * self.W[i][:, None]
        self.XtX[i] = X.T @ Xw

    def _draw_mvn(self, precision, rhs, what):
        """Draw from ``N(P^{-1} rhs, P^{-1})`` through the Cholesky factor of ``P``."""
        c, info = dpotrf(precision, lower=1)
        if info != 0:
            raise SamplerAbort(f"{what} posterior precision is not positive definite (collinear design?)")
        y, _ = dtrtrs(c, rhs, lower=1)
        y += self.rng.standard_normal(rhs.size)
        x, _ = dtrtrs(c, y, lower=1, trans=1)
        return x

    # -- updates -------------------------------------------------------------

    def init_state(self):
        self.X = [None] * self.M
        self.XtX = [None] * self.M
        tau = [self.initial_tau(i) for i in range(self.M)]
        for i in range(self.M):
            self._set_design(i, tau[i])
        yo = self.Y[self.W > 0]
        sigma2 = float(np.var(yo)) if yo.size > 1 else self.spec.priors.b_sigma / (self.spec.priors.a_sigma - 1)
        init_sd = self.spec.scam.initial_sd or self.N / 200.0
        adapters = [[ScamAdapter(init_sd, self.spec.scam.scale, self.spec.scam.eps, self.spec.scam.warmup)
                     for _ in range(qi)] for qi in self.q]
        self.state = ChainState(np.zeros(self.spec.config.n_beta), np.zeros(self.spec.n_alpha),
                                sigma2, tau, adapters)
        return self.state

    def gibbs_beta(self):
        s = self.state
        R = (self.Y - self.phi) * self.W
        P = self.P_beta.copy()
        rhs = np.empty(P.shape[0])
        for i, sl in enumerate(self.slices):
            P[sl, sl] += self.XtX[i] / s.sigma2
            rhs[sl] = self.X[i].T @ R[i] / s.sigma2
        s.beta = self._draw_mvn(P, rhs, "beta")
        for i, sl in enumerate(self.slices):
            self.mu[i] = self.X[i] @ s.beta[sl]
        return s.beta

    def gibbs_alpha(self):
        s = self.state
        if not self.spec.n_alpha:
            return s.alpha
        R = (self.Y - self.mu) * self.W
        rhs = (self.B.T @ R @ self.H).ravel() / s.sigma2
        P = self.G / s.sigma2 + self.P_alpha
        s.alpha = self._draw_mvn(P, rhs, "alpha")
        A = s.alpha.reshape(self.B.shape[1], self.H.shape[1])
        self.phi = self.B @ A @ self.H.T
        return s.alpha

    def sse(self):
        E = (self.Y - self.mu - self.phi) * self.W
        return float(np.einsum("ij,ij->", E, E))

    def gibbs_sigma2(self):
        s = self.state
        pr = self.spec.priors
        shape = pr.a_sigma + 0.5 * self.n_obs
        scale = pr.b_sigma + 0.5 * self.sse()
        s.sigma2 = scale / self.rng.standard_gamma(shape)
        return s.sigma2

    def tau_log_target(self, i, j):
        """Log full conditional of change point ``j`` at location ``i``, up to a constant.

        With slopes fixed, moving knot ``j`` from day ``d`` to ``d'`` only
        alters the mean after ``min(d, d')`` by
        ``(beta_{j+1} - beta_j) * (max(0, t* - k') - max(0, t* - k))``, so
        only that slice of the residual is rescored. Returns the target and
        its value at the current change point.
        """
        s = self.state
        beta_i = s.beta[self.slices[i]]
        w = self.W[i]
        tau = s.tau[i]
        e = (self.Y[i] - self.phi[i] - self.mu[i]) * w
        jump = beta_i[j + 2] - beta_i[j + 1]
        day = math.ceil(tau[j])
        knot = self.t_star[day - 1]
        inv_two_s2 = 0.5 / s.sigma2

        def log_target(x):
            cand = tau.copy()
            cand[j] = x
            lp = self.log_prior_tau(i, cand)
            if lp == -math.inf:
                return lp
            new_day = math.ceil(x)
            if new_day == day:
                return lp
            lo = min(day, new_day)
            ts = self.t_star[lo:]
            shift = jump * (np.maximum(ts - self.t_star[new_day - 1], 0.0) - np.maximum(ts - knot, 0.0))
            seg = e[lo:]
            seg_new = seg - shift * w[lo:]
            return lp - (seg_new @ seg_new - seg @ seg) * inv_two_s2

        return log_target, self.log_prior_tau(i, tau)

    def scam_tau(self, i, j):
        """SCAM update of change point ``j`` at location ``i``."""
        s = self.state
        tau = s.tau[i]
        day = math.ceil(tau[j])
        log_target, lp_cur = self.tau_log_target(i, j)
        x, _, accepted = scam_step(float(tau[j]), log_target, s.scam[i][j], self.rng, lp_cur)
        if accepted:
            new = tau.copy()
            new[j] = x
            s.tau[i] = new
            if math.ceil(x) != day:
                self._set_design(i, new)
                self.mu[i] = self.X[i] @ s.beta[self.slices[i]]
        return accepted

    def loglik(self):
        s2 = self.state.sigma2
        return -0.5 * (self.n_obs * (LOG_2PI + math.log(s2)) + self.sse() / s2)

    def step(self):
        self.gibbs_beta()
        self.gibbs_alpha()
        self.gibbs_sigma2()
        for i, qi in enumerate(self.q):
            for j in range(qi):
                self.scam_tau(i, j)


def run_chain(spec: ModelSpec, protocol: Protocol = Protocol()):
    """Run one chain and return its thinned post-burn-in draws."""
    rng = np.random.default_rng(protocol.seed)
    chain = Chain(spec, rng)
    state = chain.init_state()
    S = protocol.n_saved
    Q = spec.config.Q
    out_beta = np.empty((S, spec.config.n_beta))
    out_alpha = np.empty((S, spec.n_alpha))
    out_s2 = np.empty(S)
    out_tau = np.empty((S, Q))
    out_ll = np.empty(S)
    labels = spec.tau_labels()
    meta = {"iterations": protocol.iterations, "burn_in": protocol.burn_in, "thin": protocol.thin,
            "seed": protocol.seed, "config": str(spec.config)}

    def package(n):
        return PosteriorSamples(out_beta[:n], out_alpha[:n], out_s2[:n], out_tau[:n], out_ll[:n],
                                spec.config, labels, spec.param_names(), dict(meta, n_draws=n))

    k = 0
    for it in range(1, protocol.iterations + 1):
        if it == protocol.burn_in + 1 and not spec.scam.adapt_after_burn_in:
            for ads in state.scam:
                for ad in ads:
                    ad.adapting = False
        try:
            chain.step()
        except SamplerAbort as exc:
            exc.partial = package(k)
            exc.args = (f"{exc.args[0]} at iteration {it}",)
            raise
        if it > protocol.burn_in and (it - protocol.burn_in) % protocol.thin == 0:
            out_beta[k] = state.beta
            out_alpha[k] = state.alpha
            out_s2[k] = state.sigma2
            if Q:
                out_tau[k] = np.concatenate([t for t in state.tau if t.size])
            out_ll[k] = chain.loglik()
            k += 1
            if not np.isfinite(out_ll[k - 1]):
                raise SamplerAbort(f"non-finite log-likelihood at iteration {it}", package(k))
    samples = package(k)
    samples.meta["scam"] = [[ad.state() for ad in ads] for ads in state.scam]
    return samples


def deviance(spec: ModelSpec, beta, alpha, sigma2, tau):
    """``-2 log f(y | theta)`` for one parameter vector.

    ``tau`` is the flat vector of change points in ``spec.tau_labels()`` order.
    """
    panel = spec.panel
    Y = panel.filled(0.0)
    W = panel.observed
    tau = np.asarray(tau, dtype=float)
    sse = 0.0
    phi = None
    if spec.n_alpha:
        A = np.asarray(alpha).reshape(spec.B.shape[1], spec.H.shape[1])
        phi = spec.B @ A @ spec.H.T
    pos = 0
    for i, (qi, sl) in enumerate(zip(spec.config.q, spec.config.beta_slices())):
        X = build_design(qi, tau[pos:pos + qi], panel.t_star)
        pos += qi
        e = Y[i] - X @ np.asarray(beta)[sl]
        if phi is not None:
            e = e - phi[i]
        sse += float(np.sum(e[W[i]] ** 2))
    return panel.n_obs * (LOG_2PI + math.log(sigma2)) + sse / sigma2
