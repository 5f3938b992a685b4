"""Fit diagnostics: DIC, batch-means ESS, Geweke z-scores, overlap index."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.integrate import trapezoid

from .sampler import PosteriorSamples, deviance


class DiagnosticsError(ValueError):
    pass


@dataclass(frozen=True)
class Thresholds:
    """Convergence cut-offs: ESS floor as a fraction of saved draws, change-point SD ceiling in days."""

    ess_floor: float = 0.01
    tau_sd_ceiling: float = 2500.0
    geweke_band: float = 3.0


@dataclass
class FitReport:
    dic: float
    p_d: float
    mean_deviance: float
    deviance_at_mean: float
    n_draws: int
    ess: dict
    tau_sd: dict
    geweke: dict | None
    converged: bool
    failing: list
    thresholds: dict
    degenerate: list = field(default_factory=list)

    @property
    def min_ess(self):
        return min(self.ess.values()) if self.ess else float("inf")

    @property
    def max_tau_sd(self):
        return max(self.tau_sd.values()) if self.tau_sd else 0.0

    def to_dict(self):
        out = asdict(self)
        out["min_ess"] = self.min_ess
        out["max_tau_sd"] = self.max_tau_sd
        return out

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), **kw)


# -- DIC ---------------------------------------------------------------------

def dic(samples: PosteriorSamples, spec):
    """Deviance information criterion of one chain.

    Returns ``(dic, p_d, mean_deviance, deviance_at_mean)``. The plug-in
    deviance uses posterior means of every parameter; change points are
    rounded up to whole days inside the design, as in the model itself.
    """
    if samples.n_draws < 2:
        raise DiagnosticsError("DIC needs at least two saved draws")
    dev = -2.0 * samples.loglik
    mean_dev = float(dev.mean())
    d_bar = deviance(spec, samples.beta.mean(axis=0), samples.alpha.mean(axis=0),
                     float(samples.sigma2.mean()), samples.tau.mean(axis=0))
    p_d = mean_dev - d_bar
    return mean_dev + p_d, p_d, mean_dev, d_bar


# -- ESS ---------------------------------------------------------------------

def batch_means_variance(trace, batch_size=None):
    """Batch-means estimate of the asymptotic variance of the trace mean times ``S``."""
    x = np.asarray(trace, dtype=float)
    n = x.size
    b = batch_size or int(math.floor(math.sqrt(n)))
    a = n // b
    if a < 2:
        raise DiagnosticsError("too few batches")
    batches = x[n - a * b:].reshape(a, b).mean(axis=1)
    return b * np.sum((batches - batches.mean()) ** 2) / (a - 1)


def ess(trace):
    """Effective sample size ``S * var / sigma2_bm`` with batch size ``floor(sqrt(S))``.

    The estimate is capped at ``S``: with few batches the long-run variance
    is noisy and can fall well below the sample variance, which would report
    more effective draws than actual ones. A constant trace returns ``S``
    (see :func:`is_degenerate`).
    """
    x = np.asarray(trace, dtype=float)
    if x.ndim != 1 or x.size < 100:
        raise DiagnosticsError("ESS needs a 1-D trace of at least 100 draws")
    if is_degenerate(x):
        return float(x.size)
    lam = x.var(ddof=1)
    sigma = batch_means_variance(x)
    if sigma <= 0:
        return float(x.size)
    return float(min(x.size, x.size * lam / sigma))


def is_degenerate(trace):
    x = np.asarray(trace, dtype=float)
    return bool(np.ptp(x) == 0)


# -- Geweke ------------------------------------------------------------------

def _autocov(x, maxlag):
    x = x - x.mean()
    n = x.size
    f = np.fft.rfft(x, 2 * n)
    acov = np.fft.irfft(f * np.conj(f))[: maxlag + 1] / n
    return acov


def spectrum0_ar(trace, max_order=None):
    """Spectral density at frequency zero from an AR fit chosen by AIC.

    Yule-Walker equations are solved by Levinson-Durbin recursion for every
    order up to ``max_order``.
    """
    x = np.asarray(trace, dtype=float)
    n = x.size
    if max_order is None:
        max_order = int(min(n - 1, math.floor(10 * math.log10(n))))
    r = _autocov(x, max_order)
    if r[0] <= 0:
        return 0.0
    phi = np.zeros(0)
    v = r[0]
    best = (n * math.log(v), 0, phi, v)
    for p in range(1, max_order + 1):
        k = (r[p] - phi @ r[p - 1:0:-1]) / v if p > 1 else r[1] / v
        phi = np.concatenate([phi - k * phi[::-1], [k]])
        v *= 1.0 - k * k
        if v <= 0:
            break
        aic = n * math.log(v) + 2 * p
        if aic < best[0]:
            best = (aic, p, phi.copy(), v)
    _, _, phi, v = best
    return v / (1.0 - phi.sum()) ** 2


def geweke(trace, first=0.1, last=0.5):
    """Geweke z-score comparing the first 10% and last 50% of a trace.

    Returns ``(z, degenerate)``; a constant trace gives ``(0.0, True)``.
    """
    x = np.asarray(trace, dtype=float)
    if x.size < 1000:
        raise DiagnosticsError("Geweke needs at least 1,000 draws")
    if is_degenerate(x):
        return 0.0, True
    a = x[: int(first * x.size)]
    b = x[x.size - int(last * x.size):]
    var_a = spectrum0_ar(a) / a.size
    var_b = spectrum0_ar(b) / b.size
    denom = math.sqrt(var_a + var_b)
    if denom == 0:
        return 0.0, True
    return float((a.mean() - b.mean()) / denom), False


# -- overlap -----------------------------------------------------------------

def bw_nrd0(x):
    """Silverman's rule-of-thumb bandwidth."""
    x = np.asarray(x, dtype=float)
    sd = x.std(ddof=1)
    iqr = np.subtract(*np.percentile(x, [75, 25]))
    lo = min(sd, iqr / 1.34)
    if lo <= 0:
        lo = sd or abs(x[0]) or 1.0
    return 0.9 * lo * x.size ** -0.2


def _kde(x, grid, h):
    z = (grid[:, None] - x[None, :]) / h
    return np.exp(-0.5 * z * z).sum(axis=1) / (x.size * h * math.sqrt(2 * math.pi))


def overlap_index(samples_a, samples_b, n_grid=512, cut=3.0):
    """Integral of ``min(f_a, f_b)`` for Gaussian kernel density estimates.

    Both densities are evaluated on one ``n_grid``-point grid spanning both
    samples, padded by ``cut`` bandwidths.
    """
    a = np.asarray(samples_a, dtype=float).ravel()
    b = np.asarray(samples_b, dtype=float).ravel()
    if a.size < 2 or b.size < 2:
        raise DiagnosticsError("overlap index needs at least two points per sample")
    ha, hb = bw_nrd0(a), bw_nrd0(b)
    pad = cut * max(ha, hb)
    grid = np.linspace(min(a.min(), b.min()) - pad, max(a.max(), b.max()) + pad, n_grid)
    fa, fb = _kde(a, grid, ha), _kde(b, grid, hb)
    return float(min(1.0, trapezoid(np.minimum(fa, fb), grid)))


# -- gate --------------------------------------------------------------------

def gate(min_ess, n_draws, max_tau_sd=0.0, thresholds=Thresholds()):
    """Convergence verdict from summary numbers.

    Passes when ``min_ess >= ess_floor * n_draws`` and ``max_tau_sd`` is
    strictly below the ceiling. Returns ``(passed, failing)``.
    """
    failing = []
    if not min_ess >= thresholds.ess_floor * n_draws:
        failing.append("ess")
    if not max_tau_sd < thresholds.tau_sd_ceiling:
        failing.append("tau_sd")
    return not failing, failing


def convergence_gate(report: FitReport, thresholds=None):
    thresholds = thresholds or Thresholds(**report.thresholds)
    return gate(report.min_ess, report.n_draws, report.max_tau_sd, thresholds)


def report_from_arrays(matrix, names, loglik, deviance_at_mean, thresholds=Thresholds(), with_geweke=True):
    """Build a :class:`FitReport` from a draws matrix and its log-likelihood trace.

    ``deviance_at_mean`` is the plug-in deviance, which needs the data and
    so is computed by the caller. Columns named ``tau[...]`` feed the SD gate.
    """
    matrix = np.asarray(matrix, dtype=float)
    loglik = np.asarray(loglik, dtype=float)
    S = matrix.shape[0]
    if S < 2 or loglik.shape != (S,):
        raise DiagnosticsError("need at least two draws and one log-likelihood per draw")
    mean_dev = float((-2.0 * loglik).mean())
    p_d = mean_dev - float(deviance_at_mean)
    ess_vals, degenerate, tau_sd = {}, [], {}
    for k, name in enumerate(names):
        col = matrix[:, k]
        if is_degenerate(col):
            degenerate.append(name)
        ess_vals[name] = ess(col)
        if name.startswith("tau["):
            tau_sd[name] = float(col.std(ddof=1))
    gw = None
    if with_geweke and S >= 1000:
        gw = {name: geweke(matrix[:, k])[0] for k, name in enumerate(names)}
    report = FitReport(mean_dev + p_d, p_d, mean_dev, float(deviance_at_mean), S, ess_vals, tau_sd, gw,
                       False, [], asdict(thresholds), degenerate)
    report.converged, report.failing = convergence_gate(report, thresholds)
    return report


def fit_report(samples: PosteriorSamples, spec, thresholds=Thresholds(), with_geweke=True):
    """Summarise a chain into a :class:`FitReport`."""
    _, _, _, d_bar = dic(samples, spec)
    return report_from_arrays(samples.matrix(), samples.param_names, samples.loglik, d_bar,
                              thresholds, with_geweke)
