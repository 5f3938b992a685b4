"""On-disk layout for single-chain fits.

A fit directory holds::

    trace.csv       saved draws, one column per parameter
    trace.json      seed, protocol, config, labels, plug-in deviance
    loglik.csv      log-likelihood at each saved draw
    report.json     FitReport
    mu_draws.csv    posterior realisations of the trend (long format)
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .meanmodel import build_design

TRACE = "trace.csv"
TRACE_META = "trace.json"
LOGLIK = "loglik.csv"
REPORT = "report.json"
MU_DRAWS = "mu_draws.csv"


class TraceError(ValueError):
    pass


def _savetxt(path, arr, header):
    np.savetxt(path, arr, delimiter=",", header=header, comments="", fmt="%.17g")


def mu_realisations(spec, samples, n=50, seed=0):
    """Trend draws as ``(draw_index, (n_locations, n_days))`` pairs."""
    S = samples.n_draws
    if S == 0:
        return []
    rng = np.random.default_rng(seed)
    idx = np.sort(rng.choice(S, size=min(n, S), replace=False))
    out = []
    t_star = spec.panel.t_star
    labels = samples.tau_labels
    for k in idx:
        mu = np.empty((spec.config.M, spec.panel.n_days))
        for i, (qi, sl) in enumerate(zip(spec.config.q, spec.config.beta_slices())):
            tau = [samples.tau[k, c] for c, (li, _) in enumerate(labels) if li == i]
            mu[i] = build_design(qi, tau, t_star) @ samples.beta[k, sl]
        out.append((int(k), mu))
    return out


def write_fit(outdir, spec, samples, report, extra_meta=None, n_mu=50):
    """Write every fit artifact into ``outdir`` (created if needed)."""
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    names = samples.param_names
    _savetxt(out / TRACE, samples.matrix().reshape(samples.n_draws, len(names)), ",".join(names))
    _savetxt(out / LOGLIK, samples.loglik[:, None], "loglik")
    meta = {
        "config": str(spec.config),
        "q_max": spec.config.q_max,
        "param_names": names,
        "tau_labels": [list(t) for t in samples.tau_labels],
        "n_draws": samples.n_draws,
        "deviance_at_mean": report.deviance_at_mean if report is not None else None,
        "location_ids": list(spec.panel.location_ids),
        "sampler": {k: v for k, v in samples.meta.items()},
    }
    meta.update(extra_meta or {})
    (out / TRACE_META).write_text(json.dumps(meta, indent=2, default=_jsonable), encoding="utf-8")
    if report is not None:
        (out / REPORT).write_text(report.to_json(indent=2), encoding="utf-8")
    if n_mu:
        lines = ["draw,location_id,day,mu"]
        ids = spec.panel.location_ids
        for k, mu in mu_realisations(spec, samples, n_mu):
            for i, row in enumerate(mu):
                lines.extend(f"{k},{ids[i]},{t + 1},{v:.10g}" for t, v in enumerate(row))
        (out / MU_DRAWS).write_text("\n".join(lines) + "\n", encoding="utf-8")
    return out


def _jsonable(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serialisable: {type(obj).__name__}")


def read_trace(path):
    """Load ``(matrix, loglik, meta)`` from a fit directory.

    Raises :class:`TraceError` when files are missing, ragged or shorter than
    the draw count recorded in ``trace.json``.
    """
    d = Path(path)
    if d.is_file():
        d = d.parent
    try:
        meta = json.loads((d / TRACE_META).read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise TraceError(f"no {TRACE_META} in {d}") from exc
    except json.JSONDecodeError as exc:
        raise TraceError(f"unreadable {TRACE_META}: {exc}") from exc
    names = meta["param_names"]
    try:
        mat = np.loadtxt(d / TRACE, delimiter=",", skiprows=1, ndmin=2)
        ll = np.loadtxt(d / LOGLIK, delimiter=",", skiprows=1, ndmin=1)
    except (OSError, ValueError) as exc:
        raise TraceError(f"unreadable trace in {d}: {exc}") from exc
    S = int(meta["n_draws"])
    if mat.shape != (S, len(names)) or ll.shape != (S,):
        raise TraceError(f"truncated trace: expected {S} draws of {len(names)} parameters, "
                         f"found {mat.shape[0]} rows and {ll.shape[0]} log-likelihood values")
    return mat, ll, meta
