"""Greedy change-point-count selection by DIC with convergence gating."""

from __future__ import annotations

import itertools
import json
import logging
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from joblib import Parallel, delayed

from .basis import BasisError, condition_number, spatiotemporal_design
from .diagnostics import Thresholds, fit_report
from .meanmodel import ChangePointConfig, assemble_block_design
from .sampler import Chain, ModelSpec, Priors, Protocol, SamplerAbort, ScamSettings, run_chain

logger = logging.getLogger(__name__)

DIC_TIE = 1e-9
STRATEGIES = ("forward", "backward", "stepwise")


def enumerate_step(current: ChangePointConfig, q_max=None):
    """One-increment neighbours of ``current``; saturated locations are skipped."""
    q_max = current.q_max if q_max is None else q_max
    return [current.increment(i) for i, qi in enumerate(current.q) if qi < q_max]


def enumerate_backward(current: ChangePointConfig):
    return [current.decrement(i) for i, qi in enumerate(current.q) if qi > 0]


def derive_seed(master_seed, step, index):
    return int(np.random.SeedSequence([int(master_seed), int(step), int(index)]).generate_state(1)[0])


def check_collinearity(spec: ModelSpec):
    """Condition number of the full design at the chain's initial change points."""
    chain = Chain(spec, np.random.default_rng(0))
    chain.init_state()
    X = assemble_block_design(chain.X)
    BH = spatiotemporal_design(spec.B, spec.H) if spec.n_alpha else None
    rows = spec.panel.observed.ravel()
    X = X[rows]
    return condition_number(X, None if BH is None else BH[rows])


@dataclass
class FitRecord:
    config: str
    step: int
    index: int
    seed: int
    dic: float | None = None
    p_d: float | None = None
    min_ess: float | None = None
    max_tau_sd: float | None = None
    converged: bool = False
    failing: list = field(default_factory=list)
    error: str | None = None

    @property
    def q(self):
        return tuple(int(v) for v in self.config.split(","))


def fit_model(panel, config, H=None, B=None, priors=Priors(), scam=ScamSettings(),
              protocol=Protocol(), thresholds=Thresholds(), with_geweke=True):
    """Run one chain and summarise it. Returns ``(spec, samples, report)``."""
    spec = ModelSpec(panel, config, H, B, priors, scam)
    check_collinearity(spec)
    samples = run_chain(spec, protocol)
    return spec, samples, fit_report(samples, spec, thresholds, with_geweke)


def _fit_candidate(panel, config, H, B, priors, scam, protocol, thresholds, step, index):
    record = FitRecord(str(config), step, index, protocol.seed)
    try:
        _, samples, report = fit_model(panel, config, H, B, priors, scam, protocol, thresholds, with_geweke=False)
    except (SamplerAbort, BasisError, np.linalg.LinAlgError) as exc:
        record.error = str(exc)
        record.failing = ["abort"]
        return record, None
    record.dic, record.p_d = report.dic, report.p_d
    record.min_ess, record.max_tau_sd = report.min_ess, report.max_tau_sd
    record.converged, record.failing = report.converged, list(report.failing)
    return record, (samples, report)


def _tie_key(record):
    q = record.q
    return (sum(q), tuple(-v for v in q))


def best_record(records, require_converged=True):
    """Minimum-DIC record; DIC ties prefer fewer change points, then lower location index."""
    pool = [r for r in records if r.dic is not None and (r.converged or not require_converged)]
    if not pool:
        return None
    low = min(r.dic for r in pool)
    tied = [r for r in pool if r.dic - low <= DIC_TIE]
    return min(tied, key=_tie_key)


@dataclass
class SelectionStep:
    step: int
    candidates: list
    chosen: str | None
    stop_reason: str | None = None


@dataclass
class SelectionTrace:
    strategy: str
    master_seed: int
    steps: list = field(default_factory=list)
    final: str | None = None
    final_dic: float | None = None

    @property
    def records(self):
        return [r for s in self.steps for r in s.candidates]

    @property
    def final_config(self):
        return None if self.final is None else ChangePointConfig.parse(self.final, q_max=99)

    def to_dict(self):
        return asdict(self)

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_dict(cls, data):
        steps = [SelectionStep(s["step"], [FitRecord(**r) for r in s["candidates"]], s["chosen"], s["stop_reason"])
                 for s in data["steps"]]
        return cls(data["strategy"], data["master_seed"], steps, data["final"], data["final_dic"])

    def step_table(self, location_ids=None):
        """Plain-text table of the chosen model at each step."""
        M = len(self.records[0].q) if self.records else 0
        ids = list(location_ids) if location_ids is not None else [chr(ord("A") + i) for i in range(M)]
        head = ["Step"] + ids + ["DIC", "Min ESS", "Conv"]
        rows = []
        by_config = {}
        for s in self.steps:
            for r in s.candidates:
                by_config[(s.step, r.config)] = r
            if s.chosen is None:
                continue
            r = by_config[(s.step, s.chosen)]
            mark = "*" if s.chosen == self.final and r.dic == self.final_dic else ""
            rows.append([f"{s.step}{mark}"] + list(map(str, r.q)) +
                        [f"{r.dic:.1f}", f"{r.min_ess:.2f}", "yes" if r.converged else "no"])
        widths = [max(len(str(x)) for x in col) for col in zip(head, *rows)] if rows else [len(h) for h in head]
        lines = ["  ".join(str(x).rjust(w) for x, w in zip(line, widths)) for line in [head] + rows]
        return "\n".join(lines)


def run_forward_selection(panel, H=None, B=None, priors=Priors(), protocol=Protocol(), thresholds=Thresholds(),
                          q_max=2, master_seed=0, n_jobs=1, strategy="forward",
                          continue_on_nonconvergence=False, scam=ScamSettings(), return_fits=False):
    """Greedy search over per-location change-point counts.

    At each step every one-change neighbour of the current model is fitted
    (in parallel when ``n_jobs > 1``); the converged candidate with the
    smallest DIC becomes the new current model. The reported model is the
    smallest-DIC converged model over every fit in the search.

    Parameters
    ----------
    strategy : {"forward", "backward", "stepwise"}
        ``forward`` starts from no change points and adds one per step;
        ``backward`` starts from ``q_max`` everywhere and removes one;
        ``stepwise`` considers both moves and stops when DIC stops improving.
    continue_on_nonconvergence : bool
        When no candidate of a step converges, keep going with the
        smallest-DIC candidate instead of stopping.
    return_fits : bool
        Also return ``{config: (samples, report)}`` for every successful fit.
    """
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}")
    M = panel.n_locations
    trace = SelectionTrace(strategy, int(master_seed))
    fits = {}
    seen = set()

    def run_step(step, configs):
        jobs = []
        for idx, cfg in enumerate(configs):
            proto = replace(protocol, seed=derive_seed(master_seed, step, idx))
            jobs.append(delayed(_fit_candidate)(panel, cfg, H, B, priors, scam, proto, thresholds, step, idx))
        results = Parallel(n_jobs=n_jobs)(jobs) if n_jobs != 1 else [j[0](*j[1], **j[2]) for j in jobs]
        records = []
        for cfg, (record, fit) in zip(configs, results):
            records.append(record)
            seen.add(cfg.q)
            if fit is not None:
                fits[str(cfg)] = fit
            logger.info("step %d config %s dic=%s converged=%s", step, record.config, record.dic, record.converged)
        return records

    if strategy == "backward":
        start = ChangePointConfig((q_max,) * M, q_max)
        neighbours = enumerate_backward
    else:
        start = ChangePointConfig.zeros(M, q_max)
        neighbours = enumerate_step

    current = start
    current_record = None
    step = 1
    while True:
        if strategy == "stepwise":
            moves = enumerate_step(current) + enumerate_backward(current)
            configs = [c for c in moves if c.q not in seen]
        else:
            configs = neighbours(current)
        if step == 1:
            configs = [start] + configs
        if not configs:
            trace.steps.append(SelectionStep(step, [], None, "saturated"))
            break
        records = run_step(step, configs)
        moves = records[1:] if step == 1 else records
        if step == 1:
            current_record = records[0]
        chosen = best_record(moves)
        stop = None
        if chosen is None:
            if continue_on_nonconvergence:
                chosen = best_record(moves, require_converged=False)
            if chosen is None:
                stop = "no candidate converged"
        if chosen is not None and strategy == "stepwise" and current_record is not None \
                and current_record.converged and chosen.dic >= current_record.dic:
            stop = "no improvement"
            chosen = None
        trace.steps.append(SelectionStep(step, records, None if chosen is None else chosen.config, stop))
        if stop:
            break
        current = ChangePointConfig(chosen.q, q_max)
        current_record = chosen
        step += 1

    best = best_record(trace.records)
    if best is not None:
        trace.final, trace.final_dic = best.config, best.dic
    return (trace, fits) if return_fits else trace


def exhaustive_search(panel, H=None, B=None, priors=Priors(), protocol=Protocol(), thresholds=Thresholds(),
                      q_max=2, seeds=None, master_seed=0, scam=ScamSettings()):
    """Fit every configuration in ``{0..q_max}^M``; intended as a small-M oracle.

    ``seeds`` maps a config string to the chain seed to use; missing configs
    get seeds derived from ``master_seed`` and their enumeration index.
    """
    M = panel.n_locations
    if M > 4:
        raise ValueError("exhaustive search is limited to M <= 4")
    seeds = seeds or {}
    records = []
    for idx, q in enumerate(itertools.product(range(q_max + 1), repeat=M)):
        cfg = ChangePointConfig(q, q_max)
        seed = seeds.get(str(cfg), derive_seed(master_seed, 0, idx))
        record, _ = _fit_candidate(panel, cfg, H, B, priors, scam, replace(protocol, seed=seed),
                                   thresholds, 0, idx)
        records.append(record)
    return records
