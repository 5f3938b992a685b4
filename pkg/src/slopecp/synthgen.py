"""Synthetic panels drawn from the change-point generative model."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .basis import DEFAULT_PERIOD, build_eof, build_fourier, residuals_for_eof
from .diagnostics import Thresholds
from .meanmodel import ChangePointConfig, build_design, tau_bounds
from .panel import TemperaturePanel, scaled_time
from .sampler import Priors, Protocol


class ScenarioError(ValueError):
    pass


@dataclass
class SynthScenario:
    """Generative truth for one synthetic panel.

    ``beta`` and ``tau`` are per-location lists; ``alpha`` is the stacked
    ``K*L`` coefficient vector (``alpha_1`` first). With
    ``basis_source="synthetic"`` the spatial basis is the leading EOFs of an
    exponential correlation over evenly spaced sites; ``"panel"`` derives it
    from a reference panel passed to :func:`generate`.
    """

    n_days: int
    config: tuple
    beta: list
    tau: list
    alpha: list
    sigma2: float
    n_temporal: int = 4
    n_spatial: int = 1
    period: float = DEFAULT_PERIOD
    basis_source: str = "synthetic"
    spatial_range: float = 0.5
    missing_fraction: float = 0.0
    start_date: str | None = "1956-10-08"
    bound: float | None = None
    gap: float | None = None
    seed: int = 0
    location_ids: list = field(default_factory=list)

    def __post_init__(self):
        self.config = tuple(int(v) for v in self.config)
        M = len(self.config)
        if len(self.beta) != M or len(self.tau) != M:
            raise ScenarioError("beta and tau need one entry per location")
        for i, (qi, b, t) in enumerate(zip(self.config, self.beta, self.tau)):
            if len(b) != qi + 2:
                raise ScenarioError(f"beta[{i}] needs {qi + 2} values, got {len(b)}")
            if len(t) != qi:
                raise ScenarioError(f"tau[{i}] needs {qi} values, got {len(t)}")
            if self.bound is not None and not tau_bounds(t, self.n_days, self.bound, self.gap or 0.0):
                raise ScenarioError(f"tau[{i}]={t} outside the prior support")
        if len(self.alpha) != self.n_temporal * self.n_spatial:
            raise ScenarioError(f"alpha needs n_temporal*n_spatial={self.n_temporal * self.n_spatial} values")
        if self.sigma2 < 0:
            raise ScenarioError("sigma2 must be non-negative")
        if not 0 <= self.missing_fraction < 1:
            raise ScenarioError("missing_fraction must lie in [0, 1)")
        if self.basis_source not in ("synthetic", "panel"):
            raise ScenarioError(f"unknown basis_source {self.basis_source!r}")
        if not self.location_ids:
            self.location_ids = [chr(ord("A") + i) if M <= 26 else f"loc{i}" for i in range(M)]

    @property
    def M(self):
        return len(self.config)

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ScenarioError(f"unknown scenario field(s): {sorted(unknown)}")
        required = ["n_days", "config", "beta", "tau", "alpha", "sigma2"]
        for name in required:
            if name not in data:
                raise ScenarioError(f"scenario is missing field {name!r}")
        try:
            return cls(**data)
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ScenarioError):
                raise
            raise ScenarioError(str(exc)) from exc

    @classmethod
    def from_json(cls, path):
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ScenarioError(f"malformed scenario JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise ScenarioError("scenario JSON must be an object")
        return cls.from_dict(data)

    def to_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)} | {"config": list(self.config)}


# End buffer and minimum spacing at desk scale: 2,000 days out of 22,000 scaled to 2,000.
DESK_BOUND = 182.0


def desk_scenario(seed=0):
    """Default 4-location, 2,000-day scenario with truth (0, 1, 1, 2).

    Values are artifact choices picked so every slope change is large
    relative to its posterior spread.
    """
    return SynthScenario(
        n_days=2000,
        config=(0, 1, 1, 2),
        beta=[[0.0, 0.5], [0.0, -1.0, 2.0], [0.0, 1.5, -1.0], [0.0, 0.0, 3.0, -1.0]],
        tau=[[], [900.0], [1200.0], [600.0, 1400.0]],
        alpha=[16.0, 6.0, 2.0, 1.0],
        sigma2=1.0,
        bound=DESK_BOUND,
        gap=DESK_BOUND,
        seed=seed,
    )


def desk_settings(seed=0):
    """Priors, chain protocol and gate thresholds calibrated for :func:`desk_scenario`.

    The chain is shortened to 6,000 iterations (1,000 burn-in, thin 2) so a
    full selection runs in under a minute. The change-point SD ceiling is
    120 days: true change points in this scenario have posterior SDs below
    90 days, while superfluous ones wander over a few hundred.
    """
    return {
        "priors": Priors(bound=DESK_BOUND, gap=DESK_BOUND),
        "protocol": Protocol(6000, 1000, 2, seed),
        "thresholds": Thresholds(ess_floor=0.01, tau_sd_ceiling=120.0),
    }


def full_scale_scenario(seed=0):
    """22,000 days x 8 locations, truth (0, 1, 1, 1, 2, 0, 0, 0), L=4, K=1.

    Coefficients are artifact choices, not the values used in the study
    this layout mirrors.
    """
    return SynthScenario(
        n_days=22000,
        config=(0, 1, 1, 1, 2, 0, 0, 0),
        beta=[[0.0, 0.4], [0.0, 0.2, 1.5], [0.0, 1.0, -0.5], [0.0, -0.3, 1.2],
              [0.0, 1.9, 2.4, 1.3], [0.0, 0.1], [0.0, -0.4], [0.0, 0.6]],
        tau=[[], [9000.0], [12000.0], [15000.0], [7000.0, 14600.0], [], [], []],
        alpha=[30.0, 10.0, 3.0, 1.0],
        sigma2=25.0,
        bound=2000.0,
        gap=2000.0,
        seed=seed,
    )


def synthetic_spatial_basis(M, K, spatial_range=0.5):
    """Leading EOFs of an exponential correlation over sites on ``[0, 1]``."""
    x = np.linspace(0.0, 1.0, M)
    C = np.exp(-np.abs(x[:, None] - x[None, :]) / spatial_range)
    vals, vecs = np.linalg.eigh(C)
    vecs = vecs[:, np.argsort(vals)[::-1]]
    idx = np.argmax(np.abs(vecs), axis=0)
    vecs = vecs * np.sign(vecs[idx, np.arange(M)])
    return vecs[:, :K].copy()


def scenario_basis(scenario, reference_panel=None):
    H = build_fourier(scenario.n_days, scenario.n_temporal, scenario.period).H
    if scenario.basis_source == "panel":
        if reference_panel is None:
            raise ScenarioError("basis_source='panel' needs a reference panel")
        B = build_eof(residuals_for_eof(reference_panel, H), scenario.n_spatial).B
    else:
        B = synthetic_spatial_basis(scenario.M, scenario.n_spatial, scenario.spatial_range)
    return H, B


def generate(scenario: SynthScenario, reference_panel=None):
    """Draw ``Y = X beta + (B kron H) alpha + eps``.

    Returns
    -------
    panel : TemperaturePanel
        Zero-centered panel (offsets kept on the panel).
    truth : dict
        Generating values, the bases used and the noiseless mean process.
    """
    rng = np.random.default_rng(scenario.seed)
    N, M = scenario.n_days, scenario.M
    H, B = scenario_basis(scenario, reference_panel)
    t_star = scaled_time(N)
    mu = np.empty((M, N))
    for i, qi in enumerate(scenario.config):
        mu[i] = build_design(qi, scenario.tau[i], t_star) @ np.asarray(scenario.beta[i], float)
    A = np.asarray(scenario.alpha, float).reshape(scenario.n_spatial, scenario.n_temporal)
    phi = B @ A @ H.T
    noise = np.sqrt(scenario.sigma2) * rng.standard_normal((M, N))
    Y = mu + phi + noise
    if scenario.missing_fraction > 0:
        Y[rng.random((M, N)) < scenario.missing_fraction] = np.nan
    panel = TemperaturePanel.from_array(Y, scenario.location_ids, scenario.start_date)
    truth = {
        "scenario": scenario.to_dict(),
        "H": H,
        "B": B,
        "mu": mu,
        "phi": phi,
        "noise": noise,
        "offsets": panel.offsets.copy(),
    }
    return panel, truth


def truth_to_json(truth):
    """JSON-serialisable subset of a truth record (no N-length arrays)."""
    return {
        "scenario": truth["scenario"],
        "B": truth["B"].tolist(),
        "offsets": truth["offsets"].tolist(),
    }
