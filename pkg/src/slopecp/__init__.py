"""Bayesian slope change-point models with spatio-temporal random effects."""

from .basis import SpatioTemporalBasis, build_eof, build_fourier, select_K, select_L
from .diagnostics import Thresholds, dic, ess, fit_report, gate, geweke, overlap_index
from .estimators import ChangePointRegressor, ForwardChangePointSelector
from .meanmodel import ChangePointConfig, build_design
from .panel import TemperaturePanel, as_panel, ingest_csv
from .sampler import Priors, Protocol, run_chain
from .selection import exhaustive_search, run_forward_selection
from .synthgen import SynthScenario, desk_scenario, desk_settings, full_scale_scenario, generate

__all__ = [
    "ChangePointConfig", "ChangePointRegressor", "ForwardChangePointSelector", "Priors", "Protocol",
    "SpatioTemporalBasis", "SynthScenario", "TemperaturePanel", "Thresholds", "as_panel", "build_design",
    "build_eof", "build_fourier", "desk_scenario", "desk_settings", "dic", "ess", "exhaustive_search", "fit_report",
    "full_scale_scenario", "gate", "generate", "geweke", "ingest_csv", "overlap_index", "run_chain", "run_forward_selection", "select_K",
    "select_L",
]
