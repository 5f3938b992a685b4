"""Command-line interface: ``slopecp {synth,fit,select,diagnose}``."""

from __future__ import annotations

import argparse
import json
import logging
import platform
import sys
from dataclasses import asdict, dataclass, fields
from importlib import metadata
from pathlib import Path

import numpy as np

from .basis import DEFAULT_L_CANDIDATES, DEFAULT_PERIOD, BasisError, SpatioTemporalBasis
from .diagnostics import DiagnosticsError, Thresholds, overlap_index, report_from_arrays
from .meanmodel import ChangePointConfig, ConfigError
from .panel import PanelError, ingest_csv
from .sampler import ModelSpec, Priors, Protocol, SamplerAbort, ScamSettings
from .selection import fit_model, run_forward_selection
from .synthgen import ScenarioError, SynthScenario, desk_scenario, full_scale_scenario, generate
from .traceio import MU_DRAWS, TraceError, read_trace, write_fit

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL = 0, 2, 3
RUN_META = "run.json"
BASIS_H, BASIS_B = "basis_H.csv", "basis_B.csv"

logger = logging.getLogger("slopecp")


@dataclass
class RunConfig:
    """Every tunable of a run. Defaults follow the published synthetic study."""

    iterations: int = 122_000
    burn_in: int = 2_000
    thin: int = 5
    seed: int = 0
    sigma_beta: float = 10_000.0
    sigma_alpha: float = 10_000.0
    a_sigma: float = 10.0
    b_sigma: float = 1.0
    bound: float = 2000.0
    gap: float = 2000.0
    ess_floor: float = 0.01
    tau_sd_ceiling: float = 2500.0
    geweke_band: float = 3.0
    q_max: int = 2
    n_temporal: int | None = None
    n_spatial: int | None = None
    fourier_period: float = DEFAULT_PERIOD
    L_candidates: tuple = DEFAULT_L_CANDIDATES
    eof_threshold: float = 0.90
    basis_dir: str | None = None
    min_completeness: float = 0.95
    scam_initial_sd: float | None = None
    jobs: int = 1
    strategy: str = "forward"
    stop_on_nonconvergence: bool = True
    mu_draws: int = 50

    def priors(self):
        return Priors(self.sigma_beta, self.sigma_alpha, self.a_sigma, self.b_sigma, self.bound, self.gap)

    def protocol(self):
        return Protocol(self.iterations, self.burn_in, self.thin, self.seed)

    def thresholds(self):
        return Thresholds(self.ess_floor, self.tau_sd_ceiling, self.geweke_band)

    def scam(self):
        return ScamSettings(initial_sd=self.scam_initial_sd)


FIELD_NAMES = {f.name for f in fields(RunConfig)}


def resolve_config(config_file=None, overrides=None):
    """Merge defaults, then the JSON config file, then explicit CLI values."""
    values = {}
    if config_file:
        try:
            data = json.loads(Path(config_file).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config file {config_file}: {exc}") from exc
        unknown = set(data) - FIELD_NAMES
        if unknown:
            raise ConfigError(f"unknown config field(s): {sorted(unknown)}")
        values.update(data)
    values.update({k: v for k, v in (overrides or {}).items() if v is not None and k in FIELD_NAMES})
    cfg = RunConfig(**values)
    cfg.L_candidates = tuple(cfg.L_candidates)
    return cfg


def _versions():
    out = {"python": platform.python_version()}
    for pkg in ("numpy", "scipy", "scikit-learn", "pandas", "joblib"):
        try:
            out[pkg] = metadata.version(pkg)
        except metadata.PackageNotFoundError:
            pass
    try:
        out["slopecp"] = metadata.version("artifact")
    except metadata.PackageNotFoundError:
        pass
    return out


def write_run_meta(outdir, command, argv, cfg=None, **extra):
    meta = {"command": command, "argv": list(argv), "versions": _versions()}
    if cfg is not None:
        meta["config"] = asdict(cfg)
    meta.update(extra)
    Path(outdir).mkdir(parents=True, exist_ok=True)
    (Path(outdir) / RUN_META).write_text(json.dumps(meta, indent=2, default=str), encoding="utf-8")


def _bool(text):
    low = str(text).lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected true/false, got {text!r}")


def _int_list(text):
    return tuple(int(v) for v in text.split(","))


def _load_basis(panel, cfg):
    if cfg.basis_dir:
        d = Path(cfg.basis_dir)
        try:
            H = np.loadtxt(d / BASIS_H, delimiter=",", ndmin=2)
            B = np.loadtxt(d / BASIS_B, delimiter=",", ndmin=2)
        except (OSError, ValueError) as exc:
            raise BasisError(f"cannot read basis files in {d}: {exc}") from exc
        if H.shape[0] != panel.n_days or B.shape[0] != panel.n_locations:
            raise BasisError(f"basis shapes {H.shape}, {B.shape} do not match the panel "
                             f"({panel.n_days} days, {panel.n_locations} locations)")
        return H, B
    st = SpatioTemporalBasis(cfg.n_temporal, cfg.n_spatial, cfg.fourier_period, cfg.L_candidates,
                             cfg.eof_threshold).fit(panel)
    return st.H, st.B


def _save_basis(outdir, H, B):
    np.savetxt(Path(outdir) / BASIS_H, H, delimiter=",", fmt="%.17g")
    np.savetxt(Path(outdir) / BASIS_B, B, delimiter=",", fmt="%.17g")


# -- subcommands -------------------------------------------------------------

def cmd_synth(args, argv):
    if args.scenario:
        scenario = SynthScenario.from_json(args.scenario)
    elif args.full_scale:
        scenario = full_scale_scenario(args.seed or 0)
    else:
        scenario = desk_scenario(args.seed or 0)
    if args.seed is not None:
        scenario.seed = args.seed
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    panel, truth = generate(scenario)
    panel.to_csv(out / "panel.csv")
    _save_basis(out, truth["H"], truth["B"])
    np.savetxt(out / "mu_true.csv", truth["mu"].T, delimiter=",", fmt="%.17g",
               header=",".join(panel.location_ids), comments="")
    (out / "truth.json").write_text(json.dumps({"scenario": scenario.to_dict(),
                                                "offsets": truth["offsets"].tolist()}, indent=2),
                                    encoding="utf-8")
    write_run_meta(out, "synth", argv, scenario=scenario.to_dict())
    print(f"wrote {panel.n_locations}x{panel.n_days} panel to {out / 'panel.csv'}")
    return EXIT_OK


def _panel_and_basis(args, cfg):
    panel = ingest_csv(args.panel, min_completeness=cfg.min_completeness)
    H, B = _load_basis(panel, cfg)
    return panel, H, B


def cmd_fit(args, argv, cfg):
    config = ChangePointConfig.parse(args.config, cfg.q_max)
    panel, H, B = _panel_and_basis(args, cfg)
    if config.M != panel.n_locations:
        raise ConfigError(f"config has {config.M} entries but the panel has {panel.n_locations} locations")
    out = Path(args.out)
    write_run_meta(out, "fit", argv, cfg, change_points=str(config))
    try:
        spec, samples, report = fit_model(panel, config, H, B, cfg.priors(), cfg.scam(), cfg.protocol(),
                                          cfg.thresholds())
    except SamplerAbort as exc:
        if exc.partial is not None:
            write_fit(out / "partial", ModelSpecStub(panel, config), exc.partial, None, n_mu=0)
        raise
    _save_basis(out, H, B)
    write_fit(out, spec, samples, report, {"seed": cfg.seed, "protocol": asdict(cfg.protocol())},
              n_mu=cfg.mu_draws)
    print(f"config {config}: DIC {report.dic:.3f}  p_D {report.p_d:.3f}  "
          f"min ESS {report.min_ess:.1f}/{report.n_draws}  converged {report.converged}")
    return EXIT_OK


@dataclass
class ModelSpecStub:
    """Enough of a model spec to write a partial trace."""

    panel: object
    config: ChangePointConfig


def cmd_select(args, argv, cfg):
    panel, H, B = _panel_and_basis(args, cfg)
    out = Path(args.out)
    write_run_meta(out, "select", argv, cfg)
    trace, fits = run_forward_selection(
        panel, H, B, cfg.priors(), cfg.protocol(), cfg.thresholds(), cfg.q_max, cfg.seed, cfg.jobs,
        cfg.strategy, not cfg.stop_on_nonconvergence, cfg.scam(), return_fits=True)
    _save_basis(out, H, B)
    (out / "selection.json").write_text(trace.to_json(indent=2), encoding="utf-8")
    table = trace.step_table(panel.location_ids)
    (out / "steps.txt").write_text(table + "\n", encoding="utf-8")
    print(table)
    if trace.final is None:
        print("no converged model")
        return EXIT_OK
    config = ChangePointConfig.parse(trace.final, cfg.q_max)
    samples, report = fits[trace.final]
    spec = ModelSpec(panel, config, H, B, cfg.priors(), cfg.scam())
    rec = next(r for r in trace.records if r.config == trace.final)
    write_fit(out / "final", spec, samples, report, {"seed": rec.seed}, n_mu=cfg.mu_draws)
    print(f"final {trace.final}  DIC {trace.final_dic:.3f}")
    return EXIT_OK


def _read_values(path):
    arr = np.loadtxt(path, delimiter=",", ndmin=2)
    if arr.size == 0:
        raise DiagnosticsError(f"{path} holds no values")
    return arr[:, -1]


def cmd_diagnose(args, argv, cfg):
    if args.overlap:
        a, b = (_read_values(p) for p in args.overlap)
        value = overlap_index(a, b)
        print(f"overlap index: {value:.6f}")
        if not args.trace:
            return EXIT_OK
    if not args.trace:
        raise TraceError("diagnose needs a trace directory or --overlap")
    mat, ll, meta = read_trace(args.trace)
    names = meta["param_names"]
    d_bar = meta.get("deviance_at_mean")
    if d_bar is None:
        raise TraceError("trace metadata lacks the plug-in deviance")
    report = report_from_arrays(mat, names, ll, d_bar, cfg.thresholds(), with_geweke=True)
    out = Path(args.out or args.trace)
    out.mkdir(parents=True, exist_ok=True)
    (out / "diagnose_report.json").write_text(report.to_json(indent=2), encoding="utf-8")
    width = max(len(n) for n in names)
    lines = [f"{'parameter'.ljust(width)}  {'ESS':>10}  {'geweke_z':>9}"]
    for n in names:
        z = report.geweke[n] if report.geweke else float("nan")
        lines.append(f"{n.ljust(width)}  {report.ess[n]:10.1f}  {z:9.3f}")
    table = "\n".join(lines)
    (out / "ess.txt").write_text(table + "\n", encoding="utf-8")
    print(table)
    print(f"DIC {report.dic:.3f}  p_D {report.p_d:.3f}  converged {report.converged} {report.failing}")
    _plots(out, mat, names, meta, Path(args.trace))
    return EXIT_OK


def _plots(out, mat, names, meta, trace_dir):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    for k, name in enumerate(names):
        if not name.startswith("tau["):
            continue
        fig, ax = plt.subplots(figsize=(5, 3.5))
        ax.hist(mat[:, k], bins=60, color="0.4")
        ax.set_xlabel("day")
        ax.set_title(name)
        fig.tight_layout()
        tag = name.replace("[", "_").replace("]", "").replace(",", "_")
        fig.savefig(out / f"hist_{tag}.png", dpi=100)
        plt.close(fig)
    mu_path = trace_dir / MU_DRAWS
    if not mu_path.exists():
        return
    import pandas as pd

    mu = pd.read_csv(mu_path, dtype={"location_id": str})
    for loc, group in mu.groupby("location_id", sort=False):
        fig, ax = plt.subplots(figsize=(6, 3.5))
        for _, draw in group.groupby("draw"):
            ax.plot(draw["day"].to_numpy(), draw["mu"].to_numpy(), color="C0", alpha=0.15, lw=0.8)
        ax.set_xlabel("day")
        ax.set_ylabel("mu")
        ax.set_title(f"location {loc}")
        fig.tight_layout()
        fig.savefig(out / f"mu_{loc}.png", dpi=100)
        plt.close(fig)


# -- parser ------------------------------------------------------------------

def _add_run_options(p):
    g = p.add_argument_group("run configuration (flag > --config-file > default)")
    g.add_argument("--config-file", help="JSON object of run-configuration fields")
    g.add_argument("--iterations", type=int)
    g.add_argument("--burn-in", dest="burn_in", type=int)
    g.add_argument("--thin", type=int)
    g.add_argument("--seed", type=int)
    g.add_argument("--sigma-beta", dest="sigma_beta", type=float)
    g.add_argument("--sigma-alpha", dest="sigma_alpha", type=float)
    g.add_argument("--a-sigma", dest="a_sigma", type=float)
    g.add_argument("--b-sigma", dest="b_sigma", type=float)
    g.add_argument("--bound", type=float, help="change-point exclusion zone at each end (days)")
    g.add_argument("--gap", type=float, help="minimum spacing between change points (days)")
    g.add_argument("--ess-floor", dest="ess_floor", type=float)
    g.add_argument("--tau-sd-ceiling", dest="tau_sd_ceiling", type=float)
    g.add_argument("--q-max", dest="q_max", type=int)
    g.add_argument("--n-temporal", dest="n_temporal", type=int)
    g.add_argument("--n-spatial", dest="n_spatial", type=int)
    g.add_argument("--fourier-period", dest="fourier_period", type=float)
    g.add_argument("--L-candidates", dest="L_candidates", type=_int_list)
    g.add_argument("--eof-threshold", dest="eof_threshold", type=float)
    g.add_argument("--basis-dir", dest="basis_dir", help=f"directory holding {BASIS_H} and {BASIS_B}")
    g.add_argument("--min-completeness", dest="min_completeness", type=float)
    g.add_argument("--scam-initial-sd", dest="scam_initial_sd", type=float)
    g.add_argument("--mu-draws", dest="mu_draws", type=int)


def build_parser():
    parser = argparse.ArgumentParser(prog="slopecp", description="Slope change-point models for temperature panels.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic panel")
    p.add_argument("scenario", nargs="?", help="scenario JSON (default: built-in desk scenario)")
    p.add_argument("--paper-scale", "--full-scale", dest="full_scale", action="store_true",
                   help="22,000 days x 8 locations")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)

    p = sub.add_parser("fit", help="fit one change-point configuration")
    p.add_argument("panel")
    p.add_argument("config", help='per-location counts, e.g. "0,1,1,2"')
    p.add_argument("--out", required=True)
    _add_run_options(p)

    p = sub.add_parser("select", help="choose change-point counts by DIC")
    p.add_argument("panel")
    p.add_argument("--out", required=True)
    p.add_argument("--jobs", type=int)
    p.add_argument("--strategy", choices=["forward", "backward", "stepwise"])
    p.add_argument("--stop-on-nonconvergence", dest="stop_on_nonconvergence", type=_bool, metavar="BOOL")
    _add_run_options(p)

    p = sub.add_parser("diagnose", help="summarise a saved trace")
    p.add_argument("trace", nargs="?", help="fit directory")
    p.add_argument("--out")
    p.add_argument("--overlap", nargs=2, metavar=("A_CSV", "B_CSV"),
                   help="print the overlap index of two samples (last CSV column)")
    _add_run_options(p)
    return parser


VALIDATION_ERRORS = (PanelError, ConfigError, ScenarioError, TraceError, DiagnosticsError, ValueError, OSError)
NUMERICAL_ERRORS = (SamplerAbort, BasisError, np.linalg.LinAlgError)


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "synth":
            return cmd_synth(args, argv)
        cfg = resolve_config(args.config_file, vars(args))
        handler = {"fit": cmd_fit, "select": cmd_select, "diagnose": cmd_diagnose}[args.command]
        return handler(args, argv, cfg)
    except NUMERICAL_ERRORS as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except VALIDATION_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
