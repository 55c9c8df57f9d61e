"""Batch driver: ``stochmech run <config.json>``.

A run reads one JSON config, performs one experiment and writes
comma-separated series files plus a ``summary.json`` into the output
directory.  Wall-clock timing goes to ``timing.json`` so that the series
and the summary are byte-identical between repeated runs.

Exit codes: 0 success, 2 invalid config, 3 numerical divergence.
"""

from __future__ import annotations

import argparse
import hashlib
import io
import json
import logging
import math
import os
import platform
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import scipy

from . import __version__, bell
from .dynamics import EvolutionDivergedError, evolve, madelung_residual_series, quantum_potential
from .fields import polar_decompose
from .scenarios import SCENARIO_NAMES, Scenario, make_scenario, scenario_definition
from .stochastic import born_fit, propagate_ensemble, sample_initial

logger = logging.getLogger(__name__)

EXPERIMENTS = ("evolve", "born", "lambda_sweep", "bell_scan")
OUTPUT_DIR_ENV = "STOCHMECH_OUTPUT_DIR"

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGED = 3


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    experiment: str
    seed: int
    scenario: Optional[Dict[str, Any]] = None
    lambda_values: List[float] = field(default_factory=list)
    n_particles: int = 0
    n_bins: int = 64
    substeps: Optional[int] = None
    bell: Optional[Dict[str, Any]] = None
    output_dir: str = "output"

    def echo(self) -> Dict[str, Any]:
        """Resolved inputs, minus where the files go."""
        out: Dict[str, Any] = {"experiment": self.experiment, "seed": self.seed}
        if self.scenario is not None:
            out["scenario"] = self.scenario
        if self.experiment == "lambda_sweep":
            out["lambda_values"] = self.lambda_values
        if self.experiment == "born":
            out.update(n_particles=self.n_particles, n_bins=self.n_bins, substeps=self.substeps)
        if self.bell is not None:
            out["bell"] = self.bell
        return out

    def digest(self) -> str:
        return hashlib.sha256(_dumps(self.echo()).encode()).hexdigest()


# --------------------------------------------------------------------------
# config parsing


def _require(cfg: Dict[str, Any], key: str, where: str = "config"):
    if key not in cfg:
        raise ConfigError(f"{where} is missing required key {key!r}")
    return cfg[key]


def _resolve_scenario(raw, lam: Optional[float]) -> Dict[str, Any]:
    if isinstance(raw, str):
        name, overrides = raw, {}
    elif isinstance(raw, dict):
        overrides = dict(raw)
        name = overrides.pop("name", None)
        if name is None:
            raise ConfigError("scenario needs a 'name'")
    else:
        raise ConfigError("scenario must be a name or an object")
    if name not in SCENARIO_NAMES:
        raise ConfigError(f"unknown scenario {name!r}; choose from {', '.join(SCENARIO_NAMES)}")
    if lam is not None:
        overrides["lam"] = lam
    definition = scenario_definition(name, overrides)
    try:
        sc = make_scenario(definition)
        sc.initial_state()
        sc.cfg.check_grid(sc.grid, sc.params)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid scenario: {exc}") from exc
    # echo what was actually run
    definition["dt"], definition["n_steps"] = sc.cfg.dt, sc.cfg.n_steps
    definition.pop("t_end", None)
    return definition


def _resolve_bell(raw: Dict[str, Any]) -> Dict[str, Any]:
    if not isinstance(raw, dict):
        raise ConfigError("bell must be an object")
    out = dict(raw)
    out.setdefault("family", "exponential")
    out.setdefault("p", 2.0 if out["family"] == "gaussian" else 1.0)
    out.setdefault("bound", 2.0)
    out.setdefault("n_samples", 0)
    _require(out, "lc", "bell")
    angles = out.get("angles", "optimal")
    if angles == "optimal":
        a = bell.AngleSet.optimal()
        angles = dict(a=a.a, a_prime=a.a_prime, b=a.b, b_prime=a.b_prime)
    out["angles"] = angles
    seps = _require(out, "separations", "bell")
    if isinstance(seps, dict):
        for key in ("l_min", "l_max", "num"):
            _require(seps, key, "bell.separations")
        seps.setdefault("spacing", "log")
        if seps["spacing"] not in ("log", "linear"):
            raise ConfigError("bell.separations.spacing must be 'log' or 'linear'")
    elif not isinstance(seps, list) or not seps:
        raise ConfigError("bell.separations must be an object or a nonempty list")
    try:
        bell.CutoffModel(float(out["lc"]), out["family"], float(out["p"]))
        bell.AngleSet(**{k: float(v) for k, v in angles.items()})
        if int(out["n_samples"]) < 0:
            raise ValueError("n_samples must be >= 0")
        if any(l < 0 for l in _separations(out)):
            raise ValueError("separations must be nonnegative")
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid bell settings: {exc}") from exc
    return out


def parse_config(raw: Dict[str, Any], seed_override: Optional[int] = None,
                 output_dir: Optional[str] = None) -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    experiment = _require(raw, "experiment")
    if experiment not in EXPERIMENTS:
        raise ConfigError(f"experiment must be one of {', '.join(EXPERIMENTS)}")
    seed = seed_override if seed_override is not None else _require(raw, "seed")
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        raise ConfigError("seed must be a nonnegative integer")

    out_dir = output_dir or os.environ.get(OUTPUT_DIR_ENV) or raw.get("output_dir", "output")
    rc = RunConfig(experiment=experiment, seed=seed, output_dir=str(out_dir))

    if experiment in ("evolve", "born", "lambda_sweep"):
        lam = raw.get("lambda")
        if lam is not None and not (isinstance(lam, (int, float)) and 0 <= lam <= 1):
            raise ConfigError("lambda must lie in [0, 1]")
        rc.scenario = _resolve_scenario(_require(raw, "scenario"), lam)

    if experiment == "lambda_sweep":
        values = _require(raw, "lambda_values")
        if not isinstance(values, list) or not values:
            raise ConfigError("lambda_values must be a nonempty list")
        if not all(isinstance(v, (int, float)) and 0 <= v <= 1 for v in values):
            raise ConfigError("lambda_values must lie in [0, 1]")
        rc.lambda_values = [float(v) for v in values]
        for lam in rc.lambda_values:
            _resolve_scenario({"name": rc.scenario["name"], **_overrides(rc.scenario)}, lam)

    if experiment == "born":
        n = _require(raw, "n_particles")
        if isinstance(n, bool) or not isinstance(n, int) or n < 1:
            raise ConfigError("n_particles must be ≥ 1")
        rc.n_particles = n
        rc.n_bins = raw.get("n_bins", 64)
        if not isinstance(rc.n_bins, int) or rc.n_bins < 10:
            raise ConfigError("n_bins must be an integer ≥ 10")
        rc.substeps = raw.get("substeps", rc.scenario["record_every"])
        if not isinstance(rc.substeps, int) or rc.substeps < 1:
            raise ConfigError("substeps must be an integer ≥ 1")

    if experiment == "bell_scan":
        rc.bell = _resolve_bell(_require(raw, "bell"))
    return rc


def _overrides(definition: Dict[str, Any]) -> Dict[str, Any]:
    return {k: v for k, v in definition.items() if k != "name"}


# --------------------------------------------------------------------------
# output helpers


def _clean(value):
    if isinstance(value, dict):
        return {str(k): _clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_clean(v) for v in value]
    if isinstance(value, (np.floating, float)):
        value = float(value)
        return value if math.isfinite(value) else None
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.bool_):
        return bool(value)
    return value


def _dumps(obj) -> str:
    return json.dumps(_clean(obj), sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    return repr(float(v))


def format_series(columns: Dict[str, Sequence], rc: RunConfig) -> str:
    buf = io.StringIO()
    buf.write(f"# stochmech {__version__}\n")
    buf.write(f"# experiment={rc.experiment}\n")
    buf.write(f"# seed={rc.seed}\n")
    buf.write(f"# config_sha256={rc.digest()}\n")
    names = list(columns)
    buf.write(",".join(names) + "\n")
    for row in zip(*(columns[n] for n in names)):
        buf.write(",".join(_fmt(v) for v in row) + "\n")
    return buf.getvalue()


def read_series(path) -> Dict[str, np.ndarray]:
    """Parse a series file written by :func:`format_series`."""
    lines = [ln for ln in Path(path).read_text().splitlines() if not ln.startswith("#")]
    names = lines[0].split(",")
    data = np.array([[float(v) for v in ln.split(",")] for ln in lines[1:]]).reshape(-1, len(names))
    return {n: data[:, i] for i, n in enumerate(names)}


# --------------------------------------------------------------------------
# experiments


def _trajectory_series(sc: Scenario, traj) -> Dict[str, List[float]]:
    cols: Dict[str, List[float]] = {
        "t": list(traj.times),
        "mean": [s.mean_position() for s in traj.states],
        "width": [s.width() for s in traj.states],
    }
    if sc.oracle_mean(0.0) is not None:
        cols["oracle_mean"] = [sc.oracle_mean(t) for t in traj.times]
    if sc.oracle_width(0.0) is not None:
        cols["oracle_width"] = [sc.oracle_width(t) for t in traj.times]
    cont = [math.nan] * len(traj)
    hj = [math.nan] * len(traj)
    if len(traj) >= 3:
        _, c, h = madelung_residual_series(traj, sc.params)
        cont[1:-1], hj[1:-1] = list(c), list(h)
    cols["continuity_residual"] = cont
    cols["hj_residual"] = hj
    return cols


def _trajectory_summary(sc: Scenario, traj, cols) -> Dict[str, Any]:
    t_end = float(traj.times[-1])
    out = {
        "sigma": sc.params.sigma,
        "dt": sc.cfg.dt,
        "n_steps": sc.cfg.n_steps,
        "t_end": t_end,
        "n_snapshots": len(traj),
        "final_mean": cols["mean"][-1],
        "final_width": cols["width"][-1],
        "max_norm_drift": traj.max_norm_drift,
        "max_continuity_residual": _nanmax(cols["continuity_residual"]),
        "max_hj_residual": _nanmax(cols["hj_residual"]),
    }
    if "oracle_width" in cols:
        out["oracle_final_width"] = cols["oracle_width"][-1]
        out["width_rel_error"] = abs(cols["width"][-1] - cols["oracle_width"][-1]) / cols["oracle_width"][-1]
    if "oracle_mean" in cols:
        out["oracle_final_mean"] = cols["oracle_mean"][-1]
        out["max_mean_error"] = float(np.max(np.abs(np.subtract(cols["mean"], cols["oracle_mean"]))))
    return out


def _nanmax(values) -> Optional[float]:
    arr = np.asarray(values, dtype=float)
    return float(np.nanmax(arr)) if np.isfinite(arr).any() else None


def run_evolve(rc: RunConfig):
    sc = make_scenario(rc.scenario)
    traj = evolve(sc.initial_state(), sc.params, sc.cfg)
    cols = _trajectory_series(sc, traj)
    summary = _trajectory_summary(sc, traj, cols)
    x = sc.grid.x
    dens = {"x": x, "rho_initial": traj.states[0].density, "rho_final": traj.final.density}
    files = {"evolve.csv": format_series(cols, rc), "density.csv": format_series(dens, rc)}
    return summary, files


def run_born(rc: RunConfig):
    sc = make_scenario(rc.scenario)
    traj = evolve(sc.initial_state(), sc.params, sc.cfg)
    ens0 = sample_initial(traj.states[0], rc.n_particles, rc.seed)
    ens = propagate_ensemble(ens0, traj, sc.params, rc.substeps)
    baseline_seed = int(np.random.SeedSequence([rc.seed, 2]).generate_state(1)[0])
    baseline = sample_initial(traj.final, rc.n_particles, baseline_seed)

    fit0 = born_fit(ens0, traj.states[0], rc.n_bins)
    fit = born_fit(ens, traj.final, rc.n_bins)
    fit_base = born_fit(baseline, traj.final, rc.n_bins)

    def fit_dict(f):
        return {"l1_distance": f.l1_distance, "ks_statistic": f.ks_statistic,
                "n_particles": f.n_particles, "n_bins": f.n_bins}

    summary = {
        "sigma": sc.params.sigma,
        "dt": sc.cfg.dt,
        "sde_dt": sc.cfg.dt * sc.cfg.record_every / rc.substeps,
        "t_end": float(traj.times[-1]),
        "baseline_seed": baseline_seed,
        "initial_fit": fit_dict(fit0),
        "final_fit": fit_dict(fit),
        "baseline_fit": fit_dict(fit_base),
        "l1_ratio_to_baseline": fit.l1_distance / fit_base.l1_distance,
        "ensemble_mean": float(np.mean(ens.positions)),
        "ensemble_width": float(np.std(ens.positions)),
        "final_width": traj.final.width(),
    }
    hist = {
        "bin_left": fit.edges[:-1],
        "bin_right": fit.edges[1:],
        "p_model": fit.p_model,
        "p_ensemble": fit.p_empirical,
        "p_baseline": fit_base.p_empirical,
        "p_initial_ensemble": fit0.p_empirical,
    }
    files = {
        "born_histogram.csv": format_series(hist, rc),
        "positions.csv": format_series({"x": ens.positions}, rc),
        "density.csv": format_series({"x": sc.grid.x, "rho_final": traj.final.density}, rc),
    }
    return summary, files


def _lambda_tag(lam: float) -> str:
    return repr(float(lam)).replace(".", "p")


def run_lambda_sweep(rc: RunConfig):
    rows: Dict[str, List[float]] = {k: [] for k in (
        "lambda", "final_width", "final_mean", "continuity_residual", "hj_residual", "q_rms", "q_term_rms")}
    files = {}
    per_lambda = []
    for lam in rc.lambda_values:
        definition = scenario_definition(rc.scenario["name"], {**_overrides(rc.scenario), "lam": lam})
        definition["dt"], definition["n_steps"] = rc.scenario["dt"], rc.scenario["n_steps"]
        sc = make_scenario(definition)
        traj = evolve(sc.initial_state(), sc.params, sc.cfg)
        cols = _trajectory_series(sc, traj)
        files[f"evolve_lambda_{_lambda_tag(lam)}.csv"] = format_series(cols, rc)

        final = polar_decompose(traj.final)
        q = quantum_potential(final, sc.params)
        q_rms = float(np.sqrt(np.sum(final.rho * q**2) * sc.grid.dx))
        rows["lambda"].append(lam)
        rows["final_width"].append(cols["width"][-1])
        rows["final_mean"].append(cols["mean"][-1])
        rows["continuity_residual"].append(_nanmax(cols["continuity_residual"]) or 0.0)
        rows["hj_residual"].append(_nanmax(cols["hj_residual"]) or 0.0)
        rows["q_rms"].append(q_rms)
        rows["q_term_rms"].append((1.0 - lam) * q_rms)
        per_lambda.append({"lambda": lam, **_trajectory_summary(sc, traj, cols), "q_rms": q_rms,
                           "q_term_rms": (1.0 - lam) * q_rms})
    files["lambda_sweep.csv"] = format_series(rows, rc)
    widths = rows["final_width"]
    summary = {
        "runs": per_lambda,
        "widths_nonincreasing_in_lambda": bool(all(
            w2 <= w1 * (1 + 1e-9) for (_, w1), (_, w2) in zip(
                sorted(zip(rc.lambda_values, widths))[:-1], sorted(zip(rc.lambda_values, widths))[1:]))),
    }
    return summary, files


def _separations(b: Dict[str, Any]) -> np.ndarray:
    seps = b["separations"]
    if isinstance(seps, list):
        values = np.array(seps, dtype=float)
    else:
        lo, hi, num = float(seps["l_min"]), float(seps["l_max"]), int(seps["num"])
        values = np.geomspace(lo, hi, num) if seps.get("spacing", "log") == "log" else np.linspace(lo, hi, num)
    # always anchor the scan at zero separation
    if values.size == 0 or values[0] != 0.0:
        values = np.concatenate(([0.0], values))
    return values


def run_bell_scan(rc: RunConfig):
    b = rc.bell
    model = bell.CutoffModel(float(b["lc"]), b["family"], float(b["p"]))
    angles = bell.AngleSet(**{k: float(v) for k, v in b["angles"].items()})
    ls = _separations(b)
    cols: Dict[str, List[float]] = {k: [] for k in ("l", "F", "E_ab", "E_abp", "E_apb", "E_apbp", "s")}
    n_samples = int(b["n_samples"])
    if n_samples:
        cols["s_hat"], cols["s_stderr"] = [], []
    pairs = ((angles.a, angles.b), (angles.a, angles.b_prime), (angles.a_prime, angles.b),
             (angles.a_prime, angles.b_prime))
    for i, l in enumerate(ls):
        res = bell.chsh(model, angles, l)
        cols["l"].append(l)
        cols["F"].append(bell.f_suppression(model, l))
        for name, e in zip(("E_ab", "E_abp", "E_apb", "E_apbp"), res.correlations):
            cols[name].append(e)
        cols["s"].append(res.s_value)
        if n_samples:
            est = []
            for j, (x, y) in enumerate(pairs):
                sub_seed = int(np.random.SeedSequence([rc.seed, i, j]).generate_state(1)[0])
                est.append(bell.sample_outcomes(model, x, y, l, n_samples, sub_seed))
            e_hat = [e for e, _ in est]
            cols["s_hat"].append(abs(e_hat[0] - e_hat[1] + e_hat[2] + e_hat[3]))
            cols["s_stderr"].append(math.sqrt(sum(se**2 for _, se in est)))

    summary: Dict[str, Any] = {
        "s_at_zero": cols["s"][0],
        "s_at_smallest_positive_l": next((s for l, s in zip(cols["l"], cols["s"]) if l > 0), None),
        "s_at_largest_l": cols["s"][-1],
        "tsirelson_bound": bell.TSIRELSON,
        "bound": float(b["bound"]),
        "n_separations": len(ls),
        "monotone_nonincreasing": bool(np.all(np.diff(cols["s"]) <= 1e-15)),
        "modelling_choices": {
            "correlation": "spin singlet, E_QM = -cos(a - b)",
            "suppression": f"{model.family}(p={model.p})",
            "separation": "L taken as the analyzer separation at detection",
            "marginals": "sampled outcomes keep uniform +-1 marginals",
        },
    }
    try:
        summary["critical_scale"] = bell.critical_scale(model, angles, float(b["bound"]))
    except ValueError as exc:
        summary["critical_scale"] = None
        summary["critical_scale_note"] = str(exc)
    files = {"bell_scan.csv": format_series(cols, rc)}
    return summary, files


RUNNERS = {
    "evolve": run_evolve,
    "born": run_born,
    "lambda_sweep": run_lambda_sweep,
    "bell_scan": run_bell_scan,
}


def run(rc: RunConfig) -> Path:
    """Run the experiment and write its files; returns the output directory."""
    start = time.perf_counter()
    body, files = RUNNERS[rc.experiment](rc)
    elapsed = time.perf_counter() - start
    summary = {
        "inputs": rc.echo(),
        "config_sha256": rc.digest(),
        "versions": {"stochmech": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                     "python": platform.python_version()},
        "results": body,
        "series_files": sorted(files),
    }
    out = Path(rc.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name in sorted(files):
        (out / name).write_text(files[name])
    (out / "summary.json").write_text(_dumps(summary))
    (out / "timing.json").write_text(_dumps({"wall_clock_seconds": elapsed}))
    return out


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = argparse.ArgumentParser(prog="stochmech", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run one experiment from a JSON config")
    p_run.add_argument("config", help="path to the JSON config file")
    p_run.add_argument("--output-dir", help=f"output directory (overrides ${OUTPUT_DIR_ENV} and the config)")
    p_run.add_argument("--seed", type=int, help="override the config seed")
    p_run.add_argument("--quiet", action="store_true", help="only report errors")
    args = parser.parse_args(argv)

    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        raw = json.loads(Path(args.config).read_text())
        rc = parse_config(raw, args.seed, args.output_dir)
    except (OSError, json.JSONDecodeError, ConfigError) as exc:
        print(f"stochmech: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        out = run(rc)
    except EvolutionDivergedError as exc:
        print(f"stochmech: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    if not args.quiet:
        print(f"wrote {rc.experiment} results to {out}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
