import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from stochmech import dynamics
from stochmech.bell import TSIRELSON
from stochmech.cli import main, parse_config, read_series

EVOLVE = {"experiment": "evolve", "seed": 1,
          "scenario": {"name": "free_gaussian", "t_end": 2.0, "grid": {"n": 512}}}
BORN = {"experiment": "born", "seed": 5, "n_particles": 5000, "n_bins": 32,
        "scenario": {"name": "free_gaussian", "t_end": 0.5, "grid": {"n": 512}, "record_every": 10}}
SWEEP = {"experiment": "lambda_sweep", "seed": 2, "lambda_values": [0.0, 0.5, 1.0],
         "scenario": {"name": "free_gaussian", "t_end": 1.0, "grid": {"n": 512}}}
BELL = {"experiment": "bell_scan", "seed": 4,
        "bell": {"lc": 1.0, "family": "exponential", "p": 1,
                 "separations": {"l_min": 0.1, "l_max": 10.0, "num": 50}}}


def run(tmp_path, config, *extra, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(config))
    return main(["run", str(path), "--quiet", *extra])


def output(tmp_path, config, subdir="out"):
    out = tmp_path / subdir
    assert run(tmp_path, config, "--output-dir", str(out)) == 0
    return out, json.loads((out / "summary.json").read_text())


class TestEvolve:
    def test_width_matches_oracle(self, tmp_path):
        out, summary = output(tmp_path, EVOLVE)
        s = read_series(out / "evolve.csv")
        assert s["t"][-1] == pytest.approx(2.0)
        assert np.max(np.abs(s["width"] - s["oracle_width"]) / s["oracle_width"]) < 1e-6
        assert summary["results"]["final_width"] == pytest.approx(np.sqrt(2), rel=1e-6)
        assert summary["results"]["sigma"] == 1.0

    def test_summary_is_derivable_from_series(self, tmp_path):
        out, summary = output(tmp_path, EVOLVE)
        s = read_series(out / "evolve.csv")
        r = summary["results"]
        assert r["final_width"] == s["width"][-1]
        assert r["max_hj_residual"] == np.nanmax(s["hj_residual"])
        assert r["max_continuity_residual"] == np.nanmax(s["continuity_residual"])
        assert r["dt"] * r["n_steps"] == pytest.approx(s["t"][-1])

    def test_preamble(self, tmp_path):
        out, summary = output(tmp_path, EVOLVE)
        lines = (out / "evolve.csv").read_text().splitlines()
        assert lines[0].startswith("# stochmech ")
        assert f"# config_sha256={summary['config_sha256']}" in lines
        assert "# seed=1" in lines
        assert lines[4] == "t,mean,width,oracle_mean,oracle_width,continuity_residual,hj_residual"

    def test_divergence_exit_code(self, tmp_path, monkeypatch, capsys):
        monkeypatch.setattr(dynamics, "_raw_step", lambda amp, *a: amp * np.nan)
        assert run(tmp_path, EVOLVE, "--output-dir", str(tmp_path / "o")) == 3
        assert "evolution diverged at step 1" in capsys.readouterr().err


class TestBell:
    def test_scan(self, tmp_path):
        out, summary = output(tmp_path, BELL)
        s = read_series(out / "bell_scan.csv")
        assert len(s["l"]) == 51 and s["l"][0] == 0.0
        assert abs(s["s"][0] - TSIRELSON) < 1e-3
        assert np.all(np.diff(s["s"]) <= 0)
        assert np.allclose(s["s"], np.abs(s["E_ab"] - s["E_abp"] + s["E_apb"] + s["E_apbp"]), rtol=0, atol=1e-15)
        r = summary["results"]
        assert r["critical_scale"] == pytest.approx(np.log(np.sqrt(2)), rel=1e-9)
        assert r["s_at_zero"] == s["s"][0]
        assert "modelling_choices" in r

    def test_sampled(self, tmp_path):
        cfg = json.loads(json.dumps(BELL))
        cfg["bell"]["n_samples"] = 20_000
        cfg["bell"]["separations"] = [0.0, 0.5, 2.0]
        out, _ = output(tmp_path, cfg)
        s = read_series(out / "bell_scan.csv")
        assert np.all(np.abs(s["s_hat"] - s["s"]) < 5 * s["s_stderr"])


class TestBorn:
    def test_outputs(self, tmp_path):
        out, summary = output(tmp_path, BORN)
        h = read_series(out / "born_histogram.csv")
        pos = read_series(out / "positions.csv")["x"]
        r = summary["results"]
        assert len(pos) == 5000 and len(h["p_model"]) == 32
        assert r["final_fit"]["l1_distance"] == pytest.approx(np.sum(np.abs(h["p_ensemble"] - h["p_model"])))
        assert r["baseline_fit"]["l1_distance"] == pytest.approx(np.sum(np.abs(h["p_baseline"] - h["p_model"])))
        assert r["final_fit"]["l1_distance"] < 0.1

    def test_zero_particles(self, tmp_path, capsys):
        cfg = dict(BORN, n_particles=0)
        assert run(tmp_path, cfg) == 2
        assert "n_particles must be ≥ 1" in capsys.readouterr().err


class TestSweep:
    def test_rows_and_monotonicity(self, tmp_path):
        out, summary = output(tmp_path, SWEEP)
        s = read_series(out / "lambda_sweep.csv")
        assert list(s["lambda"]) == [0.0, 0.5, 1.0]
        assert np.all(np.diff(s["final_width"]) <= 0)
        assert s["final_width"][0] > s["final_width"][-1]
        assert abs(s["final_width"][-1] - 1.0) < 1e-4
        assert s["q_term_rms"][-1] == 0.0 and s["q_rms"][0] > 0
        assert summary["results"]["widths_nonincreasing_in_lambda"]

    def test_single_lambda_matches_evolve(self, tmp_path):
        sweep = dict(SWEEP, lambda_values=[0.0], scenario=EVOLVE["scenario"])
        out_s, _ = output(tmp_path, sweep, "sweep")
        out_e, _ = output(tmp_path, EVOLVE, "evolve")

        def rows(path):
            return [ln for ln in path.read_text().splitlines() if not ln.startswith("#")]

        assert rows(out_s / "evolve_lambda_0p0.csv") == rows(out_e / "evolve.csv")


class TestConfig:
    @pytest.mark.parametrize("cfg,needle", [
        ({"experiment": "evolve", "scenario": "free_gaussian"}, "seed"),
        ({"experiment": "dance", "seed": 1}, "experiment"),
        ({"experiment": "evolve", "seed": 1, "scenario": "nowhere"}, "unknown scenario"),
        ({"experiment": "evolve", "seed": 1, "scenario": {"name": "free_gaussian", "dt": 0.5}}, "too large"),
        ({"experiment": "lambda_sweep", "seed": 1, "scenario": "free_gaussian", "lambda_values": [2]}, "[0, 1]"),
        ({"experiment": "bell_scan", "seed": 1, "bell": {"lc": -1, "separations": [1]}}, "lc"),
        ({"experiment": "bell_scan", "seed": 1, "bell": {"lc": 1}}, "separations"),
    ])
    def test_invalid(self, tmp_path, capsys, cfg, needle):
        assert run(tmp_path, cfg) == 2
        assert needle in capsys.readouterr().err

    def test_bad_json(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{not json")
        assert main(["run", str(path)]) == 2

    def test_output_dir_precedence(self, tmp_path, monkeypatch):
        cfg = dict(BELL, output_dir=str(tmp_path / "from_config"))
        assert run(tmp_path, cfg) == 0
        assert (tmp_path / "from_config" / "summary.json").exists()
        monkeypatch.setenv("STOCHMECH_OUTPUT_DIR", str(tmp_path / "from_env"))
        assert run(tmp_path, cfg) == 0
        assert (tmp_path / "from_env" / "summary.json").exists()
        assert run(tmp_path, cfg, "--output-dir", str(tmp_path / "from_flag")) == 0
        assert (tmp_path / "from_flag" / "summary.json").exists()

    def test_seed_override(self, tmp_path):
        _, summary = output(tmp_path, BELL)
        assert run(tmp_path, BELL, "--seed", "99", "--output-dir", str(tmp_path / "s")) == 0
        assert json.loads((tmp_path / "s" / "summary.json").read_text())["inputs"]["seed"] == 99
        assert summary["inputs"]["seed"] == 4


@pytest.mark.parametrize("config", [EVOLVE, BORN, SWEEP, dict(BELL, bell={**BELL["bell"], "n_samples": 500})],
                         ids=["evolve", "born", "lambda_sweep", "bell_scan"])
def test_reruns_are_byte_identical(tmp_path, config):
    a, _ = output(tmp_path, config, "a")
    b, _ = output(tmp_path, config, "b")
    names = sorted(p.name for p in a.iterdir() if p.name != "timing.json")
    assert names == sorted(p.name for p in b.iterdir() if p.name != "timing.json")
    for name in names:
        assert (a / name).read_bytes() == (b / name).read_bytes(), name


def test_console_entry_point(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(BELL))
    proc = subprocess.run([sys.executable, "-m", "stochmech", "run", str(path), "--output-dir", str(tmp_path / "o")],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert "wrote bell_scan results" in proc.stdout
    assert json.loads((tmp_path / "o" / "timing.json").read_text())["wall_clock_seconds"] > 0


@pytest.mark.parametrize("path", sorted((Path(__file__).parents[1] / "configs").glob("*.json")), ids=lambda p: p.stem)
def test_golden_configs_validate(path):
    rc = parse_config(json.loads(path.read_text()))
    assert rc.experiment == path.stem
