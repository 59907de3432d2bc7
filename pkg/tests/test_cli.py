"""End-to-end CLI runs: outputs, round trips, determinism, exit codes."""

import json
import math
import os
import subprocess
import sys

import numpy as np
import pytest

from unravel.cli import main, read_csv


def run_cli(args, tmp_path, threads="2"):
    env = dict(os.environ, UNRAVEL_THREADS=threads, MPLBACKEND="Agg")
    return subprocess.run(
        [sys.executable, "-m", "unravel", *args],
        capture_output=True,
        text=True,
        env=env,
        cwd=tmp_path,
    )


SMALL = ["--n-traj", "300"]


class TestMaster:
    def test_writes_series_and_figure(self, tmp_path):
        out = tmp_path / "m"
        proc = run_cli(["master", "--preset", "damping", "--out", str(out)], tmp_path)
        assert proc.returncode == 0, proc.stderr
        series = read_csv(out / "master_series.csv")
        k = int(round(1.0 / 1e-3))
        assert series["rho_ee"][k] == pytest.approx(math.exp(-1.0), abs=1e-6)
        assert (out / "master.png").stat().st_size > 0

    def test_no_plots_flag(self, tmp_path):
        out = tmp_path / "m"
        proc = run_cli(
            ["master", "--preset", "damping", "--out", str(out), "--no-plots"], tmp_path
        )
        assert proc.returncode == 0, proc.stderr
        assert not (out / "master.png").exists()


class TestEnsemble:
    def test_poisson_damping_entropy_zero(self, tmp_path):
        out = tmp_path / "e"
        proc = run_cli(
            ["ensemble", "--preset", "damping", "--out", str(out), "--unraveling", "poisson"]
            + SMALL,
            tmp_path,
        )
        assert proc.returncode == 0, proc.stderr
        series = read_csv(out / "ensemble_series.csv")
        assert np.all(series["mean_S"] == 0.0)
        summary = json.loads((out / "ensemble_summary.json").read_text())
        assert summary["unraveling"] == "poisson"
        assert summary["jump_counts"][0] > 0
        assert (out / "ensemble.png").stat().st_size > 0

    def test_seed_override(self, tmp_path):
        out1, out2 = tmp_path / "a", tmp_path / "b"
        for out, seed in ((out1, "1"), (out2, "2")):
            proc = run_cli(
                ["ensemble", "--preset", "damping", "--out", str(out), "--seed", seed]
                + SMALL,
                tmp_path,
            )
            assert proc.returncode == 0, proc.stderr
        a = (out1 / "ensemble_series.csv").read_bytes()
        b = (out2 / "ensemble_series.csv").read_bytes()
        assert a != b


class TestCompare:
    def test_passes_and_writes_reports(self, tmp_path):
        out = tmp_path / "c"
        proc = run_cli(
            ["compare", "--preset", "damping", "--out", str(out), "--n-traj", "1500"],
            tmp_path,
        )
        assert proc.returncode == 0, proc.stderr
        summary = json.loads((out / "compare_summary.json").read_text())
        assert summary["passed"] is True
        assert summary["violations"] == []
        for tag in ("wiener", "poisson"):
            series = read_csv(out / f"compare_{tag}_series.csv")
            assert series["trace_distance"].max() < 0.05
            assert (out / f"compare_smd_{tag}.csv").exists()
        cross = read_csv(out / "compare_cross.csv")
        assert cross["cross_se_units_11"].max() > 5.0
        assert (out / "compare.png").stat().st_size > 0

    def test_exit_status_reflects_report(self, tmp_path):
        # with 2 trajectories every SE is huge or floored; whatever the
        # report concludes, the exit status must agree with it
        out = tmp_path / "c"
        proc = run_cli(
            ["compare", "--preset", "damping", "--out", str(out), "--n-traj", "2"],
            tmp_path,
        )
        summary = json.loads((out / "compare_summary.json").read_text())
        assert (proc.returncode == 0) == summary["passed"]
        assert proc.returncode in (0, 1)


class TestFunctionals:
    def test_poisson_series(self, tmp_path):
        out = tmp_path / "f"
        proc = run_cli(
            [
                "functionals",
                "--preset",
                "damping",
                "--out",
                str(out),
                "--unraveling",
                "poisson",
                "--seed",
                "4",
            ],
            tmp_path,
        )
        assert proc.returncode == 0, proc.stderr
        series = read_csv(out / "functionals_series.csv")
        np.testing.assert_array_equal(series["S"], np.zeros(2001))
        summary = json.loads((out / "functionals_summary.json").read_text())
        assert summary["seed"] == 4
        # pre-jump points diverge (p_g = 0 with live coupling), post-jump dark
        assert summary["divergent_points"] > 0
        flagged = series["f_flag"].astype(bool)
        assert np.all(np.isnan(series["f"][flagged]))
        assert np.all(series["f"][~flagged] == 0.0)

    def test_wiener_series_finite(self, tmp_path):
        out = tmp_path / "f"
        proc = run_cli(
            ["functionals", "--preset", "rabi", "--out", str(out), "--seed", "9"],
            tmp_path,
        )
        assert proc.returncode == 0, proc.stderr
        series = read_csv(out / "functionals_series.csv")
        ok = ~series["correction_flag"].astype(bool)
        assert np.all(series["entropy_correction"][ok] <= 1e-12)


class TestValidationErrors:
    def test_bad_spec_exit_2(self, tmp_path):
        spec = tmp_path / "bad.json"
        doc = {"dim": 2}
        spec.write_text(json.dumps(doc))
        proc = run_cli(["master", "--spec", str(spec), "--out", str(tmp_path / "o")], tmp_path)
        assert proc.returncode == 2
        assert "missing key" in proc.stderr

    def test_spec_and_preset_conflict(self, tmp_path):
        proc = run_cli(
            [
                "master",
                "--spec",
                "x.json",
                "--preset",
                "damping",
                "--out",
                str(tmp_path / "o"),
            ],
            tmp_path,
        )
        assert proc.returncode == 2

    def test_neither_spec_nor_preset(self, tmp_path):
        proc = run_cli(["master", "--out", str(tmp_path / "o")], tmp_path)
        assert proc.returncode == 2


class TestRoundTrip:
    def test_csv_reparses_exactly(self, tmp_path):
        out = tmp_path / "m"
        assert (
            main(
                [
                    "ensemble",
                    "--preset",
                    "damping",
                    "--out",
                    str(out),
                    "--n-traj",
                    "50",
                    "--no-plots",
                ]
            )
            == 0
        )
        from unravel import parse_model_data, preset_spec, run_ensemble
        import dataclasses

        config = dataclasses.replace(
            parse_model_data(preset_spec("damping")), n_traj=50
        )
        stats = run_ensemble(config)
        series = read_csv(out / "ensemble_series.csv")
        np.testing.assert_array_equal(series["mean_p_1"], stats.mean_p[:, 1])
        np.testing.assert_array_equal(series["se_p_1"], stats.se_p[:, 1])
        np.testing.assert_array_equal(series["mean_S"], stats.mean_entropy)
