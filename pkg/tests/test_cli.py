import csv
import json
import os
from pathlib import Path

import numpy as np
import pytest

from daychange.cli import main
from daychange.model import FeatureMatrix
from daychange.pipeline.io import write_feature_csv

FIXTURE = str(Path(__file__).parent / "data" / "fixture_daily_features.csv")


def run(argv):
    return main([str(a) for a in argv])


def read_csv_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def write_residual_csv(path, p=3, t=30, seed=0, shift_at=None, shift=0.0):
    rng = np.random.default_rng(seed)
    values = rng.standard_normal((p, t))
    if shift_at is not None:
        values[:, shift_at - 1 :] += shift
    fm = FeatureMatrix.from_values(values)
    import datetime

    fm.start_date = datetime.date(2024, 3, 4)
    write_feature_csv(fm, str(path))
    return str(path)


class TestPreprocessCommand:
    def test_clean_fixture_emits_one_segment(self, tmp_path):
        out = tmp_path / "out"
        assert run(["preprocess", "--input", FIXTURE, "--out", out]) == 0
        files = sorted(os.listdir(out))
        assert "fixture_daily_features_segment1.csv" in files
        assert "manifest.json" in files
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["command"] == "preprocess"
        assert FIXTURE in manifest["inputs"]

    def test_short_file_warns_but_succeeds(self, tmp_path, capsys):
        short = tmp_path / "short.csv"
        rows = ["date,a,b"] + [
            f"2024-01-{d:02d},{d}.5,{d * 2}.25" for d in range(1, 14)
        ]
        short.write_text("\n".join(rows) + "\n")
        out = tmp_path / "out"
        assert run(["preprocess", "--input", short, "--out", out]) == 0
        assert "no segment" in capsys.readouterr().err

    def test_malformed_cell_fails_with_location(self, tmp_path, capsys):
        bad = tmp_path / "bad.csv"
        bad.write_text("date,a\n2024-01-01,1.0\n2024-01-02,oops\n")
        out = tmp_path / "out"
        assert run(["preprocess", "--input", bad, "--out", out]) == 1
        err = capsys.readouterr().err
        assert "bad.csv:3" in err and "'a'" in err

    def test_tune_lambda_writes_scan(self, tmp_path):
        out = tmp_path / "out"
        assert run([
            "preprocess", "--input", FIXTURE, "--out", out,
            "--tune-lambda", "0,10,1000000",
        ]) == 0
        rows = read_csv_rows(out / "lambda_scan.csv")
        assert len(rows) == 3


class TestDetectCommand:
    def test_null_stream_reproducible(self, tmp_path):
        residual = write_residual_csv(tmp_path / "s1.csv", seed=5)
        out1, out2 = tmp_path / "o1", tmp_path / "o2"
        for out in (out1, out2):
            assert run([
                "detect", "--input", residual, "--out", out,
                "--method", "vcstar", "--b", 100, "--seed", 7,
            ]) == 0
        log1 = (out1 / "detections.csv").read_text()
        log2 = (out2 / "detections.csv").read_text()
        assert log1 == log2

    def test_detects_planted_shift(self, tmp_path):
        residual = write_residual_csv(
            tmp_path / "s1.csv", seed=3, shift_at=20, shift=3.0
        )
        out = tmp_path / "out"
        assert run([
            "detect", "--input", residual, "--out", out,
            "--method", "vcstar", "--b", 120, "--seed", 1,
        ]) == 0
        rows = read_csv_rows(out / "detections.csv")
        assert rows, "expected at least one detection"
        assert rows[0]["method"] == "vcstar"
        assert rows[0]["calendar_date"].startswith("2024-")

    def test_p_greater_than_t_notes_forced_phi(self, tmp_path):
        rng = np.random.default_rng(2)
        fm = FeatureMatrix.from_values(rng.standard_normal((30, 20)))
        path = tmp_path / "wide.csv"
        write_feature_csv(fm, str(path))
        out = tmp_path / "out"
        assert run([
            "detect", "--input", path, "--out", out,
            "--method", "vcstar", "--b", 100, "--phi", "auto",
        ]) == 0
        manifest = json.loads((out / "manifest.json").read_text())
        assert any("phi_forced_p_gt_T" in k for k in manifest["notes"])

    def test_unknown_method_usage_error(self, tmp_path):
        residual = write_residual_csv(tmp_path / "s1.csv")
        assert run([
            "detect", "--input", residual, "--out", tmp_path / "o",
            "--method", "nonsense",
        ]) == 2


class TestSimulateCommand:
    def test_grid_file_with_fixed_effects(self, tmp_path):
        grid = tmp_path / "grid.csv"
        grid.write_text(
            "T,p,k_star,rho,change_kind,effect,omega,phi,seed\n"
            "20,3,4,0.0,mean_only,2.0,1.0,1.0,1\n"
            "20,3,4,0.0,variance_only,4.0,1.0,1.0,1\n"
        )
        out = tmp_path / "out"
        assert run([
            "simulate", "--grid", grid, "--methods", "vcstar,hotelling",
            "--reps", 50, "--b", 100, "--out", out, "--threads", 1,
        ]) == 0
        rows = read_csv_rows(out / "power.csv")
        assert len(rows) == 4
        assert all(r["status"] == "ok" for r in rows)
        powers = {(r["change_kind"], r["method"]): float(r["power"]) for r in rows}
        assert powers[("mean_only", "vcstar")] > 0.3

    def test_power_preset_row_count(self, tmp_path):
        out = tmp_path / "out"
        assert run([
            "simulate", "--preset", "power", "--methods", "vcstar",
            "--reps", 2, "--b", 100, "--effect", 0.5, "--out", out,
            "--threads", 1,
        ]) == 0
        rows = read_csv_rows(out / "power.csv")
        # 3 T values x 2 omega x 6 k* per change kind, one method
        by_kind = {}
        for r in rows:
            by_kind.setdefault(r["change_kind"], []).append(r)
        assert len(by_kind["mean_only"]) == 36
        assert len(by_kind["variance_only"]) == 36

    def test_zero_reps_rejected(self, tmp_path):
        assert run([
            "simulate", "--preset", "power", "--reps", 0,
            "--out", tmp_path / "o", "--effect", 1.0,
        ]) == 1

    def test_same_seed_identical_tables(self, tmp_path):
        grid = tmp_path / "grid.csv"
        grid.write_text(
            "T,p,k_star,rho,change_kind,effect,omega,phi,seed\n"
            "18,2,4,0.0,mean_only,1.5,1.0,1.0,3\n"
        )
        tables = []
        for name in ("a", "b"):
            out = tmp_path / name
            assert run([
                "simulate", "--grid", grid, "--methods", "vcstar,cusum",
                "--reps", 40, "--b", 100, "--seed", 11, "--out", out,
                "--threads", 1,
            ]) == 0
            tables.append((out / "power.csv").read_text())
        assert tables[0] == tables[1]


class TestCalibrateCommand:
    def test_calibrate_then_power_near_target(self, tmp_path):
        out = tmp_path / "cal"
        assert run([
            "calibrate", "--t", 22, "--p", 3, "--kind", "mean_only",
            "--reps", 300, "--b", 200, "--out", out, "--seed", 5,
            "--threads", 1,
        ]) == 0
        row = read_csv_rows(out / "calibration.csv")[0]
        effect = float(row["effect"])
        power = float(row["power"])
        assert effect > 0
        assert abs(power - 0.8) <= 0.1

    def test_report_on_identical_logs(self, tmp_path):
        log = tmp_path / "log.csv"
        log.write_text(
            "stream_id,day_index,calendar_date,method,statistic,p_value,db,"
            "T_at_test\n"
            "s1,12,2024-01-12,vcstar,9.5,0.01,7,20\n"
            "s1,12,2024-01-12,cusum,4.0,0.02,7,20\n"
        )
        out = tmp_path / "rep"
        assert run([
            "report", "--logs", log, "--days", 30, "--out", out,
        ]) == 0
        sims = read_csv_rows(out / "similarity.csv")
        assert float(sims[0]["similarity"]) == 1.0
        rates = read_csv_rows(out / "rates.csv")
        assert all(float(r["rate"]) == pytest.approx(1 / 30) for r in rates)


class TestReportCommand:
    def test_spearman_table(self, tmp_path):
        rng = np.random.default_rng(6)
        x = rng.uniform(size=40)
        data = tmp_path / "xy.csv"
        with open(data, "w") as fh:
            fh.write("rate,score\n")
            for xi in x:
                fh.write(f"{xi},{xi * 2}\n")
        out = tmp_path / "rep"
        assert run([
            "report", "--spearman", data, "--bootstrap", 200, "--out", out,
        ]) == 0
        row = read_csv_rows(out / "spearman.csv")[0]
        assert float(row["rho"]) == pytest.approx(1.0)

    def test_days_file(self, tmp_path):
        log = tmp_path / "log.csv"
        log.write_text(
            "stream_id,day_index,calendar_date,method,statistic,p_value,db,"
            "T_at_test\n"
            "s1,12,,vcstar,9.5,0.01,7,20\n"
        )
        days = tmp_path / "days.csv"
        days.write_text("stream_id,n_days\ns1,24\n")
        out = tmp_path / "rep"
        assert run([
            "report", "--logs", log, "--days-file", days, "--out", out,
        ]) == 0
        rates = read_csv_rows(out / "rates.csv")
        assert float(rates[0]["rate"]) == pytest.approx(1 / 24)

    def test_no_inputs_is_error(self, tmp_path):
        assert run(["report", "--out", tmp_path / "rep"]) == 1


class TestSelectPhiCommand:
    def test_p_greater_than_t_immediate_one(self, tmp_path):
        rng = np.random.default_rng(4)
        fm = FeatureMatrix.from_values(rng.standard_normal((12, 20)))
        path = tmp_path / "pre.csv"
        write_feature_csv(fm, str(path))
        out = tmp_path / "out"
        assert run([
            "select-phi", "--input", path, "--t", 10, "--out", out,
        ]) == 0
        rows = read_csv_rows(out / "phi.csv")
        assert rows[-1]["iteration"] == "selected"
        assert float(rows[-1]["phi"]) == 1.0


class TestNullDistCommand:
    def test_builds_and_persists(self, tmp_path):
        out = tmp_path / "out"
        assert run([
            "null-dist", "--t", 20, "--p", 3, "--method", "vcstar",
            "--b", 100, "--out", out, "--threads", 1,
        ]) == 0
        files = os.listdir(out)
        assert any(f.startswith("null_") and f.endswith(".npz") for f in files)


class TestConfigFile:
    def test_config_applies_and_flags_override(self, tmp_path):
        cfg = tmp_path / "cfg.yaml"
        cfg.write_text(
            "schema_version: 1\nseed: 9\nb: 100\n"
            "preprocess:\n  ridge_lambda: 3.0\n"
        )
        out = tmp_path / "out"
        assert run([
            "preprocess", "--input", FIXTURE, "--out", out, "--config", cfg,
            "--ridge-lambda", "7.0",
        ]) == 0
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["config"]["preprocess"]["ridge_lambda"] == 7.0
        assert manifest["config"]["seed"] == 9

    def test_unknown_key_rejected(self, tmp_path):
        cfg = tmp_path / "cfg.yaml"
        cfg.write_text("nonsense_key: 1\n")
        assert run([
            "preprocess", "--input", FIXTURE, "--out", tmp_path / "o",
            "--config", cfg,
        ]) == 1
