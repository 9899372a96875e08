import json
import subprocess
import sys

import pytest

from userdp.cli import main


def write_config(tmp_path, payload, name="config.json"):
    path = tmp_path / name
    path.write_text(json.dumps(payload))
    return str(path)


def mean_config(tmp_path, **overrides):
    payload = {
        "experiment": "mean",
        "seed": 7,
        "params": {
            "n": [20],
            "m": [2],
            "eps": [1.0],
            "delta": 1e-5,
            "gamma": 0.1,
            "trials": 2,
            "dist": {"family": "bounded_ball", "dim": 1, "bound": 1.0, "bound_kind": "l2",
                     "mean": [0.2], "radius": 0.3},
        },
    }
    payload.update(overrides)
    return write_config(tmp_path, payload)


CSV_HEADER = "experiment,n,m,eps,delta,d,trial,metric_name,metric_value"


class TestValidate:
    def test_good_config_passes(self, tmp_path, capsys):
        assert main(["validate", "--config", mean_config(tmp_path)]) == 0
        assert "ok: mean" in capsys.readouterr().out

    def test_unknown_experiment_rejected(self, tmp_path, capsys):
        cfg = write_config(tmp_path, {"experiment": "optimize", "seed": 1, "params": {}})
        assert main(["validate", "--config", cfg]) == 2
        assert "config error" in capsys.readouterr().err

    def test_missing_params_rejected(self, tmp_path):
        cfg = write_config(tmp_path, {"experiment": "mean", "seed": 1,
                                      "params": {"n": [10], "m": [1]}})
        assert main(["validate", "--config", cfg]) == 2

    def test_malformed_json_rejected(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text("{not json")
        assert main(["validate", "--config", str(path)]) == 2

    def test_missing_file_rejected(self, tmp_path):
        assert main(["validate", "--config", str(tmp_path / "absent.json")]) == 2

    def test_bad_grid_values_rejected(self, tmp_path):
        cfg = mean_config(tmp_path)
        payload = json.loads(open(cfg).read())
        payload["params"]["eps"] = [0.0]
        assert main(["validate", "--config", write_config(tmp_path, payload, "z.json")]) == 2

    def test_mean_requires_l2_distribution(self, tmp_path):
        cfg = mean_config(tmp_path)
        payload = json.loads(open(cfg).read())
        payload["params"]["dist"]["bound_kind"] = "linf"
        assert main(["validate", "--config", write_config(tmp_path, payload, "w.json")]) == 2


class TestRun:
    def test_writes_csv_with_pinned_header(self, tmp_path, capsys):
        out = tmp_path / "out"
        code = main(["run", "--config", mean_config(tmp_path), "--output", str(out)])
        assert code == 0
        lines = (out / "results.csv").read_text().splitlines()
        assert lines[0] == CSV_HEADER
        # 1 cell x 2 trials x 2 metrics
        assert len(lines) == 1 + 4
        assert "wrote 4 rows" in capsys.readouterr().out

    def test_reruns_are_byte_identical(self, tmp_path):
        cfg = mean_config(tmp_path)
        outs = []
        for name in ("a", "b"):
            out = tmp_path / name
            assert main(["run", "--config", cfg, "--output", str(out)]) == 0
            outs.append((out / "results.csv").read_bytes())
        assert outs[0] == outs[1]

    def test_parallel_jobs_match_serial(self, tmp_path):
        cfg = mean_config(tmp_path)
        serial = tmp_path / "serial"
        parallel = tmp_path / "parallel"
        assert main(["run", "--config", cfg, "--output", str(serial)]) == 0
        assert main(["run", "--config", cfg, "--output", str(parallel), "--jobs", "2"]) == 0
        assert (serial / "results.csv").read_bytes() == (parallel / "results.csv").read_bytes()

    def test_seed_override_changes_outputs(self, tmp_path):
        cfg = mean_config(tmp_path)
        base = tmp_path / "base"
        other = tmp_path / "other"
        assert main(["run", "--config", cfg, "--output", str(base)]) == 0
        assert main(["run", "--config", cfg, "--output", str(other),
                     "--seed-override", "99"]) == 0
        assert (base / "results.csv").read_bytes() != (other / "results.csv").read_bytes()

    def test_manifest_records_run(self, tmp_path):
        out = tmp_path / "out"
        assert main(["run", "--config", mean_config(tmp_path), "--output", str(out)]) == 0
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["experiment"] == "mean"
        assert manifest["seed"] == 7
        assert manifest["n_rows"] == 4
        for key in ("config_hash", "code_version", "wall_time_s", "created"):
            assert key in manifest

    def test_bad_config_exits_2(self, tmp_path):
        cfg = write_config(tmp_path, {"experiment": "mean", "seed": -1, "params": {}})
        assert main(["run", "--config", cfg, "--output", str(tmp_path / "x")]) == 2

    def test_module_entry_point(self, tmp_path):
        cfg = mean_config(tmp_path)
        proc = subprocess.run(
            [sys.executable, "-m", "userdp.cli", "validate", "--config", cfg],
            capture_output=True, text=True,
        )
        assert proc.returncode == 0
        assert "ok: mean" in proc.stdout


def audit_config(tmp_path, target, expect, name):
    return write_config(tmp_path, {
        "experiment": "audit",
        "seed": 3,
        "params": {"target": target, "eps": 1.0, "trials": 10000, "expect": expect},
    }, name)


class TestAuditCommand:
    def test_noisy_target_passes(self, tmp_path):
        out = tmp_path / "out"
        cfg = audit_config(tmp_path, "winsorized_mean_1d", "pass", "a.json")
        assert main(["run", "--config", cfg, "--output", str(out)]) == 0
        report = json.loads((out / "audit_report.json").read_text())
        assert report["pass"] is True
        assert report["mechanism"] == "winsorized_mean_1d"
        rows = (out / "results.csv").read_text().splitlines()
        assert any("max_ratio" in line for line in rows)

    def test_noiseless_target_fails_as_expected(self, tmp_path):
        out = tmp_path / "out"
        cfg = audit_config(tmp_path, "no_noise_mean", "fail", "b.json")
        assert main(["run", "--config", cfg, "--output", str(out)]) == 0
        report = json.loads((out / "audit_report.json").read_text())
        assert report["pass"] is False

    def test_expectation_mismatch_exits_3(self, tmp_path):
        out = tmp_path / "out"
        cfg = audit_config(tmp_path, "no_noise_mean", "pass", "c.json")
        assert main(["run", "--config", cfg, "--output", str(out)]) == 3

    def test_unknown_target_rejected(self, tmp_path):
        cfg = write_config(tmp_path, {
            "experiment": "audit", "seed": 0,
            "params": {"target": "gauss", "eps": 1.0, "trials": 10000},
        })
        assert main(["validate", "--config", cfg]) == 2

    def test_too_few_trials_rejected(self, tmp_path):
        cfg = write_config(tmp_path, {
            "experiment": "audit", "seed": 0,
            "params": {"target": "no_noise_mean", "eps": 1.0, "trials": 100},
        })
        assert main(["validate", "--config", cfg]) == 2


def scaling_config(tmp_path, expected_slopes, name="scaling.json.cfg"):
    return write_config(tmp_path, {
        "experiment": "scaling",
        "seed": 11,
        "params": {
            "inner": {
                "experiment": "mean",
                "n": [50, 100, 200],
                "m": [2],
                "eps": [1.0],
                "delta": 1e-5,
                "gamma": 0.1,
                "trials": 3,
                "dist": {"family": "bounded_ball", "dim": 1, "bound": 1.0, "bound_kind": "l2",
                         "mean": [0.2], "radius": 0.3},
            },
            "expected_slopes": expected_slopes,
        },
    }, name)


class TestScalingCommand:
    def test_writes_sidecar_with_slopes(self, tmp_path):
        out = tmp_path / "out"
        cfg = scaling_config(tmp_path, {"n": [-4.0, 0.0]})
        assert main(["run", "--config", cfg, "--output", str(out)]) == 0
        sidecar = json.loads((out / "scaling.json").read_text())
        assert sidecar["metric"] == "mse"
        assert sidecar["pass"] is True
        assert "n" in sidecar["slopes"]
        assert len(sidecar["cells"]) == 3

    def test_out_of_band_slope_exits_3(self, tmp_path):
        out = tmp_path / "out"
        cfg = scaling_config(tmp_path, {"n": [5.0, 6.0]}, name="bad.json")
        assert main(["run", "--config", cfg, "--output", str(out)]) == 3
        sidecar = json.loads((out / "scaling.json").read_text())
        assert sidecar["pass"] is False

    def test_inner_config_validated(self, tmp_path):
        cfg = write_config(tmp_path, {
            "experiment": "scaling", "seed": 1,
            "params": {"inner": {"experiment": "audit"}},
        })
        assert main(["validate", "--config", cfg]) == 2


class TestReportCommand:
    def test_refits_from_existing_csv(self, tmp_path, capsys):
        out = tmp_path / "out"
        cfg = scaling_config(tmp_path, {"n": [-4.0, 0.0]})
        assert main(["run", "--config", cfg, "--output", str(out)]) == 0
        (out / "scaling.json").unlink()
        assert main(["report", "--output", str(out)]) == 0
        assert (out / "scaling.json").exists()
        assert '"n"' in capsys.readouterr().out

    def test_missing_results_exits_2(self, tmp_path, capsys):
        assert main(["report", "--output", str(tmp_path / "nowhere")]) == 2
        assert "report error" in capsys.readouterr().err

    def test_unknown_metric_exits_2(self, tmp_path):
        out = tmp_path / "out"
        cfg = scaling_config(tmp_path, {"n": [-4.0, 0.0]})
        assert main(["run", "--config", cfg, "--output", str(out)]) == 0
        assert main(["report", "--output", str(out), "--metric", "nope"]) == 2
