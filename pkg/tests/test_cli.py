import json
from pathlib import Path

import numpy as np
import pytest

from reachzono import cli, pipeline
from reachzono.config import ConfigError, ExperimentConfig, default_config_dict


def toy_config_dict(seed=101):
    """1-state SISO pipeline small enough for smoke runs.

    Noise radii 1e-5 give a worst-case aggregated residual of 2.5e-5, well
    inside the 1e-4 residual bound used here.
    """
    return {
        "system": {"A": [[0.5]], "B": [[1.0]], "C": [[1.0]], "dt": 1.0},
        "x0_set": {"center": [0.0], "generators": [[0.5]]},
        "input_set": {"center": [1.0], "generators": [[0.2]]},
        "eps_bound": {"center": [0.0], "generators": [[1e-4]]},
        "w_box": {"center": [0.0], "generators": [[1e-5]]},
        "v_box": {"center": [0.0], "generators": [[1e-5]]},
        "T": 20,
        "n_o": 1,
        "rho_max": 10,
        "horizon": 4,
        "k_g": 2,
        "t_max": 10.0,
        "n_cal": 10,
        "n_cal_candidates": 40,
        "delta": 0.2,
        "n_history": 40,
        "n_test": 40,
        "n_label_runs": 2,
        "label_history": 15,
        "strip_inflation": 0.05,
        "feedback": "raw",
        "context_init": "fitted",
        "seed": seed,
    }


def write_config(tmp_path, cfg_dict, name="config.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg_dict))
    return path


ARTIFACTS = [
    "train.jsonl", "history.jsonl", "calibration.jsonl", "test.jsonl",
    "model_set.json", "dd_sets.json", "context.json", "tightened.json",
    "labels.jsonl", "weights/manifest.json", "weights/weights.bin",
    "quantiles.json", "scores.csv", "predictions.json", "coverage.json", "report.csv",
]


class TestConfigValidation:
    def test_round_trip(self):
        cfg = ExperimentConfig.from_dict(toy_config_dict())
        again = ExperimentConfig.from_dict(cfg.to_dict())
        assert again.seed == cfg.seed

    def test_unknown_field_rejected(self):
        d = toy_config_dict()
        d["extra_knob"] = 1
        with pytest.raises(ConfigError) as exc:
            ExperimentConfig.from_dict(d)
        assert exc.value.field == "extra_knob"

    def test_missing_field_rejected(self):
        d = toy_config_dict()
        del d["rho_max"]
        with pytest.raises(ConfigError) as exc:
            ExperimentConfig.from_dict(d)
        assert exc.value.field == "rho_max"

    def test_bad_delta(self):
        d = toy_config_dict()
        d["delta"] = 1.5
        with pytest.raises(ConfigError) as exc:
            ExperimentConfig.from_dict(d)
        assert exc.value.field == "delta"

    def test_bad_feedback(self):
        d = toy_config_dict()
        d["feedback"] = "sometimes"
        with pytest.raises(ConfigError):
            ExperimentConfig.from_dict(d)

    def test_horizon_before_order(self):
        d = toy_config_dict()
        d["horizon"] = 0
        with pytest.raises(ConfigError):
            ExperimentConfig.from_dict(d)

    def test_default_config_valid(self):
        for v in "abc":
            cfg = ExperimentConfig.from_dict(default_config_dict(v))
            assert cfg.build_system().n_y == 2

    def test_dimension_cross_checks(self):
        d = toy_config_dict()
        d["x0_set"] = {"center": [0.0, 0.0], "generators": []}
        with pytest.raises(ConfigError) as exc:
            ExperimentConfig.from_dict(d)
        assert exc.value.field == "x0_set"


class TestPipelineSmoke:
    def test_run_all_writes_artifacts(self, tmp_path):
        cfg_path = write_config(tmp_path, toy_config_dict())
        out = tmp_path / "out"
        rc = cli.main(["run-all", "--config", str(cfg_path), "--out", str(out)])
        assert rc == 0
        for name in ARTIFACTS:
            assert (out / name).exists(), name
        report = (out / "report.csv").read_text().splitlines()
        assert report[0] == "step,mc_width,model_width,tf_qhat_width,dd_width,coverage"
        assert len(report) == 5  # steps 1..4
        cov = json.loads((out / "coverage.json").read_text())
        assert cov["n_retained"] >= cfg_min_cal(cfg_path)
        for frac in cov["per_step"].values():
            assert 0.0 <= frac <= 1.0

    def test_rerun_byte_identical(self, tmp_path):
        cfg_path = write_config(tmp_path, toy_config_dict())
        out1, out2 = tmp_path / "o1", tmp_path / "o2"
        assert cli.main(["run-all", "--config", str(cfg_path), "--out", str(out1)]) == 0
        assert cli.main(["run-all", "--config", str(cfg_path), "--out", str(out2)]) == 0
        for name in ARTIFACTS:
            assert (out1 / name).read_bytes() == (out2 / name).read_bytes(), name
        m1 = sorted((out1 / "manifests").glob("*.json"))
        m2 = sorted((out2 / "manifests").glob("*.json"))
        for a, b in zip(m1, m2):
            assert a.read_bytes() == b.read_bytes()

    def test_stage_idempotent(self, tmp_path):
        cfg_path = write_config(tmp_path, toy_config_dict())
        out = tmp_path / "out"
        assert cli.main(["simulate", "--config", str(cfg_path), "--out", str(out)]) == 0
        first = (out / "train.jsonl").read_bytes()
        assert cli.main(["simulate", "--config", str(cfg_path), "--out", str(out)]) == 0
        assert (out / "train.jsonl").read_bytes() == first

    def test_seed_override_changes_data(self, tmp_path):
        cfg_path = write_config(tmp_path, toy_config_dict())
        out1, out2 = tmp_path / "o1", tmp_path / "o2"
        cli.main(["simulate", "--config", str(cfg_path), "--out", str(out1)])
        cli.main(["simulate", "--config", str(cfg_path), "--out", str(out2), "--seed", "999"])
        assert (out1 / "train.jsonl").read_bytes() != (out2 / "train.jsonl").read_bytes()

    def test_inflated_feedback_and_centers_context(self, tmp_path):
        # sequential per-step calibration with inflated feedback, point contexts
        d = toy_config_dict()
        d["context_init"] = "centers"
        cfg_path = write_config(tmp_path, d)
        out = tmp_path / "out"
        rc = cli.main(["run-all", "--config", str(cfg_path), "--out", str(out),
                       "--feedback", "inflated"])
        assert rc == 0
        pred = json.loads((out / "predictions.json").read_text())
        assert pred["feedback"] == "inflated"
        cov = json.loads((out / "coverage.json").read_text())
        for frac in cov["per_step"].values():
            assert 0.0 <= frac <= 1.0

    def test_cross_process_determinism(self, tmp_path):
        # hash randomization and interpreter state must not leak into artifacts
        import subprocess
        import sys

        cfg_path = write_config(tmp_path, toy_config_dict())
        outs = []
        for name in ("p1", "p2"):
            out = tmp_path / name
            res = subprocess.run(
                [sys.executable, "-m", "reachzono.cli", "run-all",
                 "--config", str(cfg_path), "--out", str(out)],
                capture_output=True, text=True,
            )
            assert res.returncode == 0, res.stderr
            outs.append(out)
        for artifact in ARTIFACTS:
            assert (outs[0] / artifact).read_bytes() == (outs[1] / artifact).read_bytes(), artifact
        for m in sorted((outs[0] / "manifests").glob("*.json")):
            assert m.read_bytes() == (outs[1] / "manifests" / m.name).read_bytes()

    def test_manifest_records_reproducibility_data(self, tmp_path):
        cfg_path = write_config(tmp_path, toy_config_dict())
        out = tmp_path / "out"
        assert cli.main(["simulate", "--config", str(cfg_path), "--out", str(out)]) == 0
        manifest = json.loads((out / "manifests" / "simulate.json").read_text())
        assert manifest["stage"] == "simulate"
        assert manifest["seed"] == toy_config_dict()["seed"]
        assert len(manifest["config_hash"]) == 64
        assert "train.jsonl" in manifest["outputs"]
        for digest in manifest["outputs"].values():
            assert len(digest) == 64


def cfg_min_cal(cfg_path):
    return json.loads(Path(cfg_path).read_text())["n_cal"]


class TestExitCodes:
    def test_missing_artifact_exit_2(self, tmp_path):
        cfg_path = write_config(tmp_path, toy_config_dict())
        rc = cli.main(["build-model", "--config", str(cfg_path), "--out", str(tmp_path / "empty")])
        assert rc == 2

    def test_missing_config_exit_2(self, tmp_path):
        rc = cli.main(["simulate", "--config", str(tmp_path / "nope.json"), "--out", str(tmp_path)])
        assert rc == 2

    def test_config_error_exit_3(self, tmp_path):
        d = toy_config_dict()
        d["rho_max"] = 0
        cfg_path = write_config(tmp_path, d)
        rc = cli.main(["simulate", "--config", str(cfg_path), "--out", str(tmp_path / "out")])
        assert rc == 3

    def test_artifact_config_mismatch_exit_4(self, tmp_path):
        # predict against a quantile table built for a shorter horizon
        cfg_path = write_config(tmp_path, toy_config_dict())
        out = tmp_path / "out"
        for stage in ["simulate", "fit-context", "init-weights", "calibrate"]:
            assert cli.main([stage, "--config", str(cfg_path), "--out", str(out)]) == 0
        d = toy_config_dict()
        d["horizon"] = 6  # beyond the calibrated steps
        d["feedback"] = "inflated"
        cfg2 = write_config(tmp_path, d, name="config2.json")
        rc = cli.main(["predict", "--config", str(cfg2), "--out", str(out)])
        assert rc == 4

    def test_numerical_failure_exit_4(self, tmp_path):
        # deterministic constant excitation collapses the regressor rank
        d = toy_config_dict()
        d["x0_set"] = {"center": [0.0], "generators": []}
        d["input_set"] = {"center": [1.0], "generators": []}
        d["w_box"] = {"center": [0.0], "generators": []}
        d["v_box"] = {"center": [0.0], "generators": []}
        d["eps_bound"] = {"center": [0.0], "generators": []}
        cfg_path = write_config(tmp_path, d)
        out = tmp_path / "out"
        assert cli.main(["simulate", "--config", str(cfg_path), "--out", str(out)]) == 0
        rc = cli.main(["build-model", "--config", str(cfg_path), "--out", str(out)])
        assert rc == 4


class TestUtilityCommands:
    def test_init_config(self, tmp_path):
        path = tmp_path / "cfg.json"
        assert cli.main(["init-config", "--out", str(path), "--c-variant", "b"]) == 0
        cfg = ExperimentConfig.from_dict(json.loads(path.read_text()))
        assert cfg.system["c_variant"] == "b"

    def test_c_variant_override(self, tmp_path):
        path = tmp_path / "cfg.json"
        cli.main(["init-config", "--out", str(path)])
        raw = json.loads(path.read_text())
        raw.update({"n_history": 5, "n_test": 5, "n_cal": 2, "n_cal_candidates": 5,
                    "n_label_runs": 0, "T": 30, "horizon": 6})
        path.write_text(json.dumps(raw))
        out = tmp_path / "out"
        assert cli.main(["simulate", "--config", str(path), "--out", str(out), "--c-variant", "c"]) == 0

    def test_forward_subcommand(self, tmp_path):
        cfg_path = write_config(tmp_path, toy_config_dict())
        out = tmp_path / "out"
        assert cli.main(["init-weights", "--config", str(cfg_path), "--out", str(out)]) == 0
        cfg = ExperimentConfig.from_dict(toy_config_dict())
        tok = cfg.tokenizer()
        rng = np.random.default_rng(0)
        prompts = rng.normal(0, 1, (3, tok.n_o * tok.block, tok.n_y + 1)).tolist()
        prompts_path = tmp_path / "prompts.json"
        prompts_path.write_text(json.dumps({"prompts": prompts}))
        out_path = tmp_path / "fwd.json"
        rc = cli.main(["forward", "--weights", str(out / "weights"),
                       "--prompts", str(prompts_path), "--out", str(out_path)])
        assert rc == 0
        outputs = json.loads(out_path.read_text())["outputs"]
        assert np.asarray(outputs).shape == (3, tok.block, tok.n_y)
