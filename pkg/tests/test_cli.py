import csv
import json
import os
import subprocess
import sys

import numpy as np
import pytest

from koopid.bounds import BOUNDS_HEADER
from koopid.cli import COST_HEADER, UPDATE_HEADER, main, snapshot_header
from koopid.koopman import DiscreteKoopman


def run(*argv):
    return main([str(a) for a in argv])


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


class TestTrain:
    def test_pendulum_example(self, tmp_path):
        out = tmp_path / "m"
        assert run("train", "--system", "pendulum", "--order", 2, "--samples", 5000, "--dt", 0.01, "--seed", 7, "--out", out) == 0
        model = DiscreteKoopman.load(out / "model.json")
        report = json.loads((out / "report.json").read_text())
        assert model.P == 5000 and model.dt == 0.01
        assert report["P"] == 5000
        assert len(report["e1_max"]) == 2
        assert max(report["residual_rms"][:2]) < 1e-2

    def test_same_seed_is_byte_identical(self, tmp_path):
        for d in ("a", "b"):
            assert run("train", "--samples", 300, "--seed", 7, "--out", tmp_path / d) == 0
        assert (tmp_path / "a" / "model.json").read_bytes() == (tmp_path / "b" / "model.json").read_bytes()

    def test_single_record_csv(self, tmp_path):
        path = tmp_path / "data.csv"
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(snapshot_header(2, 1, with_next_control=False))
            w.writerow([0.1, 0.0, 0.5, 0.1, 0.01])
        out = tmp_path / "m"
        assert run("train", "--system", "custom", "--snapshots", path, "--dt", 0.01, "--out", out) == 0
        model = DiscreteKoopman.load(out / "model.json")
        assert model.P == 1
        assert np.all(np.isfinite(model.K))

    def test_trajectory_csv(self, tmp_path):
        path = tmp_path / "traj.csv"
        t = np.arange(50) * 0.01
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "s1", "u1"])
            for ti in t:
                w.writerow([ti, np.exp(-ti), 0.0])
        assert run("train", "--system", "custom", "--snapshots", path, "--out", tmp_path / "m") == 0
        model = DiscreteKoopman.load(tmp_path / "m" / "model.json")
        assert model.dt == pytest.approx(0.01)
        assert model.K[0, 0] == pytest.approx(np.exp(-0.01), rel=1e-8)


class TestExitCodes:
    @pytest.mark.parametrize(
        "argv",
        [
            ("train", "--samples", 0),
            ("train", "--dt", -1),
            ("train", "--order", "x"),
            ("bounds", "--noise", "-0.1"),
            ("train", "--system", "custom"),
            ("online", "--system", "pendulum"),
            ("control", "--forgetting", 2),
        ],
    )
    def test_config_error(self, argv, tmp_path, capsys):
        assert run(*argv, "--out", tmp_path) == 2
        err = capsys.readouterr().err
        assert "configuration error" in err

    def test_error_names_key(self, tmp_path, capsys):
        run("train", "--samples", 0, "--out", tmp_path)
        assert "samples" in capsys.readouterr().err

    def test_unknown_config_key(self, tmp_path, capsys):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"sampels": 10}))
        assert run("train", "--config", cfg, "--out", tmp_path) == 2
        assert "sampels" in capsys.readouterr().err

    def test_numerical_failure(self, tmp_path, capsys):
        path = tmp_path / "data.csv"
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(snapshot_header(1, 1, with_next_control=False))
            w.writerow([0.1, 0.0, 0.2])
            w.writerow([0.2, 0.0, "inf"])
        assert run("train", "--system", "custom", "--snapshots", path, "--dt", 0.01, "--out", tmp_path / "m") == 3
        assert "numerical failure" in capsys.readouterr().err

    def test_weight_shape_is_config_error(self, tmp_path):
        assert run("control", "--weights-q", "1,1,1", "--count", 1, "--out", tmp_path) == 2

    def test_subprocess_exit_and_threads(self, tmp_path):
        env = {**os.environ, "KOOPID_THREADS": "1"}
        bad = subprocess.run([sys.executable, "-m", "koopid", "train", "--samples", "-3", "--out", str(tmp_path)],
                             env=env, capture_output=True, text=True)
        assert bad.returncode == 2
        probe = subprocess.run([sys.executable, "-c", "import koopid, os; print(os.environ['OMP_NUM_THREADS'])"],
                               env={k: v for k, v in env.items() if k != "OMP_NUM_THREADS"}, capture_output=True, text=True)
        assert probe.stdout.strip() == "1"


class TestConfig:
    def test_json_defaults_and_override(self, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"samples": 200, "seed": 3, "order": 1}))
        assert run("train", "--config", cfg, "--seed", 4, "--out", tmp_path / "m") == 0
        report = json.loads((tmp_path / "m" / "report.json").read_text())
        assert report["P"] == 200 and report["order"] == 1
        assert run("train", "--samples", 200, "--seed", 4, "--order", 1, "--out", tmp_path / "n") == 0
        assert (tmp_path / "m" / "model.json").read_bytes() == (tmp_path / "n" / "model.json").read_bytes()


class TestBounds:
    def test_pendulum_orders(self, tmp_path):
        out = tmp_path / "b"
        assert run("bounds", "--order", "1,2,3", "--samples", 2000, "--test-count", 50, "--horizon", 1, "--out", out) == 0
        for n in (1, 2, 3):
            r = rows(out / f"bounds_n{n}.csv")
            assert r[0] == BOUNDS_HEADER
            # 101 time samples by two states
            assert len(r) == 1 + 101 * 2

    def test_noise_mode(self, tmp_path):
        out = tmp_path / "b"
        sig = f"{np.pi / 180},{15 * np.pi / 180}"
        assert run("bounds", "--noise", sig, "--window", 15, "--samples", 40, "--test-count", 20, "--out", out) == 0
        files = sorted(p.name for p in out.glob("bounds_n2_sigma*.csv"))
        assert len(files) == 2

    def test_constant_system_is_zero(self, tmp_path):
        out = tmp_path / "b"
        assert run("bounds", "--system", "constant", "--order", 0, "--samples", 100, "--test-count", 10, "--out", out) == 0
        data = np.array([[float(v) for v in r[2:]] for r in rows(out / "bounds_n0.csv")[1:]])
        # ≡ 0 up to the rounding of the pseudoinverse
        assert np.max(np.abs(data)) <= 1e-12


class TestControl:
    def test_zero_duration(self, tmp_path):
        out = tmp_path / "c"
        assert run("control", "--duration", 0, "--count", 3, "--out", out) == 0
        for n in (1, 2):
            assert len(rows(out / f"trajectory_n{n}.csv")) == 1
        costs = rows(out / "costs.csv")
        assert costs[0] == COST_HEADER
        assert all(float(r[3]) == 0.0 for r in costs[1:])

    def test_pendulum_batch(self, tmp_path):
        out = tmp_path / "c"
        assert run("control", "--count", 4, "--duration", 2, "--out", out) == 0
        summary = json.loads((out / "summary.json").read_text())
        assert set(summary) == {"n1", "n2"}
        assert summary["n2"]["controller"] == "koopman"
        assert len(rows(out / "costs.csv")) == 1 + 8

    def test_deterministic(self, tmp_path):
        for d in ("a", "b"):
            assert run("control", "--count", 2, "--duration", 1, "--out", tmp_path / d) == 0
        assert (tmp_path / "a" / "costs.csv").read_bytes() == (tmp_path / "b" / "costs.csv").read_bytes()


class TestOnline:
    def test_infinite_cadence_matches_control(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        assert run("control", "--system", "fish", "--duration", 10, "--disturbance", 0.1, "--out", a) == 0
        assert run("online", "--system", "fish", "--duration", 10, "--disturbance", 0.1, "--update-period", "inf", "--out", b) == 0
        assert (a / "trajectory_koopman.csv").read_bytes() == (b / "trajectory_koopman_online.csv").read_bytes()
        assert rows(b / "updates.csv") == [UPDATE_HEADER]

    def test_zero_disturbance_close_to_frozen(self, tmp_path):
        out = tmp_path / "o"
        assert run("online", "--system", "fish", "--duration", 60, "--disturbance", "0,0", "--out", out) == 0
        s = json.loads((out / "summary.json").read_text())
        frozen, online = s["koopman_frozen"]["cost"], s["koopman_online"]["cost"]
        assert abs(online - frozen) / frozen < 0.10
        log = rows(out / "updates.csv")
        assert log[0] == UPDATE_HEADER and len(log) > 1
