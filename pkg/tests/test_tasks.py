import json

import numpy as np
import pytest
from click.testing import CliRunner

from teleopsim.calibration import apply_transform, transform_from_dict
from teleopsim.cli import main
from teleopsim.tasks import (
    ScriptViolation,
    UnknownTask,
    gen_task,
    replay_script,
    script_to_json,
    validate_script,
)


class TestGenTask:
    def test_deterministic_bytes(self):
        for task in (1, 2, 3):
            assert script_to_json(gen_task(task, 7)) == script_to_json(gen_task(task, 7))

    def test_seeds_differ(self):
        assert script_to_json(gen_task(1, 1)) != script_to_json(gen_task(1, 2))

    def test_unknown_task(self):
        with pytest.raises(UnknownTask):
            gen_task(4, 0)

    def test_task1_targets_planar(self):
        script = gen_task(1, 3)
        T = transform_from_dict(script["calibration"])
        plane_z = script["scene"]["plane_z_mm"]
        zs = []
        for ev in script["events"]:
            if ev["msg"]["type"] == "wrist":
                m = ev["msg"]
                p = apply_transform(T, np.array([m["x_m"], m["y_m"], m["z_m"]]) * 1000.0)
                zs.append(p[2])
        assert zs, "task 1 script has no samples"
        np.testing.assert_allclose(zs, plane_z, atol=1e-6)

    def test_task2_insertion_totals_30mm(self):
        script = gen_task(2, 5)
        increments = [ev for ev in script["events"] if ev["msg"]["type"] == "insert"]
        assert all(ev["msg"]["direction"] == "in" for ev in increments)
        # default increment is 1 mm per step
        assert len(increments) * 1.0 == pytest.approx(30.0)

    def test_scripts_pass_static_validation(self):
        for task in (1, 2, 3):
            validate_script(gen_task(task, 0))


class TestReplay:
    def test_empty_script_zero_samples(self):
        result = replay_script({"task_id": 1, "events": []})
        assert result.report["counts"]["wrist_samples"] == 0
        assert result.report["mean_error_mm"] is None

    def test_ungated_samples_rejected(self):
        script = {
            "task_id": 1,
            "events": [
                {"t_ms": 0, "client": "op", "msg": {"type": "hello", "client_id": "op"}},
                {
                    "t_ms": 10,
                    "client": "op",
                    "msg": {
                        "type": "wrist",
                        "seq": 1,
                        "t_client_ms": 10,
                        "x_m": 0.1,
                        "y_m": 0.0,
                        "z_m": 0.0,
                    },
                },
            ],
        }
        with pytest.raises(ScriptViolation):
            replay_script(script)

    def test_non_monotone_seq_rejected(self):
        events = [
            {"t_ms": 0, "client": "op", "msg": {"type": "hello", "client_id": "op"}},
            {"t_ms": 5, "client": "op", "msg": {"type": "pinch_start", "t_client_ms": 5}},
        ]
        for k, seq in enumerate((3, 3)):
            events.append(
                {
                    "t_ms": 10 + k,
                    "client": "op",
                    "msg": {
                        "type": "wrist",
                        "seq": seq,
                        "t_client_ms": 10 + k,
                        "x_m": 0.0,
                        "y_m": 0.0,
                        "z_m": 0.0,
                    },
                }
            )
        events.append(
            {"t_ms": 20, "client": "op", "msg": {"type": "pinch_end", "t_client_ms": 20, "last_seq": 3}}
        )
        with pytest.raises(ScriptViolation):
            replay_script({"task_id": 1, "events": events})

    def test_replay_report_deterministic(self):
        script = gen_task(3, 11)
        a = replay_script(script)
        b = replay_script(script)
        assert a.report_json() == b.report_json()
        assert a.csv_text == b.csv_text

    def test_every_move_validated(self):
        script = gen_task(1, 0)
        result = replay_script(script)
        n_pinches = sum(1 for ev in script["events"] if ev["msg"]["type"] == "pinch_end")
        assert result.report["counts"]["moves_committed"] == n_pinches
        assert result.report["counts"]["moves_rejected"] == 0


class TestCli:
    def test_gen_replay_round_trip(self, tmp_path):
        runner = CliRunner()
        script_path = tmp_path / "task1.json"
        report_path = tmp_path / "report.json"
        csv_path = tmp_path / "traj.csv"
        res = runner.invoke(
            main, ["gen-task", "--task", "1", "--seed", "4", "--out", str(script_path)]
        )
        assert res.exit_code == 0, res.output
        res = runner.invoke(
            main,
            ["replay", str(script_path), "--report", str(report_path), "--csv", str(csv_path)],
        )
        assert res.exit_code == 0, res.output
        report = json.loads(report_path.read_text())
        assert report["report_version"] == 1
        assert report["mean_error_mm"] < 0.7
        assert csv_path.read_text().startswith("t_ms,hand_x,hand_y,hand_z,tip_x,tip_y,tip_z")

    def test_replay_byte_identical_reports(self, tmp_path):
        runner = CliRunner()
        script_path = tmp_path / "task1.json"
        runner.invoke(main, ["gen-task", "--task", "1", "--seed", "9", "--out", str(script_path)])
        r1 = tmp_path / "r1.json"
        r2 = tmp_path / "r2.json"
        assert runner.invoke(main, ["replay", str(script_path), "--report", str(r1)]).exit_code == 0
        assert runner.invoke(main, ["replay", str(script_path), "--report", str(r2)]).exit_code == 0
        assert r1.read_bytes() == r2.read_bytes()

    def test_unknown_task_exit_2(self, tmp_path):
        runner = CliRunner()
        res = runner.invoke(main, ["gen-task", "--task", "9", "--out", str(tmp_path / "x.json")])
        assert res.exit_code == 2
        # single machine-parsable line on stderr
        assert res.stderr.startswith("error:unknown_task:")
        assert res.stderr.count("\n") == 1

    def test_calibrate_noiseless_pairs(self, tmp_path, rng):
        from oracles import random_rigid_transform

        R, t = random_rigid_transform(rng)
        points = rng.uniform(-0.5, 0.5, size=(5, 3))
        pairs = {
            "pairs": [
                {
                    "operator_m": [float(v) for v in p],
                    "robot_mm": [float(v) for v in (p * 1000.0 @ R.T + t)],
                }
                for p in points
            ]
        }
        pairs_path = tmp_path / "pairs.json"
        pairs_path.write_text(json.dumps(pairs))
        out_path = tmp_path / "calibration.json"
        runner = CliRunner()
        res = runner.invoke(main, ["calibrate", "--pairs", str(pairs_path), "--out", str(out_path)])
        assert res.exit_code == 0, res.output
        summary = json.loads(res.output)
        assert summary["rms_mm"] < 1e-9
        saved = json.loads(out_path.read_text())
        assert "rotation_wxyz" in saved and "residual" in saved

    def test_calibrate_two_pairs_exit_2(self, tmp_path):
        pairs_path = tmp_path / "pairs.json"
        pairs_path.write_text(
            json.dumps(
                {
                    "pairs": [
                        {"operator_m": [0, 0, 0], "robot_mm": [0, 0, 0]},
                        {"operator_m": [1, 0, 0], "robot_mm": [1000, 0, 0]},
                    ]
                }
            )
        )
        runner = CliRunner()
        res = runner.invoke(
            main, ["calibrate", "--pairs", str(pairs_path), "--out", str(tmp_path / "c.json")]
        )
        assert res.exit_code == 2

    def test_replay_missing_script_exit_2(self, tmp_path):
        runner = CliRunner()
        res = runner.invoke(main, ["replay", str(tmp_path / "missing.json")])
        assert res.exit_code == 2

    def test_plot_emits_svg(self, tmp_path):
        runner = CliRunner()
        script_path = tmp_path / "t.json"
        csv_path = tmp_path / "t.csv"
        svg_path = tmp_path / "t.svg"
        runner.invoke(main, ["gen-task", "--task", "3", "--seed", "2", "--out", str(script_path)])
        runner.invoke(main, ["replay", str(script_path), "--csv", str(csv_path)])
        res = runner.invoke(main, ["plot", "--csv", str(csv_path), "--out", str(svg_path)])
        assert res.exit_code == 0, res.output
        assert svg_path.read_text().lstrip().startswith("<?xml")
