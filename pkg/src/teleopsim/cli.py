"""Command-line entry point.

Exit codes: 0 ok, 1 runtime failure, 2 bad input.  Every error path prints a
single machine-parsable line to stderr: ``error:<code>: <detail>``.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from .calibration import (
    CalibrationError,
    PointPairSet,
    register_frames,
    save_calibration,
    verify_calibration,
)
from .config import BadConfig, load_config
from .tasks import (
    ScriptViolation,
    UnknownTask,
    gen_task,
    load_script,
    replay_script,
    script_to_json,
)

BAD_INPUT_ERRORS = (
    BadConfig,
    CalibrationError,
    UnknownTask,
    ScriptViolation,
    FileNotFoundError,
)


def _fail(code: str, detail: str, exit_code: int):
    click.echo(f"error:{code}: {detail}", err=True)
    sys.exit(exit_code)


def _run(fn):
    try:
        fn()
    except BAD_INPUT_ERRORS as exc:
        code = getattr(exc, "code", "bad_input")
        if isinstance(exc, FileNotFoundError):
            code, detail = "bad_config", f"file not found: {exc.filename}"
        else:
            detail = str(exc)
        _fail(code, detail, 2)
    except OSError as exc:
        _fail(getattr(exc, "code", "io"), str(exc), 1)


@click.group()
def main():
    """Gesture-gated teleoperation service for a simulated camera-holder arm."""


@main.command()
@click.option("--listen", default="0.0.0.0:7450", show_default=True, help="TCP protocol address")
@click.option("--http", "http_addr", default="127.0.0.1:7451", show_default=True,
              help="HTTP/WebSocket address")
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--calibration", "calibration_path", type=click.Path(), default=None)
@click.option("--record", "record_path", type=click.Path(), default=None)
def serve(listen, http_addr, config_path, calibration_path, record_path):
    """Run the teleoperation service (TCP protocol + HTTP bridge)."""
    from .service import BindFailure, run_server

    def body():
        cfg = load_config(config_path)
        try:
            run_server(cfg, listen, http_addr, calibration_path, record_path)
        except BindFailure as exc:
            _fail("bind_failure", str(exc), 1)

    _run(body)


@main.command("gen-task")
@click.option("--task", "task_id", type=int, required=True, help="task number: 1, 2 or 3")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", "out_path", type=click.Path(), required=True)
def gen_task_cmd(task_id, seed, out_path):
    """Write a deterministic task script."""

    def body():
        script = gen_task(task_id, seed)
        Path(out_path).write_text(script_to_json(script))
        click.echo(f"wrote task {task_id} script (seed {seed}) to {out_path}")

    _run(body)


@main.command()
@click.argument("script_path", type=click.Path())
@click.option("--report", "report_path", type=click.Path(), default=None)
@click.option("--csv", "csv_path", type=click.Path(), default=None)
@click.option("--record", "record_path", type=click.Path(), default=None)
@click.option("--measure-latency", is_flag=True,
              help="measure wall-clock pipeline latency (report no longer byte-reproducible)")
def replay(script_path, report_path, csv_path, record_path, measure_latency):
    """Replay a task script in simulated time and write the task report."""

    def body():
        script = load_script(script_path)
        result = replay_script(script, measure_latency=measure_latency)
        report_json = result.report_json()
        if report_path:
            Path(report_path).write_text(report_json)
        if csv_path:
            Path(csv_path).write_text(result.csv_text)
        if record_path:
            Path(record_path).write_text("\n".join(result.recording_lines) + "\n")
        click.echo(report_json, nl=False)

    _run(body)


@main.command()
@click.option("--pairs", "pairs_path", type=click.Path(), required=True)
@click.option("--out", "out_path", type=click.Path(), required=True)
def calibrate(pairs_path, out_path):
    """Estimate the operator->robot transform from a point-pair file."""

    def body():
        if not Path(pairs_path).exists():
            raise BadConfig(f"pairs file not found: {pairs_path}")
        pairs = PointPairSet.from_file(pairs_path)
        result = register_frames(pairs)
        save_calibration(out_path, result)
        report = verify_calibration(result.transform, pairs.operator_m, pairs.robot_mm)
        click.echo(
            json.dumps(
                {
                    "rms_mm": result.rms_mm,
                    "max_mm": result.max_mm,
                    "n_pairs": result.n_pairs,
                    "mean_marker_error_mm": report.mean_mm,
                },
                sort_keys=True,
            )
        )

    _run(body)


@main.command()
@click.option("--csv", "csv_path", type=click.Path(), required=True)
@click.option("--out", "out_path", type=click.Path(), required=True)
def plot(csv_path, out_path):
    """Render a hand-vs-tip trajectory chart (SVG) from a replay CSV."""

    def body():
        if not Path(csv_path).exists():
            raise BadConfig(f"csv file not found: {csv_path}")
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
        import numpy as np

        data = np.genfromtxt(csv_path, delimiter=",", names=True)
        if data.size == 0:
            raise BadConfig("csv has no rows to plot")
        fig = plt.figure(figsize=(8, 6))
        ax = fig.add_subplot(projection="3d")
        ax.plot(data["hand_x"], data["hand_y"], data["hand_z"], "r-", label="hand (commanded)")
        ax.plot(data["tip_x"], data["tip_y"], data["tip_z"], "b-", label="camera tip")
        ax.set_xlabel("x (mm)")
        ax.set_ylabel("y (mm)")
        ax.set_zlabel("z (mm)")
        ax.legend()
        fig.savefig(out_path, format="svg")
        click.echo(f"wrote {out_path}")

    _run(body)


if __name__ == "__main__":
    main()
