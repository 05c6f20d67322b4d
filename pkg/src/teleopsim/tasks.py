"""Task fixtures and replay: the three-task evaluation pipeline.

Task 1 traces geometric figures (square, circle, triangle) on a horizontal
plane; task 2 touches three floating point targets, then docks on the trocar
and inserts the camera 30 mm; task 3 follows a smooth 3D curve.  Scripts are
deterministic per (task, seed) and replay in simulated time: the session and
simulator run tick by tick with no wall-clock dependency, so reports are
byte-identical across runs.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import protocol
from .calibration import RigidTransform, apply_transform, transform_from_dict, transform_to_dict
from .config import AppConfig, BadConfig, validate_config
from .kinematics import forward_kinematics
from .metrics import latency_stats, resample_series, trajectory_deviation
from .protocol import MoveSummary, Validate, decode, encode
from .quat import from_axis_angle
from .robot_sim import RobotSim
from .session import (
    ClientJoined,
    ClientMessage,
    Send,
    Session,
    SessionTap,
    Tick,
)

CLIENT = "op"
SAMPLE_RATE_HZ = 60.0
DRAG_SPEED_MM_S = 40.0

REPORT_VERSION = 1


class UnknownTask(Exception):
    code = "unknown_task"


class ScriptViolation(Exception):
    code = "script_violation"


# fixed operator->robot calibration baked into generated scripts: a nontrivial
# rotation about z plus an offset, so replays exercise the transform path
def _script_calibration() -> RigidTransform:
    return RigidTransform(
        from_axis_angle([0.0, 0.0, 1.0], math.radians(30.0)),
        np.array([150.0, -80.0, 25.0]),
    )


def _sample_polyline(vertices: list[np.ndarray], speed_mm_s: float, rate_hz: float):
    """Positions along a polyline at constant speed, one per sample period."""
    pts = [np.asarray(v, dtype=float) for v in vertices]
    seg_len = [float(np.linalg.norm(b - a)) for a, b in zip(pts[:-1], pts[1:])]
    total = sum(seg_len)
    if total == 0.0:
        return [pts[0]]
    n = max(2, int(math.floor(total / speed_mm_s * rate_hz)) + 1)
    out = []
    cum = np.concatenate([[0.0], np.cumsum(seg_len)])
    for k in range(n):
        s = min(k / (n - 1) * total, total)
        i = int(np.searchsorted(cum, s, side="right") - 1)
        i = min(i, len(seg_len) - 1)
        frac = 0.0 if seg_len[i] == 0 else (s - cum[i]) / seg_len[i]
        out.append(pts[i] + frac * (pts[i + 1] - pts[i]))
    return out


def _circle_points(center: np.ndarray, radius: float, n: int = 72):
    pts = []
    for k in range(n + 1):
        a = 2.0 * math.pi * k / n
        pts.append(center + np.array([radius * math.cos(a), radius * math.sin(a), 0.0]))
    return pts


@dataclass
class _ScriptBuilder:
    transform: RigidTransform
    scale: float = 1.0
    events: list = field(default_factory=list)
    seq: int = 0
    t_ms: float = 0.0

    def _emit(self, msg: dict, dt_ms: float = 0.0):
        self.t_ms += dt_ms
        self.events.append({"t_ms": int(round(self.t_ms)), "client": CLIENT, "msg": msg})

    def hello(self):
        self._emit({"type": "hello", "client_id": CLIENT, "role": "operator"})

    def config(self, **kwargs):
        self._emit({"type": "config_set", **kwargs}, dt_ms=20)

    def pause(self, dt_ms: float):
        self.t_ms += dt_ms

    def drag(self, tip_path_mm: list[np.ndarray]):
        """One pinch window tracing commanded tip positions.

        Operator samples are the calibration preimages of the desired tip
        path, compensated for the motion scale relative to the path start.
        """
        T_inv = self.transform.inverse()
        p0 = tip_path_mm[0]
        self._emit({"type": "pinch_start", "t_client_ms": int(round(self.t_ms))}, dt_ms=50)
        period = 1000.0 / SAMPLE_RATE_HZ
        for p in tip_path_mm:
            operator_mm = apply_transform(T_inv, p0 + (np.asarray(p) - p0) / self.scale)
            s = operator_mm / 1000.0
            self.seq += 1
            self._emit(
                {
                    "type": "wrist",
                    "seq": self.seq,
                    "t_client_ms": int(round(self.t_ms)),
                    "x_m": float(s[0]),
                    "y_m": float(s[1]),
                    "z_m": float(s[2]),
                },
                dt_ms=period,
            )
        self._emit(
            {"type": "pinch_end", "t_client_ms": int(round(self.t_ms)), "last_seq": self.seq},
            dt_ms=30,
        )
        self.pause(250)  # room for validation round trip and settling

    def approach(self, trocar_mm: np.ndarray):
        self._emit({"type": "approach", "trocar_mm": [float(v) for v in trocar_mm]}, dt_ms=50)

    def insert(self, n: int, direction: str = "in", spacing_ms: float = 600.0):
        for _ in range(n):
            self._emit({"type": "insert", "direction": direction}, dt_ms=spacing_ms)


def gen_task(task_id: int, seed: int) -> dict:
    """Deterministic task script; identical bytes for identical (task, seed)."""
    if task_id not in (1, 2, 3):
        raise UnknownTask(f"task must be 1, 2 or 3, got {task_id}")
    rng = np.random.default_rng(seed)
    cfg = AppConfig()
    arm = cfg.arm_model()
    _, tip = forward_kinematics(arm, cfg.start_q())
    home = tip.position
    T = _script_calibration()

    scene: dict = {}
    config: dict = {}
    b = _ScriptBuilder(transform=T)
    b.hello()
    b.pause(100)

    if task_id == 1:
        plane_z = float(home[2])
        center = home + np.concatenate([rng.uniform(-10.0, 10.0, 2), [0.0]])
        center[2] = plane_z
        scene["plane_z_mm"] = plane_z
        half = 50.0
        square = [
            center + np.array([-half, -half, 0.0]),
            center + np.array([half, -half, 0.0]),
            center + np.array([half, half, 0.0]),
            center + np.array([-half, half, 0.0]),
            center + np.array([-half, -half, 0.0]),
        ]
        b.drag(_sample_polyline([home] + square, DRAG_SPEED_MM_S, SAMPLE_RATE_HZ))
        circle = _circle_points(center, 50.0)
        b.drag(_sample_polyline([square[-1]] + circle, DRAG_SPEED_MM_S, SAMPLE_RATE_HZ))
        tri_r = 57.735  # equilateral triangle, side 100
        triangle = [
            center + np.array([tri_r * math.cos(a), tri_r * math.sin(a), 0.0])
            for a in (math.pi / 2, math.pi / 2 + 2 * math.pi / 3, math.pi / 2 + 4 * math.pi / 3)
        ]
        triangle.append(triangle[0])
        b.drag(_sample_polyline([circle[-1]] + triangle, DRAG_SPEED_MM_S, SAMPLE_RATE_HZ))
        scene["figures"] = {
            "square_mm": [[float(v) for v in p] for p in square],
            "circle_center_mm": [float(v) for v in center],
            "circle_radius_mm": 50.0,
            "triangle_mm": [[float(v) for v in p] for p in triangle],
        }

    elif task_id == 2:
        targets = []
        cursor = home.copy()
        for k in range(3):
            offset = rng.uniform([-60.0, -60.0, -30.0], [60.0, 60.0, 30.0])
            target = home + offset
            targets.append(target)
            b.drag(_sample_polyline([cursor, target], DRAG_SPEED_MM_S, SAMPLE_RATE_HZ))
            cursor = target
        trocar = home + np.array(
            [rng.uniform(-20.0, 20.0), rng.uniform(-20.0, 20.0), -60.0]
        )
        scene["targets_mm"] = [[float(v) for v in t] for t in targets]
        scene["trocar_mm"] = [float(v) for v in trocar]
        scene["torso_pose"] = {
            "position_mm": [float(trocar[0]), float(trocar[1]), float(trocar[2] - 40.0)],
            "rotation_wxyz": [1.0, 0.0, 0.0, 0.0],
        }
        b.pause(200)
        b.approach(trocar)
        # docking takes dist/spacing ticks; leave generous room before inserting
        b.pause(3000)
        b.insert(30)
        b.pause(1000)

    else:  # task 3
        scale = 0.5
        config["session"] = {"scale": scale}
        b.scale = scale
        b.config(scale=scale)
        amp = np.array([50.0, 40.0, 25.0])
        omega = np.array([0.9, 0.7, 1.1]) + rng.uniform(-0.05, 0.05, 3)
        phase = rng.uniform(0.0, 2.0 * math.pi, 3)
        duration_s = 18.0
        n = int(duration_s * SAMPLE_RATE_HZ)
        ts = np.arange(n) / SAMPLE_RATE_HZ
        curve = home[None, :] + np.column_stack(
            [amp[i] * (np.sin(omega[i] * ts + phase[i]) - np.sin(phase[i])) for i in range(3)]
        )
        scene["curve_amp_mm"] = [float(v) for v in amp]
        b.drag([curve[i] for i in range(n)])

    return {
        "task_id": task_id,
        "seed": seed,
        "calibration": transform_to_dict(T),
        "config": config,
        "scene": scene,
        "events": b.events,
    }


def script_to_json(script: dict) -> str:
    return json.dumps(script, sort_keys=True, separators=(",", ": "), indent=1) + "\n"


def load_script(path: str | Path) -> dict:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ScriptViolation(f"script is not valid JSON: {exc}") from None
    if not isinstance(data, dict) or "events" not in data:
        raise ScriptViolation("script must be an object with an 'events' list")
    return data


def validate_script(script: dict) -> list:
    """Static protocol check; returns (t_us, client, raw_line) rows.

    Raises ScriptViolation when the event stream breaks gating: wrist samples
    outside a pinch window, non-monotone sequence numbers, missing hello, or
    undecodable messages.  The raw frame bytes are returned so replay can
    decode at dispatch time, the same work a live server performs.
    """
    rows = []
    hello_seen: set[str] = set()
    pinched: Optional[str] = None
    last_seq = 0
    last_t = -1
    for i, ev in enumerate(script.get("events", [])):
        try:
            t_ms = int(ev["t_ms"])
            client = str(ev["client"])
            line = json.dumps(ev["msg"], sort_keys=True).encode() + b"\n"
            msg = decode(line)
        except (KeyError, TypeError, ValueError, protocol.ProtocolError) as exc:
            raise ScriptViolation(f"event {i}: {exc}") from None
        if t_ms * 1000 < last_t:
            raise ScriptViolation(f"event {i}: timestamps must be non-decreasing")
        last_t = t_ms * 1000
        if isinstance(msg, protocol.Hello):
            hello_seen.add(client)
        elif client not in hello_seen:
            raise ScriptViolation(f"event {i}: client {client!r} speaks before hello")
        if isinstance(msg, protocol.PinchStart):
            if pinched is not None:
                raise ScriptViolation(f"event {i}: nested pinch")
            pinched = client
        elif isinstance(msg, protocol.WristSample):
            if pinched != client:
                raise ScriptViolation(f"event {i}: wrist sample outside pinch window")
            if msg.seq <= last_seq:
                raise ScriptViolation(f"event {i}: non-monotone wrist seq")
            last_seq = msg.seq
        elif isinstance(msg, protocol.PinchEnd):
            if pinched != client:
                raise ScriptViolation(f"event {i}: pinch_end without pinch_start")
            pinched = None
        rows.append((t_ms * 1000, client, line))
    if pinched is not None:
        raise ScriptViolation("script ends inside a pinch window")
    return rows


class _ReplayTap(SessionTap):
    def __init__(self):
        self.hand_t_us: list[int] = []
        self.hand_mm: list[np.ndarray] = []
        self.tick_t_us: list[int] = []
        self.tip_mm: list[np.ndarray] = []
        self.modes: list[str] = []
        self.rcm_mm: list[float] = []
        self.command_count = 0
        self.latency_pairs: list[tuple[int, int]] = []
        self._recv_ns: Optional[int] = None

    def on_hand_target(self, t_us, target_mm):
        self.hand_t_us.append(t_us)
        self.hand_mm.append(target_mm)

    def on_command(self, provenance, q_target, t_us):
        self.command_count += 1
        if provenance == "track" and self._recv_ns is not None:
            self.latency_pairs.append((self._recv_ns, time.monotonic_ns()))
            self._recv_ns = None

    def on_tick(self, t_us, tick, q, tip_mm, mode, rcm):
        self.tick_t_us.append(t_us)
        self.tip_mm.append(tip_mm)
        self.modes.append(mode)
        if rcm is not None:
            self.rcm_mm.append(rcm)


@dataclass
class ReplayResult:
    report: dict
    csv_text: str
    recording_lines: list[str]

    def report_json(self) -> str:
        return json.dumps(self.report, sort_keys=True, separators=(",", ": "), indent=1) + "\n"


def _apply_script_config(cfg: AppConfig, overrides: dict) -> None:
    session = overrides.get("session", {})
    for key, value in session.items():
        if not hasattr(cfg.session, key):
            raise BadConfig(f"unknown session config key {key!r}")
        setattr(cfg.session, key, value)
    validate_config(cfg)


def replay_script(script: dict, measure_latency: bool = False) -> ReplayResult:
    """Run a task script through the full session+sim loop in simulated time."""
    rows = validate_script(script)
    cfg = AppConfig()
    _apply_script_config(cfg, script.get("config", {}))
    arm = cfg.arm_model()
    calibration = (
        transform_from_dict(script["calibration"])
        if "calibration" in script
        else RigidTransform.identity()
    )
    sim = RobotSim(arm, cfg.sim, cfg.start_q())
    tap = _ReplayTap()
    session = Session(arm, sim, calibration, cfg.session, tap=tap)

    tick_us = int(round(1_000_000 / cfg.sim.tick_rate_hz))
    recording: list[str] = []
    now_us = 0

    def record(direction: str, payload: dict, client: Optional[str] = None):
        entry = {"server_ts_us": now_us, "dir": direction, "msg": payload}
        if client is not None:
            entry["client"] = client
        recording.append(json.dumps(entry, sort_keys=True, separators=(",", ":")))

    def dispatch(outputs):
        for out in outputs:
            if isinstance(out, Send):
                record("tx", json.loads(encode(out.msg).decode()), out.client_id)
                if isinstance(out.msg, MoveSummary):
                    pending_validates.append(
                        ClientMessage(
                            out.client_id,
                            Validate(move_id=out.msg.move_id, accepted=True),
                            t_us=now_us,
                        )
                    )
            else:
                record("state", json.loads(encode(out.msg).decode()))

    pending_validates: list[ClientMessage] = []
    next_tick_us = tick_us
    joined: set[str] = set()

    def flush_validates():
        while pending_validates:
            ev = pending_validates.pop(0)
            record("rx", json.loads(encode(ev.msg).decode()), ev.client_id)
            dispatch(session.handle_event(ev))

    for t_us, client, line in rows:
        while next_tick_us <= t_us:
            now_us = next_tick_us
            dispatch(session.handle_event(Tick(t_us=now_us)))
            next_tick_us += tick_us
        now_us = t_us
        flush_validates()
        recv_ns = time.monotonic_ns() if measure_latency else None
        msg = decode(line)
        record("rx", json.loads(line.decode()), client)
        if isinstance(msg, protocol.Hello):
            if client not in joined:
                joined.add(client)
                dispatch(session.handle_event(ClientJoined(client, t_us=t_us)))
            continue
        if measure_latency and isinstance(msg, protocol.WristSample):
            tap._recv_ns = recv_ns
        dispatch(session.handle_event(ClientMessage(client, msg, t_us=t_us)))

    # drain: finish validations, approach/insert queues, let the sim settle
    for _ in range(20000):
        flush_validates()
        if not session.pending_motion() and sim.at_target() and not pending_validates:
            break
        now_us = next_tick_us
        dispatch(session.handle_event(Tick(t_us=now_us)))
        next_tick_us += tick_us

    return _build_result(script, cfg, tap, session, recording, measure_latency, now_us)


def _build_result(script, cfg, tap, session, recording, measure_latency, end_us) -> ReplayResult:
    task_id = script.get("task_id", 0)
    hand_t = np.asarray(tap.hand_t_us, dtype=np.int64)
    hand = np.asarray(tap.hand_mm, dtype=float) if tap.hand_mm else np.zeros((0, 3))
    tip_t = np.asarray(tap.tick_t_us, dtype=np.int64)
    tip = np.asarray(tap.tip_mm, dtype=float) if tap.tip_mm else np.zeros((0, 3))

    csv_lines = ["t_ms,hand_x,hand_y,hand_z,tip_x,tip_y,tip_z"]
    trajectory_rms = None
    mean_err = max_err = None
    if len(hand_t) >= 2 and len(tip_t) >= 2:
        rms, aligned = trajectory_deviation(hand_t / 1000.0, hand, tip_t / 1000.0, tip)
        trajectory_rms = rms
        for i in range(len(aligned.t_ms)):
            row = [aligned.t_ms[i]] + list(aligned.hand_mm[i]) + list(aligned.tip_mm[i])
            csv_lines.append(",".join(repr(float(v)) for v in row))
        # per-sample positional error: commanded target vs the tip one tick later
        tick_ms = 1000.0 / cfg.sim.tick_rate_hz
        tip_at = resample_series(hand_t / 1000.0 + tick_ms, tip_t / 1000.0, tip)
        errors = np.linalg.norm(hand - tip_at, axis=1)
        mean_err = float(np.mean(errors))
        max_err = float(np.max(errors))

    targets_reached = None
    scene = script.get("scene", {})
    if scene.get("targets_mm") and len(tip) > 0:
        targets_reached = []
        for target in scene["targets_mm"]:
            d = np.linalg.norm(tip - np.asarray(target, dtype=float), axis=1)
            targets_reached.append(float(d.min()))

    max_rcm = float(np.max(tap.rcm_mm)) if tap.rcm_mm else None
    insertion_depth = float(session.trocar.depth) if session.trocar is not None else None

    if measure_latency and tap.latency_pairs:
        recv = np.array([p[0] for p in tap.latency_pairs], dtype=np.int64)
        cmd = np.array([p[1] for p in tap.latency_pairs], dtype=np.int64)
        lat = latency_stats(recv // 1000, cmd // 1000)
        latency = {**lat.as_dict(), "source": "wall_clock"}
    else:
        n = len(tap.hand_t_us)
        latency = {**latency_stats([0] * n, [0] * n).as_dict(), "source": "simulated"}

    report = {
        "report_version": REPORT_VERSION,
        "task_id": task_id,
        "seed": script.get("seed"),
        "duration_s": end_us / 1_000_000.0,
        "mean_error_mm": mean_err,
        "max_error_mm": max_err,
        "trajectory_rms_mm": trajectory_rms,
        "targets_reached_mm": targets_reached,
        "max_rcm_distance_mm": max_rcm,
        "insertion_depth_mm": insertion_depth,
        "latency": latency,
        "counts": {
            "wrist_samples": len(tap.hand_t_us),
            "ticks": len(tap.tick_t_us),
            "moves_committed": session.stats.moves_committed,
            "moves_rejected": session.stats.moves_rejected,
            "gating_violations": session.stats.gating_violations,
            "samples_skipped": session.stats.samples_skipped,
        },
    }
    return ReplayResult(
        report=report, csv_text="\n".join(csv_lines) + "\n", recording_lines=recording
    )
