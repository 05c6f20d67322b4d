"""Acceptance suite: desk-scale analogs of the deployment evaluation.

Each test enforces one acceptance criterion at its stated tolerance and
prints a single pass/fail line (run with ``pytest tests/test_acceptance.py -s``
to see the lines as they go).
"""

import string
import time

import numpy as np
import pytest

from teleopsim import kinematics, quat
from teleopsim.calibration import (
    DegenerateGeometry,
    PointPairSet,
    RigidTransform,
    TooFewPairs,
    apply_transform,
    register_frames,
)
from teleopsim.config import SessionConfig, SimConfig
from teleopsim.kinematics import (
    ArmModel,
    Pose,
    forward_kinematics,
    inverse_kinematics,
    jacobian,
)
from teleopsim.metrics import latency_stats
from teleopsim.protocol import (
    ApproachTrocar,
    ConfigSet,
    Error,
    Hello,
    HelloAck,
    InsertStep,
    MoveSummary,
    PinchEnd,
    PinchStart,
    StateBroadcast,
    Validate,
    WristSample,
    decode,
    encode,
)
from teleopsim.robot_sim import RobotSim
from teleopsim.session import (
    ClientJoined,
    ClientMessage,
    Session,
    SessionTap,
    Tick,
)
from teleopsim.tasks import gen_task, replay_script

from conftest import random_interior_q
from oracles import jacobian_fd, random_rigid_transform


def _report(name: str, ok: bool, detail: str):
    print(f"ACCEPTANCE {name}: {'PASS' if ok else 'FAIL'} ({detail})")
    assert ok, f"{name}: {detail}"


class TestTaskAnalogs:
    def test_task1_positional_error(self):
        t0 = time.monotonic()
        result = replay_script(gen_task(1, seed=0))
        runtime = time.monotonic() - t0
        mean = result.report["mean_error_mm"]
        peak = result.report["max_error_mm"]
        ok = mean is not None and mean <= 0.7 and peak <= 1.5 and runtime < 10.0
        _report(
            "task1-positional-error",
            ok,
            f"mean {mean:.4g} mm <= 0.7, max {peak:.4g} mm <= 1.5, runtime {runtime:.1f}s < 10s",
        )

    def test_task2_targets_and_rcm(self):
        t0 = time.monotonic()
        result = replay_script(gen_task(2, seed=0))
        runtime = time.monotonic() - t0
        targets = result.report["targets_reached_mm"]
        rcm = result.report["max_rcm_distance_mm"]
        depth = result.report["insertion_depth_mm"]
        ok = (
            targets is not None
            and len(targets) == 3
            and all(d <= 1.0 for d in targets)
            and rcm is not None
            and rcm < 0.5
            and depth == pytest.approx(30.0)
            and runtime < 15.0
        )
        _report(
            "task2-targets-and-rcm",
            ok,
            f"targets {[round(d, 4) for d in targets]} mm <= 1.0 each, "
            f"shaft-to-trocar max {rcm:.4g} mm < 0.5, depth {depth} mm, "
            f"runtime {runtime:.1f}s < 15s",
        )

    def test_task3_trajectory_rms(self):
        result = replay_script(gen_task(3, seed=0))
        rms = result.report["trajectory_rms_mm"]
        ok = rms is not None and rms <= 2.0
        _report("task3-trajectory-rms", ok, f"hand-vs-tip RMS {rms:.4g} mm <= 2.0")


class _LatencyTap(SessionTap):
    def __init__(self):
        self.recv_ns = 0
        self.pairs = []

    def on_command(self, provenance, q_target, t_us):
        if provenance == "track":
            self.pairs.append((self.recv_ns, time.monotonic_ns()))


class TestLatencyBudget:
    def test_pipeline_latency_median_under_1ms(self, arm):
        n = 10_000
        cfg = SessionConfig()
        sim = RobotSim(arm, SimConfig(), np.deg2rad([0, 35, 0, -75, 0, 70, 0]))
        tap = _LatencyTap()
        session = Session(arm, sim, RigidTransform.identity(), cfg, tap=tap)
        session.handle_event(ClientJoined("lat"))
        session.handle_event(ClientMessage("lat", PinchStart(t_client_ms=0)))
        _, tip = forward_kinematics(arm, sim.q)
        base = tip.position / 1000.0

        lines = []
        for k in range(n):
            ang = 2 * np.pi * k / n
            p = base + 0.02 * np.array([np.cos(ang), np.sin(ang), 0.0])
            lines.append(
                encode(
                    WristSample(
                        seq=k + 1, t_client_ms=k, x_m=p[0], y_m=p[1], z_m=p[2]
                    )
                )
            )
        for k, line in enumerate(lines):
            tap.recv_ns = time.monotonic_ns()
            msg = decode(line)
            session.handle_event(ClientMessage("lat", msg, t_us=k))
            if k % 10 == 0:
                session.handle_event(Tick(t_us=k))
        recv = np.array([p[0] for p in tap.pairs], dtype=np.int64)
        cmd = np.array([p[1] for p in tap.pairs], dtype=np.int64)
        stats = latency_stats(recv // 1000, cmd // 1000)
        ok = stats.count >= 10_000 and stats.median_us <= 1000.0
        _report(
            "latency-budget",
            ok,
            f"decode-to-command median {stats.median_us:.0f} us <= 1000 us, "
            f"p95 {stats.p95_us:.0f} us, n={stats.count}",
        )


class TestKinematicsProperties:
    def test_jacobian_finite_difference_agreement(self, arm, rng):
        def fk_tip(q):
            _, _, R, p_flange = kinematics.chain_frames(arm, q)
            return p_flange + arm.tool_offset * R[:, 2], R

        worst = 0.0
        for _ in range(100):
            q = random_interior_q(arm, rng)
            J = jacobian(arm, q)
            J_fd = jacobian_fd(fk_tip, q)
            worst = max(worst, float(np.max(np.abs(J - J_fd))))
        ok = worst < 1e-4
        _report("kinematics-jacobian-fd", ok, f"max |J - J_fd| {worst:.3g} < 1e-4")

    def test_ik_round_trip_99_percent(self, arm, rng):
        n = 1000
        failures = 0
        worst_err = 0.0
        for _ in range(n):
            q0 = random_interior_q(arm, rng)
            _, tip = forward_kinematics(arm, q0)
            delta = rng.uniform(-1.0, 1.0, 3)
            norm = np.linalg.norm(delta)
            delta = delta / max(norm, 1e-12) * rng.uniform(0.0, 20.0)
            target = Pose(tip.position + delta, tip.orientation)
            try:
                q = inverse_kinematics(arm, target, q0)
            except kinematics.KinematicsError:
                failures += 1
                continue
            assert arm.within_limits(q), "IK returned a pose outside joint limits"
            _, tip2 = forward_kinematics(arm, q)
            err = float(np.linalg.norm(tip2.position - target.position))
            worst_err = max(worst_err, err)
            if err >= 1e-3:
                failures += 1
        ok = failures <= n * 0.01 and worst_err < 1e-3
        _report(
            "kinematics-ik-round-trip",
            ok,
            f"{n - failures}/{n} converged (>= 99%), worst tip error {worst_err:.2e} mm < 1e-3",
        )


class TestRegistration:
    def test_noiseless_recovery_and_properness(self, rng):
        n = 1000
        worst_angle = 0.0
        worst_translation = 0.0
        for _ in range(n):
            R, t = random_rigid_transform(rng)
            points = rng.uniform(-0.5, 0.5, size=(int(rng.integers(3, 10)), 3))
            if np.linalg.matrix_rank(points - points.mean(axis=0), tol=1e-6) < 2:
                continue
            robot = points * 1000.0 @ R.T + t
            result = register_frames(PointPairSet(operator_m=points, robot_mm=robot))
            assert np.linalg.det(result.transform.matrix()) > 0
            worst_angle = max(
                worst_angle, quat.angle_between(result.transform.rotation, quat.from_matrix(R))
            )
            worst_translation = max(
                worst_translation,
                float(np.max(np.abs(result.transform.translation - t))),
            )
        ok = worst_angle <= 1e-9 and worst_translation <= 1e-9
        _report(
            "registration-noiseless-recovery",
            ok,
            f"worst rotation err {worst_angle:.2e} rad, translation err {worst_translation:.2e} mm, both <= 1e-9",
        )

    def test_error_paths_fire(self, rng):
        too_few = degenerate = False
        try:
            register_frames(
                PointPairSet(operator_m=[[0, 0, 0], [1, 0, 0]], robot_mm=[[0, 0, 0], [1, 0, 0]])
            )
        except TooFewPairs:
            too_few = True
        collinear = np.array([[0.0, 0, 0], [0.1, 0, 0], [0.2, 0, 0]])
        try:
            register_frames(PointPairSet(operator_m=collinear, robot_mm=collinear * 1000.0))
        except DegenerateGeometry:
            degenerate = True
        # mirrored sets still return a proper rotation
        points = rng.uniform(-0.5, 0.5, size=(6, 3))
        mirrored = points.copy()
        mirrored[:, 2] *= -1
        result = register_frames(PointPairSet(operator_m=points, robot_mm=mirrored * 1000.0))
        proper = np.linalg.det(result.transform.matrix()) > 0
        ok = too_few and degenerate and proper
        _report(
            "registration-error-paths",
            ok,
            f"TooFewPairs {too_few}, DegenerateGeometry {degenerate}, mirrored-set rotation proper {proper}",
        )


def _random_message(rng):
    def rand_str():
        alphabet = string.ascii_lowercase + string.digits
        return "".join(alphabet[rng.integers(len(alphabet))] for _ in range(1 + rng.integers(12)))

    def rand_f():
        return float(np.round(rng.uniform(-1e6, 1e6), 9))

    def vec3():
        return (rand_f(), rand_f(), rand_f())

    kind = rng.integers(12)
    if kind == 0:
        return Hello(client_id=rand_str(), role=rand_str())
    if kind == 1:
        return HelloAck(session_id=rand_str(), server_version=rand_str())
    if kind == 2:
        return PinchStart(t_client_ms=int(rng.integers(2**48)))
    if kind == 3:
        return WristSample(
            seq=int(rng.integers(2**32)),
            t_client_ms=int(rng.integers(2**48)),
            x_m=rand_f(),
            y_m=rand_f(),
            z_m=rand_f(),
        )
    if kind == 4:
        return PinchEnd(t_client_ms=int(rng.integers(2**48)), last_seq=int(rng.integers(2**32)))
    if kind == 5:
        return MoveSummary(
            move_id=int(rng.integers(2**31)),
            n_samples=int(rng.integers(2**20)),
            tip_start_mm=vec3(),
            tip_end_mm=vec3(),
        )
    if kind == 6:
        return Validate(move_id=int(rng.integers(2**31)), accepted=bool(rng.random() < 0.5))
    if kind == 7:
        return StateBroadcast(
            tick=int(rng.integers(2**48)),
            joints_rad=tuple(rand_f() for _ in range(7)),
            tip_mm=vec3(),
            mode=("free_space", "approach", "inserted")[rng.integers(3)],
            engaged_client=None if rng.random() < 0.5 else rand_str(),
        )
    if kind == 8:
        return ConfigSet(
            scale=None if rng.random() < 0.3 else rand_f(),
            insert_increment_mm=None if rng.random() < 0.3 else rand_f(),
            insert_velocity_mm_s=None if rng.random() < 0.3 else rand_f(),
        )
    if kind == 9:
        return ApproachTrocar(trocar_mm=vec3())
    if kind == 10:
        return InsertStep(direction="in" if rng.random() < 0.5 else "out")
    return Error(code=rand_str(), detail=rand_str())


class TestProtocolAndGating:
    def test_encode_decode_identity_10k(self):
        rng = np.random.default_rng(99)
        n = 10_000
        for _ in range(n):
            msg = _random_message(rng)
            line = encode(msg)
            assert decode(line) == msg, f"round trip broke for {msg!r}"
            assert encode(msg) == line
        _report("protocol-round-trip", True, f"{n} generated messages, identity on all")

    def test_randomized_fuzz_zero_ungated_motion(self, arm):
        rng = np.random.default_rng(4242)

        class GateTap(SessionTap):
            def __init__(self):
                self.track_events = []

            def on_command(self, provenance, q_target, t_us):
                if provenance == "track":
                    self.track_events.append(t_us)

        tap = GateTap()
        sim = RobotSim(arm, SimConfig(), np.deg2rad([0, 35, 0, -75, 0, 70, 0]))
        session = Session(arm, sim, RigidTransform.identity(), SessionConfig(), tap=tap)
        clients = ["a", "b", "c"]
        for c in clients:
            session.handle_event(ClientJoined(c))
        _, tip = forward_kinematics(arm, sim.q)
        base = tip.position / 1000.0

        # shadow gate: an independent record of who may move the robot
        engaged = None
        awaiting = False
        seq = 0
        violations = 0
        step_of_last_cmd = -1
        for step in range(6000):
            c = clients[rng.integers(3)]
            roll = rng.random()
            n_before = len(tap.track_events)
            if roll < 0.18:
                session.handle_event(ClientMessage(c, PinchStart(t_client_ms=step), t_us=step))
                if engaged is None and not awaiting:
                    engaged = c
            elif roll < 0.62:
                seq += 1
                p = base + rng.uniform(-0.04, 0.04, 3)
                session.handle_event(
                    ClientMessage(
                        c,
                        WristSample(seq=seq, t_client_ms=step, x_m=p[0], y_m=p[1], z_m=p[2]),
                        t_us=step,
                    )
                )
                if len(tap.track_events) > n_before and engaged != c:
                    violations += 1
            elif roll < 0.75:
                session.handle_event(
                    ClientMessage(c, PinchEnd(t_client_ms=step, last_seq=seq), t_us=step)
                )
                if engaged == c and not awaiting:
                    awaiting = True
            elif roll < 0.88:
                if session.pending_move is not None and rng.random() < 0.8:
                    move_id = session.pending_move[0]
                else:
                    move_id = 10**9
                session.handle_event(
                    ClientMessage(c, Validate(move_id=move_id, accepted=True), t_us=step)
                )
                if awaiting and engaged == c and move_id != 10**9:
                    engaged = None
                    awaiting = False
            else:
                session.handle_event(Tick(t_us=step))
            # non-sample, non-mode events must never move the robot
            if roll >= 0.62 and roll < 0.88 and len(tap.track_events) > n_before:
                violations += 1
            step_of_last_cmd = max(step_of_last_cmd, step)
        ok = violations == 0 and len(tap.track_events) > 0
        _report(
            "gating-fuzz",
            ok,
            f"{len(tap.track_events)} gated commands, {violations} ungated over 6000 events",
        )

    def test_multi_client_single_engager(self, arm):
        rng = np.random.default_rng(777)
        sim = RobotSim(arm, SimConfig(), np.deg2rad([0, 35, 0, -75, 0, 70, 0]))
        session = Session(arm, sim, RigidTransform.identity(), SessionConfig())
        clients = [f"c{i}" for i in range(5)]
        for c in clients:
            session.handle_event(ClientJoined(c))
        busy_replies = 0
        engager_changes = set()
        for step in range(3000):
            c = clients[rng.integers(5)]
            roll = rng.random()
            if roll < 0.4:
                engaged_before = session.engaged_client
                out = session.handle_event(ClientMessage(c, PinchStart(t_client_ms=step)))
                for o in out:
                    if isinstance(o.msg, Error) and o.msg.code == "busy":
                        busy_replies += 1
                        # a busy reply never changes who is engaged
                        assert session.engaged_client == engaged_before
            elif roll < 0.6:
                session.handle_event(ClientMessage(c, PinchEnd(t_client_ms=step, last_seq=step)))
            elif roll < 0.8 and session.pending_move is not None:
                session.handle_event(
                    ClientMessage(
                        session.engaged_client or c,
                        Validate(move_id=session.pending_move[0], accepted=True),
                    )
                )
            else:
                session.handle_event(Tick(t_us=step))
            if session.engaged_client is not None:
                engager_changes.add(session.engaged_client)
        ok = busy_replies > 0 and len(engager_changes) >= 2
        _report(
            "multi-client-arbitration",
            ok,
            f"{busy_replies} busy rejections, engagement rotated over {len(engager_changes)} clients",
        )


class TestDeterminism:
    def test_replay_byte_identical(self):
        script = gen_task(1, seed=123)
        a = replay_script(script)
        b = replay_script(script)
        ok = (
            a.report_json() == b.report_json()
            and a.csv_text == b.csv_text
            and a.recording_lines == b.recording_lines
        )
        _report(
            "replay-determinism",
            ok,
            f"two replays byte-identical ({len(a.report_json())} report bytes, "
            f"{len(a.recording_lines)} recording lines)",
        )
