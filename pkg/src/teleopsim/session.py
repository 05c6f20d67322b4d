"""Teleoperation session: gating state machine and motion pipeline.

The session consumes one totally-ordered event stream (client messages merged
with simulator ticks) and is the sole writer of robot commands.  Pinch
gestures gate wrist streaming: samples convert into tip targets only between
a PinchStart that won engagement and its PinchEnd, and every completed move
must be validated by the operator before the next engagement.

Pipeline per sample: operator meters -> millimeters -> rigid transform into
the robot base frame -> displacement from the pinch anchor scaled by the
motion-scale factor -> mode constraint (free space holds the anchor
orientation; inserted mode pins the camera shaft to the trocar) -> IK ->
joint target to the simulator.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import quat
from .calibration import RigidTransform, apply_transform, meters_to_millimeters
from .config import SCALE_RANGE, SessionConfig
from .kinematics import (
    ArmModel,
    KinematicsError,
    Pose,
    camera_axis,
    forward_kinematics,
    inverse_kinematics,
)
from .protocol import (
    ApproachTrocar,
    ConfigSet,
    Error,
    InsertStep,
    MoveSummary,
    PinchEnd,
    PinchStart,
    StateBroadcast,
    Validate,
    WireMessage,
    WristSample,
)
from .robot_sim import RobotSim, SimRejection

PHASE_AWAIT_HELLO = "await_hello"
PHASE_IDLE = "idle"
PHASE_ENGAGED = "engaged"
PHASE_AWAIT_VALIDATION = "await_validation"

MODE_FREE = "free_space"
MODE_APPROACH = "approach"
MODE_INSERTED = "inserted"


class DegenerateDirection(Exception):
    """Desired tip is too close to the trocar point to define a shaft axis."""


@dataclass(frozen=True)
class TrocarState:
    """Camera pose through a fixed insertion port: 2 rotations + depth.

    The shaft direction is u = Ry(theta_y) @ Rx(theta_x) @ e_z and the tip
    sits at ``trocar_point + depth * u``, so the shaft line passes through
    the port by construction.
    """

    trocar_point: np.ndarray
    theta_x: float
    theta_y: float
    depth: float

    def __post_init__(self):
        object.__setattr__(self, "trocar_point", np.asarray(self.trocar_point, dtype=float))
        if self.depth < 0:
            raise ValueError("depth must be >= 0")

    def direction(self) -> np.ndarray:
        cx, sx = math.cos(self.theta_x), math.sin(self.theta_x)
        cy, sy = math.cos(self.theta_y), math.sin(self.theta_y)
        return np.array([sy * cx, -sx, cy * cx])

    def tip(self) -> np.ndarray:
        return self.trocar_point + self.depth * self.direction()


def rcm_constrain(trocar: TrocarState, desired_tip: np.ndarray) -> TrocarState:
    """Closest trocar parameterization reproducing ``desired_tip`` exactly."""
    v = np.asarray(desired_tip, dtype=float) - trocar.trocar_point
    d = float(np.linalg.norm(v))
    if d < 1.0:
        raise DegenerateDirection(f"desired tip {d:.3g} mm from the trocar point")
    u = v / d
    theta_x = math.asin(max(-1.0, min(1.0, -u[1])))
    theta_y = math.atan2(u[0], u[2])
    return TrocarState(trocar.trocar_point, theta_x, theta_y, d)


@dataclass
class Anchor:
    tip_position: np.ndarray
    orientation: np.ndarray
    q: np.ndarray
    operator_point: Optional[np.ndarray] = None


# events fed to the session, in one total order
@dataclass(frozen=True)
class ClientJoined:
    client_id: str
    t_us: int = 0


@dataclass(frozen=True)
class ClientLeft:
    client_id: str
    t_us: int = 0


@dataclass(frozen=True)
class ClientMessage:
    client_id: str
    msg: WireMessage
    t_us: int = 0


@dataclass(frozen=True)
class Tick:
    t_us: int = 0


SessionEvent = ClientJoined | ClientLeft | ClientMessage | Tick


@dataclass(frozen=True)
class Send:
    client_id: str
    msg: WireMessage


@dataclass(frozen=True)
class Broadcast:
    msg: WireMessage


SessionOutput = Send | Broadcast


class SessionTap:
    """Observer hooks for recording and analysis; all optional."""

    def on_command(self, provenance: str, q_target: np.ndarray, t_us: int) -> None:
        pass

    def on_hand_target(self, t_us: int, target_mm: np.ndarray) -> None:
        pass

    def on_tick(self, t_us: int, tick: int, q: np.ndarray, tip_mm: np.ndarray,
                mode: str, rcm_distance_mm: Optional[float]) -> None:
        pass


@dataclass
class SessionStats:
    gating_violations: int = 0
    samples_skipped: int = 0
    samples_accepted: int = 0
    moves_committed: int = 0
    moves_rejected: int = 0


class Session:
    def __init__(
        self,
        model: ArmModel,
        sim: RobotSim,
        calibration: RigidTransform,
        cfg: SessionConfig,
        tap: Optional[SessionTap] = None,
    ):
        self.model = model
        self.sim = sim
        self.calibration = calibration
        self.cfg = cfg
        self.tap = tap or SessionTap()

        self.phase = PHASE_AWAIT_HELLO
        self.mode = MODE_FREE
        self.engaged_client: Optional[str] = None
        self.anchor: Optional[Anchor] = None
        self.pending_move: Optional[tuple[int, Anchor]] = None
        self.trocar: Optional[TrocarState] = None
        self.clients: set[str] = set()
        self.stats = SessionStats()

        self._move_counter = 0
        self._last_seq: Optional[int] = None
        self._samples_in_move = 0
        self._consec_skips = 0
        self._q_cmd = sim.q.copy()
        self._ori_cmd = forward_kinematics(model, sim.q)[0].orientation
        self._approach_queue: deque[np.ndarray] = deque()
        self._insert_queue: deque[np.ndarray] = deque()

    # ------------------------------------------------------------------ events

    def handle_event(self, event: SessionEvent) -> list[SessionOutput]:
        if isinstance(event, ClientJoined):
            return self._on_joined(event)
        if isinstance(event, ClientLeft):
            return self._on_left(event)
        if isinstance(event, Tick):
            return self._on_tick(event)
        if isinstance(event, ClientMessage):
            return self._on_message(event)
        raise TypeError(f"unknown event {event!r}")

    def _on_joined(self, event: ClientJoined) -> list[SessionOutput]:
        self.clients.add(event.client_id)
        if self.phase == PHASE_AWAIT_HELLO:
            self.phase = PHASE_IDLE
        return []

    def _on_left(self, event: ClientLeft) -> list[SessionOutput]:
        self.clients.discard(event.client_id)
        if event.client_id != self.engaged_client:
            return []
        # engaged client vanished mid-move: fail safe, home to the anchor
        if self.anchor is not None:
            self._submit(self.anchor.q, "home", event.t_us)
        self._clear_engagement()
        return []

    def _on_tick(self, event: Tick) -> list[SessionOutput]:
        if self._approach_queue:
            q = self._approach_queue.popleft()
            self._submit(q, "approach", event.t_us)
            if not self._approach_queue:
                self.mode = MODE_INSERTED
        elif self._insert_queue:
            q = self._insert_queue.popleft()
            self._submit(q, "insert", event.t_us)
        snap = self.sim.step()
        rcm = self._rcm_distance() if self.mode == MODE_INSERTED else None
        self.tap.on_tick(event.t_us, snap.tick, snap.q, snap.tip_mm, self.mode, rcm)
        broadcast = StateBroadcast(
            tick=snap.tick,
            joints_rad=tuple(float(v) for v in snap.q),
            tip_mm=tuple(float(v) for v in snap.tip_mm),
            mode=self.mode,
            engaged_client=self.engaged_client,
        )
        return [Broadcast(broadcast)]

    def _on_message(self, event: ClientMessage) -> list[SessionOutput]:
        msg = event.msg
        cid = event.client_id
        if isinstance(msg, PinchStart):
            return self._on_pinch_start(cid)
        if isinstance(msg, WristSample):
            return self._on_wrist(cid, msg, event.t_us)
        if isinstance(msg, PinchEnd):
            return self._on_pinch_end(cid)
        if isinstance(msg, Validate):
            return self._on_validate(cid, msg, event.t_us)
        if isinstance(msg, ConfigSet):
            return self._on_config(cid, msg)
        if isinstance(msg, ApproachTrocar):
            return self._on_approach(cid, msg)
        if isinstance(msg, InsertStep):
            return self._on_insert(cid, msg)
        return [Send(cid, Error(code="protocol", detail=f"unexpected {type(msg).__name__}"))]

    # ------------------------------------------------------------------ gating

    def _on_pinch_start(self, cid: str) -> list[SessionOutput]:
        if self.phase != PHASE_IDLE:
            return [Send(cid, Error(code="busy", detail="another move is in progress"))]
        flange, tip = forward_kinematics(self.model, self.sim.q)
        self.anchor = Anchor(
            tip_position=tip.position.copy(),
            orientation=tip.orientation.copy(),
            q=self.sim.q.copy(),
        )
        self.engaged_client = cid
        self.phase = PHASE_ENGAGED
        self._last_seq = None
        self._samples_in_move = 0
        self._consec_skips = 0
        self._q_cmd = self.sim.q.copy()
        self._ori_cmd = tip.orientation.copy()
        return []

    def _on_wrist(self, cid: str, msg: WristSample, t_us: int) -> list[SessionOutput]:
        if self.phase != PHASE_ENGAGED or cid != self.engaged_client:
            self.stats.gating_violations += 1
            return []
        if self._last_seq is not None and msg.seq <= self._last_seq:
            self.stats.gating_violations += 1
            return []
        self._last_seq = msg.seq
        self._samples_in_move += 1
        return self._motion_pipeline(cid, msg, t_us)

    def _on_pinch_end(self, cid: str) -> list[SessionOutput]:
        if self.phase != PHASE_ENGAGED or cid != self.engaged_client:
            self.stats.gating_violations += 1
            return []
        assert self.anchor is not None
        self._move_counter += 1
        move_id = self._move_counter
        self.pending_move = (move_id, self.anchor)
        self.phase = PHASE_AWAIT_VALIDATION
        _, tip = forward_kinematics(self.model, self.sim.q)
        summary = MoveSummary(
            move_id=move_id,
            n_samples=self._samples_in_move,
            tip_start_mm=tuple(float(v) for v in self.anchor.tip_position),
            tip_end_mm=tuple(float(v) for v in tip.position),
        )
        return [Send(cid, summary)]

    def _on_validate(self, cid: str, msg: Validate, t_us: int) -> list[SessionOutput]:
        if (
            self.phase != PHASE_AWAIT_VALIDATION
            or cid != self.engaged_client
            or self.pending_move is None
            or msg.move_id != self.pending_move[0]
        ):
            return [Send(cid, Error(code="stale_validation", detail="no such pending move"))]
        _, anchor = self.pending_move
        if msg.accepted:
            self.stats.moves_committed += 1
        else:
            self.stats.moves_rejected += 1
            self._submit(anchor.q, "home", t_us)
        self._clear_engagement()
        return []

    def _clear_engagement(self) -> None:
        self.phase = PHASE_IDLE
        self.engaged_client = None
        self.anchor = None
        self.pending_move = None
        self._last_seq = None
        self._samples_in_move = 0

    # ---------------------------------------------------------------- pipeline

    def _motion_pipeline(self, cid: str, msg: WristSample, t_us: int) -> list[SessionOutput]:
        assert self.anchor is not None
        p = apply_transform(
            self.calibration, meters_to_millimeters([msg.x_m, msg.y_m, msg.z_m])
        )
        if self.anchor.operator_point is None:
            self.anchor.operator_point = p.copy()
        target_pos = self.anchor.tip_position + self.cfg.scale * (p - self.anchor.operator_point)
        self.tap.on_hand_target(t_us, target_pos.copy())

        if self.mode == MODE_FREE:
            target = Pose(target_pos, self.anchor.orientation)
        elif self.mode == MODE_INSERTED:
            assert self.trocar is not None
            try:
                constrained = rcm_constrain(self.trocar, target_pos)
            except DegenerateDirection:
                return self._skip(cid)
            depth = min(constrained.depth, self.cfg.insert_depth_max_mm)
            constrained = TrocarState(
                constrained.trocar_point, constrained.theta_x, constrained.theta_y, depth
            )
            u = constrained.direction()
            ori = quat.normalize(
                quat.multiply(quat.rotation_to(quat.to_matrix(self._ori_cmd)[:, 2], u), self._ori_cmd)
            )
            target = Pose(constrained.tip(), ori)
            self.trocar = constrained
        else:  # approach in progress: the docking queue owns the robot
            return self._skip(cid)

        try:
            q = inverse_kinematics(self.model, target, self._q_cmd)
            self._submit(q, "track", t_us)
            self._ori_cmd = target.orientation
        except (KinematicsError, SimRejection):
            return self._skip(cid)
        self._consec_skips = 0
        self.stats.samples_accepted += 1
        return []

    def _skip(self, cid: str) -> list[SessionOutput]:
        self.stats.samples_skipped += 1
        self._consec_skips += 1
        if self._consec_skips == self.cfg.ik_skip_limit:
            return [
                Send(cid, Error(code="unreachable", detail="consecutive samples unreachable"))
            ]
        return []

    # ------------------------------------------------------------- mode changes

    def _on_config(self, cid: str, msg: ConfigSet) -> list[SessionOutput]:
        if msg.scale is not None and not (SCALE_RANGE[0] <= msg.scale <= SCALE_RANGE[1]):
            return [Send(cid, Error(code="bad_config", detail=f"scale outside {SCALE_RANGE}"))]
        if msg.insert_increment_mm is not None and msg.insert_increment_mm <= 0:
            return [Send(cid, Error(code="bad_config", detail="increment must be positive"))]
        if msg.insert_velocity_mm_s is not None and msg.insert_velocity_mm_s <= 0:
            return [Send(cid, Error(code="bad_config", detail="velocity must be positive"))]
        if msg.scale is not None:
            self.cfg.scale = float(msg.scale)
        if msg.insert_increment_mm is not None:
            self.cfg.insert_increment_mm = float(msg.insert_increment_mm)
        if msg.insert_velocity_mm_s is not None:
            self.cfg.insert_velocity_mm_s = float(msg.insert_velocity_mm_s)
        return []

    def _on_approach(self, cid: str, msg: ApproachTrocar) -> list[SessionOutput]:
        if self.mode != MODE_FREE or self.phase not in (PHASE_IDLE,):
            return [Send(cid, Error(code="invalid_mode", detail="approach requires idle free space"))]
        port = np.asarray(msg.trocar_mm, dtype=float)
        box = self.sim.safety_box
        if np.any(port < box[:, 0]) or np.any(port > box[:, 1]):
            return [Send(cid, Error(code="unreachable", detail="trocar outside the safety box"))]
        plan = self._plan_approach(port)
        if plan is None:
            return [Send(cid, Error(code="unreachable", detail="no feasible approach path"))]
        waypoints, u0 = plan
        theta_x = math.asin(max(-1.0, min(1.0, -u0[1])))
        theta_y = math.atan2(u0[0], u0[2])
        self.trocar = TrocarState(port, theta_x, theta_y, 0.0)
        if not waypoints:
            self.mode = MODE_INSERTED
            return []
        self._approach_queue = deque(waypoints)
        self.mode = MODE_APPROACH
        return []

    def _plan_approach(self, port: np.ndarray):
        """IK-checked straight-line docking: tip travels current -> port.

        The camera axis is slerped into alignment with the travel direction
        by the time the standoff point is passed, then held.  Returns the
        joint waypoints (<= spacing apart) and the approach direction, or
        None when any waypoint is unreachable.
        """
        _, tip = forward_kinematics(self.model, self.sim.q)
        p0 = tip.position
        dist = float(np.linalg.norm(port - p0))
        if dist < 1e-9:
            return [], quat.to_matrix(self._ori_cmd)[:, 2]
        u0 = (port - p0) / dist
        q_align = quat.normalize(
            quat.multiply(quat.rotation_to(tip.rotation()[:, 2], u0), tip.orientation)
        )
        align_len = max(dist - self.cfg.standoff_mm, 1e-9)
        n_steps = max(1, math.ceil(dist / self.cfg.waypoint_spacing_mm))
        waypoints: list[np.ndarray] = []
        q_seed = self.sim.q.copy()
        for k in range(1, n_steps + 1):
            s = k / n_steps
            pos = p0 + s * (port - p0)
            frac = min(1.0, (s * dist) / align_len)
            ori = quat.slerp(tip.orientation, q_align, frac)
            try:
                q_seed = inverse_kinematics(self.model, Pose(pos, ori), q_seed)
                self.sim.check_target(q_seed)
            except (KinematicsError, SimRejection, ValueError):
                return None
            waypoints.append(q_seed)
        self._ori_cmd = q_align
        return waypoints, u0

    def _on_insert(self, cid: str, msg: InsertStep) -> list[SessionOutput]:
        if self.mode != MODE_INSERTED or self.trocar is None:
            return [Send(cid, Error(code="invalid_mode", detail="not inserted"))]
        inc = self.cfg.insert_increment_mm if msg.direction == "in" else -self.cfg.insert_increment_mm
        new_depth = min(max(self.trocar.depth + inc, 0.0), self.cfg.insert_depth_max_mm)
        if new_depth == self.trocar.depth:
            return [Send(cid, Error(code="depth_limit", detail=f"depth at {self.trocar.depth} mm"))]
        u = self.trocar.direction()
        step_mm = self.cfg.insert_velocity_mm_s / self.sim.tick_rate_hz
        n_ticks = max(1, math.ceil(abs(new_depth - self.trocar.depth) / step_mm))
        q_seed = self._insert_queue[-1].copy() if self._insert_queue else self._q_cmd.copy()
        waypoints: list[np.ndarray] = []
        for k in range(1, n_ticks + 1):
            depth = self.trocar.depth + (new_depth - self.trocar.depth) * k / n_ticks
            pos = self.trocar.trocar_point + depth * u
            try:
                q_seed = inverse_kinematics(self.model, Pose(pos, self._ori_cmd), q_seed)
                self.sim.check_target(q_seed)
            except (KinematicsError, SimRejection, ValueError):
                return [Send(cid, Error(code="unreachable", detail="insertion leaves workspace"))]
            waypoints.append(q_seed)
        self._insert_queue.extend(waypoints)
        self.trocar = TrocarState(
            self.trocar.trocar_point, self.trocar.theta_x, self.trocar.theta_y, new_depth
        )
        return []

    # ---------------------------------------------------------------- plumbing

    def _submit(self, q: np.ndarray, provenance: str, t_us: int) -> None:
        self.sim.submit_target(q)
        self._q_cmd = np.asarray(q, dtype=float).copy()
        self.tap.on_command(provenance, self._q_cmd, t_us)

    def pending_motion(self) -> bool:
        """True while queued approach/insert waypoints remain undispensed."""
        return bool(self._approach_queue or self._insert_queue)

    def _rcm_distance(self) -> Optional[float]:
        if self.trocar is None:
            return None
        p_flange, axis = camera_axis(self.model, self.sim.q)
        v = self.trocar.trocar_point - p_flange
        return float(np.linalg.norm(v - (v @ axis) * axis))

    def state_summary(self) -> dict:
        return {
            "phase": self.phase,
            "mode": self.mode,
            "engaged_client": self.engaged_client,
            "tick": self.sim.tick,
            "scale": self.cfg.scale,
            "gating_violations": self.stats.gating_violations,
        }
