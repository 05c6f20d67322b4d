"""Discrete-time robot executor with velocity clamping and safety bounds.

The simulator owns the authoritative joint state.  Targets are latest-wins:
a newly accepted target replaces the previous one, and each tick every joint
moves toward it by at most ``vel_limit / tick_rate``.  Targets violating the
per-joint virtual planes or pushing the camera tip outside the Cartesian
safety box are rejected up front, so no reachable state can violate them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import SimConfig
from .kinematics import ArmModel, N_JOINTS, tip_position


class SimRejection(Exception):
    code = "sim_rejected"


class PlaneViolation(SimRejection):
    code = "plane_violation"

    def __init__(self, joint: int):
        self.joint = joint
        super().__init__(f"joint {joint + 1} target outside its virtual plane")


class BoxViolation(SimRejection):
    code = "box_violation"

    def __init__(self, axis: int):
        self.axis = axis
        super().__init__(f"tip target outside safety box on axis {'xyz'[axis]}")


class SettleTimeout(Exception):
    code = "settle_timeout"


@dataclass(frozen=True)
class SimSnapshot:
    tick: int
    q: np.ndarray
    tip_mm: np.ndarray


class RobotSim:
    def __init__(self, model: ArmModel, cfg: SimConfig, q_start: np.ndarray):
        self.model = model
        self.tick_rate_hz = float(cfg.tick_rate_hz)
        self.vel_limit = float(cfg.vel_limit_rad_s)
        self.max_step = self.vel_limit / self.tick_rate_hz
        self.safety_box = np.asarray(cfg.safety_box_mm, dtype=float)
        if cfg.joint_planes_deg is None:
            self.joint_planes = model.joint_limits.copy()
        else:
            planes = np.deg2rad(np.asarray(cfg.joint_planes_deg, dtype=float))
            if planes.shape != (N_JOINTS, 2):
                raise ValueError("joint_planes_deg must be 7 (min, max) pairs")
            self.joint_planes = np.clip(
                planes, model.joint_limits[:, :1], model.joint_limits[:, 1:]
            )
        q_start = np.asarray(q_start, dtype=float)
        self.check_target(q_start)
        self.q = q_start.copy()
        self.q_target = q_start.copy()
        self.tick = 0

    def check_target(self, q_target: np.ndarray) -> None:
        if not np.all(np.isfinite(q_target)) or q_target.shape != (N_JOINTS,):
            raise ValueError("target must be 7 finite joint angles")
        below = q_target < self.joint_planes[:, 0] - 1e-12
        above = q_target > self.joint_planes[:, 1] + 1e-12
        if below.any() or above.any():
            raise PlaneViolation(int(np.argmax(below | above)))
        tip = tip_position(self.model, q_target)
        for axis in range(3):
            if tip[axis] < self.safety_box[axis, 0] or tip[axis] > self.safety_box[axis, 1]:
                raise BoxViolation(axis)

    def submit_target(self, q_target: np.ndarray) -> None:
        """Accept a target (latest wins) or raise the violated bound."""
        q_target = np.asarray(q_target, dtype=float)
        self.check_target(q_target)
        self.q_target = q_target.copy()

    def _tip_inside_box(self, q: np.ndarray) -> bool:
        tip = tip_position(self.model, q)
        return bool(
            np.all(tip >= self.safety_box[:, 0]) and np.all(tip <= self.safety_box[:, 1])
        )

    def step(self) -> SimSnapshot:
        """Advance one tick: every joint moves toward the target, clamped.

        Joint-space motion between two in-box targets can still swing the tip
        through the box wall; the step is bisected down to the largest
        fraction that keeps the tip inside (a protective stop at the wall).
        """
        delta = np.clip(self.q_target - self.q, -self.max_step, self.max_step)
        if np.any(delta != 0.0):
            q_next = self.q + delta
            if not self._tip_inside_box(q_next):
                lo, hi = 0.0, 1.0
                for _ in range(24):
                    mid = 0.5 * (lo + hi)
                    if self._tip_inside_box(self.q + mid * delta):
                        lo = mid
                    else:
                        hi = mid
                q_next = self.q + lo * delta
            self.q = q_next
        self.tick += 1
        return self.snapshot()

    def settle(self, timeout_ticks: int = 1000, tol: float = 1e-6) -> SimSnapshot:
        """Step until the target is reached (inf-norm below tol) or time out."""
        for _ in range(timeout_ticks + 1):
            if float(np.max(np.abs(self.q - self.q_target))) < tol:
                return self.snapshot()
            self.step()
        raise SettleTimeout(f"not settled after {timeout_ticks} ticks")

    def snapshot(self) -> SimSnapshot:
        return SimSnapshot(tick=self.tick, q=self.q.copy(), tip_mm=self.tip())

    def tip(self) -> np.ndarray:
        return tip_position(self.model, self.q)

    def at_target(self, tol: float = 1e-6) -> bool:
        return float(np.max(np.abs(self.q - self.q_target))) < tol
