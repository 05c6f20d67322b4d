"""Kinematics for a 7-revolute-joint serial arm carrying a rigid camera.

The arm is a vertical chain of alternating z/y joints (shoulder, elbow and
wrist offsets along the parent z-axis), with the camera extending along the
flange z-axis.  Positions are millimeters, angles radians.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import quat

N_JOINTS = 7

DEFAULT_LINK_OFFSETS_MM = (360.0, 420.0, 400.0, 126.0)
DEFAULT_TOOL_OFFSET_MM = 300.0
DEFAULT_JOINT_LIMITS_DEG = (
    (-170.0, 170.0),
    (-120.0, 120.0),
    (-170.0, 170.0),
    (-120.0, 120.0),
    (-170.0, 170.0),
    (-120.0, 120.0),
    (-175.0, 175.0),
)

_EZ = np.array([0.0, 0.0, 1.0])
_EY = np.array([0.0, 1.0, 0.0])


class KinematicsError(Exception):
    """Base class for kinematics failures."""


class NotConverged(KinematicsError):
    def __init__(self, iterations: int, pos_err: float, ori_err: float):
        self.iterations = iterations
        self.pos_err = pos_err
        self.ori_err = ori_err
        super().__init__(
            f"ik did not converge after {iterations} iterations "
            f"(pos {pos_err:.3g} mm, ori {ori_err:.3g} rad)"
        )


class OutOfLimits(KinematicsError):
    def __init__(self, joints: list[int]):
        self.joints = joints
        super().__init__(f"no limit-feasible solution; joints {joints} pinned at limits")


@dataclass(frozen=True)
class Pose:
    """Position (mm) plus unit quaternion orientation, base frame."""

    position: np.ndarray
    orientation: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float))
        object.__setattr__(self, "orientation", np.asarray(self.orientation, dtype=float))
        n = np.linalg.norm(self.orientation)
        if abs(n - 1.0) > 1e-9:
            raise ValueError(f"orientation quaternion norm {n} != 1")

    def rotation(self) -> np.ndarray:
        return quat.to_matrix(self.orientation)


@dataclass(frozen=True)
class ArmModel:
    """Geometry of the arm: per-joint rotation axis and mount translation.

    ``joint_axes[i]`` is ``(axis, offset)``: the joint's rotation axis in its
    parent frame and the translation from the previous joint, both expressed
    at the zero configuration.  ``link_offsets`` keeps the four named lengths
    (shoulder, elbow, wrist, flange) the chain was built from.
    """

    joint_axes: tuple[tuple[np.ndarray, np.ndarray], ...]
    joint_limits: np.ndarray
    tool_offset: float
    link_offsets: tuple[float, float, float, float]
    flange_offset: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        if len(self.joint_axes) != N_JOINTS:
            raise ValueError("arm must have exactly 7 joints")
        if any(d <= 0 for d in self.link_offsets):
            raise ValueError("link offsets must be positive")
        if self.tool_offset < 0:
            raise ValueError("tool offset must be >= 0")
        limits = np.asarray(self.joint_limits, dtype=float)
        if limits.shape != (N_JOINTS, 2) or not np.all(limits[:, 0] < limits[:, 1]):
            raise ValueError("joint limits must be 7 (min, max) pairs with min < max")
        object.__setattr__(self, "joint_limits", limits)

    @staticmethod
    def build(
        link_offsets_mm=DEFAULT_LINK_OFFSETS_MM,
        joint_limits_deg=DEFAULT_JOINT_LIMITS_DEG,
        tool_offset_mm=DEFAULT_TOOL_OFFSET_MM,
    ) -> "ArmModel":
        d_bs, d_se, d_ew, d_wf = (float(v) for v in link_offsets_mm)
        zero = np.zeros(3)
        axes = (
            (_EZ, zero),
            (_EY, np.array([0.0, 0.0, d_bs])),
            (_EZ, zero),
            (-_EY, np.array([0.0, 0.0, d_se])),
            (_EZ, zero),
            (_EY, np.array([0.0, 0.0, d_ew])),
            (_EZ, zero),
        )
        limits = np.deg2rad(np.asarray(joint_limits_deg, dtype=float))
        return ArmModel(
            joint_axes=axes,
            joint_limits=limits,
            tool_offset=float(tool_offset_mm),
            link_offsets=(d_bs, d_se, d_ew, d_wf),
            flange_offset=np.array([0.0, 0.0, d_wf]),
        )

    @staticmethod
    def from_file(path: str | Path) -> "ArmModel":
        data = json.loads(Path(path).read_text())
        return ArmModel.build(
            link_offsets_mm=data["link_offsets_mm"],
            joint_limits_deg=data["joint_limits_deg"],
            tool_offset_mm=data["tool_offset_mm"],
        )

    def midpoints(self) -> np.ndarray:
        return 0.5 * (self.joint_limits[:, 0] + self.joint_limits[:, 1])

    def within_limits(self, q: np.ndarray, tol: float = 1e-12) -> bool:
        q = np.asarray(q, dtype=float)
        return bool(
            np.all(q >= self.joint_limits[:, 0] - tol)
            and np.all(q <= self.joint_limits[:, 1] + tol)
        )

    def clamp(self, q: np.ndarray) -> np.ndarray:
        return np.clip(q, self.joint_limits[:, 0], self.joint_limits[:, 1])


def _check_q(q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    if q.shape != (N_JOINTS,):
        raise ValueError(f"expected 7 joint angles, got shape {q.shape}")
    if not np.all(np.isfinite(q)):
        raise ValueError("joint vector must be finite")
    return q


def _axis_rotation(axis: np.ndarray, angle: float) -> np.ndarray:
    """Rodrigues rotation about a unit axis."""
    c = np.cos(angle)
    s = np.sin(angle)
    x, y, z = axis
    C = 1.0 - c
    return np.array(
        [
            [c + x * x * C, x * y * C - z * s, x * z * C + y * s],
            [y * x * C + z * s, c + y * y * C, y * z * C - x * s],
            [z * x * C - y * s, z * y * C + x * s, c + z * z * C],
        ]
    )


def chain_frames(model: ArmModel, q: np.ndarray):
    """World-frame joint origins and axes plus the flange frame.

    Returns ``(origins (7,3), axes (7,3), R_flange, p_flange)``.
    """
    q = _check_q(q)
    R = np.eye(3)
    p = np.zeros(3)
    origins = np.empty((N_JOINTS, 3))
    axes = np.empty((N_JOINTS, 3))
    for i, (axis, offset) in enumerate(model.joint_axes):
        p = p + R @ offset
        origins[i] = p
        axes[i] = R @ axis
        R = R @ _axis_rotation(axis, q[i])
    p_flange = p + R @ model.flange_offset
    return origins, axes, R, p_flange


def forward_kinematics(model: ArmModel, q: np.ndarray) -> tuple[Pose, Pose]:
    """Flange pose and camera-tip pose for joint vector q."""
    _, _, R, p_flange = chain_frames(model, q)
    orientation = quat.from_matrix(R)
    tip = p_flange + model.tool_offset * R[:, 2]
    return Pose(p_flange, orientation), Pose(tip, orientation)


def tip_position(model: ArmModel, q: np.ndarray) -> np.ndarray:
    _, _, R, p_flange = chain_frames(model, q)
    return p_flange + model.tool_offset * R[:, 2]


def camera_axis(model: ArmModel, q: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Flange position and camera shaft direction (unit, along flange z)."""
    _, _, R, p_flange = chain_frames(model, q)
    return p_flange, R[:, 2].copy()


def jacobian(model: ArmModel, q: np.ndarray) -> np.ndarray:
    """Geometric 6x7 Jacobian at the camera tip.

    Column i is (z_i x (p_tip - p_i), z_i): linear velocity mm/rad on top,
    angular rad/rad below.
    """
    origins, axes, R, p_flange = chain_frames(model, q)
    p_tip = p_flange + model.tool_offset * R[:, 2]
    J = np.empty((6, N_JOINTS))
    J[:3] = np.cross(axes, p_tip[None, :] - origins).T
    J[3:] = axes.T
    return J


def manipulability(J: np.ndarray) -> float:
    """w = sqrt(det(J J^T)); zero exactly at singular configurations."""
    J = np.asarray(J, dtype=float)
    d = float(np.linalg.det(J @ J.T))
    return float(np.sqrt(max(d, 0.0)))


@dataclass(frozen=True)
class IKOptions:
    pos_tol: float = 1e-3  # mm
    ori_tol: float = 1e-4  # rad
    max_iters: int = 200
    damping_base: float = 0.5
    damping_max: float = 50.0
    sigma_min: float = 20.0  # scaled singular value below which damping ramps up
    rot_scale: float = 300.0  # mm-per-rad weight putting orientation rows on the mm scale
    null_gain: float = 0.1
    max_step: float = 0.5  # rad, per-iteration inf-norm clamp on the task step


DEFAULT_IK_OPTIONS = IKOptions()


def _pose_error(model: ArmModel, q: np.ndarray, target: Pose):
    origins, axes, R, p_flange = chain_frames(model, q)
    p_tip = p_flange + model.tool_offset * R[:, 2]
    e_pos = target.position - p_tip
    dR = target.rotation() @ R.T
    e_ori = quat.to_rotvec(quat.from_matrix(dR))
    return origins, axes, p_tip, e_pos, e_ori


def _dls_iterate(
    model: ArmModel,
    target: Pose,
    seed: np.ndarray,
    opts: IKOptions,
    clamp_limits: bool,
) -> tuple[np.ndarray, int, float, float]:
    q = seed.astype(float).copy()
    q_mid = model.midpoints()
    pos_err = ori_err = np.inf
    for it in range(opts.max_iters + 1):
        origins, axes, p_tip, e_pos, e_ori = _pose_error(model, q, target)
        pos_err = float(np.linalg.norm(e_pos))
        ori_err = float(np.linalg.norm(e_ori))
        if pos_err < opts.pos_tol and ori_err < opts.ori_tol:
            return q, it, pos_err, ori_err
        if it == opts.max_iters:
            break
        J = np.empty((6, N_JOINTS))
        J[:3] = np.cross(axes, p_tip[None, :] - origins).T
        J[3:] = axes.T * opts.rot_scale
        e = np.concatenate([e_pos, e_ori * opts.rot_scale])
        # damped least squares through the SVD: damping rises per direction as
        # its singular value collapses, so near-singular directions stay tame
        # while healthy ones take an (almost) undamped Newton step
        U, S, Vt = np.linalg.svd(J, full_matrices=False)
        lam2 = opts.damping_base**2 + np.where(
            S >= opts.sigma_min,
            0.0,
            (1.0 - (S / opts.sigma_min) ** 2) * opts.damping_max**2,
        )
        dq = Vt.T @ ((S / (S * S + lam2)) * (U.T @ e))
        step = float(np.max(np.abs(dq)))
        if step > opts.max_step:
            dq *= opts.max_step / step
        # midpoint bias in the exact null space, never larger than the task
        # step so it cannot hold the iteration away from the tolerance
        bias = opts.null_gain * ((q_mid - q) - Vt.T @ (Vt @ (q_mid - q)))
        bias_step = float(np.max(np.abs(bias)))
        task_step = float(np.max(np.abs(dq)))
        if bias_step > task_step and bias_step > 0.0:
            bias *= task_step / bias_step
        q = q + dq + bias
        if clamp_limits:
            q = model.clamp(q)
    return q, opts.max_iters, pos_err, ori_err


def inverse_kinematics(
    model: ArmModel,
    target: Pose,
    seed: np.ndarray,
    opts: IKOptions = DEFAULT_IK_OPTIONS,
) -> np.ndarray:
    """Damped-least-squares IK with adaptive damping and midpoint bias.

    Returns a joint vector within limits whose tip pose matches ``target``
    within ``opts.pos_tol`` / ``opts.ori_tol``.  Raises ``NotConverged`` when
    the target is unreachable within the iteration budget and ``OutOfLimits``
    when a solution exists only outside the joint limits.
    """
    seed = _check_q(seed)
    if not np.all(np.isfinite(target.position)):
        raise ValueError("target position must be finite")
    q, iters, pos_err, ori_err = _dls_iterate(model, target, seed, opts, clamp_limits=True)
    if pos_err < opts.pos_tol and ori_err < opts.ori_tol:
        return model.clamp(q)
    # diagnose: does an unconstrained solve reach the target outside limits?
    q_free, _, pos_f, ori_f = _dls_iterate(model, target, seed, opts, clamp_limits=False)
    if pos_f < opts.pos_tol and ori_f < opts.ori_tol and not model.within_limits(q_free):
        pinned = [
            int(i)
            for i in range(N_JOINTS)
            if q_free[i] < model.joint_limits[i, 0] or q_free[i] > model.joint_limits[i, 1]
        ]
        raise OutOfLimits(pinned)
    raise NotConverged(iters, pos_err, ori_err)
