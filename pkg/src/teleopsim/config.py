"""Runtime configuration: arm geometry, session behavior, simulator bounds."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .kinematics import (
    DEFAULT_JOINT_LIMITS_DEG,
    DEFAULT_LINK_OFFSETS_MM,
    DEFAULT_TOOL_OFFSET_MM,
    ArmModel,
)


class BadConfig(Exception):
    code = "bad_config"


SCALE_RANGE = (0.05, 10.0)

# elbow-bent start pose: tip forward of the base, comfortably nonsingular
DEFAULT_START_Q_DEG = (0.0, 35.0, 0.0, -75.0, 0.0, 70.0, 0.0)


@dataclass
class SessionConfig:
    scale: float = 1.0
    insert_increment_mm: float = 1.0
    insert_velocity_mm_s: float = 2.0
    standoff_mm: float = 20.0
    waypoint_spacing_mm: float = 1.0
    insert_depth_max_mm: float = 150.0
    ik_skip_limit: int = 10


@dataclass
class SimConfig:
    tick_rate_hz: float = 100.0
    vel_limit_rad_s: float = 1.0
    safety_box_mm: tuple = ((-800.0, 800.0), (-800.0, 800.0), (0.0, 1700.0))
    joint_planes_deg: tuple | None = None  # defaults to the hard joint limits


@dataclass
class ProtocolConfig:
    port: int = 7450
    http_port: int = 7451
    handshake_timeout_s: float = 5.0


@dataclass
class AppConfig:
    arm_link_offsets_mm: tuple = DEFAULT_LINK_OFFSETS_MM
    arm_joint_limits_deg: tuple = DEFAULT_JOINT_LIMITS_DEG
    arm_tool_offset_mm: float = DEFAULT_TOOL_OFFSET_MM
    start_q_deg: tuple = DEFAULT_START_Q_DEG
    session: SessionConfig = field(default_factory=SessionConfig)
    sim: SimConfig = field(default_factory=SimConfig)
    protocol: ProtocolConfig = field(default_factory=ProtocolConfig)

    def arm_model(self) -> ArmModel:
        return ArmModel.build(
            link_offsets_mm=self.arm_link_offsets_mm,
            joint_limits_deg=self.arm_joint_limits_deg,
            tool_offset_mm=self.arm_tool_offset_mm,
        )

    def start_q(self) -> np.ndarray:
        return np.deg2rad(np.asarray(self.start_q_deg, dtype=float))


def _update_dataclass(obj, data: dict, name: str):
    for key, value in data.items():
        if not hasattr(obj, key):
            raise BadConfig(f"unknown {name} config key {key!r}")
        if isinstance(value, list):
            value = tuple(tuple(v) if isinstance(v, list) else v for v in value)
        setattr(obj, key, value)


def load_config(path: str | Path | None) -> AppConfig:
    """Config file (JSON) over defaults; None means all defaults."""
    cfg = AppConfig()
    if path is None:
        return cfg
    path = Path(path)
    if not path.exists():
        raise BadConfig(f"config file not found: {path}")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise BadConfig(f"config file {path} is not valid JSON: {exc}") from None
    if not isinstance(data, dict):
        raise BadConfig(f"config file {path} must hold a JSON object")

    arm = data.pop("arm", None)
    if arm is not None:
        arm_file = arm.pop("file", None)
        if arm_file is not None:
            arm_path = Path(arm_file)
            if not arm_path.is_absolute():
                arm_path = path.parent / arm_path
            if not arm_path.exists():
                raise BadConfig(f"arm description file not found: {arm_path}")
            arm = {**json.loads(arm_path.read_text()), **arm}
        if "link_offsets_mm" in arm:
            cfg.arm_link_offsets_mm = tuple(arm["link_offsets_mm"])
        if "joint_limits_deg" in arm:
            cfg.arm_joint_limits_deg = tuple(tuple(p) for p in arm["joint_limits_deg"])
        if "tool_offset_mm" in arm:
            cfg.arm_tool_offset_mm = float(arm["tool_offset_mm"])
    if "start_q_deg" in data:
        cfg.start_q_deg = tuple(data.pop("start_q_deg"))
    for section, target in (("session", cfg.session), ("sim", cfg.sim), ("protocol", cfg.protocol)):
        if section in data:
            _update_dataclass(target, data.pop(section), section)
    if data:
        raise BadConfig(f"unknown config keys: {sorted(data)}")
    validate_config(cfg)
    return cfg


def validate_config(cfg: AppConfig) -> None:
    s = cfg.session
    if not (SCALE_RANGE[0] <= s.scale <= SCALE_RANGE[1]):
        raise BadConfig(f"scale {s.scale} outside [{SCALE_RANGE[0]}, {SCALE_RANGE[1]}]")
    for name in ("insert_increment_mm", "insert_velocity_mm_s", "standoff_mm",
                 "waypoint_spacing_mm", "insert_depth_max_mm"):
        if getattr(s, name) <= 0:
            raise BadConfig(f"session.{name} must be positive")
    if cfg.sim.tick_rate_hz <= 0 or cfg.sim.vel_limit_rad_s <= 0:
        raise BadConfig("sim rates must be positive")
    try:
        cfg.arm_model()
    except ValueError as exc:
        raise BadConfig(f"arm geometry invalid: {exc}") from None
