"""Operator-frame to robot-base-frame calibration.

The operator device reports positions in meters in its own frame; the robot
works in millimeters in its base frame.  Calibration = unit normalization
plus a rigid transform estimated from point correspondences (centroid
subtraction, cross-covariance SVD, reflection-corrected rotation).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import quat


class CalibrationError(Exception):
    code = "calibration"


class TooFewPairs(CalibrationError):
    code = "too_few_pairs"

    def __init__(self, n: int):
        super().__init__(f"registration needs at least 3 point pairs, got {n}")


class DegenerateGeometry(CalibrationError):
    code = "degenerate_geometry"

    def __init__(self):
        super().__init__("marker points are collinear; re-collect markers")


@dataclass(frozen=True)
class RigidTransform:
    """Rotation (unit quaternion, wxyz) + translation (mm)."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=float))
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=float))
        n = np.linalg.norm(self.rotation)
        if abs(n - 1.0) > 1e-9:
            raise ValueError(f"rotation quaternion norm {n} != 1")

    @staticmethod
    def identity() -> "RigidTransform":
        return RigidTransform(quat.IDENTITY.copy(), np.zeros(3))

    def matrix(self) -> np.ndarray:
        return quat.to_matrix(self.rotation)

    def inverse(self) -> "RigidTransform":
        q_inv = quat.conjugate(self.rotation)
        return RigidTransform(quat.normalize(q_inv), -quat.rotate(q_inv, self.translation))

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """self after other: (self * other)(p) = self(other(p))."""
        return RigidTransform(
            quat.normalize(quat.multiply(self.rotation, other.rotation)),
            quat.rotate(self.rotation, other.translation) + self.translation,
        )


@dataclass
class PointPairSet:
    """Corresponding points: operator frame (m) vs robot base frame (mm)."""

    operator_m: np.ndarray  # (n, 3)
    robot_mm: np.ndarray  # (n, 3)
    labels: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.operator_m = np.atleast_2d(np.asarray(self.operator_m, dtype=float))
        self.robot_mm = np.atleast_2d(np.asarray(self.robot_mm, dtype=float))
        if self.operator_m.shape != self.robot_mm.shape or self.operator_m.shape[1] != 3:
            raise ValueError("operator and robot point arrays must both be (n, 3)")

    def __len__(self) -> int:
        return self.operator_m.shape[0]

    @staticmethod
    def from_file(path: str | Path) -> "PointPairSet":
        data = json.loads(Path(path).read_text())
        pairs = data["pairs"]
        return PointPairSet(
            operator_m=[p["operator_m"] for p in pairs],
            robot_mm=[p["robot_mm"] for p in pairs],
            labels=[p.get("label", f"pair{i}") for i, p in enumerate(pairs)],
        )

    def to_file(self, path: str | Path) -> None:
        pairs = []
        for i in range(len(self)):
            pairs.append(
                {
                    "operator_m": list(self.operator_m[i]),
                    "robot_mm": list(self.robot_mm[i]),
                    "label": self.labels[i] if i < len(self.labels) else f"pair{i}",
                }
            )
        Path(path).write_text(json.dumps({"pairs": pairs}, indent=2, sort_keys=True))


def meters_to_millimeters(p) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if not np.all(np.isfinite(p)):
        raise ValueError("point must be finite")
    return p * 1000.0


def apply_transform(T: RigidTransform, p) -> np.ndarray:
    """R @ p + t, millimeters in and out."""
    return T.matrix() @ np.asarray(p, dtype=float) + T.translation


@dataclass(frozen=True)
class RegistrationResult:
    transform: RigidTransform
    rms_mm: float
    max_mm: float
    n_pairs: int


def register_frames(pairs: PointPairSet) -> RegistrationResult:
    """Least-squares rigid transform taking operator points onto robot points.

    Operator input is converted to millimeters first; the returned rotation is
    always proper (det = +1), so mirrored point sets come back as the best
    proper rotation with a larger residual rather than a reflection.
    """
    n = len(pairs)
    if n < 3:
        raise TooFewPairs(n)
    A = meters_to_millimeters(pairs.operator_m)
    B = pairs.robot_mm.astype(float)

    centroid_a = A.mean(axis=0)
    centroid_b = B.mean(axis=0)
    Ac = A - centroid_a
    Bc = B - centroid_b

    sigma = np.linalg.svd(Ac, compute_uv=False)
    if sigma[1] <= 1e-9 * max(sigma[0], 1.0):
        raise DegenerateGeometry()

    H = Ac.T @ Bc
    U, _, Vt = np.linalg.svd(H)
    d = np.sign(np.linalg.det(Vt.T @ U.T))
    R = Vt.T @ np.diag([1.0, 1.0, d]) @ U.T
    t = centroid_b - R @ centroid_a

    T = RigidTransform(quat.from_matrix(R), t)
    residuals = np.linalg.norm((A @ R.T + t) - B, axis=1)
    return RegistrationResult(
        transform=T,
        rms_mm=float(np.sqrt(np.mean(residuals**2))),
        max_mm=float(residuals.max()),
        n_pairs=n,
    )


@dataclass(frozen=True)
class MarkerReport:
    errors_mm: np.ndarray
    mean_mm: float
    max_mm: float


def verify_calibration(T: RigidTransform, operator_readings_m, robot_markers_mm) -> MarkerReport:
    """Per-marker error between transformed operator readings and robot markers."""
    readings = meters_to_millimeters(np.atleast_2d(np.asarray(operator_readings_m, dtype=float)))
    markers = np.atleast_2d(np.asarray(robot_markers_mm, dtype=float))
    R = T.matrix()
    errors = np.linalg.norm((readings @ R.T + T.translation) - markers, axis=1)
    return MarkerReport(errors_mm=errors, mean_mm=float(errors.mean()), max_mm=float(errors.max()))


def save_calibration(path: str | Path, result: RegistrationResult) -> None:
    payload = {
        "rotation_wxyz": list(result.transform.rotation),
        "translation_mm": list(result.transform.translation),
        "residual": {"rms_mm": result.rms_mm, "max_mm": result.max_mm, "n_pairs": result.n_pairs},
        "timestamp": datetime.now(timezone.utc).isoformat(),
    }
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True))


def load_calibration(path: str | Path) -> RigidTransform:
    data = json.loads(Path(path).read_text())
    return RigidTransform(
        quat.normalize(np.asarray(data["rotation_wxyz"], dtype=float)),
        np.asarray(data["translation_mm"], dtype=float),
    )


def transform_to_dict(T: RigidTransform) -> dict:
    return {"rotation_wxyz": list(T.rotation), "translation_mm": list(T.translation)}


def transform_from_dict(data: dict) -> RigidTransform:
    return RigidTransform(
        quat.normalize(np.asarray(data["rotation_wxyz"], dtype=float)),
        np.asarray(data["translation_mm"], dtype=float),
    )
