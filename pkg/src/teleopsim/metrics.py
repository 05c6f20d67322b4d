"""Evaluation pipeline: positional error, trajectory deviation, latency, timing.

All analysis runs offline over immutable sample arrays collected by the
session tap or parsed from recordings; nothing here mutates session state.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kinematics import ArmModel, tip_position


class EmptySeries(Exception):
    code = "empty_series"


class MissingMarker(Exception):
    code = "missing_marker"


def positional_error(target_mm, model: ArmModel, q) -> float:
    """Distance between a commanded target and the camera tip at q (mm)."""
    target_mm = np.asarray(target_mm, dtype=float)
    return float(np.linalg.norm(target_mm - tip_position(model, q)))


@dataclass(frozen=True)
class AlignedSeries:
    """Tip positions resampled onto the hand timestamps."""

    t_ms: np.ndarray
    hand_mm: np.ndarray  # (n, 3)
    tip_mm: np.ndarray  # (n, 3)

    def distances(self) -> np.ndarray:
        return np.linalg.norm(self.hand_mm - self.tip_mm, axis=1)


def resample_series(t_ms: np.ndarray, series_t_ms: np.ndarray, series: np.ndarray) -> np.ndarray:
    """Piecewise-linear interpolation of a (n,3) series at new timestamps."""
    out = np.empty((len(t_ms), 3))
    for axis in range(3):
        out[:, axis] = np.interp(t_ms, series_t_ms, series[:, axis])
    return out


def trajectory_deviation(
    hand_t_ms, hand_mm, tip_t_ms, tip_mm
) -> tuple[float, AlignedSeries]:
    """RMS pointwise distance between the hand series and the tip series.

    The hand series must already be in commanded-tip space (normalized,
    transformed and scaled); the tip series is linearly interpolated at the
    hand timestamps.
    """
    hand_t_ms = np.asarray(hand_t_ms, dtype=float)
    tip_t_ms = np.asarray(tip_t_ms, dtype=float)
    hand_mm = np.atleast_2d(np.asarray(hand_mm, dtype=float))
    tip_mm = np.atleast_2d(np.asarray(tip_mm, dtype=float))
    if len(hand_t_ms) < 2 or len(tip_t_ms) < 2:
        raise EmptySeries("need at least 2 samples per series")
    aligned_tip = resample_series(hand_t_ms, tip_t_ms, tip_mm)
    aligned = AlignedSeries(t_ms=hand_t_ms, hand_mm=hand_mm, tip_mm=aligned_tip)
    rms = float(np.sqrt(np.mean(aligned.distances() ** 2)))
    return rms, aligned


@dataclass(frozen=True)
class LatencyStats:
    median_us: float
    p95_us: float
    max_us: float
    count: int

    def as_dict(self) -> dict:
        return {
            "median_us": self.median_us,
            "p95_us": self.p95_us,
            "max_us": self.max_us,
            "count": self.count,
        }


def latency_stats(receive_ts_us, command_ts_us) -> LatencyStats:
    """Order statistics of command_ts - receive_ts (one monotonic clock).

    Integer microsecond inputs stay integers through the subtraction, which
    keeps the stats exactly invariant under constant clock shifts.
    """
    receive = np.asarray(receive_ts_us)
    command = np.asarray(command_ts_us)
    if receive.shape != command.shape:
        raise ValueError("timestamp arrays must have matching shapes")
    if receive.size == 0:
        return LatencyStats(0.0, 0.0, 0.0, 0)
    deltas = command.astype(np.int64) - receive.astype(np.int64) if (
        np.issubdtype(receive.dtype, np.integer) and np.issubdtype(command.dtype, np.integer)
    ) else command.astype(float) - receive.astype(float)
    if np.any(deltas < 0):
        raise ValueError("command timestamps must not precede receive timestamps")
    return LatencyStats(
        median_us=float(np.median(deltas)),
        p95_us=float(np.percentile(deltas, 95)),
        max_us=float(deltas.max()),
        count=int(deltas.size),
    )


def task_timer(events: list[tuple[str, float]]) -> float:
    """Duration (s) between 'start' and 'end' markers in an event list."""
    start = end = None
    for label, t_s in events:
        if label == "start" and start is None:
            start = t_s
        elif label == "end":
            end = t_s
    if start is None or end is None:
        raise MissingMarker("need both 'start' and 'end' markers")
    return float(end - start)
