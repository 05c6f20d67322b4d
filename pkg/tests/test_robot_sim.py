import numpy as np
import pytest

from teleopsim.config import SimConfig
from teleopsim.kinematics import forward_kinematics, inverse_kinematics, Pose
from teleopsim.robot_sim import (
    BoxViolation,
    PlaneViolation,
    RobotSim,
    SettleTimeout,
)

START_Q = np.deg2rad([0.0, 35.0, 0.0, -75.0, 0.0, 70.0, 0.0])


def make_sim(arm, **kwargs):
    return RobotSim(arm, SimConfig(**kwargs), START_Q.copy())


class TestSubmitTarget:
    def test_current_q_accepted(self, arm):
        sim = make_sim(arm)
        sim.submit_target(sim.q)
        snap = sim.step()
        np.testing.assert_array_equal(snap.q, START_Q)

    def test_plane_violation_names_joint(self, arm):
        planes = [[-170, 170], [-10, 10], [-170, 170], [-120, 120],
                  [-170, 170], [-120, 120], [-175, 175]]
        sim = RobotSim(arm, SimConfig(joint_planes_deg=planes), np.zeros(7))
        target = np.zeros(7)
        target[1] = np.deg2rad(20.0)
        with pytest.raises(PlaneViolation) as exc:
            sim.submit_target(target)
        assert exc.value.joint == 1

    def test_box_violation_on_out_of_box_tip(self, arm):
        # tip sits at x ~= 617 at the start pose; bound the box 1 mm ahead of a
        # +5 mm x move so the moved tip lands just outside
        _, tip = forward_kinematics(arm, START_Q)
        box = ((-800.0, tip.position[0] + 4.0), (-800.0, 800.0), (0.0, 1700.0))
        sim = RobotSim(arm, SimConfig(safety_box_mm=box), START_Q.copy())
        target_pose = Pose(tip.position + np.array([5.0, 0.0, 0.0]), tip.orientation)
        q_bad = inverse_kinematics(arm, target_pose, START_Q)
        with pytest.raises(BoxViolation) as exc:
            sim.submit_target(q_bad)
        assert exc.value.axis == 0

    def test_latest_wins(self, arm):
        sim = make_sim(arm)
        t1 = START_Q + 0.05
        t2 = START_Q - 0.05
        sim.submit_target(t1)
        sim.submit_target(t2)
        for _ in range(200):
            sim.step()
        np.testing.assert_allclose(sim.q, t2, atol=1e-12)


class TestStep:
    def test_no_motion_at_target(self, arm):
        sim = make_sim(arm)
        before = sim.q.copy()
        snap = sim.step()
        np.testing.assert_array_equal(snap.q, before)
        assert snap.tick == 1

    def test_exact_tick_count(self, arm):
        sim = make_sim(arm, vel_limit_rad_s=1.0, tick_rate_hz=100.0)
        target = START_Q.copy()
        target[0] += 0.1
        sim.submit_target(target)
        for k in range(10):
            sim.step()
        np.testing.assert_allclose(sim.q, target, atol=1e-15)
        # reached in exactly 10 ticks: one tick earlier it was still short
        sim2 = make_sim(arm)
        sim2.submit_target(target)
        for k in range(9):
            sim2.step()
        assert abs(sim2.q[0] - target[0]) > 1e-6

    def test_velocity_bound_exact(self, arm, rng):
        sim = make_sim(arm)
        max_step = sim.max_step
        for _ in range(50):
            target = np.clip(
                START_Q + rng.uniform(-0.5, 0.5, 7),
                sim.joint_planes[:, 0],
                sim.joint_planes[:, 1],
            )
            try:
                sim.submit_target(target)
            except Exception:
                continue
            q_prev = sim.q.copy()
            sim.step()
            assert float(np.max(np.abs(sim.q - q_prev))) <= max_step + 1e-15

    def test_deterministic_trajectory(self, arm):
        def run():
            sim = make_sim(arm)
            out = []
            for k in range(100):
                if k == 10:
                    sim.submit_target(START_Q + 0.2)
                if k == 50:
                    sim.submit_target(START_Q - 0.1)
                out.append(sim.step().q)
            return np.array(out)

        np.testing.assert_array_equal(run(), run())


class TestSettle:
    def test_immediate_when_at_target(self, arm):
        sim = make_sim(arm)
        snap = sim.settle(timeout_ticks=0)
        assert snap.tick == 0

    def test_bounded_tick_count(self, arm):
        sim = make_sim(arm, vel_limit_rad_s=1.0, tick_rate_hz=100.0)
        target = START_Q.copy()
        target[2] += 0.5
        sim.submit_target(target)
        snap = sim.settle(timeout_ticks=51)
        assert snap.tick <= 51

    def test_timeout(self, arm):
        sim = make_sim(arm)
        target = START_Q.copy()
        target[0] += 0.5
        sim.submit_target(target)
        with pytest.raises(SettleTimeout):
            sim.settle(timeout_ticks=10)


class TestSafetyMonotone:
    def test_never_violates_bounds(self, arm, rng):
        sim = make_sim(arm)
        for k in range(500):
            if k % 20 == 0:
                target = np.clip(
                    START_Q + rng.uniform(-0.8, 0.8, 7),
                    sim.joint_planes[:, 0],
                    sim.joint_planes[:, 1],
                )
                try:
                    sim.submit_target(target)
                except Exception:
                    pass
            snap = sim.step()
            assert np.all(snap.q >= sim.joint_planes[:, 0] - 1e-12)
            assert np.all(snap.q <= sim.joint_planes[:, 1] + 1e-12)
            tip = snap.tip_mm
            for axis in range(3):
                assert sim.safety_box[axis, 0] - 1e-9 <= tip[axis] <= sim.safety_box[axis, 1] + 1e-9
