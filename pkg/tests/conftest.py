import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from teleopsim import kinematics


@pytest.fixture(scope="session")
def arm() -> kinematics.ArmModel:
    return kinematics.ArmModel.build()


@pytest.fixture()
def rng() -> np.random.Generator:
    return np.random.default_rng(20240117)


def random_in_limit_q(model: kinematics.ArmModel, rng: np.random.Generator, margin=0.9):
    lo = model.joint_limits[:, 0] * margin
    hi = model.joint_limits[:, 1] * margin
    return rng.uniform(lo, hi)


def random_interior_q(model: kinematics.ArmModel, rng: np.random.Generator, margin=0.9):
    """Random in-limit pose away from workspace-boundary singularities.

    Near a stretch singularity the tip sits on the reachable boundary, so
    perturbed position targets can be physically unreachable; kinematics
    properties that expect convergence sample interior poses instead.
    """
    while True:
        q = random_in_limit_q(model, rng, margin)
        J = kinematics.jacobian(model, q)
        J[3:] *= 300.0
        if np.linalg.svd(J, compute_uv=False)[-1] >= 60.0:
            return q
