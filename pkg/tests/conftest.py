"""Shared fixtures: the lane-change benchmark systems and cached oracles."""

import numpy as np
import pytest

from mitlearn.augment import OutputReference, augment
from mitlearn.game import PlantMode
from mitlearn.learner import oracle_solutions

# lane-change benchmark: x1 spacing, x2 own speed, x3 insider speed
A_SIGMA = {
    1: np.array([[0.0, 1.0, -1.0], [0.0, 0.0, 0.0], [0.5345, 0.2893, -1.8477]]),
    2: np.array([[0.0, 1.0, -1.0], [0.0, 0.0, 0.0], [0.240, 0.35, -1.60]]),
    3: np.array([[0.0, 1.0, -1.0], [0.0, 0.0, 0.0], [0.225, 0.30, -1.80]]),
}
D_SIGMA = {
    1: np.array([0.0, 0.0, 18.0]),
    2: np.array([0.0, 0.0, 25.0]),
    3: np.array([0.0, 0.0, 30.0]),
}
B1 = np.array([[0.0], [1.0], [0.0]])
C_OUT = np.array([[1.0, 0.0, 0.0]])
SAFE_DISTANCE = 73.0


@pytest.fixture(scope="session")
def lane_modes():
    return {
        mid: PlantMode(mode_id=mid, A_sigma=A_SIGMA[mid], B1=B1, d_sigma=D_SIGMA[mid],
                       label={1: "cooperative", 2: "selfish", 3: "adversarial"}[mid])
        for mid in (1, 2, 3)
    }


@pytest.fixture(scope="session")
def lane_reference():
    # controller-side integrator (E = 0), matching the bundled scenarios
    return OutputReference(C=C_OUT, x_d_ref=[SAFE_DISTANCE], E=np.zeros((3, 1)))


@pytest.fixture(scope="session")
def lane_aug(lane_modes, lane_reference):
    return {mid: augment(mode, lane_reference) for mid, mode in lane_modes.items()}


@pytest.fixture(scope="session")
def lane_weights():
    return np.eye(4), np.array([[1.0]])


@pytest.fixture(scope="session")
def lane_oracle(lane_aug, lane_weights):
    Q, R1t = lane_weights
    return oracle_solutions(lane_aug, Q, R1t)
