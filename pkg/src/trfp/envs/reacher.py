"""Planar two-link reacher, kinematic: actions rotate the joints directly.

Reward is the negative fingertip-to-target distance minus a small action
cost. Episodes are fixed-horizon; the target is resampled each reset.
"""

from __future__ import annotations

import numpy as np

from trfp.envs.base import Env

LINK_1 = 0.5
LINK_2 = 0.5
JOINT_STEP = 0.2  # max joint rotation per step, radians
TARGET_R_MIN = 0.2
TARGET_R_MAX = 0.8


def fingertip(theta: np.ndarray) -> np.ndarray:
    x = LINK_1 * np.cos(theta[0]) + LINK_2 * np.cos(theta[0] + theta[1])
    y = LINK_1 * np.sin(theta[0]) + LINK_2 * np.sin(theta[0] + theta[1])
    return np.array([x, y])


class ReacherEnv(Env):
    name = "reacher"
    obs_dim = 8
    act_dim = 2
    max_steps = 50

    def __init__(self):
        super().__init__()
        self.theta = np.zeros(2)
        self.target = np.zeros(2)

    def _obs(self):
        tip = fingertip(self.theta)
        return np.concatenate([
            [np.cos(self.theta[0]), np.sin(self.theta[0]),
             np.cos(self.theta[1]), np.sin(self.theta[1])],
            self.target,
            tip - self.target,
        ])

    def _reset(self, rng):
        self.theta = rng.uniform(-np.pi, np.pi, size=2)
        radius = TARGET_R_MIN + (TARGET_R_MAX - TARGET_R_MIN) * np.sqrt(rng.uniform())
        angle = rng.uniform(0.0, 2.0 * np.pi)
        self.target = radius * np.array([np.cos(angle), np.sin(angle)])
        return self._obs()

    def _step(self, a):
        self.theta = (self.theta + JOINT_STEP * a + np.pi) % (2.0 * np.pi) - np.pi
        dist = float(np.linalg.norm(fingertip(self.theta) - self.target))
        reward = -dist - 0.01 * float(a @ a)
        return self._obs(), reward, False
