"""Torque-limited pendulum swing-up with explicit-Euler dynamics.

Angle zero is upright; gravity makes it an unstable equilibrium via
theta_ddot = (3g / 2l) sin(theta) + (3 / m l^2) u. Cost is quadratic in the
normalized angle, angular velocity, and applied torque, evaluated on the
state before the update.
"""

from __future__ import annotations

import numpy as np

from trfp.envs.base import Env

GRAVITY = 10.0
MASS = 1.0
LENGTH = 1.0
DT = 0.05
MAX_TORQUE = 2.0
MAX_SPEED = 8.0


def angle_normalize(theta: float) -> float:
    return ((theta + np.pi) % (2.0 * np.pi)) - np.pi


def angular_acceleration(theta: float, torque: float) -> float:
    return (3.0 * GRAVITY / (2.0 * LENGTH) * np.sin(theta)
            + 3.0 / (MASS * LENGTH ** 2) * torque)


class PendulumEnv(Env):
    name = "pendulum"
    obs_dim = 3
    act_dim = 1
    max_steps = 200

    def __init__(self):
        super().__init__()
        self.theta = 0.0
        self.theta_dot = 0.0

    def _obs(self):
        return np.array([np.cos(self.theta), np.sin(self.theta), self.theta_dot])

    def _reset(self, rng):
        self.theta = rng.uniform(-np.pi, np.pi)
        self.theta_dot = rng.uniform(-1.0, 1.0)
        return self._obs()

    def _step(self, a):
        torque = MAX_TORQUE * float(a[0])
        cost = (angle_normalize(self.theta) ** 2
                + 0.1 * self.theta_dot ** 2
                + 0.001 * torque ** 2)
        theta_ddot = angular_acceleration(self.theta, torque)
        self.theta = self.theta + self.theta_dot * DT
        self.theta_dot = np.clip(self.theta_dot + theta_ddot * DT, -MAX_SPEED, MAX_SPEED)
        return self._obs(), -cost, False
