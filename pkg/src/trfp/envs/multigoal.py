"""Point-mass world with four equally rewarded goals on the axes.

From the origin the optimal action distribution has four symmetric modes,
one per goal, which is what the multimodality experiments probe. Reward is
the negative normalized distance to the nearest goal minus a small action
cost; entering a goal disc ends the episode with a bonus.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from trfp.envs.base import Env


@dataclass
class MultigoalSpec:
    goal_distance: float = 5.0
    goal_radius: float = 0.5
    goal_bonus: float = 10.0
    max_steps: int = 40
    action_scale: float = 1.0
    dt: float = 1.0
    action_cost: float = 0.05
    start_radius: float = 0.5
    arena_half_width: float = 10.0
    goal_positions: np.ndarray = field(init=False)

    def __post_init__(self):
        g = self.goal_distance
        self.goal_positions = np.array(
            [[g, 0.0], [-g, 0.0], [0.0, g], [0.0, -g]])


class MultigoalEnv(Env):
    name = "multigoal"
    obs_dim = 2
    act_dim = 2

    def __init__(self, spec: MultigoalSpec | None = None):
        super().__init__()
        self.spec = spec or MultigoalSpec()
        self.max_steps = self.spec.max_steps
        self.position = np.zeros(2)
        self.goal_reached = None

    def _reset(self, rng):
        # uniform over the start disc (by area)
        radius = self.spec.start_radius * np.sqrt(rng.uniform())
        angle = rng.uniform(0.0, 2.0 * np.pi)
        self.position = radius * np.array([np.cos(angle), np.sin(angle)])
        self.goal_reached = None
        return self.position.copy()

    def _step(self, a):
        spec = self.spec
        new_pos = self.position + spec.action_scale * a * spec.dt
        new_pos = np.clip(new_pos, -spec.arena_half_width, spec.arena_half_width)
        dists = np.linalg.norm(spec.goal_positions - new_pos, axis=1)
        reward = -dists.min() / spec.goal_distance - spec.action_cost * float(a @ a)
        hit = int(np.argmin(dists))
        terminal = dists[hit] <= spec.goal_radius
        if terminal:
            reward += spec.goal_bonus
            self.goal_reached = hit
        self.position = new_pos
        return new_pos.copy(), reward, terminal

    def nearest_goal_index(self) -> int:
        dists = np.linalg.norm(self.spec.goal_positions - self.position, axis=1)
        return int(np.argmin(dists))
