"""Environment contract shared by the built-in continuous-control tasks.

All tasks expose vector observations, actions in [-1, 1]^{d_a} (clamped on
entry), and deterministic dynamics; randomness enters only through the rng
handed to ``reset``. ``done`` covers both true terminal states and horizon
exhaustion; ``last_step_terminal`` distinguishes the two so training can
bootstrap through time limits.
"""

from __future__ import annotations

import numpy as np


class EnvError(RuntimeError):
    """Environment misuse, e.g. stepping a finished episode."""


class Env:
    """Base class: subclasses set dims and implement _reset/_step."""

    obs_dim: int
    act_dim: int
    max_steps: int
    name: str

    def __init__(self):
        self.step_index = 0
        self.done = True
        self.last_step_terminal = False

    def reset(self, rng: np.random.Generator) -> np.ndarray:
        self.step_index = 0
        self.done = False
        self.last_step_terminal = False
        obs = self._reset(rng)
        return np.asarray(obs, dtype=np.float64)

    def step(self, action):
        """Advance one step; returns (observation, reward, done)."""
        if self.done:
            raise EnvError(f"{self.name}: step called on a finished episode; reset first")
        a = np.clip(np.asarray(action, dtype=np.float64).reshape(self.act_dim), -1.0, 1.0)
        obs, reward, terminal = self._step(a)
        self.step_index += 1
        self.last_step_terminal = bool(terminal)
        self.done = bool(terminal) or self.step_index >= self.max_steps
        return np.asarray(obs, dtype=np.float64), float(reward), self.done

    def action_bounds(self):
        low = -np.ones(self.act_dim)
        return low, -low

    def _reset(self, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    def _step(self, a: np.ndarray):
        raise NotImplementedError


def write_trajectory_csv(path, episodes, obs_dim: int, act_dim: int):
    """Dump episodes as CSV rows: episode,step,obs...,action...,reward,done.

    ``episodes`` is a sequence of per-episode lists of
    (observation, action, reward, done) tuples.
    """
    header = (["episode", "step"]
              + [f"obs{i}" for i in range(obs_dim)]
              + [f"act{i}" for i in range(act_dim)]
              + ["reward", "done"])
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for ep, steps in enumerate(episodes):
            for t, (obs, action, reward, done) in enumerate(steps):
                row = ([str(ep), str(t)]
                       + [repr(float(v)) for v in np.asarray(obs).reshape(-1)]
                       + [repr(float(v)) for v in np.asarray(action).reshape(-1)]
                       + [repr(float(reward)), str(int(bool(done)))])
                fh.write(",".join(row) + "\n")
