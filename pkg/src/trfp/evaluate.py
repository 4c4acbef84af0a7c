"""Evaluation protocols and flow diagnostics.

Standard evaluation transports the prior deterministically in a few steps
(four by default, one for the fast protocol), draws several candidate
actions per state, and executes the one the twin critics score highest.
Diagnostics quantify how straight the learned transport is and how much
prefix volume change the surrogate likelihood ignores.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from trfp.critic import CriticEnsemble
from trfp.envs import Env, write_trajectory_csv
from trfp.envs.multigoal import MultigoalEnv
from trfp.flow_policy import FlowPolicy, straightness


@dataclass
class EvalReport:
    mean_return: float
    std_return: float
    returns: list
    steps_used: int
    candidates: int
    episodes: int
    mode_visit_counts: list | None = None
    diagnostics: dict | None = None
    trajectories: list = field(default_factory=list, repr=False)

    def to_json(self) -> str:
        payload = {
            "mean_return": self.mean_return,
            "std_return": self.std_return,
            "returns": list(self.returns),
            "steps_used": self.steps_used,
            "candidates": self.candidates,
            "episodes": self.episodes,
        }
        if self.mode_visit_counts is not None:
            payload["mode_visit_counts"] = list(self.mode_visit_counts)
        if self.diagnostics is not None:
            payload["diagnostics"] = self.diagnostics
        return json.dumps(payload, indent=2)

    def write_json(self, path: str):
        with open(path, "w") as fh:
            fh.write(self.to_json() + "\n")

    def write_trajectory_csv(self, path: str, obs_dim: int, act_dim: int):
        write_trajectory_csv(path, self.trajectories, obs_dim, act_dim)


def q_guided_select(policy: FlowPolicy, critics: CriticEnsemble | None,
                    obs: np.ndarray, n_candidates: int, steps: int,
                    rng: np.random.Generator) -> np.ndarray:
    """Pick the candidate action with the best pessimistic value.

    Draws ``n_candidates`` independent priors, transports each
    deterministically in ``steps`` steps, and returns the (clamped)
    candidate maximizing min over the twin critics; ties go to the lowest
    index. With one candidate the critics are never consulted.
    """
    if n_candidates < 1:
        raise ValueError("need at least one candidate")
    obs = np.asarray(obs, dtype=np.float64).reshape(-1)
    s = np.tile(obs, (n_candidates, 1))
    u0 = rng.standard_normal((n_candidates, policy.act_dim))
    actions = np.clip(policy.sample_eval(s, u0, steps), -1.0, 1.0)
    if n_candidates == 1:
        return actions[0]
    scores = np.minimum(critics.q_np(s, actions, "q1"),
                        critics.q_np(s, actions, "q2"))
    return actions[int(np.argmax(scores))]


def evaluate(policy: FlowPolicy, critics: CriticEnsemble | None, env: Env,
             episodes: int, steps: int, n_candidates: int,
             rng: np.random.Generator, record_trajectories: bool = False,
             ) -> EvalReport:
    """Run greedy episodes with Q-guided candidate selection."""
    if episodes < 1:
        raise ValueError("need at least one episode")
    track_modes = isinstance(env, MultigoalEnv)
    mode_counts = ([0] * len(env.spec.goal_positions)) if track_modes else None
    returns = []
    trajectories = []
    for _ in range(episodes):
        obs = env.reset(rng)
        total = 0.0
        steps_log = []
        while not env.done:
            action = q_guided_select(policy, critics, obs, n_candidates,
                                     steps, rng)
            next_obs, reward, done = env.step(action)
            total += reward
            if record_trajectories:
                steps_log.append((obs.copy(), action.copy(), reward, done))
            obs = next_obs
        returns.append(total)
        if record_trajectories:
            trajectories.append(steps_log)
        if track_modes and env.goal_reached is not None:
            mode_counts[env.goal_reached] += 1
    returns = np.asarray(returns)
    return EvalReport(
        mean_return=float(returns.mean()),
        std_return=float(returns.std()),
        returns=[float(r) for r in returns],
        steps_used=int(steps),
        candidates=int(n_candidates),
        episodes=int(episodes),
        mode_visit_counts=mode_counts,
        trajectories=trajectories,
    )


def evaluate_parallel(policy: FlowPolicy, critics: CriticEnsemble | None,
                      env_factory, episodes: int, steps: int,
                      n_candidates: int, seed: int, threads: int = 1,
                      record_trajectories: bool = False) -> EvalReport:
    """Episode-parallel evaluation over an immutable policy snapshot.

    Each episode gets its own environment instance and an independent rng
    spawned from ``seed`` by episode index, so the merged report is
    identical for every thread count.
    """
    if episodes < 1:
        raise ValueError("need at least one episode")
    seqs = np.random.SeedSequence(seed).spawn(episodes)

    def run_one(i: int) -> EvalReport:
        return evaluate(policy, critics, env_factory(), 1, steps,
                        n_candidates, np.random.default_rng(seqs[i]),
                        record_trajectories)

    if threads <= 1:
        parts = [run_one(i) for i in range(episodes)]
    else:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(run_one, range(episodes)))

    returns = np.asarray([p.returns[0] for p in parts])
    mode_counts = None
    if parts[0].mode_visit_counts is not None:
        mode_counts = [sum(p.mode_visit_counts[g] for p in parts)
                       for g in range(len(parts[0].mode_visit_counts))]
    trajectories = [ep for p in parts for ep in p.trajectories]
    return EvalReport(
        mean_return=float(returns.mean()),
        std_return=float(returns.std()),
        returns=[float(r) for r in returns],
        steps_used=int(steps),
        candidates=int(n_candidates),
        episodes=int(episodes),
        mode_visit_counts=mode_counts,
        trajectories=trajectories,
    )


def mode_coverage(report: EvalReport):
    """Per-goal visit counts and whether every goal was reached at least once."""
    counts = report.mode_visit_counts
    if counts is None:
        raise ValueError("report carries no mode information")
    return list(counts), all(c >= 1 for c in counts)


def collect_states(env: Env, n_states: int, rng: np.random.Generator
                   ) -> np.ndarray:
    """Gather observations from uniform-random behavior."""
    states = []
    obs = env.reset(rng)
    while len(states) < n_states:
        states.append(obs.copy())
        obs, _, done = env.step(rng.uniform(-1.0, 1.0, env.act_dim))
        if done:
            obs = env.reset(rng)
    return np.asarray(states)


def flow_diagnostics(policy: FlowPolicy, states: np.ndarray,
                     rng: np.random.Generator, substeps: int = 16) -> dict:
    """Straightness and prefix-divergence report over the given states.

    For every state one prior is transported noise-free through all K
    steps for the straightness statistic; the divergence of the velocity
    field is integrated along a fine prefix trajectory to measure the
    log-density error the surrogate accepts, together with the bound
    max|div| * tau_cut that must dominate it.
    """
    states = np.asarray(states, dtype=np.float64)
    u0 = rng.standard_normal((states.shape[0], policy.act_dim))
    zeros = [np.zeros_like(u0)] * policy.L
    _, chain = policy.sample_hybrid(states, u0=u0, eps=zeros)
    straight = straightness(chain.us)

    if policy.k_c > 0:
        times, divs = policy.prefix_divergence_profile(states, u0, substeps)
        max_abs_div = np.abs(divs).max(axis=0)
        h = policy.tau_cut / substeps
        weights = np.full(divs.shape[0], h)
        weights[0] = weights[-1] = 0.5 * h
        delta_pre = -(weights[:, None] * divs).sum(axis=0)
    else:
        max_abs_div = np.zeros(states.shape[0])
        delta_pre = np.zeros(states.shape[0])
    bound = max_abs_div * policy.tau_cut
    bound_ok = np.abs(delta_pre) <= bound + 1e-9

    return {
        "n_states": int(states.shape[0]),
        "straightness_mean": float(straight.mean()),
        "straightness_max": float(straight.max()),
        "max_abs_divergence": float(max_abs_div.max()),
        "delta_pre_mean_abs": float(np.abs(delta_pre).mean()),
        "delta_pre_max_abs": float(np.abs(delta_pre).max()),
        "divergence_bound_max": float(bound.max()),
        "bound_satisfied_fraction": float(np.mean(bound_ok)),
    }
