"""Off-policy maximum-entropy training loop.

One environment step per gradient step: sample a batch, update the critics
toward the soft Bellman target, Polyak-average the targets, update the actor
through the noisy tail of the sampler plus the straightening regularizer,
then adapt the temperature toward the target entropy. Metrics stream as
JSONL; checkpoints are periodic plus final.
"""

from __future__ import annotations

import json
import os
from collections import deque

import numpy as np

from trfp.config import TrainConfig
from trfp.critic import CriticEnsemble
from trfp.diffcore import (Adam, TrainingFault, adam_update, backward, clip,
                           load_arrays, mean_all, save_arrays, scale, square,
                           sub, sum_rows)
from trfp.diffcore.nn import Mlp
from trfp.envs import ENV_NAMES, make_env
from trfp.flow_policy import FlowPolicy

GRAD_CLIP_NORM = 10.0
BOUNDARY_PENALTY = 1.0


class ReplayBuffer:
    """Fixed-capacity ring of transitions with uniform sampling."""

    def __init__(self, capacity: int, obs_dim: int, act_dim: int):
        self.capacity = int(capacity)
        self.obs = np.zeros((self.capacity, obs_dim))
        self.act = np.zeros((self.capacity, act_dim))
        self.reward = np.zeros(self.capacity)
        self.next_obs = np.zeros((self.capacity, obs_dim))
        self.done = np.zeros(self.capacity)
        self.size = 0
        self.cursor = 0

    def __len__(self) -> int:
        return self.size

    def push(self, obs, act, reward, next_obs, done):
        i = self.cursor
        self.obs[i] = obs
        self.act[i] = act
        self.reward[i] = reward
        self.next_obs[i] = next_obs
        self.done[i] = float(done)
        self.cursor = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, rng: np.random.Generator, batch: int) -> dict:
        """Uniform without-replacement batch; errors when underfilled."""
        if batch > self.size:
            raise ValueError(
                f"replay buffer holds {self.size} transitions, need {batch}")
        idx = rng.choice(self.size, size=batch, replace=False)
        return {
            "obs": self.obs[idx].copy(),
            "act": self.act[idx].copy(),
            "reward": self.reward[idx].copy(),
            "next_obs": self.next_obs[idx].copy(),
            "done": self.done[idx].copy(),
        }


class Temperature:
    """Learned entropy temperature alpha = exp(log_alpha).

    The dual loss mean[-alpha * (logp + target_entropy)] has the closed-form
    derivative -alpha * mean(logp + target_entropy) in log_alpha, so the
    update needs no tape.
    """

    def __init__(self, act_dim: int, *, init: float = 0.1, lr: float = 3e-4):
        if init <= 0:
            raise ValueError("initial temperature must be > 0")
        self.log_alpha = float(np.log(init))
        self.target_entropy = -float(act_dim)
        self.lr = float(lr)
        self._m = 0.0
        self._v = 0.0
        self._t = 0

    @property
    def alpha(self) -> float:
        return float(np.exp(self.log_alpha))

    def loss_value(self, logps: np.ndarray) -> float:
        return float(np.mean(-self.alpha * (logps + self.target_entropy)))

    def gradient(self, logps: np.ndarray) -> float:
        return float(-self.alpha * np.mean(logps + self.target_entropy))

    def update(self, logps: np.ndarray) -> float:
        """One Adam step on log_alpha; returns the loss value before it."""
        loss = self.loss_value(logps)
        grad = self.gradient(logps)
        if not np.isfinite(grad):
            raise TrainingFault("non-finite temperature gradient")
        self._t += 1
        new, self._m, self._v = adam_update(
            self.log_alpha, grad, self._m, self._v, self._t, self.lr)
        self.log_alpha = float(new)
        return loss

    def state_arrays(self) -> dict:
        return {
            "temperature.log_alpha": np.asarray(self.log_alpha),
            "temperature.adam_m": np.asarray(self._m),
            "temperature.adam_v": np.asarray(self._v),
            "temperature.t": np.asarray(float(self._t)),
        }

    def load_state(self, arrays: dict):
        self.log_alpha = float(arrays["temperature.log_alpha"])
        self._m = float(arrays["temperature.adam_m"])
        self._v = float(arrays["temperature.adam_v"])
        self._t = int(float(arrays["temperature.t"]))


class Trainer:
    """Binds environment, policy, critics, temperature, and optimizers."""

    def __init__(self, config: TrainConfig):
        config.validate()
        self.config = config
        self.env = make_env(config.env)
        d_s, d_a = self.env.obs_dim, self.env.act_dim

        seq = np.random.SeedSequence(config.seed)
        (init_seq, reset_seq, explore_seq, buffer_seq, target_seq,
         actor_seq, fm_seq) = seq.spawn(7)
        init_rng = np.random.default_rng(init_seq)
        self.rng_reset = np.random.default_rng(reset_seq)
        self.rng_explore = np.random.default_rng(explore_seq)
        self.rng_buffer = np.random.default_rng(buffer_seq)
        self.rng_target = np.random.default_rng(target_seq)
        self.rng_actor = np.random.default_rng(actor_seq)
        self.rng_fm = np.random.default_rng(fm_seq)

        self.policy = FlowPolicy(
            d_s, d_a, hidden=config.hidden, rng=init_rng,
            K=config.K, L=config.L, sigma_pinned=config.no_tail)
        self.critics = CriticEnsemble(d_s, d_a, hidden=config.hidden,
                                      rng=init_rng)
        self.temperature = Temperature(d_a, init=config.alpha_init,
                                       lr=config.lr_alpha)
        self.buffer = ReplayBuffer(config.buffer, d_s, d_a)
        self.actor_opt = Adam(self.policy.parameters(), config.lr_actor,
                              clip_norm=GRAD_CLIP_NORM)
        self.critic_opt = Adam(self.critics.parameters(), config.lr_critic,
                               clip_norm=GRAD_CLIP_NORM)

        self.total_env_steps = 0
        self._obs = None
        self._episode_return = 0.0
        self.recent_returns = deque(maxlen=10)

    # ------------------------------------------------------------- interaction

    def collect_step(self):
        """Act in the environment once and store the transition."""
        if self._obs is None or self.env.done:
            self._obs = self.env.reset(self.rng_reset)
            self._episode_return = 0.0
        if self.total_env_steps < self.config.warmup_random_steps:
            action = self.rng_explore.uniform(-1.0, 1.0, self.env.act_dim)
        else:
            raw, _ = self.policy.sample_hybrid(self._obs[None, :],
                                               self.rng_explore)
            action = np.clip(raw[0], -1.0, 1.0)
        next_obs, reward, _ = self.env.step(action)
        # horizon exhaustion is not a terminal state: keep bootstrapping
        self.buffer.push(self._obs, action, reward, next_obs,
                         self.env.last_step_terminal)
        self._obs = next_obs
        self._episode_return += reward
        self.total_env_steps += 1
        if self.env.done:
            self.recent_returns.append(self._episode_return)

    # ----------------------------------------------------------------- updates

    def critic_update(self, batch: dict):
        y = self.critics.bellman_target(
            batch, self.policy, self.temperature.alpha, self.config.gamma,
            self.rng_target)
        if not np.all(np.isfinite(y)):
            raise TrainingFault("non-finite Bellman target")
        self.critics.zero_grad()
        loss = self.critics.critic_loss(batch["obs"], batch["act"], y)
        backward(loss)
        norm = self.critic_opt.step()
        return float(loss.value), norm

    def _boxed_critic_q(self, states: np.ndarray, a_node):
        """Pessimistic critic value at the executable (clamped) action.

        The critics only ever see clamped actions, so scoring the raw
        sample would lean on uncontrolled extrapolation outside the box;
        the quadratic overshoot penalty gives samples stranded past the
        boundary a restoring force once the clamp has gated the Q-pull.
        """
        boxed = clip(a_node, -1.0, 1.0)
        q_node = self.critics.q_min_for_actor(states, boxed)
        overshoot = sum_rows(square(sub(a_node, boxed)))
        return sub(q_node, scale(overshoot, BOUNDARY_PENALTY))

    def actor_update(self, states: np.ndarray, q_fn=None):
        """Update the policy; returns (metrics dict, surrogate logps).

        ``q_fn(states, action_node) -> Node`` defaults to the pessimistic
        twin minimum at the clamped action; tests substitute analytic
        action-value functions here.
        """
        if q_fn is None:
            q_fn = self._boxed_critic_q
        sample = self.policy.actor_sample(states, self.rng_actor)
        q_node = q_fn(states, sample.action_node)
        rl_loss = mean_all(sub(scale(sample.logp_node,
                                     self.temperature.alpha), q_node))
        lam = self.config.lambda_fm
        if lam > 0.0:
            u0, u_tg, t = self.policy.straightening_targets(states, self.rng_fm)
            fm_loss = self.policy.straightening_loss(states, u0, u_tg, t)
            total = rl_loss + scale(fm_loss, lam)
            fm_value = float(fm_loss.value)
        else:
            total = rl_loss
            fm_value = 0.0
        for _, p in self.policy.parameters():
            p.zero_grad()
        backward(total)
        norm = self.actor_opt.step()
        logps = sample.logp_node.value
        metrics = {
            "actor_loss": float(total.value),
            "fm_loss": fm_value,
            "mean_surrogate_logp": float(np.mean(logps)),
            "mean_sigma": float(np.mean(sample.chain.sigmas)),
            "actor_grad_norm": norm,
        }
        return metrics, logps

    def train_step(self, q_fn=None) -> dict:
        """One full update: critic, target blend, actor, temperature."""
        batch = self.buffer.sample(self.rng_buffer, self.config.batch)
        critic_loss, critic_norm = self.critic_update(batch)
        self.critics.soft_update()
        actor_metrics, logps = self.actor_update(batch["obs"], q_fn=q_fn)
        temperature_loss = self.temperature.update(logps)
        metrics = {
            "critic_loss": critic_loss,
            "critic_grad_norm": critic_norm,
            **actor_metrics,
            "temperature_loss": temperature_loss,
            "alpha": self.temperature.alpha,
        }
        return metrics

    # ------------------------------------------------------------ full session

    def run_training(self, outdir: str, log_every: int = 100) -> str:
        """Run to total_steps; returns the final checkpoint path."""
        os.makedirs(outdir, exist_ok=True)
        metrics_path = os.path.join(outdir, "metrics.jsonl")
        cfg = self.config
        with open(metrics_path, "w") as fh:
            try:
                while self.total_env_steps < cfg.total_steps:
                    self.collect_step()
                    step = self.total_env_steps
                    metrics = {}
                    if (step > cfg.warmup_random_steps
                            and len(self.buffer) >= cfg.batch):
                        metrics = self.train_step()
                    if step % log_every == 0 or step == cfg.total_steps:
                        self._write_metrics(fh, step, metrics)
                    if step % cfg.checkpoint_every == 0:
                        self.save_checkpoint(
                            os.path.join(outdir, f"checkpoint_{step}.bin"))
            except TrainingFault as fault:
                fh.write(json.dumps({"step": self.total_env_steps,
                                     "fault": str(fault)}) + "\n")
                self.save_checkpoint(os.path.join(outdir, "checkpoint_fault.bin"))
                raise
        final_path = os.path.join(outdir, "checkpoint_final.bin")
        self.save_checkpoint(final_path)
        return final_path

    def _write_metrics(self, fh, step: int, metrics: dict):
        line = {"step": step, **metrics}
        if self.recent_returns:
            line["recent_return"] = float(np.mean(self.recent_returns))
        fh.write(json.dumps(line) + "\n")
        fh.flush()

    # -------------------------------------------------------------- checkpoints

    def save_checkpoint(self, path: str):
        save_checkpoint(path, self.policy, self.critics, self.temperature,
                        step=self.total_env_steps, env_name=self.config.env,
                        optimizers={"opt_actor": self.actor_opt,
                                    "opt_critic": self.critic_opt})


# ------------------------------------------------------------------ state i/o


def save_checkpoint(path: str, policy: FlowPolicy, critics: CriticEnsemble,
                    temperature: Temperature, *, step: int, env_name: str,
                    optimizers: dict | None = None):
    arrays = {
        **policy.state_arrays(),
        **critics.state_arrays(),
        **temperature.state_arrays(),
        "meta.step": np.asarray(float(step)),
        "meta.env": np.asarray(float(ENV_NAMES.index(env_name))),
        "meta.dims": np.asarray([float(policy.obs_dim),
                                 float(policy.act_dim)]),
        "meta.flow": np.asarray([float(policy.K), float(policy.L)]),
        "meta.sigma": np.asarray([policy.sigma_min, policy.sigma_max,
                                  1.0 if policy.sigma_pinned else 0.0,
                                  policy.sigma_offset]),
    }
    for prefix, opt in (optimizers or {}).items():
        arrays.update(opt.state_arrays(prefix))
    save_arrays(path, arrays)


class TrainState:
    """Policy, critics, and temperature rebuilt from a checkpoint."""

    def __init__(self, policy, critics, temperature, step, env_name):
        self.policy = policy
        self.critics = critics
        self.temperature = temperature
        self.step = step
        self.env_name = env_name


def load_checkpoint(path: str) -> TrainState:
    arrays = load_arrays(path)
    obs_dim, act_dim = (int(v) for v in arrays["meta.dims"])
    K, L = (int(v) for v in arrays["meta.flow"])
    sigma_min, sigma_max, pinned_flag, sigma_offset = arrays["meta.sigma"]
    pinned = bool(pinned_flag)

    vel_sizes = Mlp.sizes_from_state(arrays, "vel")
    sig_sizes = Mlp.sizes_from_state(arrays, "sig")
    rng = np.random.default_rng(0)
    mid = float(0.5 * (sigma_min + sigma_max))
    policy = FlowPolicy(
        obs_dim, act_dim, hidden=vel_sizes[1:-1], rng=rng, K=K, L=L,
        sigma_hidden=sig_sizes[1:-1], sigma_min=float(sigma_min),
        sigma_max=float(sigma_max), sigma_pinned=pinned, sigma_init=mid)
    # restore the exact saved offset rather than re-deriving it from
    # sigma_init, so reloaded noise scales are bit-identical
    policy.sigma_offset = float(sigma_offset)
    policy.load_state(arrays)

    q_sizes = Mlp.sizes_from_state(arrays, "q1")
    critics = CriticEnsemble(obs_dim, act_dim, hidden=q_sizes[1:-1], rng=rng)
    critics.load_state(arrays)

    temperature = Temperature(act_dim)
    temperature.load_state(arrays)

    return TrainState(policy, critics, temperature,
                      step=int(float(arrays["meta.step"])),
                      env_name=ENV_NAMES[int(float(arrays["meta.env"]))])
