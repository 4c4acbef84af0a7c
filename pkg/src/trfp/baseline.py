"""Gaussian soft actor-critic baseline.

A tanh-squashed unimodal Gaussian policy trained with the same replay
buffer, twin critics, and temperature adaptation as the flow policy. Serves
as the comparison point for mode-coverage studies: a single Gaussian mode
cannot cover well-separated optima.
"""

from __future__ import annotations

import json
import os
from collections import deque

import numpy as np

from trfp.config import TrainConfig
from trfp.critic import CriticEnsemble
from trfp.diffcore import (Adam, Mlp, Node, TrainingFault, add, backward,
                           exp, log, logistic, mean_all, mul, neg, scale,
                           sub, sum_rows)
from trfp.envs import make_env
from trfp.flow_policy import LOG_2PI
from trfp.trainer import GRAD_CLIP_NORM, ReplayBuffer, Temperature

LOG_STD_MIN = -5.0
LOG_STD_MAX = 2.0


def _tanh_np(x):
    return np.tanh(x)


def _squash_correction_np(x):
    """sum_j log(1 - tanh(x_j)^2) computed stably."""
    return np.sum(2.0 * (np.log(2.0) - x - np.logaddexp(0.0, -2.0 * x)),
                  axis=1)


class GaussianPolicy:
    """State-conditional Gaussian with tanh squashing onto [-1, 1]."""

    def __init__(self, obs_dim: int, act_dim: int, *, hidden, rng):
        self.obs_dim = int(obs_dim)
        self.act_dim = int(act_dim)
        sizes = [self.obs_dim] + list(hidden) + [act_dim]
        self.mean_net = Mlp(sizes, rng=rng, final_weight_scale=0.01,
                            name="sacmu")
        self.std_net = Mlp(sizes, rng=rng, final_weight_scale=0.01,
                           name="sacstd")

    def parameters(self):
        return self.mean_net.parameters() + self.std_net.parameters()

    def log_std_np(self, s) -> np.ndarray:
        pre = self.std_net.forward_np(s)
        return LOG_STD_MIN + (LOG_STD_MAX - LOG_STD_MIN) / (1.0 + np.exp(-pre))

    def sample_np(self, s, rng):
        """Stochastic squashed action and its exact log-density."""
        s = np.asarray(s, dtype=np.float64)
        mu = self.mean_net.forward_np(s)
        log_std = self.log_std_np(s)
        eps = rng.standard_normal(mu.shape)
        x = mu + np.exp(log_std) * eps
        a = _tanh_np(x)
        logp = np.sum(-0.5 * LOG_2PI - log_std - 0.5 * eps * eps, axis=1) \
            - _squash_correction_np(x)
        return a, logp

    def deterministic_np(self, s) -> np.ndarray:
        return _tanh_np(self.mean_net.forward_np(np.asarray(s, dtype=np.float64)))

    def sample_graph(self, s, rng):
        """Reparameterized action and log-density on the tape."""
        s = np.asarray(s, dtype=np.float64)
        mu = self.mean_net.forward(s)
        pre = self.std_net.forward(s)
        log_std = add(scale(logistic(pre), LOG_STD_MAX - LOG_STD_MIN),
                      np.asarray(LOG_STD_MIN))
        eps = rng.standard_normal((s.shape[0], self.act_dim))
        x = add(mu, mul(exp(log_std), eps))
        # tanh(x) = 2*sigmoid(2x) - 1; log(1-tanh^2) = log4 + log s(2x) + log s(-2x)
        sig_pos = logistic(scale(x, 2.0))
        sig_neg = logistic(scale(x, -2.0))
        action = add(scale(sig_pos, 2.0), np.asarray(-1.0))
        correction = add(np.asarray(np.log(4.0)),
                         add(log(sig_pos), log(sig_neg)))
        gauss = add(neg(log_std), -0.5 * LOG_2PI - 0.5 * eps * eps)
        logp = sum_rows(sub(gauss, correction))
        return action, logp


class SacTrainer:
    """Same training skeleton as the flow trainer, Gaussian actor inside."""

    def __init__(self, config: TrainConfig):
        config.validate()
        self.config = config
        self.env = make_env(config.env)
        d_s, d_a = self.env.obs_dim, self.env.act_dim

        seq = np.random.SeedSequence(config.seed)
        (init_seq, reset_seq, explore_seq, buffer_seq, target_seq,
         actor_seq) = seq.spawn(6)
        init_rng = np.random.default_rng(init_seq)
        self.rng_reset = np.random.default_rng(reset_seq)
        self.rng_explore = np.random.default_rng(explore_seq)
        self.rng_buffer = np.random.default_rng(buffer_seq)
        self.rng_target = np.random.default_rng(target_seq)
        self.rng_actor = np.random.default_rng(actor_seq)

        self.policy = GaussianPolicy(d_s, d_a, hidden=config.hidden,
                                     rng=init_rng)
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

    def collect_step(self):
        if self._obs is None or self.env.done:
            self._obs = self.env.reset(self.rng_reset)
            self._episode_return = 0.0
        if self.total_env_steps < self.config.warmup_random_steps:
            action = self.rng_explore.uniform(-1.0, 1.0, self.env.act_dim)
        else:
            a, _ = self.policy.sample_np(self._obs[None, :], self.rng_explore)
            action = a[0]
        next_obs, reward, _ = self.env.step(action)
        self.buffer.push(self._obs, action, reward, next_obs,
                         self.env.last_step_terminal)
        self._obs = next_obs
        self._episode_return += reward
        self.total_env_steps += 1
        if self.env.done:
            self.recent_returns.append(self._episode_return)

    def train_step(self) -> dict:
        cfg = self.config
        batch = self.buffer.sample(self.rng_buffer, cfg.batch)

        a2, logp2 = self.policy.sample_np(batch["next_obs"], self.rng_target)
        soft_value = self.critics.q_min_target_np(batch["next_obs"], a2) \
            - self.temperature.alpha * logp2
        y = batch["reward"] + (1.0 - batch["done"]) * cfg.gamma * soft_value
        if not np.all(np.isfinite(y)):
            raise TrainingFault("non-finite Bellman target")
        self.critics.zero_grad()
        closs = self.critics.critic_loss(batch["obs"], batch["act"], y)
        backward(closs)
        self.critic_opt.step()
        self.critics.soft_update()

        action, logp = self.policy.sample_graph(batch["obs"], self.rng_actor)
        q_node = self.critics.q_min_for_actor(batch["obs"], action)
        loss = mean_all(sub(scale(logp, self.temperature.alpha), q_node))
        for _, p in self.policy.parameters():
            p.zero_grad()
        backward(loss)
        self.actor_opt.step()

        temperature_loss = self.temperature.update(logp.value)
        return {
            "critic_loss": float(closs.value),
            "actor_loss": float(loss.value),
            "mean_logp": float(np.mean(logp.value)),
            "temperature_loss": temperature_loss,
            "alpha": self.temperature.alpha,
        }

    def run_training(self, outdir: str | None = None, log_every: int = 100):
        cfg = self.config
        fh = None
        if outdir is not None:
            os.makedirs(outdir, exist_ok=True)
            fh = open(os.path.join(outdir, "metrics.jsonl"), "w")
        try:
            while self.total_env_steps < cfg.total_steps:
                self.collect_step()
                step = self.total_env_steps
                metrics = {}
                if (step > cfg.warmup_random_steps
                        and len(self.buffer) >= cfg.batch):
                    metrics = self.train_step()
                if fh is not None and (step % log_every == 0
                                       or step == cfg.total_steps):
                    line = {"step": step, **metrics}
                    if self.recent_returns:
                        line["recent_return"] = float(
                            np.mean(self.recent_returns))
                    fh.write(json.dumps(line) + "\n")
        finally:
            if fh is not None:
                fh.close()
