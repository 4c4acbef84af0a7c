"""Flow-based actor: deterministic ODE prefix, stochastic SDE tail.

Actions are generated in K steps from a standard-normal latent u_0. The
first K－L steps integrate the learned velocity field with Heun's method
over [0, tau_cut]; the last L steps add learned state-dependent Gaussian
noise, u' = u + v*dt + sigma*eps. The surrogate log-likelihood is the joint
density of the prior draw and the tail transitions; the prefix's volume
change is deliberately omitted (it is measured separately as delta_pre).

The prefix is computed outside the tape, so by construction gradients of
any downstream loss stop at the prefix/tail cutoff. Straightening targets
come from a noise-free rollout of the same nets.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from trfp.diffcore import (
    Mlp,
    Node,
    TrainingFault,
    add,
    concat_cols,
    log,
    logistic,
    logistic_np,
    mean_all,
    mul,
    neg,
    scale,
    square,
    sub,
    sum_rows,
)

LOG_2PI = float(np.log(2.0 * np.pi))
DIVERGENCE_FD_STEP = 1e-4


@dataclass
class LatentChain:
    """Record of one batched K-step generation: latents, noises, densities."""

    us: list            # K+1 arrays of shape (B, d_a); us[-1] is the action
    times: list         # K+1 floats, t_k = k/K
    k_c: int            # prefix/tail cutoff index (= K - L)
    dt: float
    prior_logp: np.ndarray          # (B,)
    eps: list = field(default_factory=list)         # L arrays (B, d_a)
    velocities: list = field(default_factory=list)  # L tail velocities
    sigmas: list = field(default_factory=list)      # L tail noise scales
    tail_logps: list = field(default_factory=list)  # L arrays (B,)

    @property
    def action(self) -> np.ndarray:
        return self.us[-1]

    @property
    def tau_cut(self) -> float:
        return self.times[self.k_c]


def surrogate_logp(chain: LatentChain) -> np.ndarray:
    """Joint log-density of the prior draw and the tail transitions, (B,)."""
    total = chain.prior_logp.copy()
    for step_logp in chain.tail_logps:
        total = total + step_logp
    return total


@dataclass
class ActorSample:
    """A sampled chain with the tail rebuilt on the tape for the actor loss."""

    action_node: Node       # u_K, differentiable through the tail
    logp_node: Node         # surrogate logp; only -log(sigma) terms carry grads
    chain: LatentChain


def _gaussian_prior_logp(u0: np.ndarray) -> np.ndarray:
    d = u0.shape[1]
    return -0.5 * d * LOG_2PI - 0.5 * np.sum(u0 * u0, axis=1)


def _tail_step_logp(sigma: np.ndarray, eps: np.ndarray) -> np.ndarray:
    # log N(u'; u + v dt, diag(sigma^2)) evaluated at u' = u + v dt + sigma*eps;
    # term order mirrors the tape construction in actor_sample bit-for-bit
    return np.sum((-0.5 * LOG_2PI - 0.5 * eps * eps) - np.log(sigma), axis=1)


def straightness(us) -> np.ndarray:
    """max-deviation-from-chord over chord length, per batched trajectory.

    ``us`` is a sequence of (B, d_a) latents from u_0 to u_K. Zero for exact
    straight-line (monotone) transport; positive when the path bows or
    overshoots, including in one dimension.
    """
    stack = np.stack([np.asarray(u) for u in us])        # (K+1, B, d_a)
    a, b = stack[0], stack[-1]
    ab = b - a
    denom = np.maximum(np.sum(ab * ab, axis=1), 1e-24)
    worst = np.zeros(stack.shape[1])
    for k in range(1, stack.shape[0] - 1):
        rel = stack[k] - a
        proj = np.clip(np.sum(rel * ab, axis=1) / denom, 0.0, 1.0)
        dev = np.linalg.norm(rel - proj[:, None] * ab, axis=1)
        worst = np.maximum(worst, dev)
    return worst / np.sqrt(denom)


class FlowPolicy:
    """Velocity field + noise-scale head driving the hybrid sampler."""

    def __init__(self, obs_dim: int, act_dim: int, *, hidden, rng,
                 K: int = 4, L: int = 1, sigma_hidden=(64,),
                 sigma_min: float = 1e-3, sigma_max: float = 0.5,
                 sigma_init: float = 0.1, sigma_pinned: bool = False,
                 head_scale: float = 0.01):
        if not 1 <= L <= K:
            raise ValueError(f"need 1 <= L <= K, got K={K} L={L}")
        if not sigma_pinned and not sigma_min < sigma_init < sigma_max:
            raise ValueError("sigma_init must lie strictly inside the sigma bounds")
        self.obs_dim = int(obs_dim)
        self.act_dim = int(act_dim)
        self.K = int(K)
        self.L = int(L)
        self.sigma_min = float(sigma_min)
        self.sigma_max = float(sigma_max)
        self.sigma_pinned = bool(sigma_pinned)
        if sigma_pinned:
            self.sigma_offset = 0.0
        else:
            # logit offset so a zero-initialized head starts sigma at sigma_init
            frac = (sigma_init - sigma_min) / (sigma_max - sigma_min)
            self.sigma_offset = float(np.log(frac / (1.0 - frac)))
        in_dim = self.obs_dim + self.act_dim + 1
        self.velocity = Mlp([in_dim] + list(hidden) + [act_dim], rng=rng,
                            final_weight_scale=head_scale, name="vel")
        self.sigma_head = Mlp([in_dim] + list(sigma_hidden) + [act_dim], rng=rng,
                              final_weight_scale=head_scale, name="sig")

    # ------------------------------------------------------------------ basics

    @property
    def dt(self) -> float:
        return 1.0 / self.K

    @property
    def k_c(self) -> int:
        return self.K - self.L

    @property
    def tau_cut(self) -> float:
        return self.k_c / self.K

    def parameters(self):
        return self.velocity.parameters() + self.sigma_head.parameters()

    def state_arrays(self) -> dict:
        return {**self.velocity.state_arrays(), **self.sigma_head.state_arrays()}

    def load_state(self, arrays: dict):
        self.velocity.load_state(arrays)
        self.sigma_head.load_state(arrays)

    def _net_input(self, s: np.ndarray, u: np.ndarray, t) -> np.ndarray:
        if np.ndim(t) == 0:
            tcol = np.full((u.shape[0], 1), float(t))
        else:
            tcol = np.asarray(t, dtype=np.float64).reshape(-1, 1)
        return np.concatenate([s, u, tcol], axis=1)

    def velocity_np(self, s: np.ndarray, u: np.ndarray, t) -> np.ndarray:
        v = self.velocity.forward_np(self._net_input(s, u, t))
        if not np.all(np.isfinite(v)):
            raise TrainingFault("velocity field produced non-finite values")
        return v

    def sigma_np(self, s: np.ndarray, u: np.ndarray, t) -> np.ndarray:
        if self.sigma_pinned:
            return np.full((u.shape[0], self.act_dim), self.sigma_min)
        pre = self.sigma_head.forward_np(self._net_input(s, u, t))
        return self.sigma_min + (self.sigma_max - self.sigma_min) * logistic_np(
            pre + self.sigma_offset)

    # ---------------------------------------------------------------- sampling

    def heun_prefix_step(self, s, u, t, dt):
        """One second-order step of the deterministic prefix."""
        v1 = self.velocity_np(s, u, t)
        v2 = self.velocity_np(s, u + v1 * dt, t + dt)
        return u + 0.5 * (v1 + v2) * dt

    def sde_tail_step(self, s, u, t, dt, eps):
        """One noisy tail step; returns (u', velocity, sigma, step_logp)."""
        v = self.velocity_np(s, u, t)
        sigma = self.sigma_np(s, u, t)
        u_next = u + v * dt + sigma * eps
        return u_next, v, sigma, _tail_step_logp(sigma, eps)

    def sample_hybrid(self, s: np.ndarray, rng=None, *, u0=None, eps=None):
        """Full K-step generation; returns (action, LatentChain).

        ``u0`` and ``eps`` override the random draws when given (used for
        noise-free rollouts and reproducibility tests).
        """
        s = np.asarray(s, dtype=np.float64)
        batch = s.shape[0]
        if u0 is None:
            u0 = rng.standard_normal((batch, self.act_dim))
        u = np.asarray(u0, dtype=np.float64)
        chain = LatentChain(
            us=[u], times=[k * self.dt for k in range(self.K + 1)],
            k_c=self.k_c, dt=self.dt, prior_logp=_gaussian_prior_logp(u))
        for k in range(self.k_c):
            u = self.heun_prefix_step(s, u, chain.times[k], self.dt)
            chain.us.append(u)
        for j, k in enumerate(range(self.k_c, self.K)):
            e = (rng.standard_normal((batch, self.act_dim)) if eps is None
                 else np.asarray(eps[j], dtype=np.float64))
            u, v, sigma, step_logp = self.sde_tail_step(
                s, u, chain.times[k], self.dt, e)
            chain.us.append(u)
            chain.eps.append(e)
            chain.velocities.append(v)
            chain.sigmas.append(sigma)
            chain.tail_logps.append(step_logp)
        return chain.action, chain

    def deterministic_rollout(self, s: np.ndarray, u0: np.ndarray) -> np.ndarray:
        """Endpoint of the K-step generation with tail noise disabled."""
        zeros = [np.zeros_like(u0)] * self.L
        action, _ = self.sample_hybrid(s, u0=u0, eps=zeros)
        return action

    def sample_eval(self, s: np.ndarray, u0: np.ndarray, steps: int) -> np.ndarray:
        """Deterministic transport over [0, 1]: one field evaluation per step.

        Euler steps keep the advertised per-action cost at `steps` function
        evaluations; with a straightened (near-constant) field they are as
        accurate as higher-order schemes.
        """
        if steps < 1:
            raise ValueError("steps must be >= 1")
        s = np.asarray(s, dtype=np.float64)
        u = np.asarray(u0, dtype=np.float64)
        h = 1.0 / steps
        for j in range(steps):
            u = u + self.velocity_np(s, u, j * h) * h
        return u

    # --------------------------------------------------------- actor-side tape

    def _sigma_graph(self, net_input):
        if self.sigma_pinned:
            batch = net_input.shape[0] if isinstance(net_input, np.ndarray) \
                else net_input.value.shape[0]
            return Node(np.full((batch, self.act_dim), self.sigma_min))
        pre = self.sigma_head.forward(net_input)
        sig = logistic(add(pre, np.asarray(self.sigma_offset)))
        return add(scale(sig, self.sigma_max - self.sigma_min),
                   np.asarray(self.sigma_min))

    def tail_tape(self, s: np.ndarray, entry_latent: np.ndarray, eps_list,
                  prior_logp: np.ndarray):
        """Build the differentiable tail from a fixed entry latent.

        The entry latent is a plain array, so it enters the tape as a
        constant: no gradient can reach anything that produced it. Returns
        (action_node, logp_node, per-step (us, velocities, sigmas, logps)).
        """
        s = np.asarray(s, dtype=np.float64)
        batch = s.shape[0]
        u_node = Node(np.asarray(entry_latent, dtype=np.float64))
        logp_node = Node(np.asarray(prior_logp, dtype=np.float64).copy())
        us, velocities, sigmas, tail_logps = [], [], [], []
        for j, k in enumerate(range(self.k_c, self.K)):
            e = np.asarray(eps_list[j], dtype=np.float64)
            net_in = concat_cols([s, u_node, np.full((batch, 1), k * self.dt)])
            v_node = self.velocity.forward(net_in)
            sigma_node = self._sigma_graph(net_in)
            if not np.all(np.isfinite(v_node.value)):
                raise TrainingFault("velocity field produced non-finite values")
            u_node = add(add(u_node, scale(v_node, self.dt)),
                         mul(sigma_node, e))
            step_logp = sum_rows(
                add(-0.5 * LOG_2PI - 0.5 * e * e, neg(log(sigma_node))))
            logp_node = add(logp_node, step_logp)
            us.append(u_node.value)
            velocities.append(v_node.value)
            sigmas.append(sigma_node.value)
            tail_logps.append(step_logp.value)
        return u_node, logp_node, (us, velocities, sigmas, tail_logps)

    def actor_sample(self, s: np.ndarray, rng) -> ActorSample:
        """Sample a chain with the tail on the tape (prefix stays numeric).

        The returned ``logp_node`` equals the surrogate log-likelihood; its
        only differentiable parts are the -log(sigma) terms, matching the
        evaluation of each tail Gaussian at its own reparameterized sample.
        """
        s = np.asarray(s, dtype=np.float64)
        batch = s.shape[0]
        u = rng.standard_normal((batch, self.act_dim))
        chain = LatentChain(
            us=[u], times=[k * self.dt for k in range(self.K + 1)],
            k_c=self.k_c, dt=self.dt, prior_logp=_gaussian_prior_logp(u))
        for k in range(self.k_c):
            u = self.heun_prefix_step(s, u, chain.times[k], self.dt)
            chain.us.append(u)
        eps_list = [rng.standard_normal((batch, self.act_dim))
                    for _ in range(self.L)]
        u_node, logp_node, (us, velocities, sigmas, tail_logps) = \
            self.tail_tape(s, u, eps_list, chain.prior_logp)
        chain.us.extend(us)
        chain.eps.extend(eps_list)
        chain.velocities.extend(velocities)
        chain.sigmas.extend(sigmas)
        chain.tail_logps.extend(tail_logps)
        return ActorSample(action_node=u_node, logp_node=logp_node, chain=chain)

    # ------------------------------------------------------------ straightening

    def straightening_targets(self, s: np.ndarray, rng):
        """Draw (u_0, u_tg, t) for the velocity-regression objective."""
        batch = s.shape[0]
        u0 = rng.standard_normal((batch, self.act_dim))
        u_tg = self.deterministic_rollout(s, u0)
        t = rng.uniform(0.0, self.tau_cut, size=batch)
        return u0, u_tg, t

    def straightening_loss(self, s: np.ndarray, u0, u_tg, t) -> Node:
        """Mean squared norm of v(s, x_t, t) - (u_tg - u_0) on the tape.

        x_t interpolates linearly between u_0 (t=0) and u_tg (t=1); both
        endpoints are constants with respect to the parameters.
        """
        t = np.asarray(t, dtype=np.float64).reshape(-1, 1)
        x_t = t * u_tg + (1.0 - t) * u0
        v_node = self.velocity.forward(np.concatenate([s, x_t, t], axis=1))
        diff = sub(v_node, u_tg - u0)
        return mean_all(sum_rows(square(diff)))

    # ------------------------------------------------------------- diagnostics

    def estimate_divergence(self, s: np.ndarray, u: np.ndarray, t) -> np.ndarray:
        """Central-difference divergence of the velocity field, (B,)."""
        h = DIVERGENCE_FD_STEP
        div = np.zeros(u.shape[0])
        for j in range(self.act_dim):
            bump = np.zeros_like(u)
            bump[:, j] = h
            vp = self.velocity_np(s, u + bump, t)[:, j]
            vm = self.velocity_np(s, u - bump, t)[:, j]
            div += (vp - vm) / (2.0 * h)
        return div

    def prefix_divergence_profile(self, s: np.ndarray, u0: np.ndarray,
                                  substeps: int):
        """Divergence sampled along a fine Heun integration of the prefix.

        Returns (times, divs) with divs of shape (substeps+1, B).
        """
        if substeps < 10:
            raise ValueError("substeps must be >= 10")
        s = np.asarray(s, dtype=np.float64)
        u = np.asarray(u0, dtype=np.float64)
        h = self.tau_cut / substeps
        times = np.array([i * h for i in range(substeps + 1)])
        divs = [self.estimate_divergence(s, u, times[0])]
        for i in range(substeps):
            u = self.heun_prefix_step(s, u, times[i], h)
            divs.append(self.estimate_divergence(s, u, times[i + 1]))
        return times, np.stack(divs)

    def prefix_logdensity_error(self, s: np.ndarray, u0: np.ndarray,
                                substeps: int = 16) -> np.ndarray:
        """Delta_pre: the prefix volume change the surrogate omits, (B,).

        Trapezoid quadrature of -divergence along the prefix trajectory.
        """
        if self.k_c == 0:
            return np.zeros(np.asarray(u0).shape[0])
        _, divs = self.prefix_divergence_profile(s, u0, substeps)
        h = self.tau_cut / substeps
        weights = np.full(divs.shape[0], h)
        weights[0] = weights[-1] = 0.5 * h
        return -(weights[:, None] * divs).sum(axis=0)
