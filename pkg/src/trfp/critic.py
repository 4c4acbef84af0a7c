"""Twin soft Q-functions with Polyak-averaged targets.

The Bellman target bootstraps through a fresh policy sample at the next
state, penalized by the temperature-weighted surrogate log-likelihood, and
always takes the elementwise minimum of the two target critics. Targets are
plain numbers: no gradient ever flows into them.
"""

from __future__ import annotations

import numpy as np

from trfp.diffcore import Mlp, Node, add, mean_all, minimum, square, sub
from trfp.flow_policy import FlowPolicy, surrogate_logp


class CriticEnsemble:
    def __init__(self, obs_dim: int, act_dim: int, *, hidden, rng,
                 tau_polyak: float = 0.005):
        self.obs_dim = int(obs_dim)
        self.act_dim = int(act_dim)
        self.tau_polyak = float(tau_polyak)
        sizes = [self.obs_dim + self.act_dim] + list(hidden) + [1]
        self.q1 = Mlp(sizes, rng=rng, name="q1")
        self.q2 = Mlp(sizes, rng=rng, name="q2")
        self.q1_target = Mlp(sizes, rng=rng, name="q1_target")
        self.q2_target = Mlp(sizes, rng=rng, name="q2_target")
        self.q1_target.copy_values_from(self.q1)
        self.q2_target.copy_values_from(self.q2)

    # ------------------------------------------------------------------ values

    @staticmethod
    def _join(s, a) -> np.ndarray:
        return np.concatenate([np.asarray(s, dtype=np.float64),
                               np.asarray(a, dtype=np.float64)], axis=1)

    def q_np(self, s, a, which: str = "q1") -> np.ndarray:
        net = getattr(self, which)
        return net.forward_np(self._join(s, a))[:, 0]

    def q_min_target_np(self, s, a) -> np.ndarray:
        x = self._join(s, a)
        return np.minimum(self.q1_target.forward_np(x)[:, 0],
                          self.q2_target.forward_np(x)[:, 0])

    def q_min_for_actor(self, s, a_node: Node) -> Node:
        """min_j Q_j(s, a) with critic parameters held constant, (B,)."""
        from trfp.diffcore import concat_cols, sum_rows

        x = concat_cols([np.asarray(s, dtype=np.float64), a_node])
        q1 = sum_rows(self.q1.forward_const(x))
        q2 = sum_rows(self.q2.forward_const(x))
        return minimum(q1, q2)

    # ----------------------------------------------------------------- targets

    def bellman_target(self, batch: dict, policy: FlowPolicy, alpha: float,
                       gamma: float, rng) -> np.ndarray:
        """Soft target y = r + (1-done)*gamma*(min_j Q_tgt_j - alpha*logp)."""
        s2 = batch["next_obs"]
        a2, chain2 = policy.sample_hybrid(s2, rng)
        a2 = np.clip(a2, -1.0, 1.0)
        soft_value = self.q_min_target_np(s2, a2) \
            - alpha * surrogate_logp(chain2)
        return batch["reward"] + (1.0 - batch["done"]) * gamma * soft_value

    def critic_loss(self, s, a, y: np.ndarray) -> Node:
        """Mean squared Bellman residual, summed over the two critics."""
        x = self._join(s, a)
        y = np.asarray(y, dtype=np.float64).reshape(-1, 1)
        l1 = mean_all(square(sub(self.q1.forward(x), y)))
        l2 = mean_all(square(sub(self.q2.forward(x), y)))
        return add(l1, l2)

    # ----------------------------------------------------------------- updates

    def soft_update(self):
        tau = self.tau_polyak
        for online, target in ((self.q1, self.q1_target),
                               (self.q2, self.q2_target)):
            for (_, p), (_, t) in zip(online.parameters(), target.parameters()):
                t.value = (1.0 - tau) * t.value + tau * p.value

    def parameters(self):
        return self.q1.parameters() + self.q2.parameters()

    def zero_grad(self):
        self.q1.zero_grad()
        self.q2.zero_grad()

    def state_arrays(self) -> dict:
        out = {}
        for net in (self.q1, self.q2, self.q1_target, self.q2_target):
            out.update(net.state_arrays())
        return out

    def load_state(self, arrays: dict):
        for net in (self.q1, self.q2, self.q1_target, self.q2_target):
            net.load_state(arrays)
