"""Tests for the replay buffer, temperature, and the training loop."""

import json

import numpy as np
import pytest
from scipy import stats

from trfp.config import TrainConfig
from trfp.diffcore import Node, TrainingFault, mul, sum_rows
from trfp.trainer import ReplayBuffer, Temperature, Trainer, load_checkpoint


def _config(**kwargs):
    kwargs.setdefault("env", "multigoal")
    kwargs.setdefault("total_steps", 400)
    kwargs.setdefault("hidden", (16, 16))
    kwargs.setdefault("batch", 32)
    kwargs.setdefault("buffer", 2000)
    kwargs.setdefault("warmup_random_steps", 100)
    kwargs.setdefault("checkpoint_every", 10_000)
    return TrainConfig(**kwargs)


# ---------------------------------------------------------------- replay ring


def test_buffer_overwrites_oldest_at_capacity():
    buf = ReplayBuffer(2, obs_dim=1, act_dim=1)
    for r in (1.0, 2.0, 3.0):
        buf.push([r], [0.0], r, [r], False)
    assert len(buf) == 2
    assert sorted(buf.reward[: buf.size]) == [2.0, 3.0]


def test_buffer_size_tracks_min_of_pushes_and_capacity():
    buf = ReplayBuffer(5, obs_dim=1, act_dim=1)
    for i in range(12):
        assert len(buf) == min(i, 5)
        buf.push([0.0], [0.0], 0.0, [0.0], False)
    assert len(buf) == 5


def test_buffer_sample_underfilled_is_error():
    buf = ReplayBuffer(10, obs_dim=1, act_dim=1)
    with pytest.raises(ValueError, match="holds 0 transitions"):
        buf.sample(np.random.default_rng(0), 1)
    buf.push([0.0], [0.0], 0.0, [0.0], False)
    with pytest.raises(ValueError, match="need 2"):
        buf.sample(np.random.default_rng(0), 2)


def test_buffer_batch_has_no_repeats():
    buf = ReplayBuffer(8, obs_dim=1, act_dim=1)
    for i in range(8):
        buf.push([float(i)], [0.0], float(i), [0.0], False)
    got = buf.sample(np.random.default_rng(3), 8)
    assert sorted(got["reward"]) == [float(i) for i in range(8)]


def test_buffer_sampling_is_uniform():
    """Chi-square over many draws: every slot equally likely."""
    n = 20
    buf = ReplayBuffer(n, obs_dim=1, act_dim=1)
    for i in range(n):
        buf.push([0.0], [0.0], float(i), [0.0], False)
    rng = np.random.default_rng(11)
    counts = np.zeros(n)
    for _ in range(20_000):
        got = buf.sample(rng, 5)
        for r in got["reward"]:
            counts[int(r)] += 1
    _, p_value = stats.chisquare(counts)
    assert p_value > 1e-3


def test_buffer_sample_fields_are_consistent_rows():
    buf = ReplayBuffer(50, obs_dim=2, act_dim=1)
    rng = np.random.default_rng(4)
    for i in range(50):
        buf.push([i, 2 * i], [i / 50], float(i), [i + 1, 2 * i + 1], i % 2)
    got = buf.sample(rng, 20)
    for k in range(20):
        i = got["reward"][k]
        np.testing.assert_array_equal(got["obs"][k], [i, 2 * i])
        np.testing.assert_array_equal(got["next_obs"][k], [i + 1, 2 * i + 1])
        assert got["done"][k] == i % 2


# --------------------------------------------------------------- temperature


def test_temperature_loss_is_hand_mean():
    temp = Temperature(act_dim=2, init=0.5)
    logps = np.array([-1.0, -3.0, 2.0])
    expected = np.mean(-0.5 * (logps + (-2.0)))
    assert temp.loss_value(logps) == pytest.approx(expected, rel=1e-12)


def test_temperature_gradient_matches_finite_differences():
    temp = Temperature(act_dim=3, init=0.2)
    logps = np.array([-4.0, -1.5, -2.5, 0.5])
    grad = temp.gradient(logps)
    step = 1e-7
    base = temp.log_alpha
    temp.log_alpha = base + step
    up = temp.loss_value(logps)
    temp.log_alpha = base - step
    down = temp.loss_value(logps)
    temp.log_alpha = base
    assert grad == pytest.approx((up - down) / (2 * step), rel=1e-6)


def test_temperature_fixed_point_when_entropy_on_target():
    temp = Temperature(act_dim=2, init=0.3)
    logps = np.full(8, 2.0)  # logp == -target_entropy
    before = temp.log_alpha
    temp.update(logps)
    assert temp.gradient(logps) == 0.0
    assert temp.log_alpha == before


def test_temperature_update_direction_restores_entropy():
    # entropy too low (logp above -target): alpha must rise
    temp = Temperature(act_dim=2, init=0.3)
    before = temp.log_alpha
    temp.update(np.full(4, 5.0))
    assert temp.log_alpha > before
    # entropy too high: alpha must fall
    temp = Temperature(act_dim=2, init=0.3)
    before = temp.log_alpha
    temp.update(np.full(4, -9.0))
    assert temp.log_alpha < before


def test_temperature_alpha_stays_positive():
    temp = Temperature(act_dim=1, init=1e-3)
    for _ in range(200):
        temp.update(np.full(4, -50.0))
    assert temp.alpha > 0.0


def test_temperature_state_round_trip():
    temp = Temperature(act_dim=2, init=0.7)
    temp.update(np.array([-1.0, -4.0]))
    other = Temperature(act_dim=2)
    other.load_state(temp.state_arrays())
    assert other.log_alpha == temp.log_alpha
    other.update(np.array([-2.0]))
    temp.update(np.array([-2.0]))
    assert other.log_alpha == temp.log_alpha


# ------------------------------------------------------------- training loop


def test_two_runs_same_seed_identical_metrics(tmp_path):
    text_a = _run(tmp_path / "a")
    text_b = _run(tmp_path / "b")
    assert text_a == text_b
    assert len(text_a.splitlines()) >= 3


def _run(outdir):
    tr = Trainer(_config(total_steps=260, seed=5, warmup_random_steps=60))
    tr.run_training(str(outdir), log_every=50)
    return (outdir / "metrics.jsonl").read_text()


def test_different_seeds_diverge(tmp_path):
    tr1 = Trainer(_config(total_steps=200, seed=1, warmup_random_steps=60))
    tr2 = Trainer(_config(total_steps=200, seed=2, warmup_random_steps=60))
    tr1.run_training(str(tmp_path / "s1"), log_every=50)
    tr2.run_training(str(tmp_path / "s2"), log_every=50)
    a = (tmp_path / "s1" / "metrics.jsonl").read_text()
    b = (tmp_path / "s2" / "metrics.jsonl").read_text()
    assert a != b


def test_warmup_actions_are_uniform_not_policy():
    """A policy rigged to saturate at +1 must not act during warmup."""
    cfg = _config(total_steps=1, warmup_random_steps=40)
    tr = Trainer(cfg)
    tr.policy.velocity.parameters()[-1][1].value[...] = 1e4
    for _ in range(60):
        tr.collect_step()
    stored = tr.buffer.act[:60]
    warmup_acts = stored[:40]
    later_acts = stored[40:]
    # uniform draws essentially never sit exactly on the clamp boundary
    assert np.all(np.abs(warmup_acts) < 1.0)
    np.testing.assert_array_equal(later_acts, 1.0)


def test_time_limit_is_not_stored_as_terminal():
    """Horizon exhaustion must bootstrap; goal hits must not."""
    cfg = _config(env="pendulum", total_steps=1, warmup_random_steps=10_000)
    tr = Trainer(cfg)
    for _ in range(250):  # beyond the 200-step horizon
        tr.collect_step()
    assert tr.buffer.done[:250].sum() == 0.0


def test_constant_q_and_zero_alpha_gives_zero_actor_gradient():
    tr = Trainer(_config(lambda_fm=0.0))
    tr.temperature.log_alpha = -np.inf  # alpha = 0 exactly
    states = np.random.default_rng(0).normal(size=(6, tr.env.obs_dim))

    def const_q(s, a_node):
        return Node(np.full(s.shape[0], 3.0))

    before = {n: p.value.copy() for n, p in tr.policy.parameters()}
    metrics, _ = tr.actor_update(states, q_fn=const_q)
    assert metrics["actor_grad_norm"] == 0.0
    for n, p in tr.policy.parameters():
        np.testing.assert_array_equal(p.grad(), 0.0)
        np.testing.assert_array_equal(p.value, before[n])


def test_rl_term_off_routes_gradient_only_through_straightening():
    """With the RL path silenced, only the velocity net learns."""
    tr = Trainer(_config(lambda_fm=0.5))
    tr.temperature.log_alpha = -np.inf
    states = np.random.default_rng(1).normal(size=(6, tr.env.obs_dim))

    def const_q(s, a_node):
        return Node(np.zeros(s.shape[0]))

    tr.actor_update(states, q_fn=const_q)
    vel_norm = sum(float(np.sum(p.grad() ** 2))
                   for _, p in tr.policy.velocity.parameters())
    sig_norm = sum(float(np.sum(p.grad() ** 2))
                   for _, p in tr.policy.sigma_head.parameters())
    assert vel_norm > 0.0
    assert sig_norm == 0.0


def test_straightening_off_still_reaches_velocity_through_tail():
    """Pure RL term: tail reparameterization carries gradient to both heads."""
    tr = Trainer(_config(lambda_fm=0.0))
    states = np.random.default_rng(2).normal(size=(6, tr.env.obs_dim))
    metrics, _ = tr.actor_update(states)
    assert metrics["fm_loss"] == 0.0
    vel_norm = sum(float(np.sum(p.grad() ** 2))
                   for _, p in tr.policy.velocity.parameters())
    sig_norm = sum(float(np.sum(p.grad() ** 2))
                   for _, p in tr.policy.sigma_head.parameters())
    assert vel_norm > 0.0
    assert sig_norm > 0.0


def test_actor_gradient_matches_analytic_linear_q():
    """Single frozen-noise tail step under a linear Q.

    With sigma pinned, the only parameter path to the loss runs through the
    tail velocity output: u_K = const + v*dt + sigma*eps, and with
    Q(s, a) = w.a the loss gradient in the velocity head's final bias is
    exactly -dt * w, independent of the data.
    """
    cfg = _config(lambda_fm=0.0, no_tail=True)
    tr = Trainer(cfg)
    assert tr.policy.sigma_pinned
    tr.temperature.log_alpha = np.log(0.3)
    w = np.array([0.8, -1.3])
    states = np.random.default_rng(3).normal(size=(5, tr.env.obs_dim))

    def linear_q(s, a_node):
        return sum_rows(mul(a_node, np.tile(w, (s.shape[0], 1))))

    tr.actor_update(states, q_fn=linear_q)
    bias = dict(tr.policy.velocity.parameters())["vel.b2"]
    np.testing.assert_allclose(bias.grad(), -tr.policy.dt * w, atol=1e-10)


def test_train_step_emits_complete_metrics():
    tr = Trainer(_config(seed=9))
    for _ in range(120):
        tr.collect_step()
    metrics = tr.train_step()
    expected_keys = {"critic_loss", "critic_grad_norm", "actor_loss",
                     "fm_loss", "mean_surrogate_logp", "mean_sigma",
                     "actor_grad_norm", "temperature_loss", "alpha"}
    assert set(metrics) == expected_keys
    assert all(np.isfinite(v) for v in metrics.values())


def test_train_step_moves_all_learnable_parts():
    tr = Trainer(_config(seed=10))
    for _ in range(120):
        tr.collect_step()
    pol0 = {n: p.value.copy() for n, p in tr.policy.parameters()}
    cri0 = {n: p.value.copy() for n, p in tr.critics.parameters()}
    tgt0 = [t.value.copy() for _, t in tr.critics.q1_target.parameters()]
    alpha0 = tr.temperature.alpha
    tr.train_step()
    assert any(not np.array_equal(p.value, pol0[n])
               for n, p in tr.policy.parameters())
    assert any(not np.array_equal(p.value, cri0[n])
               for n, p in tr.critics.parameters())
    assert any(not np.array_equal(t.value, old) for (_, t), old
               in zip(tr.critics.q1_target.parameters(), tgt0))
    assert tr.temperature.alpha != alpha0


def test_nan_poisoning_aborts_with_diagnostics(tmp_path):
    cfg = _config(total_steps=200, warmup_random_steps=50)
    tr = Trainer(cfg)
    tr.policy.velocity.parameters()[-1][1].value[0] = np.nan
    with pytest.raises(TrainingFault):
        tr.run_training(str(tmp_path / "bad"), log_every=50)
    lines = (tmp_path / "bad" / "metrics.jsonl").read_text().splitlines()
    assert "fault" in json.loads(lines[-1])
    assert (tmp_path / "bad" / "checkpoint_fault.bin").exists()


def test_checkpoint_cadence_and_final(tmp_path):
    cfg = _config(total_steps=500, checkpoint_every=200,
                  warmup_random_steps=450)
    tr = Trainer(cfg)
    tr.run_training(str(tmp_path / "run"), log_every=100)
    for name in ("checkpoint_200.bin", "checkpoint_400.bin",
                 "checkpoint_final.bin"):
        assert (tmp_path / "run" / name).exists(), name


def test_checkpoint_restores_equivalent_world(tmp_path):
    cfg = _config(total_steps=300, seed=21, warmup_random_steps=80)
    tr = Trainer(cfg)
    final = tr.run_training(str(tmp_path / "run"), log_every=100)
    state = load_checkpoint(final)
    assert state.step == 300
    assert state.env_name == "multigoal"
    rng = np.random.default_rng(0)
    s = rng.normal(size=(4, tr.env.obs_dim))
    u0 = rng.standard_normal((4, tr.env.act_dim))
    np.testing.assert_array_equal(tr.policy.sample_eval(s, u0, 4),
                                  state.policy.sample_eval(s, u0, 4))
    a = rng.uniform(-1, 1, size=(4, tr.env.act_dim))
    np.testing.assert_array_equal(tr.critics.q_min_target_np(s, a),
                                  state.critics.q_min_target_np(s, a))
    np.testing.assert_array_equal(
        tr.critics.q_np(s, a, "q1"), state.critics.q_np(s, a, "q1"))
    assert state.temperature.alpha == tr.temperature.alpha


def test_no_tail_config_pins_sigma(tmp_path):
    tr = Trainer(_config(no_tail=True))
    s = np.zeros((3, tr.env.obs_dim))
    u = np.zeros((3, tr.env.act_dim))
    np.testing.assert_array_equal(tr.policy.sigma_np(s, u, 0.75),
                                  tr.policy.sigma_min)
