"""Tests for evaluation protocols, Q-guided selection, and diagnostics."""

import numpy as np
import pytest

from trfp.critic import CriticEnsemble
from trfp.envs import make_env
from trfp.evaluate import (EvalReport, collect_states, evaluate,
                           flow_diagnostics, mode_coverage, q_guided_select)
from trfp.flow_policy import FlowPolicy

OBS_DIM = 2  # multigoal observation size
ACT_DIM = 2


def _make_policy(seed=0, hidden=(8,), obs_dim=OBS_DIM, **kwargs):
    return FlowPolicy(obs_dim, ACT_DIM, hidden=hidden,
                      rng=np.random.default_rng(seed), **kwargs)


def _zero_velocity(policy):
    for _, p in policy.velocity.parameters():
        p.value[...] = 0.0
    return policy


def _constant_field(policy, c):
    """All-zero layers except the output bias: v(s, u, t) == c everywhere."""
    _zero_velocity(policy)
    policy.velocity.parameters()[-1][1].value[...] = np.asarray(c)
    return policy


def _linear_field(policy, a_matrix):
    """hidden=() velocity net computing v = u @ A."""
    w = policy.velocity.parameters()[0][1]
    w.value[...] = 0.0
    w.value[OBS_DIM:OBS_DIM + ACT_DIM, :] = a_matrix
    policy.velocity.parameters()[1][1].value[...] = 0.0
    return policy


class StubCritics:
    """Returns preset per-candidate scores regardless of the actions."""

    def __init__(self, scores1, scores2=None):
        self.scores = {"q1": np.asarray(scores1, dtype=np.float64),
                       "q2": np.asarray(scores2 if scores2 is not None
                                        else scores1, dtype=np.float64)}

    def q_np(self, s, a, which):
        return self.scores[which].copy()


# ------------------------------------------------------------------ selection


def test_single_candidate_is_plain_deterministic_sample():
    policy = _make_policy(seed=1)
    obs = np.array([0.3, -0.7])
    a = q_guided_select(policy, None, obs, 1, 4, np.random.default_rng(5))
    u0 = np.random.default_rng(5).standard_normal((1, ACT_DIM))
    expected = np.clip(policy.sample_eval(obs[None, :], u0, 4), -1, 1)[0]
    np.testing.assert_array_equal(a, expected)


def test_stub_scores_pick_second_candidate():
    policy = _zero_velocity(_make_policy(seed=2))
    obs = np.zeros(OBS_DIM)
    rng_clone = np.random.default_rng(9)
    candidates = np.clip(rng_clone.standard_normal((3, ACT_DIM)), -1, 1)
    a = q_guided_select(policy, StubCritics([1.0, 3.0, 2.0]), obs, 3, 4,
                        np.random.default_rng(9))
    np.testing.assert_array_equal(a, candidates[1])


def test_positive_scaling_leaves_selection_unchanged():
    policy = _zero_velocity(_make_policy(seed=3))
    obs = np.zeros(OBS_DIM)
    base = np.array([0.5, -1.0, 2.5, 0.1])
    picks = []
    for factor in (1.0, 7.0, 0.01):
        a = q_guided_select(policy, StubCritics(base * factor), obs, 4, 4,
                            np.random.default_rng(11))
        picks.append(a)
    np.testing.assert_array_equal(picks[0], picks[1])
    np.testing.assert_array_equal(picks[0], picks[2])


def test_tied_scores_take_lowest_index():
    policy = _zero_velocity(_make_policy(seed=4))
    obs = np.zeros(OBS_DIM)
    rng_clone = np.random.default_rng(13)
    candidates = np.clip(rng_clone.standard_normal((3, ACT_DIM)), -1, 1)
    a = q_guided_select(policy, StubCritics([2.0, 2.0, 1.0]), obs, 3, 4,
                        np.random.default_rng(13))
    np.testing.assert_array_equal(a, candidates[0])


def test_selection_scores_with_twin_minimum():
    policy = _zero_velocity(_make_policy(seed=5))
    obs = np.zeros(OBS_DIM)
    rng_clone = np.random.default_rng(17)
    candidates = np.clip(rng_clone.standard_normal((3, ACT_DIM)), -1, 1)
    # each critic alone would pick index 0 or 1; the minimum picks 2
    a = q_guided_select(policy, StubCritics([5.0, 1.0, 2.0],
                                            [1.0, 5.0, 3.0]),
                        obs, 3, 4, np.random.default_rng(17))
    np.testing.assert_array_equal(a, candidates[2])


def test_candidates_must_be_positive():
    with pytest.raises(ValueError, match="at least one candidate"):
        q_guided_select(_make_policy(), None, np.zeros(OBS_DIM), 0, 4,
                        np.random.default_rng(0))


# ----------------------------------------------------------------- evaluation


def _real_critics(seed=0):
    return CriticEnsemble(OBS_DIM, ACT_DIM, hidden=(8,),
                          rng=np.random.default_rng(seed))


def test_evaluate_is_reproducible():
    policy = _make_policy(seed=6)
    critics = _real_critics(seed=6)
    reports = [evaluate(policy, critics, make_env("multigoal"), episodes=3,
                        steps=4, n_candidates=2,
                        rng=np.random.default_rng(21))
               for _ in range(2)]
    assert reports[0].returns == reports[1].returns
    assert reports[0].mode_visit_counts == reports[1].mode_visit_counts


def test_zero_policy_reaches_no_goal():
    policy = _zero_velocity(_make_policy(seed=7))
    report = evaluate(policy, _real_critics(7), make_env("multigoal"),
                      episodes=3, steps=4, n_candidates=2,
                      rng=np.random.default_rng(23))
    assert report.mode_visit_counts == [0, 0, 0, 0]
    assert sum(report.mode_visit_counts) == 0


def test_constant_push_terminates_at_the_east_goal():
    # v = (30, -3 u_y): saturates the x action and damps y to zero, so
    # every episode drives straight east into the first goal disc
    policy = _linear_field(_make_policy(seed=8, hidden=()),
                           np.array([[0.0, 0.0], [0.0, -3.0]]))
    policy.velocity.parameters()[1][1].value[...] = np.array([30.0, 0.0])
    report = evaluate(policy, _real_critics(8), make_env("multigoal"),
                      episodes=4, steps=4, n_candidates=1,
                      rng=np.random.default_rng(25))
    assert report.mode_visit_counts[0] == 4
    assert sum(report.mode_visit_counts) == 4
    counts, covered = mode_coverage(report)
    assert counts == [4, 0, 0, 0]
    assert not covered


def test_report_statistics_match_returns():
    env = make_env("pendulum")
    policy = FlowPolicy(env.obs_dim, env.act_dim, hidden=(8,),
                        rng=np.random.default_rng(9))
    critics = CriticEnsemble(env.obs_dim, env.act_dim, hidden=(8,),
                             rng=np.random.default_rng(9))
    report = evaluate(policy, critics, env,
                      episodes=4, steps=4, n_candidates=2,
                      rng=np.random.default_rng(27))
    assert report.mean_return == pytest.approx(np.mean(report.returns))
    assert report.std_return == pytest.approx(np.std(report.returns))
    assert report.episodes == len(report.returns) == 4
    assert report.mode_visit_counts is None


def test_single_candidate_equals_manual_rollout():
    policy = _make_policy(seed=10)
    report = evaluate(policy, None, make_env("multigoal"), episodes=2,
                      steps=4, n_candidates=1, rng=np.random.default_rng(29))

    rng = np.random.default_rng(29)
    env = make_env("multigoal")
    manual = []
    for _ in range(2):
        obs = env.reset(rng)
        total = 0.0
        while not env.done:
            u0 = rng.standard_normal((1, ACT_DIM))
            a = np.clip(policy.sample_eval(obs[None, :], u0, 4), -1, 1)[0]
            obs, reward, _ = env.step(a)
            total += reward
        manual.append(total)
    assert report.returns == manual


def test_trajectory_recording_round_trips_csv(tmp_path):
    policy = _constant_field(_make_policy(seed=11), [30.0, 0.0])
    report = evaluate(policy, None, make_env("multigoal"), episodes=2,
                      steps=1, n_candidates=1, rng=np.random.default_rng(31),
                      record_trajectories=True)
    path = tmp_path / "trajs.csv"
    report.write_trajectory_csv(str(path), OBS_DIM, ACT_DIM)
    lines = path.read_text().splitlines()
    total_steps = sum(len(ep) for ep in report.trajectories)
    assert len(lines) == total_steps + 1
    assert lines[0].startswith("episode,step,obs0")


def test_report_json_round_trip(tmp_path):
    import json
    policy = _make_policy(seed=12)
    report = evaluate(policy, _real_critics(12), make_env("multigoal"),
                      episodes=2, steps=1, n_candidates=2,
                      rng=np.random.default_rng(33))
    path = tmp_path / "report.json"
    report.write_json(str(path))
    payload = json.loads(path.read_text())
    assert payload["mean_return"] == report.mean_return
    assert payload["mode_visit_counts"] == report.mode_visit_counts
    assert payload["candidates"] == 2


def test_mode_coverage_flags():
    covered_report = EvalReport(0.0, 0.0, [], 4, 1, 20,
                                mode_visit_counts=[5, 5, 5, 5])
    counts, covered = mode_coverage(covered_report)
    assert covered and counts == [5, 5, 5, 5]
    skewed = EvalReport(0.0, 0.0, [], 4, 1, 20,
                        mode_visit_counts=[20, 0, 0, 0])
    _, covered = mode_coverage(skewed)
    assert not covered
    with pytest.raises(ValueError, match="no mode information"):
        mode_coverage(EvalReport(0.0, 0.0, [], 4, 1, 20))


# ---------------------------------------------------------------- diagnostics


def test_collect_states_spans_episodes():
    env = make_env("multigoal")
    states = collect_states(env, 250, np.random.default_rng(35))
    assert states.shape == (250, OBS_DIM)
    # crossing the 100-step horizon requires at least one reset
    again = collect_states(make_env("multigoal"), 250,
                           np.random.default_rng(35))
    np.testing.assert_array_equal(states, again)


def test_diagnostics_constant_field_is_trivial():
    policy = _constant_field(_make_policy(seed=13), [0.4, -0.2])
    states = np.random.default_rng(37).normal(size=(6, OBS_DIM))
    report = flow_diagnostics(policy, states, np.random.default_rng(39))
    assert report["straightness_max"] == pytest.approx(0.0, abs=1e-12)
    assert report["max_abs_divergence"] == pytest.approx(0.0, abs=1e-9)
    assert report["delta_pre_max_abs"] == pytest.approx(0.0, abs=1e-9)
    assert report["bound_satisfied_fraction"] == 1.0


def test_diagnostics_linear_field_matches_trace_formula():
    a_matrix = np.array([[0.3, 0.1], [-0.2, 0.5]])
    policy = _linear_field(_make_policy(seed=14, hidden=()), a_matrix)
    states = np.random.default_rng(41).normal(size=(5, OBS_DIM))
    report = flow_diagnostics(policy, states, np.random.default_rng(43))
    expected = -np.trace(a_matrix) * policy.tau_cut
    assert report["delta_pre_mean_abs"] == pytest.approx(abs(expected),
                                                         abs=1e-3)
    assert report["max_abs_divergence"] == pytest.approx(
        abs(np.trace(a_matrix)), abs=1e-6)
    assert report["bound_satisfied_fraction"] == 1.0


def test_diagnostics_bound_holds_for_random_policies():
    for seed in (15, 16, 17):
        policy = _make_policy(seed=seed, hidden=(12, 12))
        # push the net away from its tiny initialization
        for _, p in policy.velocity.parameters():
            p.value += np.random.default_rng(seed).normal(
                scale=0.4, size=p.value.shape)
        states = np.random.default_rng(45 + seed).normal(size=(4, OBS_DIM))
        report = flow_diagnostics(policy, states, np.random.default_rng(seed))
        assert report["bound_satisfied_fraction"] == 1.0
        assert report["delta_pre_max_abs"] <= report["divergence_bound_max"] \
            + 1e-9


def test_diagnostics_do_not_mutate_policy():
    policy = _make_policy(seed=18)
    before = {n: p.value.copy() for n, p in policy.parameters()}
    states = np.random.default_rng(47).normal(size=(3, OBS_DIM))
    flow_diagnostics(policy, states, np.random.default_rng(49))
    for n, p in policy.parameters():
        np.testing.assert_array_equal(p.value, before[n])
