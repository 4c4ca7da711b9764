import numpy as np
import pytest

from arel import envs
from arel.config import RunConfig
from arel.marl_learner import (RunningBaseline, Strategy, TabularSoftmaxPolicy, aggregate_csv, dense_rewards,
                               discounted_tail, evaluate, policy_update, rollout, run_experiment, run_seed)
from arel.redistribution import NumericalDivergence, Trajectory

SPEC = envs.EnvSpec("two_button", grid_size=5, horizon=10)


def _policy(lr=0.1):
    return TabularSoftmaxPolicy(envs.policy_key(SPEC), SPEC.n_actions, lr)


def test_epsilon_one_is_uniform():
    policy = _policy()
    policy.table[policy.key_fn(np.zeros(SPEC.obs_dim))] = np.array([50.0, 0, 0, 0, 0, 0])
    rng = np.random.default_rng(0)
    acts = [policy.act(np.zeros(SPEC.obs_dim), rng, epsilon=1.0) for _ in range(6000)]
    assert np.all(np.abs(np.bincount(acts, minlength=6) / 6000 - 1 / 6) < 0.02)


def test_greedy_rollout_deterministic():
    policy = _policy()
    a = rollout(policy, SPEC, 4, np.random.default_rng(1), greedy=True)
    b = rollout(policy, SPEC, 4, np.random.default_rng(2), greedy=True)
    assert np.array_equal(a.actions, b.actions) and a.length == SPEC.horizon


def test_zero_rewards_leave_policy_unchanged():
    policy = _policy()
    traj = rollout(policy, SPEC, 0, np.random.default_rng(0))
    policy_update(policy, traj, np.zeros(traj.length))
    assert all(np.all(v == 0) for v in policy.table.values())


def test_bandit_rewarded_action_probability_increases():
    policy = TabularSoftmaxPolicy(lambda o: (), 2, lr=0.5)
    rng = np.random.default_rng(0)
    probs = [policy.probs(())[0]]
    for _ in range(30):
        a = policy.act(np.zeros(1), rng)
        traj = Trajectory(np.zeros((1, 1, 1)), np.array([[a]]), 1.0 if a == 0 else 0.0)
        policy_update(policy, traj, [traj.episodic_reward])
        probs.append(policy.probs(())[0])
    assert all(b >= a for a, b in zip(probs, probs[1:])) and probs[-1] > probs[0]


def test_surrogate_grad_matches_fd():
    policy = _policy()
    rng = np.random.default_rng(3)
    keys = [("a",), ("b",), ("a",)]
    for k in set(keys):
        policy.table[k] = rng.normal(size=6)
    acts, w = [1, 4, 2], [0.7, -1.2, 0.3]
    grads = policy.surrogate_grad(keys, acts, w)
    h = 1e-6
    for k in set(keys):
        fd = np.zeros(6)
        for j in range(6):
            policy.table[k][j] += h
            up = policy.surrogate(keys, acts, w)
            policy.table[k][j] -= 2 * h
            down = policy.surrogate(keys, acts, w)
            policy.table[k][j] += h
            fd[j] = (up - down) / (2 * h)
        assert np.allclose(grads[k], fd, atol=1e-5)


def test_discounted_tail():
    assert discounted_tail(np.array([1.0, 0.0, 2.0]), 1.0).tolist() == [3.0, 2.0, 2.0]
    assert np.allclose(discounted_tail(np.array([1.0, 1.0]), 0.5), [1.5, 1.0])


def test_baseline_ema():
    b = RunningBaseline(2, decay=0.5)
    b.update(np.array([2.0, 4.0]))
    b.update(np.array([0.0, 0.0]))
    assert b().tolist() == [1.0, 2.0]


def test_dense_reward_strategies():
    traj = Trajectory(np.zeros((4, 2, 3)), np.zeros((4, 2)), 8.0)
    assert dense_rewards(Strategy.UNIFORM, traj).tolist() == [2.0] * 4
    assert dense_rewards(Strategy.FINAL, traj).tolist() == [0.0, 0.0, 0.0, 8.0]
    r_hat = np.array([1.0, 2.0, 3.0, 2.0])
    assert np.array_equal(dense_rewards(Strategy.AREL, traj, 1.0, r_hat), r_hat)


def test_non_finite_returns_raise():
    policy = _policy()
    traj = rollout(policy, SPEC, 0, np.random.default_rng(0))
    with pytest.raises(NumericalDivergence):
        policy_update(policy, traj, np.full(traj.length, np.nan))


def test_policy_dict_roundtrip():
    policy = _policy()
    policy.table[((1, 0), None, True)] = np.arange(6.0)
    other = _policy()
    other.load_dict(policy.to_dict())
    assert np.array_equal(other.table[((1, 0), None, True)], np.arange(6.0))


def test_evaluate_deterministic():
    policy = _policy()
    assert evaluate(policy, SPEC, range(5)) == evaluate(policy, SPEC, range(5))


def test_smoke_run_is_reproducible(tmp_path):
    cfg = RunConfig(n_agents=2, horizon=10, grid_size=5, episodes=200, eval_every=100, eval_episodes=10,
                    update_every=50, credit_batches=5, batch_size=8, d_model=16, seeds=[0, 1])
    a = run_seed(cfg, 0)
    b = run_seed(cfg, 0)
    assert a.curve == b.curve and a.credit_losses == b.credit_losses
    results = run_experiment(cfg, out_dir=tmp_path)
    files = sorted(p.name for p in tmp_path.iterdir() if p.name.startswith("curve_"))
    assert len([f for f in files if "seed" in f]) == 2 and any("aggregate" in f for f in files)
    assert aggregate_csv(results).count("\n") == 3
