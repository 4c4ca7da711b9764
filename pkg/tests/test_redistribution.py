import numpy as np
import pytest
from scipy import stats

from arel import envs
from arel import ndtensor as nd
from arel.attention import ConfigError
from arel.marl_learner import TabularSoftmaxPolicy, rollout
from arel.model import ArelConfig, ArelModel
from arel.redistribution import (CreditTrainer, ExperienceBuffer, NumericalDivergence, Trajectory, TrajectoryError,
                                 collate, credit_step, load_trajectories, mix_rewards, should_update,
                                 update_credit_network)
from arel.synthetic import make_linear_task


def _traj(i, T=4, N=2, F=3, R=None):
    rng = np.random.default_rng(i)
    hidden = rng.normal(size=T)
    return Trajectory(rng.normal(size=(T, N, F)), rng.integers(0, 6, size=(T, N)),
                      hidden.sum() if R is None else R, hidden, seed=i, episode_id=i)


def test_store_and_fifo_eviction():
    buf = ExperienceBuffer(3)
    buf.store(_traj(0))
    assert len(buf) == 1
    for i in range(1, 4):
        buf.store(_traj(i))
    assert len(buf) == 3 and [t.episode_id for t in buf] == [1, 2, 3]


def test_env_episode_return_is_hidden_sum():
    spec = envs.EnvSpec("navigation")
    policy = TabularSoftmaxPolicy(envs.policy_key(spec), spec.n_actions)
    traj = rollout(policy, spec, 5, np.random.default_rng(5))
    buf = ExperienceBuffer(2)
    buf.store(traj)
    assert buf[0].episodic_reward == pytest.approx(buf[0].hidden_rewards.sum(), abs=1e-12)


def test_store_rejects_inconsistent_return():
    with pytest.raises(TrajectoryError):
        ExperienceBuffer(2).store(_traj(0, R=123.0))
    bad = _traj(1)
    bad.observations[0, 0, 0] = np.nan
    with pytest.raises(TrajectoryError):
        ExperienceBuffer(2).store(bad)


def test_sample_single_item_buffer():
    buf = ExperienceBuffer(4)
    buf.store(_traj(0))
    batch = buf.sample_batch(3, np.random.default_rng(0))
    assert len(batch) == 3 and all(t is buf[0] for t in batch)


def test_sample_empty_raises():
    with pytest.raises(nd.ContractError):
        ExperienceBuffer(2).sample_batch(1, np.random.default_rng(0))


def test_sample_seeded():
    buf = ExperienceBuffer(10)
    for i in range(10):
        buf.store(_traj(i))
    ids = lambda: [t.episode_id for t in buf.sample_batch(20, np.random.default_rng(9))]  # noqa: E731
    assert ids() == ids()


def test_sample_frequencies_uniform():
    buf = ExperienceBuffer(10)
    for i in range(10):
        buf.store(_traj(i, T=1, N=1, F=1))
    ids = [t.episode_id for t in buf.sample_batch(100_000, np.random.default_rng(1))]
    counts = np.bincount(ids, minlength=10)
    assert stats.chisquare(counts).pvalue > 1e-3


def test_jsonl_roundtrip(tmp_path):
    buf = ExperienceBuffer(5)
    for i in range(3):
        buf.store(_traj(i))
    buf.save(tmp_path / "b.jsonl")
    back = ExperienceBuffer.load(tmp_path / "b.jsonl")
    assert len(back) == 3
    for a, b in zip(buf, back):
        assert np.array_equal(a.observations, b.observations) and a.episodic_reward == b.episodic_reward


def test_load_rejects_schema(tmp_path):
    (tmp_path / "x.jsonl").write_text('{"schema": 99}\n')
    with pytest.raises(TrajectoryError):
        load_trajectories(tmp_path / "x.jsonl")


def test_collate_pads_ragged():
    x, mask, R = collate([_traj(0, T=3), _traj(1, T=5)], n_actions=6)
    assert x.shape == (2, 5, 2, 9) and mask.sum(axis=1).tolist() == [3, 5]
    assert collate([_traj(0), _traj(1)])[1] is None


def test_mix_rewards_examples():
    r_hat = np.array([0.2, -0.1, 0.4])
    assert np.array_equal(mix_rewards(r_hat, 5.0, 1.0), r_hat)
    assert mix_rewards(r_hat, 5.0, 0.0).tolist() == [0.0, 0.0, 5.0]
    assert np.allclose(mix_rewards(r_hat, 5.0, 0.8), [0.16, -0.08, 0.32 + 1.0])
    with pytest.raises(ConfigError):
        mix_rewards(r_hat, 1.0, 1.5)


def test_update_gate():
    assert should_update(100, 50) and not should_update(101, 50)
    model = ArelModel(ArelConfig(obs_dim=3, d_model=8, heads=2, t_max=4, head_hidden=8))
    trainer = CreditTrainer(model, every=5, batches=2, batch_size=2)
    buf = ExperienceBuffer(4)
    buf.store(_traj(0))
    before = {k: v.data.copy() for k, v in model.parameters().items()}
    assert trainer.maybe_update(3, buf) == []
    assert all(np.array_equal(before[k], v.data) for k, v in model.parameters().items())
    assert len(trainer.maybe_update(5, buf)) == 2


def test_memorizes_single_episode():
    traj = _traj(3, T=4)
    model = ArelModel(ArelConfig(obs_dim=3, d_model=16, heads=2, t_max=4, head_hidden=32), seed=1)
    buf = ExperienceBuffer(1)
    buf.store(traj)
    opt = nd.Adam(model.parameters(), lr=1e-3)
    update_credit_network(model, opt, buf, 400, 1, np.random.default_rng(0), omega=0.0)
    r = model.predict(traj.observations)
    assert (r.sum() - traj.episodic_reward) ** 2 / 4 < 1e-4


def test_synthetic_loss_drops_within_500_steps():
    data = make_linear_task(600, seed=2)
    buf = ExperienceBuffer(600)
    for e in range(600):
        buf.store(Trajectory(data.obs[e], np.zeros(data.obs.shape[1:3]), data.returns[e], data.rewards[e]))
    model = ArelModel(ArelConfig(obs_dim=8, d_model=32, heads=4, t_max=20), seed=0)
    x, _, R = collate(list(buf)[:128])
    from arel.credit_head import regression_loss
    before = regression_loss(model.predict(x), R).item()
    opt = nd.Adam(model.parameters(), lr=1e-3)
    update_credit_network(model, opt, buf, 500, 32, np.random.default_rng(0), omega=20.0)
    assert regression_loss(model.predict(x), R).item() < 0.1 * before


def test_divergence_is_reported():
    model = ArelModel(ArelConfig(obs_dim=3, d_model=8, heads=2, t_max=4))
    opt = nd.Adam(model.parameters())
    t = _traj(0)
    t.episodic_reward = float("inf")
    with pytest.raises(NumericalDivergence, match="non-finite credit loss"):
        credit_step(model, opt, [t])
