import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from arel import ndtensor as nd
from arel.attention import (AgentAttention, AttentionStack, AttentionTrace, ConfigError, Embedding,
                            TemporalAttention, causal_mask)
from arel.model import ArelConfig, ArelModel

LARGE = nd.LARGE


def test_causal_mask_rows():
    assert causal_mask(0, 4).tolist() == [0, -LARGE, -LARGE, -LARGE]
    assert causal_mask(3, 4).tolist() == [0, 0, 0, 0]
    assert causal_mask(2, 5).tolist() == [0, 0, 0, -LARGE, -LARGE]
    with pytest.raises(nd.ContractError):
        causal_mask(4, 4)


def test_embedding_zero_obs_zero_tables():
    emb = Embedding(3, 8, 5, 0, np.random.default_rng(0))
    emb.position.data[...] = 0.0
    assert np.array_equal(emb(np.zeros((1, 5, 2, 3))).data, np.zeros((1, 5, 2, 8)))


def test_embedding_agent_swap_equivariant():
    rng = np.random.default_rng(1)
    emb = Embedding(4, 8, 6, 0, rng)
    x = rng.normal(size=(1, 6, 3, 4))
    out = emb(x).data
    assert np.allclose(emb(x[:, :, [1, 0, 2]]).data, out[:, :, [1, 0, 2]], atol=0, rtol=0)


def test_embedding_compression_path():
    emb = Embedding(120, 8, 4, 0, np.random.default_rng(2))
    assert emb.compressed and emb.compress.weight.shape == (120, 100)
    assert emb(np.ones((1, 4, 2, 120))).shape == (1, 4, 2, 8)
    assert not Embedding(100, 8, 4, 0, np.random.default_rng(2)).compressed


def test_embedding_rejects_long_episode():
    emb = Embedding(3, 8, 4, 0, np.random.default_rng(0))
    with pytest.raises(ConfigError):
        emb(np.zeros((1, 5, 2, 3)))
    with pytest.raises(nd.DimensionError):
        emb(np.zeros((1, 4, 2, 7)))


def test_temporal_single_step_weight_is_one():
    tem = TemporalAttention(8, 2, 2, np.random.default_rng(3))
    _, alpha = tem(nd.Tensor(np.random.default_rng(4).normal(size=(1, 1, 2, 8))))
    assert np.allclose(alpha, 1.0)


def test_temporal_ignores_future():
    rng = np.random.default_rng(5)
    tem = TemporalAttention(8, 2, 2, rng)
    x = rng.normal(size=(1, 6, 2, 8))
    y = x.copy()
    y[:, 4:] += rng.normal(size=(1, 2, 2, 8))
    a, b = tem(nd.Tensor(x))[0].data, tem(nd.Tensor(y))[0].data
    assert np.abs(a[:, :4] - b[:, :4]).max() <= 1e-12


def test_temporal_identical_agents_identical_outputs():
    rng = np.random.default_rng(6)
    tem = TemporalAttention(8, 2, 2, rng)
    x = np.repeat(rng.normal(size=(1, 5, 1, 8)), 2, axis=2)
    out = tem(nd.Tensor(x))[0].data
    assert np.array_equal(out[:, :, 0], out[:, :, 1])


def test_agent_single_agent_weight_is_one():
    agt = AgentAttention(8, 2, 2, np.random.default_rng(7))
    _, beta = agt(nd.Tensor(np.random.default_rng(8).normal(size=(1, 3, 1, 8))))
    assert np.allclose(beta, 1.0)


@settings(max_examples=20, deadline=None)
@given(st.integers(2, 5), st.integers(0, 10_000))
def test_agent_attention_equivariant(n, seed):
    rng = np.random.default_rng(seed)
    agt = AgentAttention(8, 2, 2, rng)
    x = rng.normal(size=(1, 3, n, 8))
    perm = rng.permutation(n)
    out, beta = agt(nd.Tensor(x))
    out_p, _ = agt(nd.Tensor(x[:, :, perm]))
    assert np.allclose(out_p.data, out.data[:, :, perm], atol=1e-12)
    assert np.allclose(beta.sum(axis=-1), 1.0, atol=1e-12)


def test_uniform_agent_attention_weights():
    agt = AgentAttention(8, 2, 2, np.random.default_rng(9), uniform=True)
    _, beta = agt(nd.Tensor(np.random.default_rng(10).normal(size=(1, 2, 4, 8))))
    assert np.allclose(beta, 0.25)


def test_stack_depth_one_is_composition():
    rng = np.random.default_rng(11)
    stack = AttentionStack(1, 8, 2, 2, rng)
    x = nd.Tensor(rng.normal(size=(1, 4, 3, 8)))
    block = stack.block0
    manual = block.agt(block.tem(x)[0])[0].data
    assert np.array_equal(stack(x).data, manual)


def test_trace_records_each_block():
    rng = np.random.default_rng(12)
    stack = AttentionStack(3, 8, 2, 2, rng)
    trace = AttentionTrace()
    stack(nd.Tensor(rng.normal(size=(1, 4, 3, 8))), trace)
    assert len(trace.temporal) == 3 and trace.alpha().shape == (3, 4, 4) and trace.beta().shape == (4, 3, 3)
    assert '"blocks"' in trace.to_json()


@pytest.mark.parametrize("depth", [1, 2, 3])
def test_model_causal_across_depths(depth):
    rng = np.random.default_rng(depth)
    model = ArelModel(ArelConfig(obs_dim=4, d_model=8, heads=2, depth=depth, t_max=6, head_hidden=8), seed=depth)
    x = rng.normal(size=(2, 6, 3, 4))
    for t in range(5):
        y = x.copy()
        y[:, t + 1:] = rng.normal(size=y[:, t + 1:].shape)
        assert np.abs(model.predict(x)[:, :t + 1] - model.predict(y)[:, :t + 1]).max() <= 1e-9


@pytest.mark.parametrize("n", [2, 3, 6])
def test_model_agent_permutation_invariant(n):
    rng = np.random.default_rng(n)
    model = ArelModel(ArelConfig(obs_dim=4, d_model=8, heads=2, t_max=5), seed=n)
    x = rng.normal(size=(3, 5, n, 4))
    perm = rng.permutation(n)
    assert np.abs(model.predict(x) - model.predict(x[:, :, perm])).max() <= 1e-9


def test_group_embedding_validation():
    model = ArelModel(ArelConfig(obs_dim=3, d_model=8, heads=2, t_max=4, n_groups=2))
    x = np.zeros((1, 4, 2, 3))
    assert model.predict(x, group_ids=[0, 1]).shape == (1, 4)
    with pytest.raises(ConfigError):
        model.predict(x, group_ids=[0, 2])
    with pytest.raises(ConfigError):
        ArelModel(ArelConfig(obs_dim=3, d_model=8, heads=3))


def test_zero_init_output_predicts_zero():
    model = ArelModel(ArelConfig(obs_dim=3, d_model=8, heads=2, t_max=4, zero_init_output=True))
    assert np.array_equal(model.predict(np.random.default_rng(0).normal(size=(2, 4, 2, 3))), np.zeros((2, 4)))
