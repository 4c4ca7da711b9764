import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from arel import ndtensor as nd
from arel.attention import causal_mask_matrix, multihead_attention


def test_matmul_identity():
    a = nd.Tensor([[1.0, 2.0], [3.0, 4.0]])
    assert np.array_equal(nd.matmul(nd.Tensor(np.eye(2)), a).data, a.data)


def test_matmul_by_hand():
    assert nd.matmul(nd.Tensor([[1.0, 2.0]]), nd.Tensor([[3.0], [4.0]])).data.tolist() == [[11.0]]


def test_matmul_shape_mismatch():
    with pytest.raises(nd.DimensionError):
        nd.matmul(nd.Tensor(np.ones((2, 3))), nd.Tensor(np.ones((2, 3))))


def test_matmul_grad_matches_fd():
    rng = np.random.default_rng(0)
    a, b = nd.parameter(rng.normal(size=(3, 4))), nd.parameter(rng.normal(size=(4, 2)))
    assert nd.gradcheck(lambda: nd.tsum(nd.matmul(a, b)), [a, b]) < 1e-6


def test_softmax_examples():
    assert np.allclose(nd.softmax_lastdim(nd.Tensor([0.0, 0.0])).data, [0.5, 0.5])
    out = nd.softmax_lastdim(nd.Tensor([0.0, 0.0]), np.array([0.0, -nd.LARGE])).data
    assert out[0] == pytest.approx(1.0) and out[1] < 1e-300
    x = np.array([1.0, 2.0, 3.0])
    assert np.allclose(nd.softmax_lastdim(nd.Tensor(x)).data, np.exp(x) / np.exp(x).sum(), atol=1e-12, rtol=0)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (3, 5), elements=st.floats(-50, 50)))
def test_softmax_rows_are_distributions(x):
    p = nd.softmax_lastdim(nd.Tensor(x)).data
    assert np.all(p >= 0) and np.allclose(p.sum(axis=-1), 1.0, atol=1e-12)


def test_layer_norm_examples():
    one, zero = nd.Tensor(np.ones(3)), nd.Tensor(np.zeros(3))
    assert np.allclose(nd.layer_norm(nd.Tensor([5.0, 5.0, 5.0]), one, zero).data, 0.0)
    out = nd.layer_norm(nd.Tensor([1.0, 3.0]), nd.Tensor(np.ones(2)), nd.Tensor(np.zeros(2))).data
    assert np.allclose(out, [-1.0, 1.0], atol=1e-4)


def test_layer_norm_grad():
    rng = np.random.default_rng(1)
    x, g, b = (nd.parameter(rng.normal(size=s)) for s in [(3, 5), 5, 5])
    proj = rng.normal(size=(3, 5))
    assert nd.gradcheck(lambda: nd.tsum(nd.mul(nd.layer_norm(x, g, b), proj)), [x, g, b]) < 1e-5


def test_elementwise_examples():
    assert nd.relu(nd.Tensor([-1.0, 2.0])).data.tolist() == [0.0, 2.0]
    assert nd.mean(nd.Tensor([2.0, 4.0])).item() == 3.0


@pytest.mark.parametrize("op", [nd.exp, nd.square, nd.relu, nd.tabs])
def test_unary_grads(op):
    rng = np.random.default_rng(2)
    x = nd.parameter(rng.normal(size=(4, 3)) + np.sign(rng.normal(size=(4, 3))) * 0.1)
    proj = x.data.copy() + 1.5
    assert nd.gradcheck(lambda: nd.tsum(nd.mul(op(x), proj)), [x]) < 1e-5


@pytest.mark.parametrize("op", [nd.add, nd.sub, nd.mul, nd.div])
def test_broadcasting_binary_grads(op):
    rng = np.random.default_rng(3)
    a = nd.parameter(rng.normal(size=(2, 3, 4)))
    b = nd.parameter(np.abs(rng.normal(size=(3, 1))) + 0.5)
    proj = rng.normal(size=(2, 3, 4))
    assert nd.gradcheck(lambda: nd.tsum(nd.mul(op(a, b), proj)), [a, b]) < 1e-5


def test_sum_grad_is_ones():
    x = nd.parameter(np.random.default_rng(4).normal(size=(2, 3, 4)))
    nd.backward(nd.tsum(x))
    assert np.array_equal(x.grad, np.ones((2, 3, 4)))


def test_square_grad_at_three():
    x = nd.parameter(3.0)
    nd.backward(nd.mul(x, x))
    assert x.grad == pytest.approx(6.0)


def test_repeated_use_accumulates():
    x = nd.parameter(np.array([1.0, 2.0]))
    y = nd.add(nd.mul(x, 2.0), nd.mul(x, 3.0))
    nd.backward(nd.tsum(y))
    assert np.allclose(x.grad, 5.0)


def test_tape_topological_order():
    a = nd.parameter(1.0)
    b = nd.mul(a, 2.0)
    c = nd.add(b, a)
    order = nd.Tape.from_loss(c).ops
    pos = {id(t): i for i, t in enumerate(order)}
    for node in order:
        for p in node._parents:
            if p.requires_grad:
                assert pos[id(p)] < pos[id(node)]


def test_backward_needs_scalar():
    x = nd.parameter(np.ones(3))
    with pytest.raises(nd.ContractError):
        nd.backward(nd.mul(x, 2.0))


def test_grad_shape_matches_values():
    x = nd.parameter(np.ones((2, 5)))
    nd.backward(nd.tsum(nd.broadcast_to(nd.tsum(x, axis=0, keepdims=True), (3, 5))))
    assert x.grad.shape == x.shape


def test_debug_mode_flags_non_finite():
    nd.set_debug(True)
    try:
        with pytest.raises(FloatingPointError):
            nd.div(nd.Tensor([1.0]), nd.Tensor([0.0]))
    finally:
        nd.set_debug(False)


def test_attention_block_grad():
    rng = np.random.default_rng(5)
    x = nd.parameter(rng.normal(size=(2, 4, 8)))
    ws = [nd.parameter(rng.normal(size=(8, 8)) / 3) for _ in range(3)]
    proj = rng.normal(size=(2, 4, 8))
    fn = lambda: nd.tsum(nd.mul(multihead_attention(x, *ws, 2, causal_mask_matrix(4))[0], proj))  # noqa: E731
    assert nd.gradcheck(fn, [x, *ws]) < 1e-4


def test_adam_single_step():
    p = nd.parameter(np.array([1.0, -1.0]))
    opt = nd.Adam({"p": p}, lr=0.01)
    p.grad = np.array([0.5, -2.0])
    opt.step()
    # first bias-corrected step moves each coordinate by ~lr against the gradient sign
    assert np.allclose(p.data, [1.0 - 0.01, -1.0 + 0.01], atol=1e-6)


def test_adam_zero_grad_leaves_param():
    p = nd.parameter(np.array([0.3]))
    opt = nd.Adam({"p": p}, lr=0.1)
    p.grad = np.zeros(1)
    opt.step()
    assert p.data[0] == 0.3


def test_adam_monotone_under_constant_grad():
    p = nd.parameter(np.array([0.0]))
    opt = nd.Adam({"p": p}, lr=0.1)
    seen = [0.0]
    for _ in range(2):
        p.grad = np.array([1.0])
        opt.step()
        seen.append(p.data[0])
    assert seen[0] > seen[1] > seen[2]


def test_checkpoint_roundtrip(tmp_path):
    rng = np.random.default_rng(6)
    params = {"a.w": rng.normal(size=(3, 2)), "b": rng.normal(size=4), "s": np.array(2.5)}
    nd.save_parameters(tmp_path / "m.arlk", params)
    back = nd.load_parameters(tmp_path / "m.arlk")
    assert list(back) == list(params)
    for k in params:
        assert np.array_equal(back[k], params[k])


def test_checkpoint_rejects_bad_magic(tmp_path):
    (tmp_path / "bad.arlk").write_bytes(b"NOPE\x01")
    with pytest.raises(ValueError):
        nd.load_parameters(tmp_path / "bad.arlk")
