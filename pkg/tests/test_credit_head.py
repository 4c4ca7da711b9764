import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from arel import ndtensor as nd
from arel.attention import ConfigError
from arel.credit_head import (CreditHead, l1_loss, l2_loss, predict_rewards, regression_loss, total_loss,
                              variance_loss)

finite = st.floats(-100, 100, allow_nan=False)


def test_head_permutation_invariant():
    rng = np.random.default_rng(0)
    head = CreditHead(6, rng, hidden=10)
    z = rng.normal(size=(4, 5, 6))
    for _ in range(10):
        perm = rng.permutation(5)
        assert np.abs(head(z).data - head(z[:, perm]).data).max() <= 1e-9


def test_head_zero_input_constant_output():
    head = CreditHead(4, np.random.default_rng(1), hidden=8)
    out = head(np.zeros((6, 3, 4))).data
    assert np.allclose(out, out[0])


def test_duplicated_agents_double_pooled_input():
    rng = np.random.default_rng(2)
    head = CreditHead(4, rng, hidden=8)
    z = rng.normal(size=(3, 2, 4))
    pooled = lambda x: nd.tsum(head.g1_out(nd.relu(head.g1_in(x))), axis=-2).data  # noqa: E731
    assert np.allclose(pooled(np.concatenate([z, z], axis=1)), 2 * pooled(z), atol=1e-12)


def test_head_rejects_no_agents():
    head = CreditHead(4, np.random.default_rng(3))
    with pytest.raises(nd.ContractError):
        head(np.zeros((3, 0, 4)))


def test_predict_rewards_checks_finite():
    head = CreditHead(4, np.random.default_rng(3))
    assert len(predict_rewards(head, np.ones((5, 2, 4)), episode_id=7)) == 5
    with pytest.raises(nd.ContractError):
        predict_rewards(head, np.full((5, 2, 4), np.nan))


def test_regression_loss_examples():
    assert regression_loss(np.array([1.0, 2.0, 3.0]), [6.0]).item() == 0.0
    assert regression_loss(np.array([0.0, 0.0]), [2.0]).item() == pytest.approx(2.0)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, 5, elements=finite), finite, st.floats(0.1, 10))
def test_regression_loss_homogeneous(r, R, c):
    base = regression_loss(r, [R]).item()
    assert regression_loss(c * r, [c * R]).item() == pytest.approx(c * c * base, rel=1e-9, abs=1e-9)


def test_variance_loss_examples():
    assert variance_loss(np.array([4.0, 4.0, 4.0])).item() == 0.0
    assert variance_loss(np.array([1.0, 2.0, 3.0])).item() == pytest.approx(2.0 / 3.0)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, 6, elements=finite), st.randoms())
def test_variance_loss_time_permutation(r, rnd):
    perm = list(range(6))
    rnd.shuffle(perm)
    assert variance_loss(r[perm]).item() == pytest.approx(variance_loss(r).item(), rel=1e-9, abs=1e-9)


def test_l1_l2_examples():
    r = np.array([1.0, -1.0])
    assert l1_loss(r).item() == 1.0 and l2_loss(r).item() == 1.0
    assert l1_loss(np.zeros(3)).item() == 0.0 and l2_loss(np.zeros(3)).item() == 0.0


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, 4, elements=finite.filter(lambda v: v == 0 or abs(v) > 1e-100)))
def test_l2_nonnegative_zero_iff_zero(r):
    v = l2_loss(r).item()
    assert v >= 0 and (v == 0) == bool(np.all(r == 0))


def test_total_loss_omega_zero_is_regression():
    r, R = np.array([[0.3, -1.0, 2.0]]), [4.0]
    assert total_loss(r, R, "variance", 0.0).item() == regression_loss(r, R).item()
    expect = regression_loss(r, R).item() + 20 * variance_loss(r).item()
    assert total_loss(r, R).item() == pytest.approx(expect)


def test_total_loss_validation():
    with pytest.raises(ConfigError):
        total_loss(np.ones(3), [1.0], "variance", -1.0)
    with pytest.raises(ConfigError):
        total_loss(np.ones(3), [1.0], "entropy")


def test_masked_loss_matches_unpadded():
    r = np.array([[1.0, 2.0, 0.0], [0.5, -0.5, 3.0]])
    mask = np.array([[1, 1, 0], [1, 1, 1]])
    R = np.array([2.0, 1.0])
    expect = (total_loss(r[:1, :2], R[:1]).item() + total_loss(r[1:], R[1:]).item()) / 2
    assert total_loss(r, R, mask=mask).item() == pytest.approx(expect)


@pytest.mark.parametrize("reg", ["variance", "l1", "l2"])
def test_loss_grads(reg):
    rng = np.random.default_rng(4)
    r = nd.parameter(rng.normal(size=(3, 5)) + 0.2)
    R = rng.normal(size=3)
    assert nd.gradcheck(lambda: total_loss(r, R, reg, 2.0), [r]) < 1e-6
