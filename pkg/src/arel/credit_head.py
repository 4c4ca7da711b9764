"""Permutation-invariant reward readout and the credit-assignment losses.

All losses take predictions shaped ``(B, T)`` (a single length-T vector is
treated as a batch of one), compute a per-episode value, and average over
the batch.  An optional ``(B, T)`` 0/1 mask marks the valid steps of
right-padded ragged batches; per-episode normalizers then use each
episode's own length.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ndtensor as nd
from .attention import ConfigError, Linear, Module
from .ndtensor import ContractError, Tensor

REGULARIZERS = ("variance", "l1", "l2")


class CreditHead(Module):
    """``r_t = g2(sum_i g1(z_{t,i}))`` with two one-hidden-layer MLPs.

    ``init_std`` overrides the default N(0, 1/fan_in) weight scale; the
    width-variance check uses ``1/sqrt(hidden)``.
    """

    def __init__(self, d_in: int, rng: np.random.Generator, hidden: int = 50, init_std: float | None = None):
        super().__init__()
        self.add_child("g1_in", Linear(d_in, hidden, rng, std=init_std))
        self.add_child("g1_out", Linear(hidden, hidden, rng, std=init_std))
        self.add_child("g2_in", Linear(hidden, hidden, rng, std=init_std))
        self.add_child("g2_out", Linear(hidden, 1, rng, std=init_std))

    def __call__(self, z) -> Tensor:
        z = nd.as_tensor(z)
        if z.shape[-2] == 0:
            raise ContractError("predict_rewards: no agents (N = 0)")
        per_agent = self.g1_out(nd.relu(self.g1_in(z)))        # (..., N, H)
        pooled = nd.tsum(per_agent, axis=-2)                    # (..., H)
        out = self.g2_out(nd.relu(self.g2_in(pooled)))          # (..., 1)
        return nd.reshape(out, out.shape[:-1])


@dataclass
class RedistributedReward:
    values: np.ndarray
    episode_id: int | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(self.values)):
            raise ValueError(f"episode {self.episode_id}: non-finite redistributed reward")

    def __len__(self) -> int:
        return self.values.size


def predict_rewards(head: CreditHead, z, episode_id: int | None = None) -> RedistributedReward:
    """Per-step rewards for one episode's ``(T, N, D)`` features."""
    z = np.asarray(z.data if isinstance(z, Tensor) else z, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise ContractError("predict_rewards: non-finite features")
    return RedistributedReward(head(z).data, episode_id)


def _prep(r_hat, mask):
    r_hat = nd.as_tensor(r_hat)
    if r_hat.ndim == 1:
        r_hat = nd.reshape(r_hat, (1, -1))
    if r_hat.ndim != 2 or r_hat.shape[1] < 1:
        raise nd.DimensionError(f"expected predictions shaped (B, T) with T >= 1, got {r_hat.shape}")
    if mask is None:
        m = np.ones(r_hat.shape)
    else:
        m = np.asarray(mask, dtype=np.float64).reshape(r_hat.shape)
    lengths = m.sum(axis=1)
    if np.any(lengths < 1):
        raise ContractError("every episode needs at least one valid step")
    if mask is not None:
        r_hat = nd.mul(r_hat, m)
    return r_hat, m, lengths


def regression_loss(r_hat, returns, mask=None) -> Tensor:
    """Mean over episodes of ``(1/T) (sum_t r_t - R)^2``."""
    r_hat, _, lengths = _prep(r_hat, mask)
    R = np.asarray(returns, dtype=np.float64).reshape(-1)
    if R.shape[0] != r_hat.shape[0]:
        raise nd.DimensionError(f"{r_hat.shape[0]} episodes but {R.shape[0]} returns")
    gap = nd.sub(nd.tsum(r_hat, axis=1), R)
    return nd.mean(nd.div(nd.square(gap), lengths))


def variance_loss(r_hat, mask=None) -> Tensor:
    """Mean over episodes of the population variance of r_t over time."""
    r_hat, m, lengths = _prep(r_hat, mask)
    mu = nd.div(nd.tsum(r_hat, axis=1, keepdims=True), lengths[:, None])
    dev = nd.mul(nd.sub(r_hat, mu), m)
    return nd.mean(nd.div(nd.tsum(nd.square(dev), axis=1), lengths))


def l1_loss(r_hat, mask=None) -> Tensor:
    r_hat, _, lengths = _prep(r_hat, mask)
    return nd.mean(nd.div(nd.tsum(nd.tabs(r_hat), axis=1), lengths))


def l2_loss(r_hat, mask=None) -> Tensor:
    r_hat, _, lengths = _prep(r_hat, mask)
    return nd.mean(nd.div(nd.tsum(nd.square(r_hat), axis=1), lengths))


_REG_FNS = {"variance": variance_loss, "l1": l1_loss, "l2": l2_loss}


def total_loss(r_hat, returns, regularizer: str = "variance", omega: float = 20.0, mask=None) -> Tensor:
    """Regression loss plus ``omega`` times the chosen regularizer."""
    if omega < 0:
        raise ConfigError(f"omega must be >= 0, got {omega}")
    if regularizer not in _REG_FNS:
        raise ConfigError(f"unknown regularizer '{regularizer}', expected one of {REGULARIZERS}")
    loss = regression_loss(r_hat, returns, mask)
    if omega == 0:
        return loss
    return nd.add(loss, nd.mul(_REG_FNS[regularizer](r_hat, mask), float(omega)))
