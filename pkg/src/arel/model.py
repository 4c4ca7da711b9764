"""The full credit-assignment network: embed, attention stack, reward head."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import ndtensor as nd
from .attention import AttentionStack, AttentionTrace, ConfigError, Embedding, Module
from .credit_head import CreditHead, RedistributedReward


@dataclass
class ArelConfig:
    obs_dim: int
    d_model: int = 64
    heads: int = 4
    depth: int = 1
    t_max: int = 25
    n_groups: int = 0
    ff_mult: int = 4
    head_hidden: int = 50
    agent_attention: str = "full"  # "full" | "uniform"
    zero_init_output: bool = False  # start with r_hat == 0 everywhere

    def validate(self) -> None:
        if self.depth < 1:
            raise ConfigError(f"depth must be >= 1, got {self.depth}")
        if self.heads < 1 or self.d_model % self.heads:
            raise ConfigError(f"heads={self.heads} must divide d_model={self.d_model}")
        if self.agent_attention not in ("full", "uniform"):
            raise ConfigError(f"agent_attention must be 'full' or 'uniform', got '{self.agent_attention}'")
        if self.obs_dim < 1 or self.t_max < 1 or self.head_hidden < 1:
            raise ConfigError("obs_dim, t_max and head_hidden must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


class ArelModel(Module):
    """Maps observations ``(B, T, N, obs_dim)`` to predicted rewards ``(B, T)``."""

    def __init__(self, config: ArelConfig, seed: int = 0):
        super().__init__()
        config.validate()
        self.config = config
        rng = np.random.default_rng(seed)
        c = config
        self.add_child("embed", Embedding(c.obs_dim, c.d_model, c.t_max, c.n_groups, rng))
        self.add_child("stack", AttentionStack(c.depth, c.d_model, c.heads, c.ff_mult, rng,
                                               uniform_agents=c.agent_attention == "uniform"))
        self.add_child("head", CreditHead(c.d_model, rng, hidden=c.head_hidden))
        if c.zero_init_output:
            self.head.g2_out.weight.data[...] = 0.0

    def features(self, obs, group_ids=None, trace: AttentionTrace | None = None):
        obs = nd.as_tensor(obs)
        if obs.ndim == 3:
            obs = nd.reshape(obs, (1,) + obs.shape)
        return self.stack(self.embed(obs, group_ids), trace)

    def __call__(self, obs, group_ids=None, trace: AttentionTrace | None = None) -> nd.Tensor:
        return self.head(self.features(obs, group_ids, trace))

    def predict(self, obs, group_ids=None) -> np.ndarray:
        """Redistributed rewards as a plain array (no graph kept)."""
        obs = np.asarray(obs, dtype=np.float64)
        single = obs.ndim == 3
        with nd.no_grad():
            out = self(obs, group_ids).data
        return out[0] if single else out

    def redistribute(self, obs, episode_id=None, group_ids=None) -> RedistributedReward:
        return RedistributedReward(self.predict(obs, group_ids), episode_id)
