"""Agent-temporal attention: observation embedding, causal temporal
attention, agent attention and the transformer wrapping around each.

Feature tensors are laid out batch-first as ``(B, T, N, D)``.  Temporal
attention runs along ``T`` separately for every agent; agent attention runs
along ``N`` separately for every time step.  Nothing in either module is
indexed by agent, which is what makes the stack agent-permutation
equivariant.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import ndtensor as nd
from .ndtensor import LARGE, ContractError, Tensor

COMPRESS_THRESHOLD = 100
COMPRESS_UNITS = 100


class ConfigError(ValueError):
    """Invalid model or run configuration."""


class Module:
    """Minimal parameter container with dotted, insertion-ordered names."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self._children: dict[str, Module] = {}

    def add_param(self, name: str, value: np.ndarray) -> Tensor:
        t = nd.parameter(value)
        self._params[name] = t
        setattr(self, name, t)
        return t

    def add_child(self, name: str, module: "Module") -> "Module":
        self._children[name] = module
        setattr(self, name, module)
        return module

    def parameters(self, prefix: str = "") -> dict[str, Tensor]:
        out = {prefix + k: v for k, v in self._params.items()}
        for name, child in self._children.items():
            out.update(child.parameters(f"{prefix}{name}."))
        return out

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        params = self.parameters()
        missing = set(params) - set(arrays)
        extra = set(arrays) - set(params)
        if missing or extra:
            raise ConfigError(f"checkpoint mismatch: missing={sorted(missing)} unexpected={sorted(extra)}")
        for name, p in params.items():
            arr = np.asarray(arrays[name], dtype=np.float64)
            if arr.shape != p.shape:
                raise ConfigError(f"checkpoint parameter '{name}' has shape {arr.shape}, model expects {p.shape}")
            p.data[...] = arr

    def zero_grad(self) -> None:
        for p in self.parameters().values():
            p.grad = None


def gaussian(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    return rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=shape)


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, bias: bool = True, std: float | None = None):
        super().__init__()
        scale = std if std is not None else 1.0 / np.sqrt(d_in)
        self.add_param("weight", rng.normal(0.0, scale, size=(d_in, d_out)))
        self.has_bias = bias
        if bias:
            self.add_param("bias", np.zeros(d_out))

    def __call__(self, x) -> Tensor:
        return nd.linear(x, self.weight, self.bias if self.has_bias else None)


class LayerNorm(Module):
    def __init__(self, d: int):
        super().__init__()
        self.add_param("gain", np.ones(d))
        self.add_param("bias", np.zeros(d))

    def __call__(self, x) -> Tensor:
        return nd.layer_norm(x, self.gain, self.bias)


def causal_mask(t: int, T: int) -> np.ndarray:
    """Additive mask row for query step ``t``: steps ``0..t`` open, the rest -LARGE."""
    if not 0 <= t < T:
        raise ContractError(f"causal_mask: t={t} outside [0, {T})")
    row = np.zeros(T)
    row[t + 1:] = -LARGE
    return row


def causal_mask_matrix(T: int) -> np.ndarray:
    return np.stack([causal_mask(t, T) for t in range(T)])


def _split_heads(x: Tensor, heads: int) -> Tensor:
    # (..., L, D) -> (..., H, L, D/H)
    *lead, L, D = x.shape
    x = nd.reshape(x, tuple(lead) + (L, heads, D // heads))
    k = len(lead)
    return nd.transpose(x, tuple(range(k)) + (k + 1, k, k + 2))


def _merge_heads(x: Tensor) -> Tensor:
    *lead, H, L, dh = x.shape
    k = len(lead)
    x = nd.transpose(x, tuple(range(k)) + (k + 1, k, k + 2))
    return nd.reshape(x, tuple(lead) + (L, H * dh))


def multihead_attention(x: Tensor, wq: Tensor, wk: Tensor, wv: Tensor, heads: int, mask=None):
    """Scaled dot-product self-attention over axis -2 of ``x``.

    Returns the attended values ``(..., L, D)`` and the weights
    ``(..., H, L, L)`` as a plain array.
    """
    D = x.shape[-1]
    if D % heads:
        raise ConfigError(f"head count {heads} does not divide D={D}")
    q = _split_heads(nd.linear(x, wq), heads)
    k = _split_heads(nd.linear(x, wk), heads)
    v = _split_heads(nd.linear(x, wv), heads)
    scores = nd.mul(nd.matmul(q, nd.transpose_last_two(k)), 1.0 / np.sqrt(D // heads))
    weights = nd.softmax_lastdim(scores, mask)
    return _merge_heads(nd.matmul(weights, v)), weights.data


class TransformerWrap(Module):
    """Post-norm wrapping: LN(x + attn), then LN(y + FF(y)) with a ReLU FF."""

    def __init__(self, d: int, ff_mult: int, rng: np.random.Generator):
        super().__init__()
        self.add_child("norm1", LayerNorm(d))
        self.add_child("ff1", Linear(d, ff_mult * d, rng))
        self.add_child("ff2", Linear(ff_mult * d, d, rng))
        self.add_child("norm2", LayerNorm(d))

    def __call__(self, x: Tensor, attended: Tensor) -> Tensor:
        y = self.norm1(nd.add(x, attended))
        return self.norm2(nd.add(y, self.ff2(nd.relu(self.ff1(y)))))


class _AttentionModule(Module):
    def __init__(self, d: int, heads: int, ff_mult: int, rng: np.random.Generator):
        super().__init__()
        if heads < 1 or d % heads:
            raise ConfigError(f"head count {heads} must divide D={d}")
        self.heads = heads
        for name in ("wq", "wk", "wv"):
            self.add_param(name, gaussian(rng, d, (d, d)))
        self.add_child("wrap", TransformerWrap(d, ff_mult, rng))


class TemporalAttention(_AttentionModule):
    """Causal attention along time, independently per agent."""

    def __call__(self, h: Tensor):
        B, T, N, D = h.shape
        per_agent = nd.transpose(h, (0, 2, 1, 3))  # (B, N, T, D)
        attended, alpha = multihead_attention(per_agent, self.wq, self.wk, self.wv, self.heads,
                                              causal_mask_matrix(T))
        attended = nd.transpose(attended, (0, 2, 1, 3))
        return self.wrap(h, attended), alpha  # alpha: (B, N, H, T, T)


class AgentAttention(_AttentionModule):
    """Unmasked attention across agents, independently per time step.

    ``uniform=True`` replaces the learned weights by 1/N (the ablation in
    which every agent attends equally to every other agent).
    """

    def __init__(self, d: int, heads: int, ff_mult: int, rng: np.random.Generator, uniform: bool = False):
        super().__init__(d, heads, ff_mult, rng)
        self.uniform = uniform

    def __call__(self, h: Tensor):
        B, T, N, D = h.shape
        if self.uniform:
            v = nd.linear(h, self.wv)
            attended = nd.broadcast_to(nd.mean(v, axis=2, keepdims=True), v.shape)
            beta = np.full((B, T, self.heads, N, N), 1.0 / N)
        else:
            attended, beta = multihead_attention(h, self.wq, self.wk, self.wv, self.heads)
        return self.wrap(h, attended), beta  # beta: (B, T, H, N, N)


class AgentTemporalBlock(Module):
    """One temporal module followed by one agent module."""

    def __init__(self, d: int, heads: int, ff_mult: int, rng: np.random.Generator, uniform_agents: bool = False):
        super().__init__()
        self.add_child("tem", TemporalAttention(d, heads, ff_mult, rng))
        self.add_child("agt", AgentAttention(d, heads, ff_mult, rng, uniform=uniform_agents))

    def __call__(self, h: Tensor):
        x, alpha = self.tem(h)
        z, beta = self.agt(x)
        return z, alpha, beta


class Embedding(Module):
    """Per-agent observation embedding plus position and agent-group tables.

    Observations wider than 100 go through a 100-unit fully connected
    compression layer first.
    """

    def __init__(self, obs_dim: int, d: int, t_max: int, n_groups: int, rng: np.random.Generator):
        super().__init__()
        if obs_dim < 1 or t_max < 1:
            raise ConfigError(f"obs_dim and t_max must be >= 1 (got {obs_dim}, {t_max})")
        self.obs_dim = obs_dim
        self.t_max = t_max
        self.n_groups = n_groups
        self.compressed = obs_dim > COMPRESS_THRESHOLD
        width = obs_dim
        if self.compressed:
            self.add_child("compress", Linear(obs_dim, COMPRESS_UNITS, rng))
            width = COMPRESS_UNITS
        self.add_child("proj", Linear(width, d, rng))
        self.add_param("position", rng.normal(0.0, 1.0 / np.sqrt(d), size=(t_max, d)))
        if n_groups > 0:
            self.add_param("group", rng.normal(0.0, 1.0 / np.sqrt(d), size=(n_groups, d)))

    def __call__(self, obs, group_ids=None) -> Tensor:
        obs = nd.as_tensor(obs)
        B, T, N, F = obs.shape
        if F != self.obs_dim:
            raise nd.DimensionError(f"embed: observation width {F} != configured obs_dim {self.obs_dim}")
        if T > self.t_max:
            raise ConfigError(f"episode length {T} exceeds position table T_max={self.t_max}")
        x = self.compress(obs) if self.compressed else obs
        e = self.proj(x)
        e = nd.add(e, nd.reshape(nd.getitem(self.position, slice(0, T)), (1, T, 1, -1)))
        if group_ids is not None:
            if self.n_groups == 0:
                raise ConfigError("group ids given but the model has no agent-group embedding")
            ids = np.asarray(group_ids, dtype=int)
            if ids.shape != (N,) or ids.min() < 0 or ids.max() >= self.n_groups:
                raise ConfigError(f"group ids {ids.tolist()} invalid for N={N}, G={self.n_groups}")
            e = nd.add(e, nd.reshape(nd.getitem(self.group, ids), (1, 1, N, -1)))
        return e


@dataclass
class AttentionTrace:
    """Attention weights captured during one forward pass, one entry per block.

    ``temporal[k]`` has shape (B, N, H, T, T); ``agent[k]`` (B, T, H, N, N).
    """

    temporal: list[np.ndarray] = field(default_factory=list)
    agent: list[np.ndarray] = field(default_factory=list)

    def alpha(self, block: int = -1, episode: int = 0) -> np.ndarray:
        """Head-averaged temporal weights, shape (N, T, T)."""
        return self.temporal[block][episode].mean(axis=1)

    def beta(self, block: int = -1, episode: int = 0) -> np.ndarray:
        """Head-averaged agent weights, shape (T, N, N)."""
        return self.agent[block][episode].mean(axis=1)

    def to_json(self, episode: int = 0) -> str:
        blocks = []
        for k in range(len(self.temporal)):
            blocks.append({
                "block": k,
                "temporal": {"axes": ["agent", "query_t", "key_t"], "values": self.alpha(k, episode).tolist()},
                "agent": {"axes": ["t", "query_agent", "key_agent"], "values": self.beta(k, episode).tolist()},
            })
        return json.dumps({"episode": episode, "blocks": blocks})


class AttentionStack(Module):
    """``depth`` agent-temporal blocks composed, each with its own weights."""

    def __init__(self, depth: int, d: int, heads: int, ff_mult: int, rng: np.random.Generator,
                 uniform_agents: bool = False):
        super().__init__()
        if depth < 1:
            raise ConfigError(f"depth must be >= 1, got {depth}")
        self.depth = depth
        for k in range(depth):
            self.add_child(f"block{k}", AgentTemporalBlock(d, heads, ff_mult, rng, uniform_agents))

    def __call__(self, e: Tensor, trace: AttentionTrace | None = None) -> Tensor:
        z = e
        for k in range(self.depth):
            z, alpha, beta = self._children[f"block{k}"](z)
            if trace is not None:
                trace.temporal.append(alpha)
                trace.agent.append(beta)
        return z
