"""Trajectory storage, batch sampling, credit-network updates and reward mixing."""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import ndtensor as nd
from .attention import ConfigError
from .credit_head import total_loss
from .io import atomic_write_text
from .ndtensor import ContractError

SCHEMA_VERSION = 1


class TrajectoryError(ValueError):
    """Trajectory fails its structural invariants."""


class NumericalDivergence(RuntimeError):
    """A training loss became non-finite."""


@dataclass
class Trajectory:
    observations: np.ndarray            # (T, N, obs_dim)
    actions: np.ndarray                 # (T, N)
    episodic_reward: float
    hidden_rewards: np.ndarray | None = None
    seed: int | None = None
    episode_id: int | None = None
    success: bool | None = None

    def __post_init__(self):
        self.observations = np.asarray(self.observations, dtype=np.float64)
        self.actions = np.asarray(self.actions)
        self.episodic_reward = float(self.episodic_reward)
        if self.hidden_rewards is not None:
            self.hidden_rewards = np.asarray(self.hidden_rewards, dtype=np.float64)

    @property
    def length(self) -> int:
        return self.observations.shape[0]

    @property
    def n_agents(self) -> int:
        return self.observations.shape[1]

    def validate(self) -> None:
        obs = self.observations
        if obs.ndim != 3 or obs.shape[0] < 1 or obs.shape[1] < 1:
            raise TrajectoryError(f"observations must be (T, N, obs_dim) with T, N >= 1, got {obs.shape}")
        if self.actions.shape[:2] != obs.shape[:2]:
            raise TrajectoryError(f"actions shape {self.actions.shape} does not match observations {obs.shape[:2]}")
        if not np.all(np.isfinite(obs)) or not np.isfinite(self.episodic_reward):
            raise TrajectoryError("non-finite observations or episodic reward")
        if self.hidden_rewards is not None:
            if self.hidden_rewards.shape != (obs.shape[0],):
                raise TrajectoryError(f"hidden rewards shape {self.hidden_rewards.shape} != ({obs.shape[0]},)")
            total = float(self.hidden_rewards.sum())
            if abs(total - self.episodic_reward) > 1e-9 * max(1.0, abs(total)):
                raise TrajectoryError(f"episodic reward {self.episodic_reward} != sum of hidden rewards {total}")

    def inputs(self, n_actions: int = 0) -> np.ndarray:
        """Credit-model input per step and agent: observation, plus one-hot action if ``n_actions``."""
        if not n_actions:
            return self.observations
        onehot = np.eye(n_actions)[self.actions.astype(int)]
        return np.concatenate([self.observations, onehot], axis=-1)

    def to_dict(self) -> dict:
        return {
            "schema": SCHEMA_VERSION,
            "episode_id": self.episode_id,
            "seed": self.seed,
            "observations": self.observations.tolist(),
            "actions": self.actions.tolist(),
            "episodic_reward": self.episodic_reward,
            "hidden_rewards": None if self.hidden_rewards is None else self.hidden_rewards.tolist(),
            "success": self.success,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Trajectory":
        if d.get("schema") != SCHEMA_VERSION:
            raise TrajectoryError(f"unsupported trajectory schema {d.get('schema')!r}")
        traj = cls(np.array(d["observations"], dtype=np.float64), np.array(d["actions"]), d["episodic_reward"],
                   d.get("hidden_rewards"), d.get("seed"), d.get("episode_id"), d.get("success"))
        traj.validate()
        return traj


class ExperienceBuffer:
    """Bounded FIFO of trajectories; the oldest is evicted at capacity."""

    def __init__(self, capacity: int = 5000):
        if capacity < 1:
            raise ConfigError(f"buffer capacity must be >= 1, got {capacity}")
        self.capacity = capacity
        self._items: deque[Trajectory] = deque(maxlen=capacity)

    def __len__(self) -> int:
        return len(self._items)

    def __iter__(self):
        return iter(self._items)

    def __getitem__(self, i: int) -> Trajectory:
        return self._items[i]

    def store(self, trajectory: Trajectory) -> None:
        trajectory.validate()
        self._items.append(trajectory)

    def sample_batch(self, batch_size: int, rng: np.random.Generator) -> list[Trajectory]:
        """``batch_size`` uniform draws with replacement."""
        if not self._items:
            raise ContractError("sample_batch: buffer is empty")
        idx = rng.integers(0, len(self._items), size=batch_size)
        return [self._items[i] for i in idx]

    def save(self, path) -> None:
        atomic_write_text(path, "".join(json.dumps(t.to_dict()) + "\n" for t in self._items))

    @classmethod
    def load(cls, path, capacity: int | None = None) -> "ExperienceBuffer":
        trajs = load_trajectories(path)
        buf = cls(capacity or max(1, len(trajs)))
        for t in trajs:
            buf.store(t)
        return buf


def load_trajectories(path) -> list[Trajectory]:
    out = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            out.append(Trajectory.from_dict(json.loads(line)))
        except (KeyError, json.JSONDecodeError) as exc:
            raise TrajectoryError(f"{path}:{lineno}: {exc}") from None
    return out


def collate(trajectories: Sequence[Trajectory], n_actions: int = 0):
    """Stack episodes into ``(B, T_max, N, F)`` inputs, a ``(B, T_max)`` step mask and returns.

    Shorter episodes are right-padded with zeros; the mask marks real steps.
    """
    lengths = [t.length for t in trajectories]
    T = max(lengths)
    first = trajectories[0].inputs(n_actions)
    x = np.zeros((len(trajectories), T) + first.shape[1:])
    mask = np.zeros((len(trajectories), T))
    for b, traj in enumerate(trajectories):
        inp = traj.inputs(n_actions)
        if inp.shape[1:] != first.shape[1:]:
            raise TrajectoryError(f"episode {traj.episode_id}: input shape {inp.shape[1:]} != {first.shape[1:]}")
        x[b, :traj.length] = inp
        mask[b, :traj.length] = 1.0
    returns = np.array([t.episodic_reward for t in trajectories])
    ragged = min(lengths) != T
    return x, (mask if ragged else None), returns


def credit_step(model, optimizer: nd.Adam, batch: Sequence[Trajectory], regularizer: str = "variance",
                omega: float = 20.0, n_actions: int = 0) -> float:
    x, mask, R = collate(batch, n_actions)
    loss = total_loss(model(x), R, regularizer, omega, mask)
    value = loss.item()
    if not np.isfinite(value):
        raise NumericalDivergence(
            f"non-finite credit loss {value} at optimizer step {optimizer.state.step + 1}; "
            f"batch returns range [{R.min():.4g}, {R.max():.4g}], "
            f"max |param| {max(np.abs(p.data).max() for p in optimizer.params.values()):.4g}")
    nd.backward(loss)
    optimizer.step()
    return value


def update_credit_network(model, optimizer: nd.Adam, buffer: ExperienceBuffer, batches: int, batch_size: int,
                          rng: np.random.Generator, regularizer: str = "variance", omega: float = 20.0,
                          n_actions: int = 0) -> list[float]:
    """Run ``batches`` Adam steps on freshly sampled batches; returns the loss trace."""
    if len(buffer) == 0:
        raise ContractError("update_credit_network: buffer is empty")
    return [credit_step(model, optimizer, buffer.sample_batch(batch_size, rng), regularizer, omega, n_actions)
            for _ in range(batches)]


def should_update(episode: int, every: int) -> bool:
    return episode % every == 0


def mix_rewards(r_hat, episodic_reward: float, alpha: float) -> np.ndarray:
    """``alpha * r_hat + (1 - alpha) * R`` with the raw reward placed on the final step."""
    if not 0.0 <= alpha <= 1.0:
        raise ConfigError(f"alpha must lie in [0, 1], got {alpha}")
    r_hat = np.asarray(r_hat, dtype=np.float64).reshape(-1)
    out = alpha * r_hat
    out[-1] += (1.0 - alpha) * episodic_reward
    return out


@dataclass
class CreditTrainer:
    """Owns the credit model, its optimizer and the update cadence."""

    model: object
    lr: float = 1e-4
    every: int = 50
    batches: int = 100
    batch_size: int = 32
    regularizer: str = "variance"
    omega: float = 20.0
    n_actions: int = 0
    seed: int = 0
    loss_trace: list = field(default_factory=list)

    def __post_init__(self):
        if self.every < 1 or self.batches < 0 or self.batch_size < 1:
            raise ConfigError("every, batch_size must be >= 1 and batches >= 0")
        self.optimizer = nd.Adam(self.model.parameters(), lr=self.lr)
        self.rng = np.random.default_rng(self.seed)

    def maybe_update(self, episode: int, buffer: ExperienceBuffer) -> list[float]:
        if not should_update(episode, self.every):
            return []
        trace = update_credit_network(self.model, self.optimizer, buffer, self.batches, self.batch_size,
                                      self.rng, self.regularizer, self.omega, self.n_actions)
        self.loss_trace.extend(trace)
        return trace

    def predict(self, trajectories: Iterable[Trajectory]) -> list[np.ndarray]:
        """Rewards from the current parameters, one array per trajectory."""
        trajectories = list(trajectories)
        x, _, _ = collate(trajectories, self.n_actions)
        out = self.model.predict(x)
        return [out[b, :t.length] for b, t in enumerate(trajectories)]
