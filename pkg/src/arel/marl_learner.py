"""Independent REINFORCE learner with a shared tabular softmax policy, and the
experiment loop that feeds it AREL, uniform or final-step-only rewards."""

from __future__ import annotations

import csv
import io as _io
import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable

import numpy as np

from . import envs
from .config import RunConfig
from .io import atomic_write_text
from .model import ArelConfig, ArelModel
from .redistribution import (CreditTrainer, ExperienceBuffer, NumericalDivergence, Trajectory,
                             mix_rewards)


class Strategy(str, Enum):
    AREL = "arel"
    UNIFORM = "uniform"
    FINAL = "final"


def _softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


class TabularSoftmaxPolicy:
    """Softmax over per-key action logits; one table shared by all agents.

    ``key_fn`` maps an agent's observation to a hashable table key; unseen
    keys start at zero logits (uniform).
    """

    def __init__(self, key_fn: Callable[[np.ndarray], tuple], n_actions: int, lr: float = 0.1):
        self.key_fn = key_fn
        self.n_actions = n_actions
        self.lr = lr
        self.table: dict = {}

    def logits(self, key) -> np.ndarray:
        row = self.table.get(key)
        return np.zeros(self.n_actions) if row is None else row

    def probs(self, key) -> np.ndarray:
        return _softmax(self.logits(key))

    def act(self, obs: np.ndarray, rng: np.random.Generator, epsilon: float = 0.0, greedy: bool = False) -> int:
        if epsilon > 0 and rng.random() < epsilon:
            return int(rng.integers(self.n_actions))
        p = self.probs(self.key_fn(obs))
        if greedy:
            return int(np.argmax(p))
        return int(rng.choice(self.n_actions, p=p))

    def surrogate(self, keys, actions, weights) -> float:
        """``sum_j w_j log pi(a_j | k_j)``; its gradient is the REINFORCE estimate."""
        return float(sum(w * np.log(self.probs(k)[a]) for k, a, w in zip(keys, actions, weights)))

    def surrogate_grad(self, keys, actions, weights) -> dict:
        grads: dict = {}
        for k, a, w in zip(keys, actions, weights):
            g = -self.probs(k) * w
            g[a] += w
            grads[k] = grads.get(k, 0.0) + g
        return grads

    def apply(self, grads: dict) -> None:
        for k, g in grads.items():
            self.table[k] = self.logits(k) + self.lr * g

    def to_dict(self) -> dict:
        return {"n_actions": self.n_actions, "lr": self.lr,
                "table": [[list(_jsonable(k)), v.tolist()] for k, v in self.table.items()]}

    def load_dict(self, d: dict) -> None:
        self.table = {_hashable(k): np.asarray(v, dtype=np.float64) for k, v in d["table"]}


def _jsonable(key):
    return [list(p) if isinstance(p, tuple) else p for p in key]


def _hashable(key):
    return tuple(tuple(p) if isinstance(p, list) else p for p in key)


class RunningBaseline:
    """Per-time-step exponential moving average of returns."""

    def __init__(self, horizon: int, decay: float = 0.99):
        self.decay = decay
        self.value = np.zeros(horizon)
        self.initialized = False

    def __call__(self) -> np.ndarray:
        return self.value

    def update(self, returns: np.ndarray) -> None:
        if not self.initialized:
            self.value = np.array(returns, dtype=np.float64)
            self.initialized = True
        else:
            self.value = self.decay * self.value + (1 - self.decay) * returns


def discounted_tail(rewards: np.ndarray, gamma: float) -> np.ndarray:
    """``G_t = sum_{s >= t} gamma^(s-t) r_s``."""
    out = np.empty(len(rewards))
    acc = 0.0
    for t in range(len(rewards) - 1, -1, -1):
        acc = rewards[t] + gamma * acc
        out[t] = acc
    return out


def rollout(policy: TabularSoftmaxPolicy, spec: envs.EnvSpec, seed: int, rng: np.random.Generator,
            epsilon: float = 0.0, greedy: bool = False, episode_id: int | None = None) -> Trajectory:
    """One full episode; every agent acts from its own observation with the shared policy."""
    state, obs = envs.reset(spec, seed)
    observations, actions = [], []
    done = False
    revealed = 0.0
    while not done:
        joint = [policy.act(obs[i], rng, epsilon, greedy) for i in range(spec.n_agents)]
        observations.append(obs)
        actions.append(joint)
        obs, done, revealed = envs.step(state, joint)
    return Trajectory(np.array(observations), np.array(actions), revealed,
                      np.array(state.hidden_rewards), seed, episode_id, envs.success(state))


def policy_update(policy: TabularSoftmaxPolicy, trajectory: Trajectory, dense_rewards, gamma: float = 1.0,
                  baseline: RunningBaseline | None = None) -> dict:
    """One REINFORCE step from a single episode; all agents share the team return."""
    dense_rewards = np.asarray(dense_rewards, dtype=np.float64)
    if dense_rewards.shape != (trajectory.length,):
        raise ValueError(f"dense rewards shape {dense_rewards.shape} != ({trajectory.length},)")
    returns = discounted_tail(dense_rewards, gamma)
    if not np.all(np.isfinite(returns)):
        raise NumericalDivergence(f"episode {trajectory.episode_id}: non-finite returns {returns}")
    adv = returns - (baseline() if baseline is not None else 0.0)
    if baseline is not None:
        baseline.update(returns)
    keys, acts, weights = [], [], []
    for t in range(trajectory.length):
        for i in range(trajectory.n_agents):
            keys.append(policy.key_fn(trajectory.observations[t, i]))
            acts.append(int(trajectory.actions[t, i]))
            weights.append(adv[t])
    grads = policy.surrogate_grad(keys, acts, weights)
    policy.apply(grads)
    return grads


def dense_rewards(strategy: Strategy, trajectory: Trajectory, alpha: float = 1.0, r_hat=None) -> np.ndarray:
    T, R = trajectory.length, trajectory.episodic_reward
    if strategy is Strategy.FINAL:
        return mix_rewards(np.zeros(T), R, 0.0)
    if strategy is Strategy.UNIFORM:
        return np.full(T, R / T)
    return mix_rewards(r_hat, R, alpha)


def evaluate(policy: TabularSoftmaxPolicy, spec: envs.EnvSpec, seeds, greedy: bool = True) -> dict:
    """Mean true (hidden-reward) return and success rate on fixed seeds."""
    rets, wins = [], []
    for s in seeds:
        traj = rollout(policy, spec, int(s), np.random.default_rng(int(s)), 0.0, greedy)
        rets.append(float(traj.hidden_rewards.sum()))
        wins.append(bool(traj.success))
    return {"eval_return": float(np.mean(rets)), "success_rate": float(np.mean(wins))}


@dataclass
class SeedResult:
    seed: int
    strategy: str
    curve: list = field(default_factory=list)       # dicts: episode, eval_return, success_rate
    credit_losses: list = field(default_factory=list)
    policy: TabularSoftmaxPolicy | None = None
    credit_model: ArelModel | None = None

    @property
    def final_success(self) -> float:
        return self.curve[-1]["success_rate"]

    def auc(self) -> float:
        """Mean success rate over evaluation checkpoints."""
        return float(np.mean([r["success_rate"] for r in self.curve]))


EVAL_SEED_OFFSET = 1_000_000


def credit_model_for(cfg: RunConfig, spec: envs.EnvSpec, seed: int) -> ArelModel:
    mc = ArelConfig(obs_dim=spec.obs_dim + spec.n_actions, d_model=cfg.d_model, heads=cfg.heads, depth=cfg.depth,
                    t_max=spec.horizon, agent_attention=cfg.agent_attention,
                    zero_init_output=cfg.credit_zero_init)
    return ArelModel(mc, seed=seed)


def run_seed(cfg: RunConfig, seed: int, strategy: Strategy | str | None = None, log=None) -> SeedResult:
    """Algorithm-1 loop for one seed: roll out, store, redistribute, update policy, periodically train credit."""
    strategy = Strategy(strategy or cfg.strategy)
    spec = cfg.env_spec()
    rng = np.random.default_rng(seed)
    policy = TabularSoftmaxPolicy(envs.policy_key(spec, cfg.policy_features), spec.n_actions, cfg.policy_lr)
    baseline = RunningBaseline(spec.horizon, cfg.baseline_decay)
    buffer = ExperienceBuffer(cfg.buffer_capacity)
    trainer = None
    if strategy is Strategy.AREL:
        trainer = CreditTrainer(credit_model_for(cfg, spec, seed), lr=cfg.credit_lr, every=cfg.update_every,
                                batches=cfg.credit_batches, batch_size=cfg.batch_size, regularizer=cfg.regularizer,
                                omega=cfg.omega, n_actions=spec.n_actions, seed=seed + 1)
    eval_seeds = EVAL_SEED_OFFSET + seed * 10_000 + np.arange(cfg.eval_episodes)
    episode_seeds = rng.integers(0, 2**31 - 1, size=cfg.episodes)
    result = SeedResult(seed, strategy.value, policy=policy, credit_model=trainer.model if trainer else None)

    for k in range(cfg.episodes):
        traj = rollout(policy, spec, int(episode_seeds[k]), rng, cfg.epsilon, episode_id=k)
        buffer.store(traj)
        r_hat = trainer.predict([traj])[0] if trainer else None
        policy_update(policy, traj, dense_rewards(strategy, traj, cfg.alpha, r_hat), cfg.gamma, baseline)
        if trainer:
            result.credit_losses.extend(trainer.maybe_update(k, buffer))
        if (k + 1) % cfg.eval_every == 0 or k + 1 == cfg.episodes:
            rec = {"episode": k + 1, **evaluate(policy, spec, eval_seeds)}
            result.curve.append(rec)
            if log:
                log(f"[{strategy.value} seed={seed}] episode {k + 1}: success {rec['success_rate']:.2f} "
                    f"return {rec['eval_return']:.3f}")
    return result


def curve_csv(results: list[SeedResult]) -> str:
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["seed", "episode", "eval_return", "success_rate"])
    for res in results:
        for r in res.curve:
            w.writerow([res.seed, r["episode"], repr(r["eval_return"]), repr(r["success_rate"])])
    return buf.getvalue()


def aggregate_csv(results: list[SeedResult]) -> str:
    """Median and mean over seeds at each evaluation checkpoint."""
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["episode", "median_success", "mean_success", "median_return", "mean_return"])
    for j, rec in enumerate(results[0].curve):
        s = np.array([r.curve[j]["success_rate"] for r in results])
        g = np.array([r.curve[j]["eval_return"] for r in results])
        w.writerow([rec["episode"], repr(float(np.median(s))), repr(float(s.mean())),
                    repr(float(np.median(g))), repr(float(g.mean()))])
    return buf.getvalue()


def run_experiment(cfg: RunConfig, strategy: Strategy | str | None = None, seeds=None, episodes: int | None = None,
                   out_dir=None, log=None) -> list[SeedResult]:
    """Run every seed and, if ``out_dir`` is given, write one curve CSV per seed plus an aggregate."""
    if episodes is not None:
        cfg = cfg.replace(episodes=episodes)
    strategy = Strategy(strategy or cfg.strategy)
    seeds = list(cfg.seeds if seeds is None else seeds)
    results = [run_seed(cfg, s, strategy, log) for s in seeds]
    if out_dir is not None:
        out = Path(out_dir)
        for res in results:
            atomic_write_text(out / f"curve_{strategy.value}_seed{res.seed}.csv", curve_csv([res]))
            if res.credit_losses:
                atomic_write_text(out / f"credit_loss_{strategy.value}_seed{res.seed}.csv",
                                  "step,loss\n" + "".join(f"{i},{v!r}\n" for i, v in enumerate(res.credit_losses)))
            atomic_write_text(out / f"policy_{strategy.value}_seed{res.seed}.json", json.dumps(res.policy.to_dict()))
        atomic_write_text(out / f"curve_{strategy.value}_aggregate.csv", aggregate_csv(results))
    return results
