"""Run configuration: one flat ``key = value`` file, validated on load.

Lines are ``key = value``; ``#`` starts a comment.  Values are parsed as
Python literals where possible (numbers, booleans, lists), otherwise kept as
strings.  Unknown keys are rejected.  Environment reward coefficients are
given as ``coef.<name> = value``.
"""

from __future__ import annotations

import ast
import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .attention import ConfigError
from .credit_head import REGULARIZERS
from .envs import POLICY_FEATURES, TASKS, EnvSpec

STRATEGIES = ("arel", "uniform", "final")


@dataclass
class RunConfig:
    # environment
    env: str = "two_button"
    n_agents: int = 2
    grid_size: int = 7
    horizon: int = 20
    obs_radius: int | None = None
    k_nearest: int = 2
    coefficients: dict = field(default_factory=dict)
    # redistribution
    strategy: str = "arel"
    alpha: float = 1.0
    omega: float = 20.0
    regularizer: str = "variance"
    depth: int = 1
    heads: int = 4
    d_model: int = 32
    agent_attention: str = "full"
    credit_lr: float = 1e-4
    credit_zero_init: bool = True
    update_every: int = 50
    credit_batches: int = 100
    batch_size: int = 32
    buffer_capacity: int = 5000
    # policy learner
    policy_features: str = "generic"
    policy_lr: float = 0.1
    gamma: float = 1.0
    epsilon: float = 0.05
    baseline_decay: float = 0.99
    # schedule
    seeds: list = field(default_factory=lambda: [0])
    episodes: int = 2000
    eval_every: int = 250
    eval_episodes: int = 50
    out_dir: str = "runs/default"

    def validate(self) -> None:
        problems = []
        if self.env not in TASKS:
            problems.append(f"env: unknown task '{self.env}', expected one of {TASKS}")
        if self.strategy not in STRATEGIES:
            problems.append(f"strategy: '{self.strategy}' not in {STRATEGIES}")
        if self.regularizer not in REGULARIZERS:
            problems.append(f"regularizer: '{self.regularizer}' not in {REGULARIZERS}")
        if self.agent_attention not in ("full", "uniform"):
            problems.append(f"agent_attention: '{self.agent_attention}' not in ('full', 'uniform')")
        if self.policy_features not in POLICY_FEATURES:
            problems.append(f"policy_features: '{self.policy_features}' not in {POLICY_FEATURES}")
        if not 0.0 <= self.alpha <= 1.0:
            problems.append(f"alpha: must lie in [0, 1], got {self.alpha}")
        if self.omega < 0:
            problems.append(f"omega: must be >= 0, got {self.omega}")
        if self.depth < 1:
            problems.append(f"depth: must be >= 1, got {self.depth}")
        if self.heads < 1 or self.d_model % self.heads:
            problems.append(f"heads: {self.heads} must divide d_model={self.d_model}")
        if not 0.0 <= self.epsilon <= 1.0:
            problems.append(f"epsilon: must lie in [0, 1], got {self.epsilon}")
        if not 0.0 <= self.gamma <= 1.0:
            problems.append(f"gamma: must lie in [0, 1], got {self.gamma}")
        if not 0.0 <= self.baseline_decay < 1.0:
            problems.append(f"baseline_decay: must lie in [0, 1), got {self.baseline_decay}")
        for name in ("n_agents", "horizon", "update_every", "batch_size", "buffer_capacity", "episodes",
                     "eval_every", "eval_episodes"):
            if getattr(self, name) < 1:
                problems.append(f"{name}: must be >= 1, got {getattr(self, name)}")
        for name in ("credit_lr", "policy_lr"):
            if not getattr(self, name) > 0:
                problems.append(f"{name}: must be > 0, got {getattr(self, name)}")
        if self.credit_batches < 0:
            problems.append(f"credit_batches: must be >= 0, got {self.credit_batches}")
        if not isinstance(self.seeds, list) or not self.seeds or not all(isinstance(s, int) for s in self.seeds):
            problems.append(f"seeds: expected a non-empty list of ints, got {self.seeds!r}")
        if problems:
            raise ConfigError("; ".join(problems))
        self.env_spec()  # surfaces env-level problems (coefficients, grid)

    def env_spec(self) -> EnvSpec:
        return EnvSpec(name=self.env, n_agents=self.n_agents, grid_size=self.grid_size, horizon=self.horizon,
                       obs_radius=self.obs_radius, k_nearest=self.k_nearest, coefficients=dict(self.coefficients))

    def to_dict(self) -> dict:
        return asdict(self)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()

    def replace(self, **changes) -> "RunConfig":
        d = self.to_dict()
        d.update(changes)
        return from_dict(d)


_FIELDS = {f.name for f in fields(RunConfig)}


def _parse_value(text: str):
    try:
        return ast.literal_eval(text)
    except (ValueError, SyntaxError):
        low = text.lower()
        if low in ("true", "false"):
            return low == "true"
        if low in ("none", "null"):
            return None
        return text


def from_dict(d: dict) -> RunConfig:
    unknown = set(d) - _FIELDS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    d = dict(d)
    for name in ("alpha", "omega", "credit_lr", "policy_lr", "gamma", "epsilon", "baseline_decay"):
        if name in d and isinstance(d[name], int) and not isinstance(d[name], bool):
            d[name] = float(d[name])
    if isinstance(d.get("seeds"), int):
        d["seeds"] = [d["seeds"]]
    if isinstance(d.get("seeds"), tuple):
        d["seeds"] = list(d["seeds"])
    cfg = RunConfig(**d)
    cfg.validate()
    return cfg


def parse_text(text: str) -> RunConfig:
    d: dict = {}
    coefficients: dict = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got '{raw.strip()}'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key.startswith("coef."):
            coefficients[key[5:]] = float(_parse_value(value))
            continue
        if key in d:
            raise ConfigError(f"line {lineno}: duplicate key '{key}'")
        d[key] = _parse_value(value)
    if coefficients:
        d["coefficients"] = coefficients
    return from_dict(d)


def load(path) -> RunConfig:
    return parse_text(Path(path).read_text())


def dump(cfg: RunConfig) -> str:
    lines = []
    for k, v in cfg.to_dict().items():
        if k == "coefficients":
            lines += [f"coef.{name} = {val!r}" for name, val in sorted(v.items())]
        else:
            lines.append(f"{k} = {v!r}")
    return "\n".join(lines) + "\n"
