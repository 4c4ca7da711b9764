"""Small grid-world cooperative tasks with episodic (end-of-episode) reward.

Each task computes a ground-truth reward after every joint action, keeps it
hidden, and reveals only the accumulated sum on the final step.  Tasks:

``navigation``
    N agents, N landmarks.  Per step: ``-l1 * sum_i dist(i, nearest landmark)
    - l2 * (#agent pairs sharing a cell)``.
``two_button``
    Agents must stand on two distinct buttons and press in the same step.
    Per step: ``+bonus`` when both buttons are pressed at once, minus
    ``distance * sum_buttons dist(button, nearest agent)`` (0 by default).
``push``
    Agents push a ball onto a target cell.  Per step: ``-l1 * mean agent-ball
    distance - l2 * ball-target distance + l3 * [some agent touched the ball]``.
``predator_prey``
    Predators chase scripted prey around blocking landmarks.  Per step:
    ``-l1 * sum_prey dist(prey, nearest predator) + l2 * (#contacts)``.

Distances are Manhattan.  Observations are fixed length: own position, then
for each entity class a block of ``k`` slots ``(dx, dy, present)`` holding
the nearest entities (ties broken by lowest index), zero-padded.  Entities
farther than ``obs_radius`` (Chebyshev) are treated as absent.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .attention import ConfigError
from .ndtensor import ContractError

ACTIONS = ("stay", "up", "down", "left", "right", "press")
N_ACTIONS = len(ACTIONS)
PRESS = 5
_MOVES = np.array([[0, 0], [0, 1], [0, -1], [-1, 0], [1, 0], [0, 0]])

TASKS = ("navigation", "two_button", "push", "predator_prey")

DEFAULT_COEFFICIENTS = {
    "navigation": {"distance": 0.1, "collision": 1.0},
    "two_button": {"bonus": 1.0, "distance": 0.0},
    "push": {"agent_ball": 0.05, "ball_target": 0.1, "touch": 0.2},
    "predator_prey": {"distance": 0.05, "capture": 1.0},
}


@dataclass
class EnvSpec:
    name: str = "navigation"
    n_agents: int = 2
    grid_size: int = 7
    horizon: int = 20
    obs_radius: int | None = None
    k_nearest: int = 2
    n_landmarks: int | None = None
    n_prey: int = 1
    coefficients: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.name not in TASKS:
            raise ConfigError(f"unknown task '{self.name}', expected one of {TASKS}")
        if self.horizon < 1 or self.n_agents < 1 or self.grid_size < 2:
            raise ConfigError("horizon and n_agents must be >= 1 and grid_size >= 2")
        if self.name == "two_button" and self.n_agents < 2:
            raise ConfigError("two_button needs at least 2 agents")
        coeffs = dict(DEFAULT_COEFFICIENTS[self.name])
        unknown = set(self.coefficients) - set(coeffs)
        if unknown:
            raise ConfigError(f"unknown reward coefficients for {self.name}: {sorted(unknown)}")
        coeffs.update(self.coefficients)
        if not all(np.isfinite(v) for v in coeffs.values()):
            raise ConfigError("reward coefficients must be finite")
        self.coefficients = coeffs
        if self.n_landmarks is None:
            self.n_landmarks = {"navigation": self.n_agents, "two_button": 2, "push": 1, "predator_prey": 2}[self.name]
        if self.obs_radius is None:
            self.obs_radius = self.grid_size

    # entity class name -> number of observation slots
    def slot_layout(self) -> list[tuple[str, int]]:
        k = self.k_nearest
        others = min(k, self.n_agents - 1)
        if self.name == "navigation":
            return [("landmarks", min(k, self.n_landmarks)), ("agents", others)]
        if self.name == "two_button":
            return [("buttons", 2), ("door", 1), ("agents", others)]
        if self.name == "push":
            return [("ball", 1), ("target", 1), ("agents", others)]
        return [("landmarks", min(k, self.n_landmarks)), ("prey", min(k, self.n_prey)), ("agents", others)]

    @property
    def obs_dim(self) -> int:
        return 2 + 3 * sum(n for _, n in self.slot_layout())

    @property
    def n_actions(self) -> int:
        return N_ACTIONS


@dataclass
class EnvState:
    spec: EnvSpec
    agents: np.ndarray                      # (N, 2)
    landmarks: np.ndarray                   # (L, 2) landmarks / buttons / target
    extra: np.ndarray                       # ball (1, 2), prey (M, 2), door (1, 2)
    rng: np.random.Generator
    t: int = 0
    hidden_rewards: list = field(default_factory=list)
    door_opened: bool = False

    @property
    def hidden_total(self) -> float:
        return float(sum(self.hidden_rewards))


def _manhattan(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.abs(a[..., 0] - b[..., 0]) + np.abs(a[..., 1] - b[..., 1])


def _distinct_cells(rng: np.random.Generator, n: int, grid: int) -> np.ndarray:
    cells = rng.choice(grid * grid, size=n, replace=False)
    return np.stack([cells % grid, cells // grid], axis=1)


def reset(spec: EnvSpec, seed: int) -> tuple[EnvState, np.ndarray]:
    """Random initial layout from ``seed``; returns the state and ``(N, obs_dim)`` observations."""
    rng = np.random.default_rng(seed)
    n_fixed = spec.n_landmarks + {"navigation": 0, "two_button": 1, "push": 1, "predator_prey": spec.n_prey}[spec.name]
    if n_fixed > spec.grid_size ** 2:
        raise ConfigError(f"{n_fixed} fixed entities do not fit on a {spec.grid_size}x{spec.grid_size} grid")
    fixed = _distinct_cells(rng, n_fixed, spec.grid_size)
    landmarks, extra = fixed[:spec.n_landmarks], fixed[spec.n_landmarks:]
    agents = rng.integers(0, spec.grid_size, size=(spec.n_agents, 2))
    state = EnvState(spec, agents, landmarks, extra, rng)
    return state, observe_all(state)


def _entities(state: EnvState, name: str, agent: int) -> np.ndarray:
    if name in ("landmarks", "buttons", "target"):
        return state.landmarks
    if name in ("door", "ball", "prey"):
        return state.extra
    return np.delete(state.agents, agent, axis=0)


def observe(state: EnvState, i: int) -> np.ndarray:
    """Observation vector of agent ``i``."""
    spec = state.spec
    ox, oy = (int(v) for v in state.agents[i])
    out = [float(ox), float(oy)]
    for name, slots in spec.slot_layout():
        if not slots:
            continue
        ents = _entities(state, name, i)
        cands = []
        for j, (x, y) in enumerate(ents.tolist()):
            dx, dy = x - ox, y - oy
            if max(abs(dx), abs(dy)) <= spec.obs_radius:
                cands.append((abs(dx) + abs(dy), j, dx, dy))
        cands.sort()
        for s in range(slots):
            if s < len(cands):
                out += [float(cands[s][2]), float(cands[s][3]), 1.0]
            else:
                out += [0.0, 0.0, 0.0]
    return np.array(out)


def observe_all(state: EnvState) -> np.ndarray:
    return np.stack([observe(state, i) for i in range(state.spec.n_agents)])


def _move(pos: np.ndarray, action: int, grid: int) -> np.ndarray:
    return np.clip(pos + _MOVES[action], 0, grid - 1)


def _blocked(cell: np.ndarray, obstacles: np.ndarray) -> bool:
    return bool(len(obstacles)) and bool(np.any(np.all(obstacles == cell, axis=1)))


def step(state: EnvState, joint_action) -> tuple[np.ndarray, bool, float]:
    """Apply one joint action; returns ``(observations, done, revealed_reward)``.

    The revealed reward is 0 until the last step, where it is the sum of the
    hidden per-step rewards.
    """
    spec = state.spec
    actions = np.asarray(joint_action, dtype=int).reshape(-1)
    if actions.shape[0] != spec.n_agents or np.any((actions < 0) | (actions >= N_ACTIONS)):
        raise ContractError(f"invalid joint action {actions.tolist()} for {spec.n_agents} agents")
    if state.t >= spec.horizon:
        raise ContractError("step called on a finished episode")
    g = spec.grid_size
    c = spec.coefficients
    old = state.agents.copy()
    new = old.copy()
    for i, a in enumerate(actions):
        cand = _move(old[i], a, g)
        if spec.name == "predator_prey" and _blocked(cand, state.landmarks):
            cand = old[i]
        new[i] = cand

    if spec.name == "navigation":
        d = _manhattan(new[:, None, :], state.landmarks[None, :, :]).min(axis=1)
        collisions = _pair_collisions(new)
        r = -c["distance"] * d.sum() - c["collision"] * collisions
    elif spec.name == "two_button":
        pressed = set()
        for i, a in enumerate(actions):
            if a == PRESS:
                for b, cell in enumerate(state.landmarks):
                    if np.array_equal(new[i], cell):
                        pressed.add(b)
        opened = len(pressed) == 2
        state.door_opened |= opened
        coverage = _manhattan(state.landmarks[:, None, :], new[None, :, :]).min(axis=1).sum()
        r = (c["bonus"] if opened else 0.0) - c["distance"] * float(coverage)
    elif spec.name == "push":
        ball = state.extra[0].copy()
        touched = False
        for i, a in enumerate(actions):
            if 1 <= a <= 4 and np.array_equal(new[i], ball):
                pushed = _move(ball, a, g)
                if not np.array_equal(pushed, ball):
                    ball = pushed
                    new[i] = old[i] + _MOVES[a]
                else:
                    new[i] = old[i]
                touched = True
        state.extra = ball[None, :]
        r = (-c["agent_ball"] * _manhattan(new, ball).mean()
             - c["ball_target"] * float(_manhattan(ball, state.landmarks[0]))
             + c["touch"] * float(touched))
    else:
        prey = state.extra.copy()
        for m in range(len(prey)):
            options = [_move(prey[m], a, g) for a in range(5)]
            options = [p for p in options if not _blocked(p, state.landmarks)]
            # scripted prey: greedily maximize distance to the closest predator
            scores = [_manhattan(new, p).min() for p in options]
            prey[m] = options[int(np.argmax(scores))]
        state.extra = prey
        dist = _manhattan(prey[:, None, :], new[None, :, :])
        r = -c["distance"] * dist.min(axis=1).sum() + c["capture"] * float((dist == 0).sum())

    state.agents = new
    state.hidden_rewards.append(float(r))
    state.t += 1
    done = state.t >= spec.horizon
    revealed = state.hidden_total if done else 0.0
    return observe_all(state), done, revealed


def _pair_collisions(pos: np.ndarray) -> int:
    n = len(pos)
    return int(sum(np.array_equal(pos[i], pos[j]) for i in range(n) for j in range(i + 1, n)))


def success(state: EnvState) -> bool:
    """Task-level success flag for the final state of an episode."""
    spec = state.spec
    if spec.name == "two_button":
        return state.door_opened
    if spec.name == "navigation":
        covered = _manhattan(state.landmarks[:, None, :], state.agents[None, :, :]).min(axis=1) == 0
        return bool(covered.all())
    if spec.name == "push":
        return bool(np.array_equal(state.extra[0], state.landmarks[0]))
    return bool((_manhattan(state.extra[:, None, :], state.agents[None, :, :]) == 0).any())


# -- observation discretization for tabular learners ---------------------------

POLICY_FEATURES = ("generic", "target")


def policy_key(spec: EnvSpec, features: str = "generic") -> Callable[[np.ndarray], tuple]:
    """Coarse, agent-local observation key used by the tabular policy.

    ``generic`` keeps the sign of each visible target offset.  For tasks where
    agents must spread over targets it adds one bit: whether the nearest other
    agent is strictly closer than me to my nearest target.

    ``target`` (two-button only) hand-codes the button assignment and keys on
    the sign of the offset to the chosen button: 9 keys, nearly a solved
    problem, useful as a sanity baseline.
    """
    if features not in POLICY_FEATURES:
        raise ConfigError(f"policy features must be one of {POLICY_FEATURES}, got {features!r}")
    layout = spec.slot_layout()
    offsets = {}
    pos = 2
    for name, slots in layout:
        offsets[name] = (pos, slots)
        pos += 3 * slots
    target_block = {"navigation": "landmarks", "two_button": "buttons", "push": "ball",
                    "predator_prey": "prey"}[spec.name]
    spread = spec.name in ("navigation", "two_button")

    if features == "target":
        if spec.name != "two_button" or offsets["agents"][1] == 0:
            raise ConfigError("'target' policy features need two_button with a visible partner")
        b0, a0 = offsets["buttons"][0], offsets["agents"][0]

        def button_key(obs: np.ndarray) -> tuple:
            # head for the nearest button unless the nearest other agent is closer
            # to it (ties: the agent whose partner offset is lexicographically
            # larger yields); the key is the sign of the offset to that target
            near, far = obs[b0:b0 + 2], obs[b0 + 3:b0 + 5]
            other = obs[a0:a0 + 2]
            mine = abs(near[0]) + abs(near[1])
            theirs = abs(near[0] - other[0]) + abs(near[1] - other[1])
            yields = theirs < mine or (theirs == mine and tuple(other) > (0.0, 0.0))
            target = far if yields and obs[b0 + 5] else near
            return (int(np.sign(target[0])), int(np.sign(target[1])))

        return button_key

    def key(obs: np.ndarray) -> tuple:
        parts = []
        start, slots = offsets[target_block]
        for s in range(slots):
            dx, dy, present = obs[start + 3 * s: start + 3 * s + 3]
            parts.append((int(np.sign(dx)), int(np.sign(dy))) if present else None)
        if spread and "agents" in offsets and offsets["agents"][1] > 0:
            a0 = offsets["agents"][0]
            ax, ay, apresent = obs[a0: a0 + 3]
            bx, by, bpresent = obs[start: start + 3]
            closer = bool(apresent and bpresent and abs(bx - ax) + abs(by - ay) < abs(bx) + abs(by))
            parts.append(closer)
        return tuple(parts)

    return key
