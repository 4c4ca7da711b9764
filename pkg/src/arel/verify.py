"""Exact and Monte-Carlo checks of the theoretical claims behind return decomposition.

* return equivalence: two finite decision processes that differ only in how a
  trajectory's return is split across steps have the same optimal policies;
* a uniform (equal-per-step) redistribution that must also be a function of
  state can be infeasible when episodes share states;
* the total loss is bounded by a bias/variance sum;
* the output variance of a randomly initialized credit head shrinks with width.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .credit_head import CreditHead
from .ndtensor import ContractError

PATH_BUDGET = 10**6


class SizeError(ValueError):
    """Exact enumeration would exceed the path budget."""


# -- finite decision processes with trajectory-level reward ------------------------

@dataclass
class DecPosdpSpec:
    """Finite multi-agent process whose reward is defined on whole trajectories.

    ``transitions[s, a, s']`` uses the joint action index
    ``a = sum_i a_i * n_actions**i``.  ``observations[i][s]`` is agent ``i``'s
    (deterministic) observation of state ``s``.  ``step_rewards(states,
    actions)`` returns the length-``horizon`` per-step reward vector of a
    trajectory with ``horizon + 1`` states and ``horizon`` joint actions; the
    return is its sum.
    """

    n_states: int
    n_agents: int
    n_actions: int
    horizon: int
    initial: np.ndarray
    transitions: np.ndarray
    observations: np.ndarray          # (n_agents, n_states) ints
    step_rewards: Callable[[tuple, tuple], np.ndarray]
    n_obs: int = 0

    def __post_init__(self):
        self.initial = np.asarray(self.initial, dtype=np.float64)
        self.transitions = np.asarray(self.transitions, dtype=np.float64)
        self.observations = np.asarray(self.observations, dtype=int)
        if not self.n_obs:
            self.n_obs = int(self.observations.max()) + 1
        self.validate()

    @property
    def n_joint(self) -> int:
        return self.n_actions ** self.n_agents

    def validate(self) -> None:
        S, J = self.n_states, self.n_joint
        if self.initial.shape != (S,) or abs(self.initial.sum() - 1) > 1e-12 or np.any(self.initial < 0):
            raise ContractError("initial distribution must be a probability vector over states")
        if self.transitions.shape != (S, J, S):
            raise ContractError(f"transitions must have shape {(S, J, S)}, got {self.transitions.shape}")
        if np.any(self.transitions < 0) or np.max(np.abs(self.transitions.sum(axis=2) - 1)) > 1e-12:
            raise ContractError("every transition row must be a probability distribution")
        if self.observations.shape != (self.n_agents, S):
            raise ContractError(f"observations must have shape {(self.n_agents, S)}")

    def joint_index(self, actions) -> int:
        return int(sum(a * self.n_actions ** i for i, a in enumerate(actions)))

    def n_paths(self) -> int:
        return self.n_states ** (self.horizon + 1) * self.n_joint ** self.horizon

    def trajectory_return(self, states: tuple, actions: tuple) -> float:
        return float(np.sum(self.step_rewards(states, actions)))


def all_trajectories(spec: DecPosdpSpec):
    """Every (states, joint actions) pair, reachable or not."""
    if spec.n_paths() > PATH_BUDGET:
        raise SizeError(f"{spec.n_paths()} trajectories exceed the enumeration budget {PATH_BUDGET}")
    for states in itertools.product(range(spec.n_states), repeat=spec.horizon + 1):
        for actions in itertools.product(range(spec.n_joint), repeat=spec.horizon):
            yield states, actions


def _policy_probs(spec: DecPosdpSpec, policy) -> np.ndarray:
    """Normalize a joint policy to per-agent ``(n_obs, n_actions)`` probability tables.

    Each agent's entry may be a length-``n_obs`` int array (deterministic) or
    an ``(n_obs, n_actions)`` stochastic table.
    """
    tables = []
    for p in policy:
        p = np.asarray(p)
        if p.ndim == 1:
            p = np.eye(spec.n_actions)[p.astype(int)]
        tables.append(np.asarray(p, dtype=np.float64))
    return np.stack(tables)


def _joint_action_probs(spec: DecPosdpSpec, tables: np.ndarray, state: int) -> np.ndarray:
    out = np.ones(1)
    # joint index puts agent 0 in the least significant digit
    for i in reversed(range(spec.n_agents)):
        out = np.outer(out, tables[i, spec.observations[i, state]]).reshape(-1)
    return out


def expected_return(spec: DecPosdpSpec, policy) -> float:
    """Exact ``sum_tau p(tau) R(tau)`` by depth-first enumeration of positive-probability paths."""
    if spec.n_paths() > PATH_BUDGET:
        raise SizeError(f"{spec.n_paths()} trajectories exceed the enumeration budget {PATH_BUDGET}")
    tables = _policy_probs(spec, policy)
    act_probs = [_joint_action_probs(spec, tables, s) for s in range(spec.n_states)]
    total = 0.0

    def walk(states, actions, prob):
        nonlocal total
        if len(actions) == spec.horizon:
            total += prob * spec.trajectory_return(tuple(states), tuple(actions))
            return
        s = states[-1]
        for a in np.flatnonzero(act_probs[s]):
            pa = prob * act_probs[s][a]
            for s2 in np.flatnonzero(spec.transitions[s, a]):
                walk(states + [int(s2)], actions + [int(a)], pa * spec.transitions[s, a, s2])

    for s0 in np.flatnonzero(spec.initial):
        walk([int(s0)], [], spec.initial[s0])
    return total


def sample_return(spec: DecPosdpSpec, policy, n: int, rng: np.random.Generator) -> tuple[float, float]:
    """Monte-Carlo mean return and its standard error over ``n`` rollouts."""
    tables = _policy_probs(spec, policy)
    act_probs = [_joint_action_probs(spec, tables, s) for s in range(spec.n_states)]
    rets = np.empty(n)
    for k in range(n):
        s = int(rng.choice(spec.n_states, p=spec.initial))
        states, actions = [s], []
        for _ in range(spec.horizon):
            a = int(rng.choice(spec.n_joint, p=act_probs[s]))
            s = int(rng.choice(spec.n_states, p=spec.transitions[s, a]))
            actions.append(a)
            states.append(s)
        rets[k] = spec.trajectory_return(tuple(states), tuple(actions))
    return float(rets.mean()), float(rets.std(ddof=1) / np.sqrt(n))


def deterministic_policies(spec: DecPosdpSpec):
    """All joint stationary reactive deterministic policies (observation -> action per agent)."""
    per_agent = list(itertools.product(range(spec.n_actions), repeat=spec.n_obs))
    for combo in itertools.product(per_agent, repeat=spec.n_agents):
        yield tuple(np.array(p) for p in combo)


@dataclass
class EquivalenceVerdict:
    return_equivalent: bool
    identical_optima: bool | None = None
    optimal_a: list = field(default_factory=list)
    optimal_b: list = field(default_factory=list)
    best_a: float | None = None
    best_b: float | None = None

    def to_dict(self) -> dict:
        return {"return_equivalent": self.return_equivalent, "identical_optima": self.identical_optima,
                "optimal_a": self.optimal_a, "optimal_b": self.optimal_b, "best_a": self.best_a, "best_b": self.best_b}


def _argmax_set(values: list[float], tol: float) -> list[int]:
    best = max(values)
    return [i for i, v in enumerate(values) if v >= best - tol * max(1.0, abs(best))]


def check_return_equivalence(a: DecPosdpSpec, b: DecPosdpSpec, tol: float = 1e-9) -> EquivalenceVerdict:
    """Compare optimal deterministic policy sets of two processes that share dynamics.

    If some trajectory's return differs, the pair is reported as not
    return-equivalent and no policy comparison is made.
    """
    same = (a.n_states == b.n_states and a.n_agents == b.n_agents and a.n_actions == b.n_actions
            and a.horizon == b.horizon and np.array_equal(a.initial, b.initial)
            and np.array_equal(a.transitions, b.transitions) and np.array_equal(a.observations, b.observations))
    if not same:
        raise ContractError("check_return_equivalence: processes differ in more than their rewards")
    for states, actions in all_trajectories(a):
        ra, rb = a.trajectory_return(states, actions), b.trajectory_return(states, actions)
        if abs(ra - rb) > tol * max(1.0, abs(ra)):
            return EquivalenceVerdict(False)
    policies = list(deterministic_policies(a))
    va = [expected_return(a, p) for p in policies]
    vb = [expected_return(b, p) for p in policies]
    opt_a, opt_b = _argmax_set(va, tol), _argmax_set(vb, tol)
    return EquivalenceVerdict(True, opt_a == opt_b, opt_a, opt_b, max(va), max(vb))


def random_spec(rng: np.random.Generator, n_states: int = 2, n_agents: int = 2, n_actions: int = 2,
                horizon: int = 3, n_obs: int = 2) -> DecPosdpSpec:
    """Random process with a non-Markov per-step reward table over trajectory prefixes."""
    J = n_actions ** n_agents
    trans = rng.dirichlet(np.ones(n_states), size=(n_states, J))
    # sparsify some rows so deterministic transitions also appear
    det = rng.random((n_states, J)) < 0.3
    trans[det] = np.eye(n_states)[rng.integers(0, n_states, size=det.sum())]
    obs = rng.integers(0, n_obs, size=(n_agents, n_states))
    obs[:, 0] = 0
    obs[:, -1] = n_obs - 1
    table: dict = {}
    for states in itertools.product(range(n_states), repeat=horizon + 1):
        for actions in itertools.product(range(J), repeat=horizon):
            table[states, actions] = rng.normal(size=horizon)
    return DecPosdpSpec(n_states, n_agents, n_actions, horizon, rng.dirichlet(np.ones(n_states)), trans, obs,
                        lambda s, a: table[s, a], n_obs=n_obs)


def redistribute_spec(spec: DecPosdpSpec, rng: np.random.Generator, mode: str = "random") -> DecPosdpSpec:
    """Same process, per-trajectory returns preserved, per-step rewards reshuffled.

    ``mode="random"`` adds a zero-sum random vector to every trajectory's
    rewards; ``mode="front"`` moves the final step's reward to step 0.
    """
    shifts: dict = {}
    for states, actions in all_trajectories(spec):
        if mode == "front":
            r = np.asarray(spec.step_rewards(states, actions), dtype=np.float64)
            d = np.zeros(spec.horizon)
            d[0], d[-1] = r[-1], -r[-1]
        else:
            d = rng.normal(size=spec.horizon) * 3
            d -= d.mean()
        shifts[states, actions] = d
    base = spec.step_rewards
    return DecPosdpSpec(spec.n_states, spec.n_agents, spec.n_actions, spec.horizon, spec.initial.copy(),
                        spec.transitions.copy(), spec.observations.copy(),
                        lambda s, a: np.asarray(base(s, a)) + shifts[s, a], n_obs=spec.n_obs)


def perturb_spec(spec: DecPosdpSpec, states: tuple, actions: tuple, delta: float = 1.0) -> DecPosdpSpec:
    """Same process with one trajectory's return changed by ``delta``."""
    base = spec.step_rewards

    def rewards(s, a):
        r = np.array(base(s, a), dtype=np.float64)
        if s == states and a == actions:
            r[-1] += delta
        return r

    return DecPosdpSpec(spec.n_states, spec.n_agents, spec.n_actions, spec.horizon, spec.initial.copy(),
                        spec.transitions.copy(), spec.observations.copy(), rewards, n_obs=spec.n_obs)


def theorem_sweep(instances: int = 100, seed: int = 0) -> dict:
    """Random return-equivalent pairs; counts how many share optimal policy sets."""
    rng = np.random.default_rng(seed)
    agree = 0
    for _ in range(instances):
        a = random_spec(rng)
        verdict = check_return_equivalence(a, redistribute_spec(a, rng))
        agree += bool(verdict.return_equivalent and verdict.identical_optima)
    return {"instances": instances, "identical": agree, "passed": agree == instances}


# -- uniform redistribution under shared states -----------------------------------

def _quadratic_parts(episodes, returns, n_vars):
    """Residual matrices: ``l_r = |Wr x - c|^2`` and ``l_v = |Wv x|^2``."""
    E = len(episodes)
    Wr = np.zeros((E, n_vars))
    c = np.zeros(E)
    rows = []
    for e, (eps, R) in enumerate(zip(episodes, returns)):
        L = len(eps)
        s = 1.0 / np.sqrt(E * L)
        for v in eps:
            Wr[e, v] += s
        c[e] = R * s
        for t, v in enumerate(eps):
            row = np.zeros(n_vars)
            row[v] += 1.0
            for u in eps:
                row[u] -= 1.0 / L
            rows.append(row / np.sqrt(E * L))
    return Wr, c, np.array(rows)


def _min_lr_uniform(episodes, returns, n_vars):
    # uniform within an episode + one value per state => merge states sharing an episode
    parent = list(range(n_vars))

    def find(v):
        while parent[v] != v:
            parent[v] = parent[parent[v]]
            v = parent[v]
        return v

    for eps in episodes:
        for v in eps[1:]:
            parent[find(v)] = find(eps[0])
    roots = sorted({find(v) for v in range(n_vars)})
    P = np.zeros((n_vars, len(roots)))
    for v in range(n_vars):
        P[v, roots.index(find(v))] = 1.0
    Wr, c, _ = _quadratic_parts(episodes, returns, n_vars)
    y = np.linalg.lstsq(Wr @ P, c, rcond=None)[0]
    return float(np.sum((Wr @ P @ y - c) ** 2)), P @ y


def _min_lv_given_exact(episodes, returns, n_vars):
    """Minimum ``l_v`` over state rewards with ``l_r = 0`` (``inf`` if no exact fit exists)."""
    Wr, c, Wv = _quadratic_parts(episodes, returns, n_vars)
    x0 = np.linalg.lstsq(Wr, c, rcond=None)[0]
    if np.sum((Wr @ x0 - c) ** 2) > 1e-20:
        return float("inf"), x0
    _, sv, vt = np.linalg.svd(Wr)
    rank = int(np.sum(sv > 1e-12 * sv.max()))
    null = vt[rank:].T
    if null.size == 0:
        x = x0
    else:
        z = np.linalg.lstsq(Wv @ null, -Wv @ x0, rcond=None)[0]
        x = x0 + null @ z
    return float(np.sum((Wv @ x) ** 2)), x


def check_uniform_infeasibility(L: int = 3, R_j: float = 3.0, R_k: float = 6.0) -> dict:
    """Two length-``L`` episodes sharing their middle state, with totals ``R_j`` and ``R_k``.

    Per-state rewards must be shared by both episodes.  Reports the least
    squares minimum of ``l_r`` under a uniform (constant per episode)
    assignment, the minimum ``l_v`` among exact (``l_r = 0``) assignments, and
    the uniform minimum once the shared state is split in two (relaxation).
    """
    if L < 2:
        raise ContractError("episodes need at least two steps to share an intermediate state")
    mid = L // 2
    ep_j = list(range(L))
    ep_k = [L + t if t < mid else (L + t - 1 if t > mid else mid) for t in range(L)]
    n_vars = 2 * L - 1
    lr_uniform, x_uniform = _min_lr_uniform([ep_j, ep_k], [R_j, R_k], n_vars)
    lv_exact, x_exact = _min_lv_given_exact([ep_j, ep_k], [R_j, R_k], n_vars)
    relaxed_k = [L + t for t in range(L)]
    lr_relaxed, _ = _min_lr_uniform([ep_j, relaxed_k], [R_j, R_k], 2 * L)
    lower = min(lr_uniform, lv_exact)
    return {
        "L": L, "R_j": R_j, "R_k": R_k,
        "min_lr_uniform_shared": lr_uniform,
        "shared_state_reward_uniform": float(x_uniform[mid]),
        "min_lv_given_lr_zero": lv_exact,
        "shared_state_reward_exact": float(x_exact[mid]),
        "min_lr_uniform_relaxed": lr_relaxed,
        "lower_bound": lower,
        "infeasible": bool(lower > 1e-12),
        "passed": bool((lower > 1e-12) == (R_j != R_k)) and lr_relaxed <= lr_uniform + 1e-12,
    }


# -- bias/variance bound ---------------------------------------------------------

def loss_bound_terms(predictions: np.ndarray, rewards: np.ndarray, omega: float) -> dict:
    """Both sides of the bias/variance bound for an ensemble of predictors.

    ``predictions`` is ``(K, T)`` (one row per ensemble member), ``rewards``
    the ground-truth ``r_t``.  Expectations are ensemble averages; the
    regularizer is measured around the per-step ensemble mean.
    """
    f = np.asarray(predictions, dtype=np.float64)
    r = np.asarray(rewards, dtype=np.float64)
    T = f.shape[1]
    fbar = f.mean(axis=0)
    var = ((f - fbar) ** 2).mean(axis=0)
    bias2 = (fbar - r) ** 2
    total = np.mean((f - r).sum(axis=1) ** 2) / T + omega / T * var.sum()
    rhs = float(np.sum((1 + omega / T) * var + bias2))
    # the implemented loss regularizes around each member's own time mean instead
    implemented = np.mean((f.sum(axis=1) - r.sum()) ** 2) / T + omega * np.mean(f.var(axis=1))
    return {"loss_total": float(total), "bound": rhs, "slack": rhs - float(total),
            "implemented_loss": float(implemented)}


def check_loss_bound(samples: int = 1000, seed: int = 0, horizons=range(2, 11), omegas=(0.0, 1.0, 20.0),
                     ensemble: int = 16, tol: float = 1e-9) -> dict:
    rng = np.random.default_rng(seed)
    worst = np.inf
    implemented_violations = 0
    horizons = list(horizons)
    for k in range(samples):
        T = horizons[k % len(horizons)]
        omega = omegas[(k // len(horizons)) % len(omegas)]
        r = rng.normal(size=T)
        f = r + rng.normal(size=T) * rng.uniform(0, 2) + rng.normal(size=(ensemble, T)) * rng.uniform(0, 2, size=T)
        terms = loss_bound_terms(f, r, omega)
        worst = min(worst, terms["slack"])
        implemented_violations += terms["implemented_loss"] > terms["bound"] + tol
    return {"samples": samples, "min_slack": float(worst), "passed": bool(worst >= -tol),
            "implemented_loss_exceeds_bound": int(implemented_violations)}


# -- width / variance trend ------------------------------------------------------

_PROBE = np.random.default_rng(12345).normal(size=(2, 16))


def init_outputs(width: int, inits: int, rng: np.random.Generator, z: np.ndarray = _PROBE) -> np.ndarray:
    """Head outputs at a fixed input ``z`` over ``inits`` initializations with weights ~ N(0, 1/width)."""
    return np.array([CreditHead(z.shape[-1], rng, hidden=width, init_std=1.0 / np.sqrt(width))(z).data.item()
                     for _ in range(inits)])


def check_width_variance_trend(widths=(64, 256, 1024), inits: int = 200, seed: int = 0, bootstrap: int = 0,
                               threshold: float = -0.5) -> dict:
    """Fit ``log Var`` against ``log width``; the slope should be at most ``threshold``."""
    widths = sorted(set(int(w) for w in widths))
    if len(widths) < 2 or widths[-1] < 10 * widths[0]:
        return {"verdict": "insufficient span", "widths": widths, "passed": None}
    rng = np.random.default_rng(seed)
    samples = {w: init_outputs(w, inits, rng) for w in widths}
    logw = np.log(widths)

    def slope_of(groups):
        return float(np.polyfit(logw, np.log([g.var(ddof=1) for g in groups]), 1)[0])

    slope = slope_of([samples[w] for w in widths])
    out = {"verdict": "pass" if slope <= threshold else "fail", "widths": widths, "inits": inits,
           "variances": [float(samples[w].var(ddof=1)) for w in widths], "slope": slope,
           "threshold": threshold, "passed": slope <= threshold}
    if bootstrap:
        boots = [slope_of([samples[w][rng.integers(0, inits, inits)] for w in widths]) for _ in range(bootstrap)]
        out["slope_stderr"] = float(np.std(boots, ddof=1))
    return out


def run_all(seed: int = 0, theorem_instances: int = 100) -> dict:
    """All four checks, as a JSON-ready report."""
    report = {
        "return_equivalence": theorem_sweep(theorem_instances, seed),
        "uniform_infeasibility": check_uniform_infeasibility(),
        "loss_bound": check_loss_bound(seed=seed),
        "width_variance_trend": check_width_variance_trend(seed=seed),
    }
    report["passed"] = all(v.get("passed") for v in report.values())
    return report
