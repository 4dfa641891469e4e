"""Tabular MDPs, Bellman operators and the solvers and bounds built on them."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .metric import FiniteMetricSpace

ROW_SUM_TOL = 1e-12


class ConvergenceError(RuntimeError):
    """Value iteration ran out of sweeps; ``trace`` holds the residuals seen."""

    def __init__(self, message, trace):
        super().__init__(message)
        self.trace = trace


@dataclass
class TabularMDP:
    """Finite MDP with kernel ``P[s, a, s']`` and reward ``r[s, a]``.

    ``kernel`` may also be given as a sparse matrix of shape
    ``(n_states * n_actions, n_states)`` with row ``s * n_actions + a``.
    State-only rewards (shape ``(n_states,)``) are broadcast across actions.
    """

    kernel: np.ndarray | sp.spmatrix
    reward: np.ndarray
    discount: float
    state_points: FiniteMetricSpace | None = None
    action_points: np.ndarray | None = None
    _flat: sp.csr_matrix = field(init=False, repr=False)

    def __post_init__(self):
        if not 0.0 <= self.discount < 1.0:
            raise ValueError(f"discount must lie in [0, 1), got {self.discount}")
        reward = np.asarray(self.reward, dtype=float)
        if sp.issparse(self.kernel):
            flat = sp.csr_matrix(self.kernel, dtype=float)
            n_states = flat.shape[1]
            if reward.ndim == 2:
                n_actions = reward.shape[1]
            else:
                n_actions = flat.shape[0] // n_states
            if flat.shape[0] != n_states * n_actions:
                raise ValueError("sparse kernel must have n_states * n_actions rows")
            if flat.nnz and flat.data.min() < 0:
                raise ValueError("kernel entries must be nonnegative")
        else:
            k = np.asarray(self.kernel, dtype=float)
            if k.ndim != 3 or k.shape[0] != k.shape[2]:
                raise ValueError("kernel must have shape (n_states, n_actions, n_states)")
            if (k < 0).any():
                raise ValueError("kernel entries must be nonnegative")
            n_states, n_actions = k.shape[:2]
            flat = sp.csr_matrix(k.reshape(n_states * n_actions, n_states))
            self.kernel = k
        rows = np.asarray(flat.sum(axis=1)).ravel()
        if np.abs(rows - 1.0).max(initial=0.0) > ROW_SUM_TOL * max(1, n_states):
            raise ValueError("every kernel row must sum to 1")
        if reward.ndim == 1:
            reward = np.repeat(reward[:, None], n_actions, axis=1)
        if reward.shape != (n_states, n_actions):
            raise ValueError(f"reward shape {reward.shape} != {(n_states, n_actions)}")
        if (reward < 0).any():
            raise ValueError("rewards must be nonnegative")
        self.reward = reward
        self._flat = flat
        if self.action_points is None:
            self.action_points = np.arange(n_actions, dtype=float)[:, None]
        else:
            ap = np.asarray(self.action_points, dtype=float)
            self.action_points = ap[:, None] if ap.ndim == 1 else ap

    @property
    def n_states(self) -> int:
        return self._flat.shape[1]

    @property
    def n_actions(self) -> int:
        return self.reward.shape[1]

    @property
    def r_max(self) -> float:
        return float(self.reward.max(initial=0.0))

    def with_reward(self, reward) -> "TabularMDP":
        return TabularMDP(self._flat, reward, self.discount, self.state_points, self.action_points)

    def dense_kernel(self) -> np.ndarray:
        return self._flat.toarray().reshape(self.n_states, self.n_actions, self.n_states)

    def expected_next(self, values: np.ndarray) -> np.ndarray:
        """E[V(s') | s, a] as an (n_states, n_actions) array."""
        return (self._flat @ values).reshape(self.n_states, self.n_actions)

    def q_values(self, values: np.ndarray) -> np.ndarray:
        return self.reward + self.discount * self.expected_next(values)

    def policy_matrix(self, policy) -> tuple[sp.csr_matrix, np.ndarray]:
        """Kernel and reward under a deterministic or stochastic policy."""
        pi = np.asarray(policy)
        s = np.arange(self.n_states)
        if pi.ndim == 1:
            if pi.shape != (self.n_states,):
                raise ValueError("policy must give one action per state")
            if not np.issubdtype(pi.dtype, np.integer):
                if not np.all(pi == np.round(pi)):
                    raise ValueError("deterministic policy must hold integer actions")
                pi = pi.astype(int)
            if pi.min() < 0 or pi.max() >= self.n_actions:
                raise ValueError("policy action index out of range")
            rows = s * self.n_actions + pi
            return self._flat[rows], self.reward[s, pi]
        if pi.shape != (self.n_states, self.n_actions):
            raise ValueError("stochastic policy must have shape (n_states, n_actions)")
        if (pi < 0).any() or np.abs(pi.sum(axis=1) - 1).max() > 1e-9:
            raise ValueError("stochastic policy rows must be distributions")
        weights = sp.csr_matrix(
            (pi.ravel(), (np.repeat(s, self.n_actions), np.arange(pi.size))),
            shape=(self.n_states, pi.size),
        )
        return weights @ self._flat, (pi * self.reward).sum(axis=1)


def bellman_policy_op(mdp: TabularMDP, policy, values) -> np.ndarray:
    kernel, reward = mdp.policy_matrix(policy)
    return reward + mdp.discount * (kernel @ np.asarray(values, dtype=float))


def bellman_optimality_op(mdp: TabularMDP, values) -> np.ndarray:
    return mdp.q_values(np.asarray(values, dtype=float)).max(axis=1)


def greedy_policy(mdp: TabularMDP, values) -> np.ndarray:
    # np.argmax returns the first maximiser, i.e. the lowest action index on ties
    return np.argmax(mdp.q_values(np.asarray(values, dtype=float)), axis=1)


def policy_evaluation(mdp: TabularMDP, policy) -> np.ndarray:
    """Exact V^pi from the linear system (I - gamma P^pi) V = r^pi."""
    kernel, reward = mdp.policy_matrix(policy)
    a = sp.identity(mdp.n_states, format="csc") - mdp.discount * kernel.tocsc()
    if mdp.n_states <= 512:
        return np.linalg.solve(a.toarray(), reward)
    return sp.linalg.spsolve(a, reward)


def policy_iteration(mdp: TabularMDP, max_iter: int = 10_000) -> tuple[np.ndarray, np.ndarray]:
    """Howard policy iteration; returns (optimal policy, optimal values)."""
    policy = greedy_policy(mdp, np.zeros(mdp.n_states))
    for _ in range(max_iter):
        values = policy_evaluation(mdp, policy)
        q = mdp.q_values(values)
        best = q.max(axis=1)
        # keep the incumbent action unless another one is strictly better
        improve = best > q[np.arange(mdp.n_states), policy] + 1e-12 * (1 + np.abs(best))
        if not improve.any():
            return greedy_policy(mdp, values), values
        policy = np.where(improve, np.argmax(q, axis=1), policy)
    raise ConvergenceError("policy iteration did not terminate", [])


def max_sweeps(mdp: TabularMDP, tolerance: float, slack: int = 8) -> int:
    if mdp.discount == 0.0 or mdp.r_max == 0.0:
        return 1 + slack
    target = tolerance * (1 - mdp.discount) / mdp.r_max
    if target >= 1:
        return 1 + slack
    return math.ceil(math.log(target) / math.log(mdp.discount)) + slack


@dataclass
class ValueIterationResult:
    values: np.ndarray
    iterations: int
    residuals: list[float]
    iterates: list[np.ndarray] | None = None

    def __iter__(self):
        yield self.values
        yield self.iterations
        yield self.residuals


def value_iteration(
    mdp: TabularMDP,
    v0=None,
    tolerance: float = 1e-8,
    sweeps: int | None = None,
    keep_iterates: bool = False,
) -> ValueIterationResult:
    """Iterate the optimality operator until the Bellman residual is <= tolerance.

    ``residuals[k]`` is ||T[V_k] - V_k||_inf; the returned values are the first
    iterate whose residual meets the tolerance.
    """
    if not tolerance > 0:
        raise ValueError("tolerance must be positive")
    values = np.zeros(mdp.n_states) if v0 is None else np.array(v0, dtype=float)
    budget = max_sweeps(mdp, tolerance) if sweeps is None else sweeps
    # a V0 far above R_max/(1-gamma) needs extra sweeps to contract down
    if sweeps is None and mdp.discount > 0:
        excess = float(np.abs(values).max(initial=0.0)) * (1 - mdp.discount) / max(mdp.r_max, 1e-300)
        if excess > 1:
            budget += math.ceil(math.log(excess) / -math.log(mdp.discount))
    residuals = []
    iterates = [values.copy()] if keep_iterates else None
    for k in range(budget + 1):
        nxt = bellman_optimality_op(mdp, values)
        res = float(np.abs(nxt - values).max())
        residuals.append(res)
        if res <= tolerance:
            return ValueIterationResult(values, k, residuals, iterates)
        values = nxt
        if keep_iterates:
            iterates.append(values.copy())
    raise ConvergenceError(f"value iteration did not reach {tolerance} in {budget} sweeps", residuals)


def policy_return(mdp: TabularMDP, policy, initial_distribution) -> float:
    mu = np.asarray(initial_distribution, dtype=float)
    if mu.shape != (mdp.n_states,) or (mu < 0).any() or abs(mu.sum() - 1) > 1e-9:
        raise ValueError("initial distribution must be a probability vector over states")
    return float(mu @ policy_evaluation(mdp, policy))


def optimal_return(mdp: TabularMDP, initial_distribution) -> float:
    policy, _ = policy_iteration(mdp)
    return policy_return(mdp, policy, initial_distribution)


def static_regret(mdp: TabularMDP, policy_sequence, initial_distribution) -> tuple[float, np.ndarray]:
    star = optimal_return(mdp, initial_distribution)
    per_step = np.array([star - policy_return(mdp, pi, initial_distribution) for pi in policy_sequence])
    return float(per_step.sum()), per_step


@dataclass(frozen=True)
class GapCertificate:
    delta: float
    epsilon: float
    holds: bool
    witness: tuple[int, int, int] | None = None


def check_gap(mdp: TabularMDP, delta: float, epsilon: float, states=None) -> GapCertificate:
    """Check r(s, a*) - r(s, a) > delta for every action a farther than epsilon from a*(s).

    ``a*(s)`` is the lowest-index reward maximiser; ``states`` restricts the scan.
    """
    if not (delta > 0 and epsilon > 0):
        raise ValueError("delta and epsilon must be positive")
    acts = mdp.action_points
    adist = np.linalg.norm(acts[:, None, :] - acts[None, :, :], axis=-1)
    scan = range(mdp.n_states) if states is None else states
    for s in scan:
        row = mdp.reward[s]
        best = int(np.argmax(row))
        for a in range(mdp.n_actions):
            if adist[a, best] > epsilon and not row[best] - row[a] > delta:
                return GapCertificate(delta, epsilon, False, (int(s), a, best))
    return GapCertificate(delta, epsilon, True)


def reward_support(mdp: TabularMDP) -> tuple[np.ndarray, FiniteMetricSpace | None]:
    idx = np.flatnonzero(mdp.reward.max(axis=1) != 0)
    if mdp.state_points is None or idx.size == 0:
        return idx, None
    return idx, mdp.state_points.subspace(idx)


def loop_exploit_max_reward(gamma: float, v_star_s0: float, epsilon: float = 0.0) -> float:
    """Largest constant sparse reward below which looping cannot come within epsilon of V*(s0)."""
    if not 0.0 <= gamma < 1.0:
        raise ValueError("gamma must lie in [0, 1)")
    if epsilon < 0 or v_star_s0 < epsilon:
        raise ValueError("need v_star_s0 >= epsilon >= 0")
    return (1.0 - gamma) * (v_star_s0 - epsilon)


def min_reward_for_accuracy(k: float, p: float) -> float:
    """sqrt(K ln(2/p)): reward floor that beats the coupling noise with confidence 1 - p."""
    if not k > 0:
        raise ValueError("K must be positive")
    if not 0.0 < p < 1.0:
        raise ValueError("p must lie in (0, 1)")
    return math.sqrt(k * math.log(2.0 / p))


def effective_reward_mass(reward_values, measure_weights) -> float:
    r = np.asarray(reward_values, dtype=float)
    mu = np.asarray(measure_weights, dtype=float)
    if r.shape != mu.shape:
        raise ValueError("rewards and weights must have the same length")
    if (mu < 0).any() or abs(mu.sum() - 1.0) > 1e-9:
        raise ValueError("measure weights must be nonnegative and sum to 1")
    return float(r @ mu)


def reward_mass_sufficient(
    mass: float, k: float, p: float, c0: float, lipschitz: float, gamma2_value: float
) -> bool:
    """I_r >= sqrt(K ln(2/p)) + C0 L gamma_2."""
    return mass >= min_reward_for_accuracy(k, p) + c0 * lipschitz * gamma2_value


def random_mdp(rng: np.random.Generator, n_states: int, n_actions: int, discount: float, sparsity=0.0) -> TabularMDP:
    """Dense random MDP used by property tests and fixtures."""
    kernel = rng.random((n_states, n_actions, n_states)) ** 2
    if sparsity:
        kernel *= rng.random(kernel.shape) >= sparsity
        kernel[..., 0] += 1e-3
    kernel /= kernel.sum(axis=2, keepdims=True)
    reward = rng.random((n_states, n_actions))
    return TabularMDP(kernel, reward, discount)
