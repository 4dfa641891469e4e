"""The BARS online loop: support growth, gamma_2 tracking, reward-scale clipping and regret."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .mdp import (
    TabularMDP,
    bellman_optimality_op,
    check_gap,
    greedy_policy,
    policy_evaluation,
    policy_iteration,
)
from .metric import CoverTree, FiniteMetricSpace, build_cover_tree, gamma2_upper


class InfeasibleScaleError(ValueError):
    """lambda_min >= lambda_max: no admissible reward scale."""

    def __init__(self, lam_min: float, lam_max: float):
        super().__init__(f"infeasible reward scale: lambda_min={lam_min!r} >= lambda_max={lam_max!r}")
        self.lam_min = lam_min
        self.lam_max = lam_max


@dataclass
class BarsConfig:
    """Environment, base reward and the constants of the loop.

    ``environment`` carries the kernel, discount and a fixed task reward
    (possibly zero); the shaped reward lambda_t r~ is added on top of it at
    the (x, a*(x)) pairs of the current support.
    """

    environment: TabularMDP
    base_reward: np.ndarray
    prior_states: np.ndarray
    prior_weights: np.ndarray
    oracle: dict
    query_state: int
    rounds: int
    delta: float
    gap: float = 0.0
    confidence: float = 0.1
    lipschitz: float = 1.0
    alpha: float = 1.0
    subgaussian_c: float = 0.5
    j_star_prior: float = 1.0
    sweep_budget: int = 1_000_000

    def __post_init__(self):
        self.base_reward = np.asarray(self.base_reward, float)
        self.prior_states = np.asarray(self.prior_states, int)
        w = np.asarray(self.prior_weights, float)
        if w.shape != self.prior_states.shape or (w < 0).any() or w.sum() <= 0:
            raise ValueError("prior weights must be nonnegative, one per prior state")
        self.prior_weights = w / w.sum()
        missing = [int(s) for s in self.prior_states if int(s) not in self.oracle]
        if missing:
            raise ValueError(f"oracle has no action for prior states {missing}")
        vals = self.base_reward[self.prior_states]
        if not (vals > 0).all():
            raise ValueError("base reward must be positive on every prior state")
        if not 0 < self.confidence < 1:
            raise ValueError("confidence p must lie in (0, 1)")
        if self.alpha <= 0 or self.subgaussian_c <= 0:
            raise ValueError("alpha and c must be positive")
        if self.rounds < 1:
            raise ValueError("rounds must be at least 1")

    @property
    def discount(self) -> float:
        return self.environment.discount

    @property
    def r_min(self) -> float:
        return float(self.base_reward[self.prior_states].min())

    @property
    def r_max(self) -> float:
        return float(self.base_reward[self.prior_states].max())


@dataclass
class BarsRoundRecord:
    t: int
    state: int
    support_size: int
    gamma_hat: float
    lam: float
    lam_min: float
    lam_max: float
    tau: int | None
    epsilon: float
    regret_raw: float
    regret: float
    cumulative: float
    j_star: float
    gap_ok: bool

    @property
    def hit(self) -> bool:
        return self.tau is not None


def lambda_bounds(config: BarsConfig, j_star_estimate: float) -> tuple[float, float]:
    """(sqrt(2c log(2/p)) / r~_min, (1 - gamma) J* / r~_max); aborts when empty."""
    if not j_star_estimate > 0:
        raise ValueError("J* estimate must be positive")
    lam_min = math.sqrt(2.0 * config.subgaussian_c * math.log(2.0 / config.confidence)) / config.r_min
    lam_max = (1.0 - config.discount) * j_star_estimate / config.r_max
    if lam_min >= lam_max:
        raise InfeasibleScaleError(lam_min, lam_max)
    return lam_min, lam_max


def clip_scale(value: float, lam_min: float, lam_max: float) -> float:
    """Clip to the half-open interval [lam_min, lam_max)."""
    if value >= lam_max:
        return float(np.nextafter(lam_max, -np.inf))
    return max(value, lam_min)


def estimate_gamma2_online(support_points, previous_tree: CoverTree | None = None, floor: float = 0.0,
                           previous_estimate: float = 0.0) -> tuple[float, CoverTree]:
    """gamma_2 upper estimate of the support, never below ``floor`` or the previous estimate.

    gamma_2 is monotone under inclusion, so the running max of upper
    estimates over a nested support sequence is still an upper estimate.
    """
    pts = np.atleast_2d(np.asarray(support_points, float))
    if len(pts) == 0:
        raise ValueError("support must be nonempty")
    if previous_tree is not None and previous_tree.space.n == len(pts) - 1 and np.array_equal(
        previous_tree.space.points, pts[:-1]
    ):
        tree = previous_tree.insert(pts[-1])
    elif previous_tree is not None and previous_tree.space.n == len(pts) and np.array_equal(
        previous_tree.space.points, pts
    ):
        tree = previous_tree
    else:
        tree = build_cover_tree(FiniteMetricSpace(pts))
    est = max(gamma2_upper(tree), previous_estimate)
    return max(est, floor), tree


def shaped_mdp(config: BarsConfig, support: list[int], lam: float) -> TabularMDP:
    """Environment reward plus lam r~ on (x, a*(x)) for x in the support."""
    reward = config.environment.reward.copy()
    for x in support:
        reward[x, config.oracle[x]] += lam * config.base_reward[x]
    return config.environment.with_reward(reward)


@dataclass
class BarsState:
    support: list[int] = field(default_factory=list)
    tree: CoverTree | None = None
    gamma_hat: float = 0.0
    j_star: float | None = None
    cumulative: float = 0.0


def backward_sweep(mdp: TabularMDP, terminal, target, epsilon, budget):
    """Optimality-operator iterations from ``terminal`` until within epsilon of ``target``."""
    v = np.asarray(terminal, float).copy()
    for k in range(budget + 1):
        if float(np.abs(v - target).max()) <= epsilon:
            return k, v
        if k < budget:
            v = bellman_optimality_op(mdp, v)
    return None, v


def bars_round(state: BarsState, config: BarsConfig, t: int, rng: np.random.Generator) -> BarsRoundRecord:
    if t < 1:
        raise ValueError("rounds are numbered from 1")
    env = config.environment
    x = int(config.prior_states[rng.choice(len(config.prior_states), p=config.prior_weights)])
    if x not in state.support:
        state.support.append(x)
    pts = env.state_points.points[state.support]
    state.gamma_hat, state.tree = estimate_gamma2_online(pts, state.tree, config.delta, state.gamma_hat)
    j_est = config.j_star_prior if state.j_star is None else state.j_star
    lam_min, lam_max = lambda_bounds(config, j_est)
    lam = clip_scale(config.alpha / state.gamma_hat, lam_min, lam_max)
    mdp = shaped_mdp(config, state.support, lam)
    _, v_star = policy_iteration(mdp)
    eps = 1.0 / t
    terminal = mdp.reward.max(axis=1)
    tau, v = backward_sweep(mdp, terminal, v_star, eps, config.sweep_budget)
    policy = greedy_policy(mdp, v)
    j_pi = float(policy_evaluation(mdp, policy)[config.query_state])
    j_star = float(v_star[config.query_state])
    raw = j_star - j_pi
    regret = max(raw, 0.0)
    state.cumulative += regret
    state.j_star = j_star
    gap_ok = config.gap > 0 and check_gap(mdp, lam * config.gap, eps, states=np.asarray(state.support)).holds
    return BarsRoundRecord(t, x, len(state.support), state.gamma_hat, lam, lam_min, lam_max, tau, eps, raw,
                           regret, state.cumulative, j_star, bool(gap_ok))


@dataclass
class BarsSummary:
    rounds: int
    total_regret: float
    log_slope: float
    log_intercept: float
    log_r2: float
    envelope_c: float
    envelope_exceptions: int
    envelope_checked: int
    lambda_contained: bool
    support_monotone: bool
    non_hits: int


def log_fit(t, values):
    """Least-squares fit values ~ a + b log t; returns (slope, intercept, R^2)."""
    t = np.asarray(t, float)
    y = np.asarray(values, float)
    if len(t) < 2 or np.ptp(y) <= 1e-9 * max(1.0, float(np.abs(y).max())):
        return 0.0, float(y.mean()) if len(y) else 0.0, float("nan")
    res = stats.linregress(np.log(t), y)
    return float(res.slope), float(res.intercept), float(res.rvalue**2)


def hitting_envelope(records: list[BarsRoundRecord]) -> tuple[float, int, int]:
    """Fit C = max tau_t / (gamma_t^2 t^2) on the first half of hit rounds, count exceptions on the second."""
    hits = [r for r in records if r.hit]
    if not hits:
        return float("nan"), 0, 0
    half = max(len(hits) // 2, 1)
    ratio = [r.tau / (r.gamma_hat**2 * r.t**2) for r in hits]
    c = max(ratio[:half])
    checked = ratio[half:]
    return float(c), int(sum(q > c for q in checked)), len(checked)


def summarize(records: list[BarsRoundRecord]) -> BarsSummary:
    n = len(records)
    back = records[n // 2:] if n > 1 else records
    fit_rows = [r for r in back if r.hit]
    slope, icpt, r2 = log_fit([r.t for r in fit_rows], [r.cumulative for r in fit_rows])
    c, exc, checked = hitting_envelope(records)
    contained = all(r.lam_min <= r.lam < r.lam_max for r in records)
    sizes = [r.support_size for r in records]
    monotone = all(b >= a for a, b in zip(sizes, sizes[1:])) and all(s <= r.t for s, r in zip(sizes, records))
    return BarsSummary(n, records[-1].cumulative if records else 0.0, slope, icpt, r2, c, exc, checked,
                       contained, monotone, sum(not r.hit for r in records))


def bars_run(config: BarsConfig, seed: int) -> tuple[list[BarsRoundRecord], BarsSummary]:
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0xBA25]))
    state = BarsState()
    records = [bars_round(state, config, t, rng) for t in range(1, config.rounds + 1)]
    return records, summarize(records)
