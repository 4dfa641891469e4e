"""Controlled diffusions, their lattice Markov-chain approximations and forward hitting times."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.special import ndtr

from .mdp import TabularMDP, policy_iteration, bellman_optimality_op
from .metric import FiniteMetricSpace, build_cover_tree, gamma2_upper

DRIFT_KINDS = ("constant", "affine", "ou", "tanh")
DIFFUSION_KINDS = ("constant", "affine")
REWARD_KINDS = ("zero", "constant", "bump", "box")


class InfeasibleMeshError(ValueError):
    pass


@dataclass(frozen=True)
class ControlledDiffusionSpec:
    """Drift and diffusion drawn from a closed catalog, plus reward and box.

    Drift with action vector ``u``:
      constant  b = u
      affine    b = A x + u
      ou        b = theta (u - x)
      tanh      b = u + kappa tanh(x)
    Diffusion is diagonal:
      constant  sigma = s
      affine    sigma = s0 + s1 * x       (must stay positive on the box)
    Reward is state-only, optionally plus ``action_bonus[a]``:
      zero, constant (value), bump (value * cos^2 bump of half-width
      ``width`` around ``center``), box (value on [lo, hi]).
    ``discount_rate`` is the continuous rate beta; a step of length delta
    discounts by exp(-beta delta).
    """

    dimension: int
    actions: np.ndarray
    box_lo: np.ndarray
    box_hi: np.ndarray
    drift_kind: str = "constant"
    drift_params: dict = field(default_factory=dict)
    diffusion_kind: str = "constant"
    diffusion_params: dict = field(default_factory=dict)
    reward_kind: str = "zero"
    reward_params: dict = field(default_factory=dict)
    discount_rate: float = 1.0

    def __post_init__(self):
        d = int(self.dimension)
        acts = np.asarray(self.actions, dtype=float)
        if acts.ndim == 1:
            acts = acts[:, None]
        if acts.shape[1] != d:
            raise ValueError("action vectors must match the dimension")
        object.__setattr__(self, "actions", acts)
        object.__setattr__(self, "box_lo", np.broadcast_to(np.asarray(self.box_lo, float), (d,)).copy())
        object.__setattr__(self, "box_hi", np.broadcast_to(np.asarray(self.box_hi, float), (d,)).copy())
        if self.drift_kind not in DRIFT_KINDS:
            raise ValueError(f"unknown drift kind {self.drift_kind!r}")
        if self.diffusion_kind not in DIFFUSION_KINDS:
            raise ValueError(f"unknown diffusion kind {self.diffusion_kind!r}")
        if self.reward_kind not in REWARD_KINDS:
            raise ValueError(f"unknown reward kind {self.reward_kind!r}")
        if not self.discount_rate > 0:
            raise ValueError("discount_rate must be positive")
        if self.diffusion_kind == "affine":
            lo = self.sigma_diag(self.box_lo[None, :], 0)
            hi = self.sigma_diag(self.box_hi[None, :], 0)
            if (lo < 0).any() or (hi < 0).any():
                raise ValueError("affine diffusion must be nonnegative on the box")

    @property
    def n_actions(self) -> int:
        return self.actions.shape[0]

    def _vec(self, params, key, default=0.0):
        return np.broadcast_to(np.asarray(params.get(key, default), float), (self.dimension,))

    def drift(self, x: np.ndarray, a: int) -> np.ndarray:
        """b(x, a) for points ``x`` of shape (n, d)."""
        x = np.atleast_2d(np.asarray(x, float))
        u = self.actions[a]
        p = self.drift_params
        if self.drift_kind == "constant":
            return np.broadcast_to(u, x.shape).copy()
        if self.drift_kind == "affine":
            mat = np.asarray(p.get("A", np.zeros((self.dimension, self.dimension))), float)
            return x @ mat.T + u
        if self.drift_kind == "ou":
            return p.get("theta", 1.0) * (u - x)
        return u + p.get("kappa", 1.0) * np.tanh(x)

    def sigma_diag(self, x: np.ndarray, a: int) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, float))
        p = self.diffusion_params
        if self.diffusion_kind == "constant":
            return np.broadcast_to(self._vec(p, "sigma", 1.0), x.shape).copy()
        return self._vec(p, "s0", 1.0) + self._vec(p, "s1", 0.0) * x

    def reward(self, x: np.ndarray) -> np.ndarray:
        """Running reward r(x, a) of shape (n, n_actions)."""
        x = np.atleast_2d(np.asarray(x, float))
        p = self.reward_params
        value = float(p.get("value", 1.0))
        if self.reward_kind == "zero":
            base = np.zeros(len(x))
        elif self.reward_kind == "constant":
            base = np.full(len(x), value)
        elif self.reward_kind == "bump":
            center = self._vec(p, "center")
            width = float(p.get("width", 1.0))
            dist = np.linalg.norm(x - center, axis=1) / width
            base = value * np.where(dist < 1.0, np.cos(0.5 * np.pi * dist) ** 2, 0.0)
        else:
            lo, hi = self._vec(p, "lo"), self._vec(p, "hi")
            base = value * np.all((x >= lo - 1e-12) & (x <= hi + 1e-12), axis=1)
        bonus = np.broadcast_to(np.asarray(p.get("action_bonus", 0.0), float), (self.n_actions,))
        return base[:, None] + bonus[None, :]

    def lipschitz(self) -> float:
        """Declared Lipschitz constant of drift and diffusion in the state."""
        p = self.drift_params
        if self.drift_kind == "constant":
            lb = 0.0
        elif self.drift_kind == "affine":
            mat = np.asarray(p.get("A", np.zeros((self.dimension, self.dimension))), float)
            lb = float(np.linalg.norm(mat, 2))
        elif self.drift_kind == "ou":
            lb = abs(float(p.get("theta", 1.0)))
        else:
            lb = abs(float(p.get("kappa", 1.0)))
        ls = 0.0
        if self.diffusion_kind == "affine":
            ls = float(np.abs(self._vec(self.diffusion_params, "s1")).max())
        return max(lb, ls)

    def max_sigma(self) -> float:
        corners = np.stack([self.box_lo, self.box_hi])
        return float(max(self.sigma_diag(corners, a).max() for a in range(self.n_actions)))


@dataclass(frozen=True)
class GridDiscretization:
    """Regular lattice over the box with per-dimension spacing ``spacing``."""

    lo: np.ndarray
    hi: np.ndarray
    counts: tuple[int, ...]

    @classmethod
    def from_spacing(cls, lo, hi, spacing) -> "GridDiscretization":
        lo = np.atleast_1d(np.asarray(lo, float))
        hi = np.atleast_1d(np.asarray(hi, float))
        sp_ = np.broadcast_to(np.asarray(spacing, float), lo.shape)
        counts = tuple(max(int(round((h - l) / s)), 1) + 1 for l, h, s in zip(lo, hi, sp_))
        return cls(lo, hi, counts)

    @classmethod
    def for_spec(cls, spec: ControlledDiffusionSpec, spacing: float) -> "GridDiscretization":
        return cls.from_spacing(spec.box_lo, spec.box_hi, spacing)

    @property
    def dimension(self) -> int:
        return len(self.counts)

    def refined(self, factor: int = 2) -> "GridDiscretization":
        """Nested lattice with spacing divided by ``factor``; every coarse point survives."""
        return GridDiscretization(self.lo, self.hi, tuple(factor * (c - 1) + 1 for c in self.counts))

    @property
    def spacing(self) -> np.ndarray:
        c = np.asarray(self.counts)
        return np.where(c > 1, (self.hi - self.lo) / np.maximum(c - 1, 1), 1.0)

    @property
    def n_points(self) -> int:
        return int(np.prod(self.counts))

    def axes(self) -> list[np.ndarray]:
        return [np.linspace(l, h, c) for l, h, c in zip(self.lo, self.hi, self.counts)]

    def points(self) -> np.ndarray:
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack(mesh, axis=-1).reshape(-1, self.dimension)

    def multi_index(self, x: np.ndarray) -> np.ndarray:
        """Per-axis nearest lattice index, clipped to the box; ties go to the lower index."""
        x = np.atleast_2d(np.asarray(x, float))
        t = (x - self.lo) / self.spacing
        idx = np.ceil(t - 0.5).astype(int)
        return np.clip(idx, 0, np.asarray(self.counts) - 1)

    def flat_index(self, multi: np.ndarray) -> np.ndarray:
        return np.ravel_multi_index(tuple(np.asarray(multi).T), self.counts)

    def nearest(self, x: np.ndarray) -> np.ndarray:
        return self.flat_index(self.multi_index(x))

    def metric_space(self) -> FiniteMetricSpace:
        return FiniteMetricSpace(self.points())

    def interior_mask(self, width: int = 1) -> np.ndarray:
        multi = np.stack(np.unravel_index(np.arange(self.n_points), self.counts), axis=1)
        c = np.asarray(self.counts)
        return np.all((multi >= width) & (multi <= c - 1 - width), axis=1)


def parabolic_grid(spec: ControlledDiffusionSpec, delta: float, ratio: float | None = None) -> GridDiscretization:
    """Lattice with spacing ratio * sqrt(delta), the scaling that keeps the kernel consistent.

    The default ratio 1.5 * max sigma keeps jump probabilities well inside [0, 1].
    """
    if ratio is None:
        ratio = 1.5 * max(spec.max_sigma(), 1e-12)
    return GridDiscretization.for_spec(spec, ratio * math.sqrt(delta))


def feasibility_bound(spec: ControlledDiffusionSpec, grid: GridDiscretization) -> float:
    """Largest delta with delta <= h^2 / (max sigma^2 + h max|b|)."""
    pts = grid.points()
    h = float(grid.spacing.min())
    smax = max(float((spec.sigma_diag(pts, a) ** 2).max()) for a in range(spec.n_actions))
    bmax = max(float(np.abs(spec.drift(pts, a)).max()) for a in range(spec.n_actions))
    denom = smax + h * bmax
    return math.inf if denom == 0 else h * h / denom


def _trinomial(mean_step, var_step, h):
    """Probabilities of jumps (-h, 0, +h) with E[jump] = mean_step and E[jump^2] = var_step."""
    second = var_step / (h * h)
    tilt = mean_step / h
    up = 0.5 * (second + tilt)
    down = 0.5 * (second - tilt)
    return down, 1.0 - up - down, up


def jump_law(spec: ControlledDiffusionSpec, grid: GridDiscretization, delta: float, a: int, pts=None):
    """Per-dimension jump offsets (in lattice steps) and probabilities for action ``a``.

    Returns (offsets, probs) with shapes (n, d, 3). Dimensions with zero
    diffusion move deterministically to the lattice point nearest x + b delta.
    """
    pts = grid.points() if pts is None else pts
    h = grid.spacing
    m = spec.drift(pts, a) * delta
    sig = spec.sigma_diag(pts, a)
    v = sig**2 * delta
    down, stay, up = _trinomial(m, v, h)
    probs = np.stack([down, stay, up], axis=-1)
    offsets = np.broadcast_to(np.array([-1, 0, 1]), probs.shape).copy()
    det = sig == 0
    if det.any():
        shift = np.ceil(m / h - 0.5).astype(int)
        offsets[det] = shift[det][:, None]
        probs[det] = np.array([0.0, 1.0, 0.0])
    return offsets, probs


def check_feasible(spec, grid, delta, probs_by_action=None):
    bound = feasibility_bound(spec, grid)
    if delta > bound * (1 + 1e-12):
        raise InfeasibleMeshError(
            f"delta={delta:.6g} exceeds the feasibility bound h^2/(max sigma^2 + h max|b|)={bound:.6g}"
        )
    if probs_by_action is not None:
        worst = min(float(p.min()) for p in probs_by_action)
        if worst < -1e-12:
            raise InfeasibleMeshError(
                f"negative jump probability {worst:.3g}: drift dominates diffusion at spacing "
                f"{grid.spacing.min():.4g} (need h <= sigma^2/|b|)"
            )


def discretize_kernel(spec: ControlledDiffusionSpec, grid: GridDiscretization, delta: float) -> sp.csr_matrix:
    """Moment-matched product-trinomial kernel as a sparse (n*A, n) matrix.

    Row ``s * n_actions + a`` holds P(. | s, a). Mass that would leave the
    box is reflected onto the boundary lattice point.
    """
    if not delta > 0:
        raise ValueError("delta must be positive")
    pts = grid.points()
    n, d = pts.shape
    base = np.stack(np.unravel_index(np.arange(n), grid.counts), axis=1)
    counts = np.asarray(grid.counts)
    laws = [jump_law(spec, grid, delta, a, pts) for a in range(spec.n_actions)]
    check_feasible(spec, grid, delta, [p for _, p in laws])
    rows, cols, vals = [], [], []
    combos = np.array(np.meshgrid(*([np.arange(3)] * d), indexing="ij")).reshape(d, -1).T
    for a, (offsets, probs) in enumerate(laws):
        probs = np.clip(probs, 0.0, None)
        for combo in combos:
            target = base.copy()
            weight = np.ones(n)
            for j in range(d):
                target[:, j] += offsets[:, j, combo[j]]
                weight *= probs[:, j, combo[j]]
            target = np.clip(target, 0, counts - 1)
            keep = weight > 0
            rows.append(np.flatnonzero(keep) * spec.n_actions + a)
            cols.append(np.ravel_multi_index(tuple(target[keep].T), grid.counts))
            vals.append(weight[keep])
    mat = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n * spec.n_actions, n),
    )
    mat.sum_duplicates()
    rs = np.asarray(mat.sum(axis=1)).ravel()
    return sp.diags(1.0 / rs) @ mat


def diffusion_mdp(spec: ControlledDiffusionSpec, grid: GridDiscretization, delta: float, reward=None) -> TabularMDP:
    """Chain with per-step reward delta * r and discount exp(-beta delta)."""
    kernel = discretize_kernel(spec, grid, delta)
    r = spec.reward(grid.points()) if reward is None else np.asarray(reward, float)
    return TabularMDP(
        kernel,
        delta * r,
        math.exp(-spec.discount_rate * delta),
        state_points=grid.metric_space(),
        action_points=spec.actions,
    )


def kernel_moments(kernel: sp.csr_matrix, grid: GridDiscretization, n_actions: int):
    """First moment and raw second moment of the state increment, per (state, action).

    Shapes (n, A, d) and (n, A, d, d).
    """
    pts = grid.points()
    n, d = pts.shape
    coo = kernel.tocoo()
    s = coo.row // n_actions
    inc = pts[coo.col] - pts[s]
    w = coo.data[:, None]
    mean = np.zeros((n * n_actions, d))
    np.add.at(mean, coo.row, w * inc)
    second = np.zeros((n * n_actions, d, d))
    np.add.at(second, coo.row, w[:, :, None] * inc[:, :, None] * inc[:, None, :])
    return mean.reshape(n, n_actions, d), second.reshape(n, n_actions, d, d)


def moment_remainders(spec, grid, delta, interior_only=True):
    """Sup-norm remainders of E[dX] - b delta and Cov[dX] - sigma sigma^T delta."""
    kernel = discretize_kernel(spec, grid, delta)
    mean, second = kernel_moments(kernel, grid, spec.n_actions)
    pts = grid.points()
    mask = grid.interior_mask() if interior_only else np.ones(len(pts), bool)
    r1 = r2 = 0.0
    for a in range(spec.n_actions):
        b = spec.drift(pts, a) * delta
        sig = spec.sigma_diag(pts, a)
        cov = second[:, a] - mean[:, a, :, None] * mean[:, a, None, :]
        target = np.einsum("ni,ij->nij", sig**2 * delta, np.eye(spec.dimension))
        r1 = max(r1, float(np.abs(mean[mask, a] - b[mask]).max(initial=0.0)))
        r2 = max(r2, float(np.abs(cov[mask] - target[mask]).max(initial=0.0)))
    return r1, r2


def sample_increments(kernel: sp.csr_matrix, grid: GridDiscretization, state: int, action: int,
                      n_actions: int, size: int, rng: np.random.Generator) -> np.ndarray:
    row = kernel.getrow(state * n_actions + action)
    draws = rng.choice(row.indices, size=size, p=row.data / row.data.sum())
    pts = grid.points()
    return pts[draws] - pts[state]


def euler_maruyama_path(spec, x0, action_sequence, delta, noise_stream) -> np.ndarray:
    """X_{k+1} = X_k + b(X_k, a_k) delta + sigma(X_k, a_k) dW_{k+1}.

    ``noise_stream`` is a numpy Generator or an array of increments of
    shape (N, d) already scaled by sqrt(delta).
    """
    acts = list(action_sequence)
    x = np.array(x0, float).reshape(1, -1)
    if isinstance(noise_stream, np.random.Generator):
        dw = noise_stream.standard_normal((len(acts), spec.dimension)) * math.sqrt(delta)
    else:
        dw = np.asarray(noise_stream, float).reshape(len(acts), spec.dimension)
    path = [x[0].copy()]
    for k, a in enumerate(acts):
        x = x + spec.drift(x, a) * delta + spec.sigma_diag(x, a) * dw[k]
        path.append(x[0].copy())
    return np.array(path)


@dataclass
class CouplingReport:
    n_steps: int
    delta: float
    max_deviation: np.ndarray
    k_hat: float
    radii: np.ndarray
    empirical_tail: np.ndarray
    bound: np.ndarray
    violations: int

    @property
    def violation_fraction(self) -> float:
        return self.violations / len(self.radii)


def _quantile_jump(u, down, stay):
    """Map uniforms to jumps -1/0/+1 by inverting the trinomial CDF."""
    return np.where(u < down, -1, np.where(u < down + stay, 0, 1))


def coupled_paths(spec, grid, delta, n_steps, x0, actions, dw):
    """Euler paths and lattice chains driven by the same Gaussian increments.

    ``dw`` has shape (trials, n_steps, d) and is already scaled by sqrt(delta).
    The chain's jump in each dimension is the trinomial quantile of
    Phi(dW / sqrt(delta)). Returns the per-trial max deviation.
    """
    trials = dw.shape[0]
    h = grid.spacing
    counts = np.asarray(grid.counts)
    start = grid.multi_index(np.atleast_2d(x0))[0]
    chain = np.tile(start, (trials, 1))
    euler = np.tile(np.asarray(x0, float), (trials, 1))
    dev = np.zeros(trials)
    u_all = ndtr(dw / math.sqrt(delta))
    for k in range(n_steps):
        a = actions[k]
        pos = grid.lo + chain * h
        offsets, probs = jump_law(spec, grid, delta, a, pos)
        jump = _quantile_jump(u_all[:, k], probs[..., 0], probs[..., 1])
        step = np.where(offsets[..., 1] != 0, offsets[..., 1], jump)
        chain = np.clip(chain + step, 0, counts - 1)
        euler = euler + spec.drift(euler, a) * delta + spec.sigma_diag(euler, a) * dw[:, k]
        dev = np.maximum(dev, np.linalg.norm(grid.lo + chain * h - euler, axis=1))
    return dev


def fit_subgaussian_constant(max_dev: np.ndarray, delta: float, n_steps: int) -> float:
    """Moment fit K = 2 E[D^2] / (delta N) for P(D >= r) <= 2 exp(-r^2 / (K delta N))."""
    return max(2.0 * float(np.mean(max_dev**2)) / (delta * n_steps), 1e-300)


def coupling_experiment(spec, grid, delta, n_steps, trials, seed, x0=None, actions=None, n_radii=100) -> CouplingReport:
    if trials < 100:
        raise ValueError("coupling tail estimation needs at least 100 trials")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0xC0FFEE]))
    if x0 is None:
        x0 = grid.points()[grid.nearest(0.5 * (spec.box_lo + spec.box_hi))[0]]
    if actions is None:
        actions = np.zeros(n_steps, dtype=int)
    dw = rng.standard_normal((trials, n_steps, spec.dimension)) * math.sqrt(delta)
    dev = coupled_paths(spec, grid, delta, n_steps, x0, actions, dw)
    k_hat = fit_subgaussian_constant(dev, delta, n_steps)
    top = max(float(dev.max()), 1e-12)
    radii = np.linspace(top / n_radii, top, n_radii)
    tail = (dev[None, :] >= radii[:, None]).mean(axis=1)
    bound = 2.0 * np.exp(-(radii**2) / (k_hat * delta * n_steps))
    return CouplingReport(n_steps, delta, dev, k_hat, radii, tail, bound, int((tail > bound).sum()))


def mesh_for_tolerance(epsilon: float, lipschitz: float, gamma2_value: float, consistency_c: float | None = None) -> float:
    """delta* = eps^2 / (4 L^2 gamma_2^2) from the chaining error bound."""
    for name, v in (("epsilon", epsilon), ("lipschitz", lipschitz), ("gamma2_value", gamma2_value)):
        if not v > 0:
            raise ValueError(f"{name} must be positive")
    if consistency_c is not None:
        if not consistency_c > 0:
            raise ValueError("consistency_c must be positive")
        if epsilon >= (2 * lipschitz * gamma2_value) ** 2 / consistency_c:
            warnings.warn("epsilon is not small against (2 L gamma_2)^2 / C; delta* may not be optimal")
    return epsilon**2 / (4.0 * lipschitz**2 * gamma2_value**2)


def reference_lattice(spec: ControlledDiffusionSpec, spacing: float = 1 / 32) -> GridDiscretization:
    """Fixed-resolution lattice on which gamma_2 of the box and of reward supports is measured."""
    return GridDiscretization.for_spec(spec, spacing)


def domain_gamma2(spec: ControlledDiffusionSpec, spacing: float = 1 / 32) -> float:
    """gamma_2 upper estimate of the state box, measured on the reference lattice."""
    return gamma2_upper(build_cover_tree(reference_lattice(spec, spacing).metric_space()))


def support_gamma2(spec: ControlledDiffusionSpec, spacing: float = 1 / 32, reward=None) -> float:
    """gamma_2 upper estimate of {x : max_a r(x, a) != 0} on the same lattice as domain_gamma2."""
    pts = reference_lattice(spec, spacing).points()
    r = spec.reward(pts) if reward is None else np.asarray(reward, float)
    keep = np.any(r != 0, axis=1)
    if not keep.any():
        return 0.0
    return gamma2_upper(build_cover_tree(FiniteMetricSpace(pts[keep])))


@dataclass
class HittingResult:
    tau: int | None
    errors: list[float]
    delta: float
    n_states: int

    @property
    def hit(self) -> bool:
        return self.tau is not None


def reference_values(spec, delta_fine, grid_fine, tolerance, reward=None) -> np.ndarray:
    """Stationary values on the fine grid (exact policy-iteration fixed point).

    Checked to have Bellman residual below ``tolerance``.
    """
    mdp = diffusion_mdp(spec, grid_fine, delta_fine, reward)
    _, values = policy_iteration(mdp)
    residual = float(np.abs(bellman_optimality_op(mdp, values) - values).max())
    if residual > tolerance:
        raise RuntimeError(f"reference residual {residual:.3g} exceeds {tolerance:.3g}")
    return values


def restrict(values_fine: np.ndarray, grid_fine: GridDiscretization, grid_coarse: GridDiscretization) -> np.ndarray:
    """Nearest-point restriction of fine-grid values onto the coarse grid."""
    return values_fine[grid_fine.nearest(grid_coarse.points())]


def iterate_until(operator, start, target, epsilon, max_steps) -> tuple[int | None, list[float], np.ndarray]:
    """Apply ``operator`` from ``start`` until ||V_k - target||_inf <= epsilon."""
    values = np.array(start, float)
    errors = []
    for k in range(max_steps + 1):
        err = float(np.abs(values - target).max())
        errors.append(err)
        if err <= epsilon:
            return k, errors, values
        if k < max_steps:
            values = operator(values)
    return None, errors, values


def forward_hitting_time(spec, grid_coarse, grid_fine, epsilon, v0=None, delta=None,
                         delta_fine=None, max_steps=None, reference=None) -> HittingResult:
    """First value-iteration sweep on the coarse chain within epsilon of the fine reference."""
    if delta is None:
        raise ValueError("forward hitting time needs the coarse time step delta")
    if delta_fine is None:
        delta_fine = delta / 4
    if reference is None:
        reference = reference_values(spec, delta_fine, grid_fine, epsilon / 10)
    target = restrict(reference, grid_fine, grid_coarse)
    mdp = diffusion_mdp(spec, grid_coarse, delta)
    start = np.zeros(mdp.n_states) if v0 is None else np.asarray(v0, float)
    if max_steps is None:
        span = max(float(np.abs(start - target).max()), epsilon)
        max_steps = int(10 * math.log(span / epsilon + 2) / (spec.discount_rate * delta)) + 100
    tau, errors, _ = iterate_until(lambda v: bellman_optimality_op(mdp, v), start, target, epsilon, max_steps)
    return HittingResult(tau, errors, delta, mdp.n_states)


def generator_values(spec, grid, delta, u_values, kernel=None):
    """Discrete generator (1/delta) sum_s' P(s'|s,a) [u(s') - u(s)], shape (n, A)."""
    kernel = discretize_kernel(spec, grid, delta) if kernel is None else kernel
    nxt = (kernel @ u_values).reshape(grid.n_points, spec.n_actions)
    return (nxt - u_values[:, None]) / delta


@dataclass(frozen=True)
class SmoothTestFunction:
    """Catalog test function with analytic gradient and Hessian."""

    kind: str
    params: dict = field(default_factory=dict)

    def value(self, x):
        x = np.atleast_2d(x)
        p = self.params
        if self.kind == "constant":
            return np.full(len(x), float(p.get("c", 1.0)))
        if self.kind == "quadratic":
            q = np.asarray(p.get("Q", np.eye(x.shape[1])), float)
            g = np.asarray(p.get("g", np.zeros(x.shape[1])), float)
            return 0.5 * np.einsum("ni,ij,nj->n", x, q, x) + x @ g
        w = float(p.get("width", 1.0))
        c = np.asarray(p.get("center", np.zeros(x.shape[1])), float)
        return np.exp(-np.sum((x - c) ** 2, axis=1) / w**2)

    def gradient(self, x):
        x = np.atleast_2d(x)
        p = self.params
        if self.kind == "constant":
            return np.zeros_like(x)
        if self.kind == "quadratic":
            q = np.asarray(p.get("Q", np.eye(x.shape[1])), float)
            g = np.asarray(p.get("g", np.zeros(x.shape[1])), float)
            return x @ q.T + g
        w = float(p.get("width", 1.0))
        c = np.asarray(p.get("center", np.zeros(x.shape[1])), float)
        return -2.0 * (x - c) / w**2 * self.value(x)[:, None]

    def hessian(self, x):
        x = np.atleast_2d(x)
        n, d = x.shape
        p = self.params
        if self.kind == "constant":
            return np.zeros((n, d, d))
        if self.kind == "quadratic":
            q = np.asarray(p.get("Q", np.eye(d)), float)
            return np.broadcast_to(0.5 * (q + q.T), (n, d, d)).copy()
        w = float(p.get("width", 1.0))
        c = np.asarray(p.get("center", np.zeros(d)), float)
        y = (x - c) / w**2
        v = self.value(x)[:, None, None]
        return v * (4.0 * y[:, :, None] * y[:, None, :] - 2.0 / w**2 * np.eye(d))


def operator_consistency_error(spec, grid, delta, test_function: SmoothTestFunction, interior_only=True) -> float:
    """sup over grid points of |T^delta[u] - T_bar u| for the HJB residual operators.

    Both operators are written as beta u - max_a {r + generator}, so the
    beta u terms cancel and the error is the gap between the maximised
    discrete and analytic generators.
    """
    pts = grid.points()
    u = test_function.value(pts)
    r = spec.reward(pts)
    disc = (r + generator_values(spec, grid, delta, u)).max(axis=1)
    grad = test_function.gradient(pts)
    hess = test_function.hessian(pts)
    cont = np.full(len(pts), -np.inf)
    for a in range(spec.n_actions):
        sig2 = spec.sigma_diag(pts, a) ** 2
        la = np.sum(spec.drift(pts, a) * grad, axis=1) + 0.5 * np.einsum("ni,nii->n", sig2, hess)
        cont = np.maximum(cont, r[:, a] + la)
    diff = np.abs(disc - cont)
    if interior_only:
        diff = diff[grid.interior_mask()]
    return float(diff.max(initial=0.0))
