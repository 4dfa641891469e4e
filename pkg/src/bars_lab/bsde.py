"""Backward-Euler BSDE sweeps for the HJB value function."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .diffusion import ControlledDiffusionSpec, GridDiscretization, discretize_kernel

MIN_SAMPLES = 64
MODES = ("expectation", "finite_difference")
SOURCES = ("monte_carlo", "kernel")


@dataclass
class DriverInputs:
    x: np.ndarray
    y: float
    z: np.ndarray
    hessian: np.ndarray | None = None  # None means the trace term is omitted

    def __post_init__(self):
        self.x = np.atleast_1d(np.asarray(self.x, float))
        self.z = np.atleast_1d(np.asarray(self.z, float))
        if self.z.shape != self.x.shape:
            raise ValueError("z must have the noise dimension")
        if self.hessian is not None:
            h = np.asarray(self.hessian, float)
            if h.shape != (len(self.x), len(self.x)) or not np.allclose(h, h.T):
                raise ValueError("Gamma must be a symmetric d x d matrix")
            self.hessian = h


def driver_values(spec: ControlledDiffusionSpec, x, y, z, hessian=None, discount_rate=None):
    """Vectorised f(x, y, z, Gamma) over n points; returns (values, argmax action)."""
    x = np.atleast_2d(np.asarray(x, float))
    z = np.atleast_2d(np.asarray(z, float))
    beta = spec.discount_rate if discount_rate is None else discount_rate
    r = spec.reward(x)
    cand = np.empty_like(r)
    for a in range(spec.n_actions):
        term = r[:, a] + np.sum(spec.drift(x, a) * z, axis=1)
        if hessian is not None:
            sig2 = spec.sigma_diag(x, a) ** 2
            term = term + 0.5 * np.einsum("ni,nii->n", sig2, np.asarray(hessian, float).reshape(len(x), x.shape[1], -1))
        cand[:, a] = term
    best = np.argmax(cand, axis=1)
    return cand[np.arange(len(x)), best] - beta * np.asarray(y, float), best


def driver(spec: ControlledDiffusionSpec, inputs: DriverInputs, discount_rate=None) -> float:
    """f = sup_a {r + b.z + 1/2 Tr[sigma sigma^T Gamma]} - gamma y, lowest-index tie-break."""
    hess = None if inputs.hessian is None else inputs.hessian[None]
    val, _ = driver_values(spec, inputs.x[None], inputs.y, inputs.z[None], hess, discount_rate)
    return float(val[0])


def step_noise(seed: int, k: int, n_points: int, m: int, dim: int, delta: float) -> np.ndarray:
    """Antithetic, moment-matched increments of shape (n_points, m, dim) for step ``k``.

    Row i is the sample set of grid point i, so results do not depend on
    how points are scheduled.
    """
    if m < MIN_SAMPLES:
        raise ValueError(f"need at least {MIN_SAMPLES} Monte Carlo samples, got {m}")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0xB5DE, int(k)]))
    half = rng.standard_normal((n_points, (m + 1) // 2, dim))
    w = np.concatenate([half, -half], axis=1)[:, :m]
    scale = np.sqrt(np.mean(w**2, axis=1, keepdims=True))
    return w / np.where(scale > 0, scale, 1.0) * math.sqrt(delta)


def fd_derivatives(grid: GridDiscretization, values: np.ndarray):
    """Central-difference gradient and diagonal Hessian of grid values (one-sided at edges)."""
    v = values.reshape(grid.counts)
    h = grid.spacing
    d = grid.dimension
    grad = np.zeros((grid.n_points, d))
    hess = np.zeros((grid.n_points, d, d))
    for j in range(d):
        if grid.counts[j] < 3:
            continue
        grad[:, j] = np.gradient(v, h[j], axis=j).ravel()
        lap = np.zeros_like(v)
        sl = [slice(None)] * d
        mid, up, dn = list(sl), list(sl), list(sl)
        mid[j], up[j], dn[j] = slice(1, -1), slice(2, None), slice(None, -2)
        lap[tuple(mid)] = (v[tuple(up)] - 2 * v[tuple(mid)] + v[tuple(dn)]) / h[j] ** 2
        first, second = list(sl), list(sl)
        first[j], second[j] = 0, 1
        lap[tuple(first)] = lap[tuple(second)]
        last, prev = list(sl), list(sl)
        last[j], prev[j] = -1, -2
        lap[tuple(last)] = lap[tuple(prev)]
        hess[:, j, j] = lap.ravel()
    return grad, hess


def _check_finite(arr, what, k):
    bad = np.flatnonzero(~np.isfinite(arr).reshape(len(arr), -1).all(axis=1))
    if bad.size:
        raise FloatingPointError(f"non-finite {what} at grid point {int(bad[0])} (step {k})")


def _kernel_moments(spec, grid, delta, y_next, kernel):
    """Exact E[Y_next] and E[Y_next dW]/delta per action under the lattice kernel."""
    n, d = grid.n_points, grid.dimension
    pts = grid.points()
    ybar = (kernel @ y_next).reshape(n, spec.n_actions)
    z = np.zeros((n, spec.n_actions, d))
    for a in range(spec.n_actions):
        rows = kernel[np.arange(n) * spec.n_actions + a]
        sig = spec.sigma_diag(pts, a)
        mean = spec.drift(pts, a) * delta
        for j in range(d):
            step = pts[:, j]
            coo = rows.tocoo()
            dx = step[coo.col] - pts[coo.row, j] - mean[coo.row, j]
            acc = np.bincount(coo.row, coo.data * y_next[coo.col] * dx, minlength=n)
            z[:, a, j] = np.where(sig[:, j] > 0, acc / np.where(sig[:, j] > 0, sig[:, j], 1.0) / delta, 0.0)
    return ybar, z


def _mc_moments(spec, grid, delta, y_next, m, seed, k):
    n, d = grid.n_points, grid.dimension
    pts = grid.points()
    dw = step_noise(seed, k, n, m, d, delta)
    ybar = np.empty((n, spec.n_actions))
    z = np.empty((n, spec.n_actions, d))
    for a in range(spec.n_actions):
        x1 = pts[:, None, :] + (spec.drift(pts, a) * delta)[:, None, :] + spec.sigma_diag(pts, a)[:, None, :] * dw
        yv = y_next[grid.nearest(x1.reshape(-1, d))].reshape(n, m)
        ybar[:, a] = yv.mean(axis=1)
        z[:, a] = np.einsum("nm,nmj->nj", yv, dw) / (m * delta)
    return ybar, z


def backward_euler_step(spec, grid, delta, y_next, m=256, seed=0, k=0, mode="expectation",
                        source="monte_carlo", kernel=None):
    """One backward step Y_k = T[Y_{k+1}]; returns (Y_k, Z_k).

    ``expectation`` mode: for each action the Euler (or lattice) expectation
    of Y_next carries drift and diffusion, so
    Y_k = max_a {E_a[Y_next] + delta (r(s, a) - gamma E_a[Y_next])}
    and Z_k = E[Y_next dW] / delta under the maximising action.
    ``finite_difference`` mode applies the full driver at Y_next(s) with
    central-difference z and Gamma.
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    if source not in SOURCES:
        raise ValueError(f"unknown expectation source {source!r}")
    if source == "monte_carlo" and m < MIN_SAMPLES:
        raise ValueError(f"need at least {MIN_SAMPLES} Monte Carlo samples, got {m}")
    y_next = np.asarray(y_next, float)
    if y_next.shape != (grid.n_points,):
        raise ValueError("Y_next must have one value per grid point")
    pts = grid.points()
    if mode == "finite_difference":
        grad, hess = fd_derivatives(grid, y_next)
        f, _ = driver_values(spec, pts, y_next, grad, hess)
        y = y_next + delta * f
        _check_finite(y, "Y", k)
        return y, grad
    if source == "kernel":
        kernel = discretize_kernel(spec, grid, delta) if kernel is None else kernel
        ybar, z = _kernel_moments(spec, grid, delta, y_next, kernel)
    else:
        ybar, z = _mc_moments(spec, grid, delta, y_next, m, seed, k)
    _check_finite(ybar, "E[Y_next]", k)
    _check_finite(z, "Z", k)
    cand = ybar + delta * (spec.reward(pts) - spec.discount_rate * ybar)
    best = np.argmax(cand, axis=1)
    idx = np.arange(grid.n_points)
    return cand[idx, best], z[idx, best]


@dataclass
class BsdeSolveState:
    k: int
    values: np.ndarray
    z: np.ndarray
    samples: int
    delta: float
    terminal: np.ndarray


@dataclass
class BsdeTrace:
    """Y_0..Y_N (row k is time index k) plus Z estimates and run metadata."""

    values: np.ndarray
    z: np.ndarray
    samples: int
    delta: float
    terminal: np.ndarray
    mode: str = "expectation"
    source: str = "monte_carlo"

    @property
    def n_steps(self) -> int:
        return len(self.values) - 1

    @property
    def horizon(self) -> float:
        return self.n_steps * self.delta

    def state(self, k: int) -> BsdeSolveState:
        return BsdeSolveState(k, self.values[k], self.z[k], self.samples, self.delta, self.terminal)

    def backward(self):
        """States from the terminal index down to 0."""
        for k in range(self.n_steps, -1, -1):
            yield self.state(k)


def horizon_steps(delta: float) -> int:
    """N = ceil(1/delta), so that delta N = 1."""
    return math.ceil(1.0 / delta - 1e-9)


def backward_solve(spec, grid, delta, n_steps, terminal, m=256, seed=0, mode="expectation",
                   source="monte_carlo") -> BsdeTrace:
    terminal = np.asarray(terminal, float)
    if terminal.shape != (grid.n_points,):
        raise ValueError("terminal condition must have one value per grid point")
    _check_finite(terminal, "terminal condition", n_steps)
    kernel = discretize_kernel(spec, grid, delta) if source == "kernel" and mode == "expectation" else None
    values = np.empty((n_steps + 1, grid.n_points))
    zs = np.zeros((n_steps + 1, grid.n_points, grid.dimension))
    values[n_steps] = terminal
    for k in range(n_steps - 1, -1, -1):
        values[k], zs[k] = backward_euler_step(spec, grid, delta, values[k + 1], m, seed, k, mode, source, kernel)
    return BsdeTrace(values, zs, m, delta, terminal.copy(), mode, source)


def step_lipschitz_constant(spec: ControlledDiffusionSpec, mode: str = "expectation") -> float:
    """Recorded c with ||T U - T V|| <= (1 + c delta) ||U - V|| for the expectation mode.

    The step is an average followed by multiplication by (1 - gamma delta) and a
    max over actions, so c = 0 whenever gamma delta <= 1.
    """
    if mode != "expectation":
        raise ValueError("only the expectation mode has a recorded Lipschitz constant")
    return 0.0


def _as_reference(reference, trace: BsdeTrace):
    """Reference values aligned to the trace's time indices, shape (N+1, n)."""
    ref = reference
    if isinstance(ref, BsdeTrace):
        if abs(ref.horizon - trace.horizon) > 1e-9 * max(1.0, trace.horizon):
            raise ValueError(f"horizon mismatch: trace {trace.horizon:.6g}, reference {ref.horizon:.6g}")
        ratio = ref.n_steps / trace.n_steps
        if abs(ratio - round(ratio)) > 1e-9:
            raise ValueError("reference steps must refine the trace steps by an integer factor")
        ref = ref.values[:: int(round(ratio))]
    ref = np.asarray(ref, float)
    if ref.ndim == 1:
        return np.broadcast_to(ref, trace.values.shape)
    if ref.shape[0] != trace.values.shape[0]:
        raise ValueError(f"horizon mismatch: trace has {trace.n_steps} steps, reference {ref.shape[0] - 1}")
    return ref


def backward_hitting_time(trace: BsdeTrace, reference, epsilon: float) -> int | None:
    """Backward steps from the terminal index until ||Y_k - ref_k||_inf <= epsilon.

    ``reference`` is a stationary value array (compared at every time), a
    (N+1, n) array, or a refined trace over the same horizon. Returns None
    when the sweep never hits.
    """
    ref = _as_reference(reference, trace)
    n = trace.n_steps
    for j in range(n + 1):
        if float(np.abs(trace.values[n - j] - ref[n - j]).max()) <= epsilon:
            return j
    return None


def backward_mesh_for_tolerance(epsilon: float, lipschitz: float, gamma2_supp: float) -> float:
    """delta* = eps^2 / (16 L^2 gamma_2(supp r)^2)."""
    for name, v in (("epsilon", epsilon), ("lipschitz", lipschitz), ("gamma2_supp", gamma2_supp)):
        if not v > 0:
            raise ValueError(f"{name} must be positive")
    return epsilon**2 / (16.0 * lipschitz**2 * gamma2_supp**2)


def iterate_to_stationary(spec, grid, delta, terminal, target, epsilon, max_steps, m=256, seed=0,
                          source="kernel") -> tuple[int | None, list[float], np.ndarray]:
    """Backward sweeps from ``terminal`` until within epsilon of a stationary ``target``.

    Only the current iterate is kept, so long sweeps stay cheap.
    """
    kernel = discretize_kernel(spec, grid, delta) if source == "kernel" else None
    y = np.asarray(terminal, float).copy()
    errors = []
    if kernel is not None:
        # Z is not needed here, so the kernel step reduces to a sparse product
        r = spec.reward(grid.points())
        shrink = 1.0 - delta * spec.discount_rate

        def step(v, _j):
            return ((kernel @ v).reshape(r.shape) * shrink + delta * r).max(axis=1)
    else:

        def step(v, j):
            return backward_euler_step(spec, grid, delta, v, m, seed, max_steps - j, "expectation", source)[0]

    for j in range(max_steps + 1):
        err = float(np.abs(y - target).max())
        errors.append(err)
        if err <= epsilon:
            return j, errors, y
        if j < max_steps:
            y = step(y, j)
    return None, errors, y
