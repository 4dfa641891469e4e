"""Fixture files: controlled-diffusion problems and metric-space families."""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .config import ConfigError, E_VALUE, Key, ParsedConfig, dump, parse_file
from .diffusion import (
    DIFFUSION_KINDS,
    DRIFT_KINDS,
    REWARD_KINDS,
    ControlledDiffusionSpec,
    GridDiscretization,
    diffusion_mdp,
    parabolic_grid,
)
from .mdp import TabularMDP
from .metric import FiniteMetricSpace, unit_ball_grid

FIXTURE_SECTION = {"id": Key("str"), "kind": Key("str", choices=("diffusion", "metric"))}

DIFFUSION_SCHEMA = {
    "dimension": Key("int", 1),
    "actions": Key("floats"),
    "box_lo": Key("floats"),
    "box_hi": Key("floats"),
    "drift": Key("str", "constant", DRIFT_KINDS),
    "drift_matrix": Key("floats", []),
    "theta": Key("float", 1.0),
    "kappa": Key("float", 1.0),
    "diffusion": Key("str", "constant", DIFFUSION_KINDS),
    "sigma": Key("floats", [1.0]),
    "sigma_s1": Key("floats", [0.0]),
    "reward": Key("str", "zero", REWARD_KINDS),
    "reward_value": Key("float", 1.0),
    "reward_center": Key("floats", [0.0]),
    "reward_width": Key("float", 1.0),
    "reward_lo": Key("floats", [0.0]),
    "reward_hi": Key("floats", [0.0]),
    "action_bonus": Key("floats", []),
    "discount_rate": Key("float", 1.0),
    "lipschitz": Key("float"),
}

GRID_SCHEMA = {
    "delta": Key("float", 0.03125),
    "spacing": Key("float", 0.0),
    "parabolic_ratio": Key("float", 0.0),
}

SPARSE_SCHEMA = {
    "enabled": Key("bool", False),
    "lo": Key("floats", [0.0]),
    "hi": Key("floats", [0.0]),
    "action": Key("int", 0),
    "value": Key("float", 1.0),
    "task_scale": Key("float", 1.0),
    "query": Key("floats", [0.0]),
}

METRIC_SCHEMA = {
    "metric_kind": Key("str", "euclidean", ("euclidean", "chebyshev")),
    "dims": Key("ints", [1, 2, 3]),
    "points_per_axis": Key("int", 5),
}


def fixture_schema(raw: dict) -> dict:
    kind = raw.get("fixture", {}).get("kind", "diffusion")
    if kind == "metric":
        return {"fixture": FIXTURE_SECTION, "metric": METRIC_SCHEMA}
    return {"fixture": FIXTURE_SECTION, "diffusion": DIFFUSION_SCHEMA, "grid": GRID_SCHEMA, "sparse": SPARSE_SCHEMA}


class FixtureMissingError(FileNotFoundError):
    pass


@dataclass(frozen=True)
class SparseReward:
    lo: np.ndarray
    hi: np.ndarray
    action: int
    value: float
    task_scale: float
    query: np.ndarray

    def mask(self, points: np.ndarray) -> np.ndarray:
        return np.all((points >= self.lo - 1e-12) & (points <= self.hi + 1e-12), axis=1)


@dataclass(frozen=True)
class DiffusionFixture:
    id: str
    spec: ControlledDiffusionSpec
    lipschitz: float
    delta: float
    spacing: float
    parabolic_ratio: float
    sparse: SparseReward | None = None

    def grid(self, delta: float | None = None) -> GridDiscretization:
        delta = self.delta if delta is None else delta
        if self.spacing > 0:
            return GridDiscretization.for_spec(self.spec, self.spacing)
        return parabolic_grid(self.spec, delta, self.parabolic_ratio or None)

    def tabular(self, delta: float | None = None, include_sparse: bool = True) -> tuple[TabularMDP, GridDiscretization]:
        """Chain on the fixture grid: task reward delta * task_scale * r, plus the sparse reward per step."""
        delta = self.delta if delta is None else delta
        grid = self.grid(delta)
        pts = grid.points()
        scale = self.sparse.task_scale if self.sparse else 1.0
        reward = scale * self.spec.reward(pts)
        mdp = diffusion_mdp(self.spec, grid, delta, reward)
        if self.sparse is not None and include_sparse:
            r = mdp.reward.copy()
            r[self.sparse.mask(pts), self.sparse.action] += self.sparse.value
            mdp = mdp.with_reward(r)
        return mdp, grid

    def sparse_states(self, grid: GridDiscretization) -> np.ndarray:
        if self.sparse is None:
            return np.zeros(0, dtype=int)
        return np.flatnonzero(self.sparse.mask(grid.points()))

    def query_state(self, grid: GridDiscretization) -> int:
        q = self.sparse.query if self.sparse is not None else 0.5 * (self.spec.box_lo + self.spec.box_hi)
        return int(grid.nearest(np.atleast_2d(q))[0])

    def scaled(self, factor: float) -> "DiffusionFixture":
        """Spatial dilation of the box and of the reward geometry."""
        s = self.spec
        rp = dict(s.reward_params)
        for key in ("center", "lo", "hi"):
            if key in rp:
                rp[key] = np.asarray(rp[key], float) * factor
        if "width" in rp:
            rp["width"] = rp["width"] * factor
        spec = replace(s, box_lo=s.box_lo * factor, box_hi=s.box_hi * factor, reward_params=rp)
        return replace(self, id=f"{self.id}@x{factor:g}", spec=spec)

    def with_reward(self, **params) -> "DiffusionFixture":
        rp = dict(self.spec.reward_params)
        rp.update(params)
        return replace(self, spec=replace(self.spec, reward_params=rp))


@dataclass(frozen=True)
class MetricFixture:
    id: str
    metric_kind: str
    dims: tuple[int, ...]
    points_per_axis: int

    def spaces(self) -> list[FiniteMetricSpace]:
        return [unit_ball_grid(d, self.points_per_axis, self.metric_kind) for d in self.dims]


def _vec(values, d, name, path, lines):
    arr = np.asarray(values, float)
    if arr.size == 1:
        return np.full(d, float(arr[0]))
    if arr.size != d:
        raise ConfigError(E_VALUE, f"{name} needs 1 or {d} values, got {arr.size}", name,
                          lines.get(("diffusion", name)), path)
    return arr


def build_diffusion(cfg: ParsedConfig) -> DiffusionFixture:
    dcfg = cfg["diffusion"]
    lines = cfg.lines
    d = int(dcfg["dimension"])
    acts = np.asarray(dcfg["actions"], float)
    if acts.size == 0 or acts.size % d:
        raise ConfigError(E_VALUE, f"actions must hold a multiple of {d} values", "actions",
                          lines.get(("diffusion", "actions")), cfg.path)
    drift_params = {"theta": dcfg["theta"], "kappa": dcfg["kappa"]}
    if dcfg["drift_matrix"]:
        m = np.asarray(dcfg["drift_matrix"], float)
        if m.size != d * d:
            raise ConfigError(E_VALUE, f"drift_matrix needs {d * d} values", "drift_matrix",
                              lines.get(("diffusion", "drift_matrix")), cfg.path)
        drift_params["A"] = m.reshape(d, d)
    if dcfg["diffusion"] == "constant":
        diff_params = {"sigma": _vec(dcfg["sigma"], d, "sigma", cfg.path, lines)}
    else:
        diff_params = {"s0": _vec(dcfg["sigma"], d, "sigma", cfg.path, lines),
                       "s1": _vec(dcfg["sigma_s1"], d, "sigma_s1", cfg.path, lines)}
    reward_params = {"value": dcfg["reward_value"], "width": dcfg["reward_width"],
                     "center": _vec(dcfg["reward_center"], d, "reward_center", cfg.path, lines),
                     "lo": _vec(dcfg["reward_lo"], d, "reward_lo", cfg.path, lines),
                     "hi": _vec(dcfg["reward_hi"], d, "reward_hi", cfg.path, lines)}
    if dcfg["action_bonus"]:
        reward_params["action_bonus"] = np.asarray(dcfg["action_bonus"], float)
    try:
        spec = ControlledDiffusionSpec(
            d, acts.reshape(-1, d),
            _vec(dcfg["box_lo"], d, "box_lo", cfg.path, lines), _vec(dcfg["box_hi"], d, "box_hi", cfg.path, lines),
            dcfg["drift"], drift_params, dcfg["diffusion"], diff_params, dcfg["reward"], reward_params,
            dcfg["discount_rate"],
        )
    except ValueError as exc:
        raise ConfigError(E_VALUE, str(exc), None, None, cfg.path) from None
    if dcfg["lipschitz"] + 1e-12 < spec.lipschitz():
        raise ConfigError(E_VALUE, f"declared lipschitz {dcfg['lipschitz']!r} is below the catalog constant "
                          f"{spec.lipschitz()!r}", "lipschitz", lines.get(("diffusion", "lipschitz")), cfg.path)
    g = cfg["grid"]
    sp_ = cfg["sparse"]
    sparse = None
    if sp_["enabled"]:
        if not 0 <= sp_["action"] < spec.n_actions:
            raise ConfigError(E_VALUE, f"sparse action {sp_['action']} out of range", "action",
                              lines.get(("sparse", "action")), cfg.path)
        sparse = SparseReward(np.asarray(_vec(sp_["lo"], d, "lo", cfg.path, lines)),
                              np.asarray(_vec(sp_["hi"], d, "hi", cfg.path, lines)),
                              int(sp_["action"]), float(sp_["value"]), float(sp_["task_scale"]),
                              np.asarray(_vec(sp_["query"], d, "query", cfg.path, lines)))
    if not g["delta"] > 0:
        raise ConfigError(E_VALUE, "grid delta must be positive", "delta", lines.get(("grid", "delta")), cfg.path)
    return DiffusionFixture(cfg["fixture"]["id"], spec, float(dcfg["lipschitz"]), float(g["delta"]),
                            float(g["spacing"]), float(g["parabolic_ratio"]), sparse)


def load_fixture(path) -> DiffusionFixture | MetricFixture:
    p = Path(path)
    if not p.is_file():
        raise FixtureMissingError(f"fixture not found: {p}")
    cfg = parse_file(p, fixture_schema)
    if cfg["fixture"]["kind"] == "metric":
        m = cfg["metric"]
        if any(d < 1 for d in m["dims"]) or m["points_per_axis"] < 2:
            raise ConfigError(E_VALUE, "dims must be >= 1 and points_per_axis >= 2", None, None, cfg.path)
        return MetricFixture(cfg["fixture"]["id"], m["metric_kind"], tuple(m["dims"]), int(m["points_per_axis"]))
    return build_diffusion(cfg)


def dump_fixture(path) -> str:
    cfg = parse_file(path, fixture_schema)
    return dump(cfg, fixture_schema(cfg.values))


def loop_mdp(reward: float, gamma: float = 0.9, goal_value: float = 1.0, epsilon: float = 0.0) -> TabularMDP:
    """Four-state loop fixture.

    State 3 is the goal s_0: absorbing, paying ``goal_value`` per step, so
    V*(s_0) = goal_value / (1 - gamma). States 1 and 2 form the loop region:
    action 0 moves to the other loop state and pays ``reward``; action 1
    enters the goal paying ``goal_value - epsilon``, which makes the route
    worth exactly V*(s_0) - epsilon. State 0 chooses between the two.
    """
    n, a = 4, 2
    kernel = np.zeros((n, a, n))
    kernel[0, 0, 1] = kernel[1, 0, 2] = kernel[2, 0, 1] = 1.0
    kernel[0, 1, 3] = kernel[1, 1, 3] = kernel[2, 1, 3] = 1.0
    kernel[3, :, 3] = 1.0
    r = np.zeros((n, a))
    r[1, 0] = r[2, 0] = reward
    r[:3, 1] = goal_value - epsilon
    r[3, :] = goal_value
    return TabularMDP(kernel, r, gamma)


def loop_policy_values(reward: float, gamma: float = 0.9, goal_value: float = 1.0,
                       epsilon: float = 0.0) -> tuple[float, float]:
    """Closed-form values at a loop state: (always loop, go to the goal now)."""
    return reward / (1.0 - gamma), goal_value / (1.0 - gamma) - epsilon
