"""Finite metric spaces, epsilon-nets, cover trees and gamma_2 estimates."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist

METRIC_KINDS = ("euclidean", "chebyshev")

EXACT_COVER_MAX_POINTS = 20
BRUTE_GAMMA2_MAX_POINTS = 6


class OracleSizeError(ValueError):
    """Raised when an exhaustive oracle is asked to handle too many points."""


@dataclass(frozen=True)
class FiniteMetricSpace:
    points: np.ndarray
    metric_kind: str = "euclidean"

    def __post_init__(self):
        pts = self.points
        if not isinstance(pts, np.ndarray):
            try:
                pts = np.asarray(pts, dtype=float)
            except ValueError as exc:
                raise ValueError(f"points have mismatched dimensions: {exc}") from None
        if pts.dtype == object:
            raise ValueError("points have mismatched dimensions")
        pts = np.asarray(pts, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2:
            raise ValueError("points must be a list of equal-length vectors")
        if self.metric_kind not in METRIC_KINDS:
            raise ValueError(f"unknown metric kind {self.metric_kind!r}")
        object.__setattr__(self, "points", pts)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def distances_to(self, indices, others=None) -> np.ndarray:
        """Distances from the points at ``indices`` to ``others`` (default: all points)."""
        a = self.points[np.atleast_1d(indices)]
        b = self.points if others is None else self.points[np.atleast_1d(others)]
        return cdist(a, b, metric=self.metric_kind)

    def subspace(self, indices) -> "FiniteMetricSpace":
        return FiniteMetricSpace(self.points[np.asarray(indices, dtype=int)], self.metric_kind)

    def diameter(self) -> float:
        if self.n <= 1:
            return 0.0
        return float(distance_matrix(self).max())


def distance_matrix(space: FiniteMetricSpace) -> np.ndarray:
    if space.n < 1:
        raise ValueError("distance matrix of an empty space")
    d = cdist(space.points, space.points, metric=space.metric_kind)
    # cdist can leave O(eps) asymmetry for euclidean; the contract is exact symmetry.
    d = np.maximum(d, d.T)
    np.fill_diagonal(d, 0.0)
    return d


@dataclass(frozen=True)
class EpsNet:
    epsilon: float
    center_indices: list[int]

    def __len__(self):
        return len(self.center_indices)


def greedy_eps_net(space: FiniteMetricSpace, epsilon: float) -> EpsNet:
    """Single greedy pass in index order, seeded with point 0.

    The result covers the space at radius ``epsilon`` and its centers are
    pairwise more than ``epsilon`` apart.
    """
    if not epsilon > 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    if space.n == 0:
        return EpsNet(float(epsilon), [])
    centers = [0]
    nearest = space.distances_to(0)[0]
    for i in range(1, space.n):
        if nearest[i] > epsilon:
            centers.append(i)
            nearest = np.minimum(nearest, space.distances_to(i)[0])
    return EpsNet(float(epsilon), centers)


def covering_number_exact(space: FiniteMetricSpace, epsilon: float) -> int:
    """Minimum number of closed epsilon-balls centered at space points covering it.

    Exhaustive set cover; only meant as an oracle for tiny spaces.
    """
    n = space.n
    if n > EXACT_COVER_MAX_POINTS:
        raise OracleSizeError(
            f"exact covering number is an oracle for n <= {EXACT_COVER_MAX_POINTS}, got n={n}"
        )
    if epsilon < 0:
        raise ValueError("epsilon must be nonnegative")
    if n == 0:
        return 0
    d = distance_matrix(space)
    masks = [int(sum(1 << j for j in np.flatnonzero(d[i] <= epsilon))) for i in range(n)]
    full = (1 << n) - 1
    # balls that are subsets of another ball never help
    masks = sorted(set(masks), key=lambda m: -bin(m).count("1"))
    useful = [m for k, m in enumerate(masks) if not any((m | o) == o for o in masks[:k])]
    for size in range(1, n + 1):
        for combo in itertools.combinations(useful, size):
            acc = 0
            for m in combo:
                acc |= m
            if acc == full:
                return size
    return n


@dataclass
class CoverTree:
    """Levels ``N_i`` for scales ``top_scale`` down to ``bottom_scale``.

    ``levels[i]`` lists point indices in insertion order and ``parents[i]``
    maps each node of level ``i`` (for ``i < top_scale``) to its parent in
    level ``i + 1``.
    """

    space: FiniteMetricSpace
    levels: dict[int, list[int]]
    top_scale: int
    bottom_scale: int
    parents: dict[int, dict[int, int]] = field(default_factory=dict)

    def scales(self) -> list[int]:
        return list(range(self.top_scale, self.bottom_scale - 1, -1))

    def level_radius(self, i: int) -> float:
        """sup_x d(x, N_i)."""
        nodes = self.levels[i]
        if len(nodes) == self.space.n:
            return 0.0
        return float(self.space.distances_to(nodes).min(axis=0).max())

    def insert(self, point: np.ndarray) -> "CoverTree":
        """Return a new tree over the space extended by ``point``."""
        pts = np.vstack([self.space.points, np.atleast_2d(point)])
        return build_cover_tree(FiniteMetricSpace(pts, self.space.metric_kind))


def _scale_range(space: FiniteMetricSpace) -> tuple[int, int]:
    if space.n == 1:
        return 0, 0
    d = distance_matrix(space)
    diam = float(d.max())
    positive = d[d > 0]
    if positive.size == 0:
        return 0, 0
    top = math.ceil(math.log2(diam))
    # finest level must hold every point: need 2^bottom strictly below the minimum distance
    bottom = math.ceil(math.log2(float(positive.min()))) - 1
    return top, min(bottom, top)


def build_cover_tree(space: FiniteMetricSpace) -> CoverTree:
    """Build all levels top-down by greedy index-order refinement.

    Level ``i - 1`` starts from the nodes of level ``i`` and adds, in index
    order, every point farther than ``2^(i-1)`` from the nodes gathered so far.
    """
    if space.n < 1:
        raise ValueError("cover tree of an empty space")
    top, bottom = _scale_range(space)
    levels = {top: [0]}
    parents: dict[int, dict[int, int]] = {}
    nearest = space.distances_to(0)[0]
    for i in range(top - 1, bottom - 1, -1):
        radius = 2.0**i
        nodes = list(levels[i + 1])
        prev = np.asarray(levels[i + 1])
        link = {}
        for j in range(space.n):
            if nearest[j] > radius:
                nodes.append(j)
                nearest = np.minimum(nearest, space.distances_to(j)[0])
        for j in nodes:
            if j in levels[i + 1]:
                link[j] = j
            else:
                dj = space.distances_to(j, prev)[0]
                link[j] = int(prev[int(np.argmin(dj))])
        levels[i] = nodes
        parents[i] = link
    return CoverTree(space, levels, top, bottom, parents)


def level_sum(tree: CoverTree) -> float:
    """Raw multiscale sum over represented scales: sum_i 2^(i/2) sup_x d(x, N_i)."""
    return float(sum(2.0 ** (i / 2) * tree.level_radius(i) for i in tree.scales()))


def insertion_order(tree: CoverTree) -> list[int]:
    """Nodes in the order they first appear walking the levels top-down."""
    seen: dict[int, None] = {}
    for i in tree.scales():
        for j in tree.levels[i]:
            seen.setdefault(j, None)
    return list(seen)


def admissible_sequence(tree: CoverTree) -> list[list[int]]:
    """Admissible sequence T_0, T_1, ... read off the cover tree.

    T_0 is the root and T_n is the first 2^(2^n) nodes of the top-down
    insertion order, which is a coarse-to-fine farthest-point ordering. The
    sequence ends once T_n holds every point.
    """
    order = insertion_order(tree)
    seq = [order[:1]]
    n = 1
    while len(seq[-1]) < len(order):
        cap = 2 ** (2**n) if n < 6 else len(order)
        seq.append(order[:cap])
        n += 1
    return seq


def gamma2_upper(tree: CoverTree) -> float:
    """Upper estimate of gamma_2 from the cover tree.

    Evaluates sup_t sum_n 2^(n/2) d(t, T_n) on the admissible sequence given
    by :func:`admissible_sequence`, so it never falls below the true gamma_2.
    """
    space = tree.space
    if space.n == 1:
        return 0.0
    total = np.zeros(space.n)
    for n, nodes in enumerate(admissible_sequence(tree)):
        if len(nodes) == space.n:
            break
        total += 2.0 ** (n / 2) * space.distances_to(nodes).min(axis=0)
    return float(total.max())


def gamma2_bruteforce(space: FiniteMetricSpace) -> float:
    """Exact gamma_2 by enumeration over (T_0, T_1); T_2 may hold every point when n <= 6."""
    n = space.n
    if n > BRUTE_GAMMA2_MAX_POINTS:
        raise OracleSizeError(
            f"brute-force gamma_2 is an oracle for n <= {BRUTE_GAMMA2_MAX_POINTS}, got n={n}"
        )
    if n <= 1:
        return 0.0
    d = distance_matrix(space)
    best = math.inf
    subsets = [
        list(c) for size in range(1, min(4, n) + 1) for c in itertools.combinations(range(n), size)
    ]
    for t0 in range(n):
        for t1 in subsets:
            val = float(np.max(d[:, t0] + math.sqrt(2.0) * d[:, t1].min(axis=1)))
            best = min(best, val)
    return best


@dataclass(frozen=True)
class Gamma2Estimate:
    upper: float
    dudley: float
    brute: float | None = None
    dudley_is_surrogate: bool = False


def covering_number(space: FiniteMetricSpace, epsilon: float) -> tuple[int, bool]:
    """Covering number and whether it is exact (else a greedy-net upper surrogate)."""
    if space.n <= EXACT_COVER_MAX_POINTS:
        return covering_number_exact(space, epsilon), True
    return len(greedy_eps_net(space, epsilon)), False


def dudley_integral(space: FiniteMetricSpace, quadrature_steps: int = 64) -> tuple[float, bool]:
    """Entropy integral of sqrt(log N(eps)) over (0, diam] plus an exactness flag.

    Below the smallest positive distance N(eps) = n, so that segment is
    integrated in closed form; the rest uses the midpoint rule on a geometric
    grid.
    """
    if quadrature_steps < 2:
        raise ValueError("quadrature_steps must be at least 2")
    if space.n <= 1:
        return 0.0, True
    d = distance_matrix(space)
    diam = float(d.max())
    if diam == 0.0:
        return 0.0, True
    dmin = float(d[d > 0].min())
    exact = True
    n_small = len(np.unique(space.points, axis=0))
    total = dmin * math.sqrt(math.log(n_small))
    if diam > dmin:
        edges = np.geomspace(dmin, diam, quadrature_steps + 1)
        for lo, hi in zip(edges[:-1], edges[1:]):
            count, is_exact = covering_number(space, math.sqrt(lo * hi))
            exact &= is_exact
            total += (hi - lo) * math.sqrt(math.log(count))
    return float(total), exact


def dudley_bound(space: FiniteMetricSpace, quadrature_steps: int = 64) -> float:
    return dudley_integral(space, quadrature_steps)[0]


def estimate_gamma2(space: FiniteMetricSpace, quadrature_steps: int = 64) -> Gamma2Estimate:
    upper = gamma2_upper(build_cover_tree(space))
    dudley, exact = dudley_integral(space, quadrature_steps)
    brute = gamma2_bruteforce(space) if space.n <= BRUTE_GAMMA2_MAX_POINTS else None
    return Gamma2Estimate(upper=upper, dudley=dudley, brute=brute, dudley_is_surrogate=not exact)


def unit_ball_grid(dim: int, points_per_axis: int = 5, metric_kind: str = "euclidean") -> FiniteMetricSpace:
    """Lattice points of [-1, 1]^dim that lie in the closed unit ball."""
    axis = np.linspace(-1.0, 1.0, points_per_axis)
    mesh = np.stack(np.meshgrid(*([axis] * dim), indexing="ij"), axis=-1).reshape(-1, dim)
    keep = np.linalg.norm(mesh, axis=1) <= 1.0 + 1e-12
    return FiniteMetricSpace(mesh[keep], metric_kind)


def net_violations(space: FiniteMetricSpace, net: EpsNet) -> list[str]:
    """Covering and packing failures of an epsilon-net (empty when it is valid)."""
    out = []
    if space.n == 0:
        return out
    centers = net.center_indices
    reach = space.distances_to(centers).min(axis=0)
    if (reach > net.epsilon).any():
        out.append(f"point {int(np.argmax(reach))} is {reach.max():.6g} from the net (eps={net.epsilon:.6g})")
    if len(centers) > 1:
        dc = cdist(space.points[centers], space.points[centers], metric=space.metric_kind)
        np.fill_diagonal(dc, np.inf)
        if (dc <= net.epsilon).any():
            out.append(f"centers closer than eps={net.epsilon:.6g}: min gap {dc.min():.6g}")
    return out


def cover_tree_violations(tree: CoverTree) -> list[str]:
    """Nesting, covering and separation failures across all levels."""
    out = []
    space = tree.space
    for i in tree.scales():
        nodes = tree.levels[i]
        if i < tree.top_scale:
            if not set(tree.levels[i + 1]) <= set(nodes):
                out.append(f"level {i + 1} is not nested in level {i}")
            for j, parent in tree.parents[i].items():
                if parent not in tree.levels[i + 1]:
                    out.append(f"parent of {j} at level {i} is not in level {i + 1}")
                elif space.distances_to(j, [parent])[0, 0] > 2.0 ** (i + 1) + 1e-12:
                    out.append(f"node {j} at level {i} is farther than 2^{i + 1} from its parent")
        if len(nodes) > 1:
            dn = cdist(space.points[nodes], space.points[nodes], metric=space.metric_kind)
            np.fill_diagonal(dn, np.inf)
            if (dn <= 2.0**i).any():
                out.append(f"level {i} nodes closer than 2^{i}")
    # points the metric cannot separate (distance 0) count as one
    if space.distances_to(tree.levels[tree.bottom_scale]).min(axis=0).max() > 0:
        out.append("finest level does not hold every point")
    return out
