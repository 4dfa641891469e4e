import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bars_lab.metric import (
    FiniteMetricSpace,
    OracleSizeError,
    build_cover_tree,
    cover_tree_violations,
    covering_number_exact,
    distance_matrix,
    dudley_integral,
    estimate_gamma2,
    gamma2_bruteforce,
    gamma2_upper,
    greedy_eps_net,
    net_violations,
    unit_ball_grid,
)

line6 = FiniteMetricSpace([[float(i)] for i in range(6)])


def test_dudley_two_points():
    value, exact = dudley_integral(FiniteMetricSpace([[0.0], [1.0]]))
    assert exact
    assert value == pytest.approx(math.sqrt(math.log(2)), abs=1e-12)


def test_dudley_three_collinear():
    # N(eps) = 3 below spacing 1 and 1 from there on, so only the first segment counts
    value, _ = dudley_integral(FiniteMetricSpace([[0.0], [1.0], [2.0]]))
    assert value == pytest.approx(math.sqrt(math.log(3)), abs=1e-12)


def test_small_gamma2_values():
    two = FiniteMetricSpace([[0.0], [1.0]])
    three = FiniteMetricSpace([[0.0], [1.0], [2.0]])
    assert gamma2_bruteforce(two) == 1.0
    assert gamma2_upper(build_cover_tree(two)) == 1.0
    # best root is the middle point; the cover tree roots at point 0
    assert gamma2_bruteforce(three) == 1.0
    assert gamma2_upper(build_cover_tree(three)) == 2.0


def test_covering_numbers_on_a_line():
    assert [covering_number_exact(line6, e) for e in (0.5, 1.0, 2.0)] == [6, 2, 2]
    assert greedy_eps_net(line6, 1.0).center_indices == [0, 2, 4]


def test_single_point_and_errors():
    one = FiniteMetricSpace([[0.3, 0.4]])
    assert gamma2_upper(build_cover_tree(one)) == 0.0
    assert dudley_integral(one) == (0.0, True)
    with pytest.raises(ValueError):
        greedy_eps_net(line6, 0.0)
    with pytest.raises(ValueError):
        FiniteMetricSpace([[0.0], [1.0, 2.0]])
    with pytest.raises(ValueError):
        FiniteMetricSpace([[0.0]], "cosine-ish")
    with pytest.raises(OracleSizeError):
        covering_number_exact(FiniteMetricSpace(np.arange(40.0)), 0.5)


def test_estimate_flags_surrogate_on_large_spaces():
    est = estimate_gamma2(unit_ball_grid(2, 9))
    assert est.brute is None
    assert est.dudley_is_surrogate
    assert est.upper > 0


points = st.lists(st.tuples(st.floats(-4, 4), st.floats(-4, 4)), min_size=1, max_size=40)


@settings(max_examples=60, deadline=None)
@given(points, st.floats(0.05, 3.0), st.sampled_from(["euclidean", "chebyshev"]))
def test_greedy_net_covers_and_packs(pts, eps, kind):
    space = FiniteMetricSpace(np.array(pts), kind)
    assert net_violations(space, greedy_eps_net(space, eps)) == []


@settings(max_examples=60, deadline=None)
@given(points)
def test_cover_tree_invariants(pts):
    space = FiniteMetricSpace(np.unique(np.array(pts), axis=0))
    assert cover_tree_violations(build_cover_tree(space)) == []


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 2), st.floats(0, 2)), min_size=2, max_size=6, unique=True))
def test_brute_below_upper(pts):
    space = FiniteMetricSpace(np.array(pts))
    assert gamma2_bruteforce(space) <= gamma2_upper(build_cover_tree(space)) + 1e-12


@settings(max_examples=40, deadline=None)
@given(points)
def test_distance_matrix_is_a_metric(pts):
    d = distance_matrix(FiniteMetricSpace(np.array(pts)))
    assert (d == d.T).all() and (np.diag(d) == 0).all()
    # d[i, k] <= d[i, j] + d[j, k]
    assert (d[:, None, :] <= d[:, :, None] + d[None, :, :] + 1e-9).all()


@settings(max_examples=30, deadline=None)
@given(points, st.floats(0.1, 10.0))
def test_brute_gamma2_homogeneous(pts, c):
    space = FiniteMetricSpace(np.array(pts))
    scaled = FiniteMetricSpace(np.array(pts) * c)
    # cover-tree levels are dyadic, so only the brute oracle is exactly homogeneous
    if space.n <= 6 and len(np.unique(space.points, axis=0)) == space.n:
        assert gamma2_bruteforce(scaled) == pytest.approx(c * gamma2_bruteforce(space), rel=1e-9, abs=1e-12)
    assert gamma2_upper(build_cover_tree(scaled)) >= 0
