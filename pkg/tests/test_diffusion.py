import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from bars_lab.diffusion import (
    ControlledDiffusionSpec,
    GridDiscretization,
    InfeasibleMeshError,
    SmoothTestFunction,
    coupling_experiment,
    diffusion_mdp,
    discretize_kernel,
    domain_gamma2,
    euler_maruyama_path,
    feasibility_bound,
    forward_hitting_time,
    jump_law,
    kernel_moments,
    mesh_for_tolerance,
    moment_remainders,
    operator_consistency_error,
    parabolic_grid,
    support_gamma2,
)


def brownian(drift=0.0, sigma=1.0, lo=-2.0, hi=2.0, **kw):
    return ControlledDiffusionSpec(1, [[drift]], [lo], [hi], "constant", {}, "constant", {"sigma": [sigma]}, **kw)


def test_trinomial_probabilities():
    spec = brownian()
    grid = GridDiscretization.for_spec(spec, 1.0)
    _, probs = jump_law(spec, grid, 0.25, 0)
    # second moment delta / h^2 = 0.25 split evenly
    np.testing.assert_allclose(probs[:, 0], np.tile([0.125, 0.75, 0.125], (grid.n_points, 1)))


def test_kernel_rows_are_distributions():
    spec = ControlledDiffusionSpec(2, [[0.3, -0.2], [0.0, 0.0]], [-1, -1], [1, 1], "ou", {"theta": 1.0},
                                   "constant", {"sigma": [0.6, 0.5]})
    grid = parabolic_grid(spec, 1 / 32)
    k = discretize_kernel(spec, grid, 1 / 32)
    assert k.shape == (grid.n_points * 2, grid.n_points)
    np.testing.assert_allclose(np.asarray(k.sum(axis=1)).ravel(), 1.0, atol=1e-12)
    assert k.data.min() >= 0


def test_constant_drift_moment_remainders():
    # exact mean, and covariance off by the squared mean step (b delta)^2
    spec = brownian(drift=1.0, sigma=1.0)
    grid = GridDiscretization.for_spec(spec, 0.5)
    for delta in (1 / 16, 1 / 32, 1 / 64):
        r1, r2 = moment_remainders(spec, grid, delta)
        assert r1 <= 1e-12
        assert r2 == pytest.approx(delta**2, rel=1e-9)


def test_infeasible_mesh_raises():
    spec = brownian(sigma=0.5)
    grid = GridDiscretization.for_spec(spec, 0.25)
    bound = feasibility_bound(spec, grid)
    assert bound == pytest.approx(0.25)
    with pytest.raises(InfeasibleMeshError):
        discretize_kernel(spec, grid, 2 * bound)
    with pytest.raises(InfeasibleMeshError):
        discretize_kernel(brownian(drift=4.0, sigma=0.1), GridDiscretization.for_spec(brownian(), 0.5), 1e-3)


def test_grid_refinement_nests():
    grid = GridDiscretization.from_spacing([-1.0], [1.0], 0.25)
    fine = grid.refined()
    assert grid.n_points == 9 and fine.n_points == 17
    pts = grid.points()
    np.testing.assert_allclose(fine.points()[fine.nearest(pts)], pts)


def test_euler_maruyama_by_hand():
    spec = ControlledDiffusionSpec(1, [[0.0]], [-5], [5], "ou", {"theta": 2.0}, "constant", {"sigma": [0.5]})
    path = euler_maruyama_path(spec, [1.0], [0, 0], 0.1, np.array([[0.2], [-0.4]]))
    # x1 = 1 - 2*1*0.1 + 0.5*0.2 = 0.9, x2 = 0.9 - 0.18 - 0.2 = 0.52
    np.testing.assert_allclose(path[:, 0], [1.0, 0.9, 0.52])


def test_euler_maruyama_seeded_reproducible():
    spec = brownian()
    a = euler_maruyama_path(spec, [0.0], [0] * 20, 0.01, np.random.default_rng(5))
    b = euler_maruyama_path(spec, [0.0], [0] * 20, 0.01, np.random.default_rng(5))
    assert (a == b).all()


def test_mesh_rule():
    assert mesh_for_tolerance(0.1, 1.0, 2.0) == pytest.approx(0.01 / 16)
    with pytest.raises(ValueError):
        mesh_for_tolerance(0.0, 1.0, 2.0)


def test_gamma2_on_reference_lattice():
    spec = brownian(lo=-1.0, hi=1.0, reward_kind="box", reward_params={"lo": [-0.25], "hi": [0.25]})
    full = domain_gamma2(spec)
    small = support_gamma2(spec)
    assert 0 < small < full
    assert support_gamma2(brownian(lo=-1.0, hi=1.0)) == 0.0


def test_coupling_no_violations_small():
    spec = ControlledDiffusionSpec(1, [[0.0]], [-2], [2], "ou", {"theta": 0.5}, "constant", {"sigma": [0.5]})
    grid = parabolic_grid(spec, 1 / 64)
    rep = coupling_experiment(spec, grid, 1 / 64, 32, 2000, 3)
    assert rep.violation_fraction <= 0.01
    assert rep.k_hat > 0
    again = coupling_experiment(spec, grid, 1 / 64, 32, 2000, 3)
    assert (rep.max_deviation == again.max_deviation).all()
    with pytest.raises(ValueError):
        coupling_experiment(spec, grid, 1 / 64, 32, 10, 3)


def test_forward_hitting_small_problem():
    spec = ControlledDiffusionSpec(1, [[-1.0], [0.0], [1.0]], [-1], [1], "ou", {"theta": 1.0}, "constant",
                                   {"sigma": [0.5]}, "bump", {"value": 1.0, "center": [0.0], "width": 1.0})
    delta = 1 / 256
    grid = parabolic_grid(spec, delta)
    res = forward_hitting_time(spec, grid, grid.refined(), 0.2, delta=delta)
    assert res.hit
    assert res.errors[res.tau] <= 0.2 < res.errors[res.tau - 1]


def test_generator_consistency_on_quadratic():
    spec = brownian(drift=0.5, sigma=0.8)
    grid = GridDiscretization.for_spec(spec, 0.25)
    quad = SmoothTestFunction("quadratic", {"Q": np.eye(1)})
    # for x^2 the chain generator is exact up to the b^2 delta term
    errs = [operator_consistency_error(spec, grid, d, quad) for d in (1 / 16, 1 / 32)]
    assert errs[1] == pytest.approx(errs[0] / 2, rel=1e-6)


@settings(max_examples=25, deadline=None)
@given(st.floats(-1.0, 1.0), st.floats(0.3, 1.5), st.sampled_from([1 / 16, 1 / 32, 1 / 64]))
def test_kernel_matches_mean_and_second_moment(b, sigma, delta):
    spec = brownian(drift=b, sigma=sigma)
    grid = parabolic_grid(spec, delta)
    try:
        k = discretize_kernel(spec, grid, delta)
    except InfeasibleMeshError:
        assume(False)
    mean, second = kernel_moments(k, grid, 1)
    inner = grid.interior_mask()
    np.testing.assert_allclose(mean[inner, 0, 0], b * delta, atol=1e-12)
    np.testing.assert_allclose(second[inner, 0, 0, 0], sigma**2 * delta, rtol=1e-10)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_diffusion_mdp_discount(seed):
    rng = np.random.default_rng(seed)
    beta = float(rng.uniform(0.1, 2.0))
    spec = brownian(discount_rate=beta, reward_kind="constant", reward_params={"value": 1.0})
    grid = parabolic_grid(spec, 1 / 32)
    mdp = diffusion_mdp(spec, grid, 1 / 32)
    assert mdp.discount == pytest.approx(math.exp(-beta / 32))
    np.testing.assert_allclose(mdp.reward, 1 / 32)


def test_fitted_tail_constant_stable_in_steps():
    from bars_lab.fixtures import load_fixture

    from .conftest import FIXTURES

    fx = load_fixture(FIXTURES / "ou1d_coupling.fixture")
    delta = 2.0**-6
    grid = parabolic_grid(fx.spec, delta)
    k = {n: coupling_experiment(fx.spec, grid, delta, n, 10_000, 17).k_hat for n in (32, 64, 128)}
    assert 0.8 <= k[32] / k[64] <= 1.2
    assert 0.8 <= k[128] / k[64] <= 1.2
