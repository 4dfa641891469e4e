import numpy as np
import pytest

from bars_lab.config import E_MISSING, E_VALUE, ConfigError, dump, parse_text
from bars_lab.fixtures import (
    DiffusionFixture,
    FixtureMissingError,
    MetricFixture,
    dump_fixture,
    fixture_schema,
    load_fixture,
    loop_mdp,
    loop_policy_values,
)
from bars_lab.mdp import policy_evaluation

from .conftest import FIXTURES


def test_all_fixtures_load_and_roundtrip():
    for path in sorted(FIXTURES.glob("*.fixture")):
        fx = load_fixture(path)
        assert isinstance(fx, (DiffusionFixture, MetricFixture))
        text = dump_fixture(path)
        again = parse_text(text, fixture_schema)
        assert dump(again, fixture_schema(again.values)) == text
        assert again["fixture"]["id"] == fx.id


def test_missing_fixture():
    with pytest.raises(FixtureMissingError):
        load_fixture(FIXTURES / "absent.fixture")


def write(tmp_path, body):
    p = tmp_path / "f.fixture"
    p.write_text(body)
    return p


BASE = "[fixture]\nid = t\nkind = diffusion\n[diffusion]\nactions = 0\nbox_lo = -1\nbox_hi = 1\n"


def test_lipschitz_required_and_checked(tmp_path):
    with pytest.raises(ConfigError) as info:
        load_fixture(write(tmp_path, BASE))
    assert info.value.code == E_MISSING and info.value.key == "lipschitz"
    with pytest.raises(ConfigError) as info:
        load_fixture(write(tmp_path, BASE + "drift = ou\ntheta = 2\nlipschitz = 1\n"))
    assert info.value.code == E_VALUE


def test_vector_length_checked(tmp_path):
    with pytest.raises(ConfigError, match="sigma"):
        load_fixture(write(tmp_path, BASE.replace("actions = 0", "dimension = 2\nactions = 0, 0")
                           + "sigma = 1, 2, 3\nlipschitz = 0\n"))


def test_sparse_region_and_query():
    fx = load_fixture(FIXTURES / "gapped.fixture")
    mdp, grid = fx.tabular()
    states = fx.sparse_states(grid)
    np.testing.assert_allclose(grid.points()[states, 0], np.arange(-0.5, 0.5001, 0.125))
    assert grid.points()[fx.query_state(grid), 0] == -0.75
    base, _ = fx.tabular(include_sparse=False)
    diff = mdp.reward - base.reward
    assert diff[states, 2].tolist() == [1.0] * len(states)
    assert np.count_nonzero(diff) == len(states)


def test_scaled_fixture_dilates_box_and_reward():
    fx = load_fixture(FIXTURES / "ou1d.fixture").scaled(1.5)
    assert fx.spec.box_hi[0] == 1.5
    assert fx.spec.reward_params["width"] == 1.5


@pytest.mark.parametrize("reward", [0.3, 1.2])
def test_loop_values_match_policy_evaluation(reward):
    mdp = loop_mdp(reward, 0.9, 1.0, 0.5)
    loop_v, goal_v = loop_policy_values(reward, 0.9, 1.0, 0.5)
    assert policy_evaluation(mdp, np.array([0, 0, 0, 0]))[1] == pytest.approx(loop_v)
    assert policy_evaluation(mdp, np.array([1, 1, 1, 0]))[1] == pytest.approx(goal_v)
