import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import scalar_problem
from teamsolve import families as fam
from teamsolve.errors import FutureAccess, MalformedProblem, SingularNoise
from teamsolve.problem import (OBS, STATE, ActionSpec, InformationStructure,
                               TeamProblem, current_obs, delayed_sharing,
                               information_view, own_history, snapshot,
                               validate)
from teamsolve.simulate import TimeGrid


def test_validate_degenerate_all_pass():
    prob = scalar_problem(diffusion=1.0)
    report = validate(prob)
    assert report.all_passed
    assert len(report.checks) >= 5


def test_validate_is_pure():
    prob = scalar_problem()
    assert validate(prob) == validate(prob)


def test_zero_noise_scale_rejected():
    prob = scalar_problem(noise=1.0)
    bad = scalar_problem(noise=1.0)
    bad.noise_scales[0]._fn = lambda t: np.array([[0.0]])
    with pytest.raises(SingularNoise):
        validate(bad)
    assert validate(prob).all_passed


def test_observation_dimension_mismatch():
    # h returns 2 components but the noise scale declares k = 1
    h = fam.CoefficientFunction(lambda t, x, u: np.concatenate([x, x], axis=1), 2)
    prob = scalar_problem(obs=h)
    with pytest.raises(MalformedProblem):
        validate(prob)


def test_dm_count_mismatch():
    with pytest.raises(MalformedProblem):
        TeamProblem(
            flavor="continuous", horizon=1.0, state_dim=1, dm_count=2,
            action_specs=[ActionSpec(1, bounds=[[-1, 1]])],
            drift=fam.zero(1), diffusion=fam.constant_matrix([[1.0]]),
            observation_maps=[fam.zero(1)],
            observation_noise_scales=[[[1.0]]],
            running_cost=fam.constant_cost(0.0),
            terminal_cost=fam.zero_terminal(1),
            initial=fam.PointInitial([0.0]),
            information=[current_obs(0)],
        )


def test_action_spec_bounds():
    with pytest.raises(MalformedProblem):
        ActionSpec(1, bounds=[[1.0, -1.0]])
    with pytest.raises(MalformedProblem):
        ActionSpec(1, bounds=[[0.0, np.inf]])
    with pytest.raises(MalformedProblem):
        ActionSpec(1)
    grid = ActionSpec(1, atoms=[[-1.0], [0.0], [1.0]])
    assert grid.is_grid
    snapped = grid.clip(np.array([[0.4], [0.6], [-3.0]]))
    assert snapped.tolist() == [[0.0], [1.0], [-1.0]]


# ---------------------------------------------------------------------------
# information views
# ---------------------------------------------------------------------------

def _obs_paths(grid, k=1, n_dm=2):
    # deterministic ramps so samples identify (dm, node)
    M = grid.steps
    out = []
    for i in range(n_dm):
        path = np.arange(M + 1, dtype=float)[:, None] + 100.0 * i
        out.append(np.tile(path, (1, k)))
    return out


def test_own_history_at_time_zero():
    grid = TimeGrid(1.0, 10)
    obs = _obs_paths(grid)
    feats = information_view(own_history(), 0, 0.0, obs, grid)
    assert feats.tolist() == [0.0]


def test_delayed_sharing_excludes_undelivered_samples():
    grid = TimeGrid(1.0, 10)
    obs = _obs_paths(grid)
    struct = delayed_sharing([(1, 0.5)])
    feats = information_view(struct, 0, 0.3, obs, grid)
    # 0.3 - 0.5 < 0: nothing from DM 1 yet, only own history 0..0.3
    assert feats.tolist() == [0.0, 1.0, 2.0, 3.0]


def test_snapshot_stencil_samples():
    grid = TimeGrid(2.0, 20)
    obs = _obs_paths(grid)
    struct = snapshot([((OBS, 0), 0.0), ((OBS, 1), 0.4)])
    feats = information_view(struct, 0, 1.0, obs, grid)
    # y^0(1.0) = node 10, y^1(0.6) = node 6 on dm 1 (offset 100)
    assert feats.tolist() == [10.0, 106.0]


def test_snapshot_negative_lag_is_future_access():
    with pytest.raises(FutureAccess):
        snapshot([((OBS, 0), -0.1)])


def test_state_source_requires_states():
    grid = TimeGrid(1.0, 4)
    obs = _obs_paths(grid)
    struct = snapshot([((STATE,), 0.0)])
    from teamsolve.errors import IncompatibleStencil
    with pytest.raises(IncompatibleStencil):
        information_view(struct, 0, 0.5, obs, grid)
    states = np.linspace(0, 1, 5)[:, None] * 7.0
    feats = information_view(struct, 0, 0.5, obs, grid, states=states)
    assert feats.tolist() == [3.5]


@settings(max_examples=40, deadline=None)
@given(j=st.integers(0, 16), jp=st.integers(0, 16), stride=st.integers(1, 4),
       kind=st.sampled_from(["own", "shared"]))
def test_nested_kinds_give_prefix_feature_sets(j, jp, stride, kind):
    if j > jp:
        j, jp = jp, j
    grid = TimeGrid(1.0, 16)
    struct = own_history(stride) if kind == "own" else \
        delayed_sharing([(1, 2.0 / 16.0)], stride=stride)
    early = struct.labels(0, j, grid)
    late = struct.labels(0, jp, grid)
    assert set(early) <= set(late)
    # and never reads past the current node
    assert all(node <= j for _, _, node in early)


def test_batched_information_view():
    grid = TimeGrid(1.0, 4)
    obs = [np.arange(10.0).reshape(2, 5, 1), np.arange(10.0).reshape(2, 5, 1) + 100]
    feats = information_view(current_obs(0), 0, 0.5, obs, grid)
    assert feats.shape == (2, 1)
    assert feats[:, 0].tolist() == [2.0, 7.0]


# ---------------------------------------------------------------------------
# serialization round trip
# ---------------------------------------------------------------------------

def test_problem_spec_round_trip():
    from teamsolve.problems import builtin
    for name in ("bounded_h_scalar", "discrete_lq", "radner_team"):
        prob = builtin(name).problem
        spec = prob.spec_dict()
        back = TeamProblem.from_spec(spec)
        assert back.spec_dict() == spec


def test_programmatic_problem_rejects_serialization():
    prob = scalar_problem(obs=fam.CoefficientFunction(lambda t, x, u: x, 1))
    from teamsolve.errors import ConfigError
    with pytest.raises(ConfigError):
        prob.spec_dict()
