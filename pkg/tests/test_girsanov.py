import numpy as np
import pytest

from conftest import scalar_discrete, scalar_problem
from teamsolve import families as fam
from teamsolve.errors import EffectiveSampleSizeWarning, ShapeMismatch
from teamsolve.girsanov import (LikelihoodProcess, effective_sample_size,
                                exponential_weight, node_means,
                                payoff_original, payoff_reference,
                                theta_weight)
from teamsolve.policies import PolicyProfile, RegularPolicy
from teamsolve.problem import DISCRETE
from teamsolve.problems import PAYOFF_IDENTITY_SUITE, builtin
from teamsolve.simulate import (ORIGINAL, REFERENCE, PathEnsemble, TimeGrid,
                                simulate_discrete, simulate_original,
                                simulate_reference, stage_grid)


def zero_profile(problem, grid):
    return PolicyProfile([RegularPolicy.zeros(problem, i, grid, degree=0)
                          for i in range(problem.dm_count)])


def test_zero_h_gives_unit_weights():
    prob = scalar_problem(diffusion=1.0)
    grid = TimeGrid(1.0, 10)
    ens = simulate_reference(prob, zero_profile(prob, grid), grid, 50, 2)
    w = exponential_weight(prob, None, ens)
    assert np.all(w.log_values == 0.0)


def test_one_step_log_weight_by_hand():
    # h = 1, D = 1, dy = 0.5, dt = 0.1 -> log w = 0.5 - 0.05 = 0.45
    prob = scalar_problem(diffusion=0.0, obs=fam.affine([[0.0]], c=[1.0]))
    grid = TimeGrid(0.1, 1)
    states = np.zeros((1, 2, 1))
    obs = [np.array([[[0.0], [0.5]]])]
    actions = [np.zeros((1, 2, 1))]
    ens = PathEnsemble(grid, "continuous", REFERENCE, 1, 0, states, obs,
                       actions, np.zeros((1, 1, 1)), [np.array([[[0.5 / np.sqrt(0.1)]]]) * np.sqrt(0.1)])
    w = exponential_weight(prob, None, ens)
    assert abs(w.log_values[0, 1] - 0.45) < 1e-12


def test_martingale_mean_bounded_h():
    bundle = builtin("bounded_h_scalar")
    grid = TimeGrid.from_dt(1.0, 0.01)
    prof = bundle.make_profile(grid)
    ens = simulate_reference(bundle.problem, prof, grid, 20000, 31)
    w = exponential_weight(bundle.problem, None, ens)
    mean, se = node_means(w)
    z = np.abs(mean - 1.0) / np.maximum(se, 1e-300)
    assert z[1:].max() < 4.0
    assert mean[0] == 1.0 and se[0] == 0.0


def test_theta_unit_when_trivial():
    prob = scalar_discrete(stages=3)
    ens = simulate_discrete(prob, zero_profile(prob, stage_grid(prob)), 100, 3,
                            REFERENCE)
    w = theta_weight(prob, None, ens)
    assert np.allclose(w.log_values, 0.0, atol=1e-12)
    assert w.flavor == DISCRETE


def test_theta_state_factor_by_hand():
    # f = 1 constant, G = 1, x(1) = 1: residual 0, factor exp(0.5 * 1^2)
    prob = scalar_discrete(stages=1, drift=fam.affine([[0.0]], c=[1.0]))
    grid = stage_grid(prob)
    states = np.array([[[0.0], [1.0]]])
    obs = [np.zeros((1, 2, 1))]
    actions = [np.zeros((1, 2, 1))]
    ens = PathEnsemble(grid, "discrete", REFERENCE, 1, 0, states, obs, actions)
    w = theta_weight(prob, None, ens)
    assert abs(np.exp(w.log_values[0, 1]) - np.exp(0.5)) < 1e-12


def test_theta_martingale_mean():
    bundle = builtin("discrete_tanh")
    grid = stage_grid(bundle.problem)
    prof = bundle.make_profile(grid)
    ens = simulate_discrete(bundle.problem, prof, 20000, 37, REFERENCE)
    w = theta_weight(bundle.problem, None, ens)
    mean, se = node_means(w)
    z = np.abs(mean - 1.0) / np.maximum(se, 1e-300)
    assert z.max() < 4.0


def test_payoff_reference_trivials():
    # l = 0, phi = 1: estimate = mean of terminal weight, close to 1
    prob = scalar_problem(obs=fam.saturation(1.0, [[1.0]]), diffusion=1.0,
                          terminal=fam.TerminalFunction(
                              lambda x: np.ones(x.shape[0]),
                              dx=lambda x: np.zeros_like(x)),
                          initial=fam.GaussianInitial([0.0], [[1.0]]))
    grid = TimeGrid(1.0, 20)
    prof = zero_profile(prob, grid)
    ens = simulate_reference(prob, prof, grid, 20000, 5)
    w = exponential_weight(prob, None, ens)
    est, se = payoff_reference(prob, None, ens, w)
    assert abs(est - 1.0) < 4 * se

    # l = 1, phi = 0, h = 0: exactly T with zero variance
    prob2 = scalar_problem(running=fam.constant_cost(1.0))
    ens2 = simulate_reference(prob2, prof, grid, 100, 5)
    w2 = exponential_weight(prob2, None, ens2)
    est2, se2 = payoff_reference(prob2, None, ens2, w2)
    assert est2 == pytest.approx(1.0, abs=1e-12)
    assert se2 == 0.0


def test_payoff_original_trivials():
    # deterministic path: l = 0, phi(x) = x, f = 0, sigma = 0, x0 = c
    prob = scalar_problem(diffusion=0.0, terminal=fam.linear_terminal([1.0]),
                          initial=fam.PointInitial([2.0]))
    grid = TimeGrid(1.0, 10)
    ens = simulate_original(prob, zero_profile(prob, grid), grid, 8, 1)
    est, se = payoff_original(prob, None, ens)
    assert est == pytest.approx(2.0, abs=1e-12) and se == 0.0


def test_payoff_original_brownian_energy():
    # l(x) = x^2, f = 0, sigma = 1, x0 = 0: J = integral of t dt = 0.5
    P = 30000
    prob = scalar_problem(diffusion=1.0,
                          running=fam.quadratic_cost([[2.0, 0.0], [0.0, 0.0]]))
    grid = TimeGrid(1.0, 50)
    ens = simulate_original(prob, zero_profile(prob, grid), grid, P, 23)
    est, se = payoff_original(prob, None, ens)
    assert abs(est - 0.5) < 3 * se


@pytest.mark.parametrize("name", PAYOFF_IDENTITY_SUITE)
def test_cross_measure_payoff_identity(name):
    bundle = builtin(name)
    prob = bundle.problem
    if prob.flavor == "continuous":
        grid = TimeGrid.from_dt(prob.horizon, 0.02)
        prof = bundle.make_profile(grid)
        ref = simulate_reference(prob, prof, grid, 30000, 101)
        w = exponential_weight(prob, None, ref)
        est_r, se_r = payoff_reference(prob, None, ref, w)
        orig = simulate_original(prob, prof, grid, 30000, 202)
        est_o, se_o = payoff_original(prob, None, orig)
    else:
        grid = stage_grid(prob)
        prof = bundle.make_profile(grid)
        ref = simulate_discrete(prob, prof, 30000, 101, REFERENCE)
        w = theta_weight(prob, None, ref)
        est_r, se_r = payoff_reference(prob, None, ref, w)
        orig = simulate_discrete(prob, prof, 30000, 202, ORIGINAL)
        est_o, se_o = payoff_original(prob, None, orig)
    tol = 3.0 * np.hypot(se_r, se_o)
    assert abs(est_r - est_o) <= tol, (name, est_r, est_o, tol)


def test_reverse_weight_exact():
    prob = scalar_problem(obs=fam.saturation(1.0, [[1.0]]), diffusion=1.0,
                          initial=fam.GaussianInitial([0.0], [[1.0]]))
    grid = TimeGrid(1.0, 10)
    ens = simulate_reference(prob, zero_profile(prob, grid), grid, 50, 2)
    w = exponential_weight(prob, None, ens)
    rev = w.reverse()
    assert np.all(w.log_values + rev.log_values == 0.0)
    assert rev.measure_pair == "original->reference"


def test_weights_ignore_cost_shift():
    base = scalar_problem(obs=fam.saturation(1.0, [[1.0]]), diffusion=1.0,
                          terminal=fam.quadratic_terminal([[2.0]]),
                          initial=fam.GaussianInitial([0.0], [[1.0]]))
    shifted = scalar_problem(obs=fam.saturation(1.0, [[1.0]]), diffusion=1.0,
                             terminal=fam.quadratic_terminal([[2.0]], c=17.0),
                             initial=fam.GaussianInitial([0.0], [[1.0]]))
    grid = TimeGrid(1.0, 10)
    prof = zero_profile(base, grid)
    ens = simulate_reference(base, prof, grid, 60, 4)
    w1 = exponential_weight(base, None, ens)
    w2 = exponential_weight(shifted, None, ens)
    assert np.array_equal(w1.log_values, w2.log_values)


def test_ess_warning_on_degenerate_weights():
    prob = scalar_problem(obs=fam.affine([[8.0]]), diffusion=1.0,
                          initial=fam.GaussianInitial([0.0], [[1.0]]))
    grid = TimeGrid(1.0, 20)
    prof = zero_profile(prob, grid)
    ens = simulate_reference(prob, prof, grid, 400, 8)
    w = exponential_weight(prob, None, ens)
    with pytest.warns(EffectiveSampleSizeWarning):
        payoff_reference(prob, None, ens, w)


def test_shape_mismatch_weights():
    prob = scalar_problem(diffusion=1.0)
    grid = TimeGrid(1.0, 10)
    prof = zero_profile(prob, grid)
    ens = simulate_reference(prob, prof, grid, 30, 2)
    bad = LikelihoodProcess(np.zeros((30, 5)))
    with pytest.raises(ShapeMismatch):
        payoff_reference(prob, None, ens, bad)


def test_effective_sample_size_uniform():
    assert effective_sample_size(np.zeros(100)) == pytest.approx(100.0)
