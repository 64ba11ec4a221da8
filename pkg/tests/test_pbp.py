import numpy as np
import pytest

from teamsolve.finite import (FiniteStaticTeam, demo_team, enumerate_optimum,
                              exact_pbp_solve, payoff_exact, stationarity_gap)
from teamsolve.pbp import (CERT_BUDGET, CERT_PBP, CERT_TEAM, MEAN, MODE,
                           SAMPLED, certify_convexity, pbp_sweep,
                           realization_report, realize_regular, solve_team)
from teamsolve.policies import (LabelCells, PolicyProfile, RegularPolicy,
                                RelaxedPolicy)
from teamsolve.problems import builtin, radner_optimal_gains
from teamsolve.reduction import RegressionSpec
from teamsolve.simulate import stage_grid


def zero_profile(problem):
    grid = stage_grid(problem)
    return PolicyProfile([RegularPolicy.zeros(problem, i, grid, degree=1)
                          for i in range(problem.dm_count)])


# ---------------------------------------------------------------------------
# static quadratic team with full information: optimum u_i = x / 3
# ---------------------------------------------------------------------------

def test_static_quadratic_converges_to_x_over_3():
    prob = builtin("static_quadratic_full_info").problem
    profile = zero_profile(prob)
    spec = RegressionSpec("polynomial", degree=1)
    prof, trace, cert = solve_team(prob, profile, spec, budget=8, tol=2e-2,
                                   n_paths=20000, seed=5)
    for i in range(2):
        coefs = prof[i].coefficients[0]
        assert abs(coefs[1, 0] - 1.0 / 3.0) < 1e-2
        assert abs(coefs[0, 0]) < 1e-2
    assert cert == CERT_TEAM


def test_monotone_descent_within_noise():
    prob = builtin("static_quadratic_full_info").problem
    profile = zero_profile(prob)
    spec = RegressionSpec("polynomial", degree=1)
    payoffs = []
    for sweep in range(4):
        profile, rec = pbp_sweep(prob, profile, spec, n_paths=10000, seed=3)
        payoffs.append((rec.payoff, rec.stderr))
    for (a, sa), (b, sb) in zip(payoffs, payoffs[1:]):
        assert b <= a + 2 * (sa + sb)


# ---------------------------------------------------------------------------
# Radner team: converged linear gains match the 2x2 stationarity system
# ---------------------------------------------------------------------------

def test_radner_linear_gain_recovery():
    prob = builtin("radner_team").problem
    profile = zero_profile(prob)
    spec = RegressionSpec("polynomial", degree=1)
    prof, trace, cert = solve_team(prob, profile, spec, budget=8, tol=3e-2,
                                   n_paths=40000, seed=7)
    gains = radner_optimal_gains()
    for i in range(2):
        coefs = prof[i].coefficients[0]
        assert abs(coefs[1, 0] - gains[i]) < 1e-2, (i, coefs[1, 0], gains[i])
        assert abs(coefs[0, 0]) < 1e-2
    assert cert == CERT_TEAM


# ---------------------------------------------------------------------------
# one-DM problem: plain policy optimization vs a grid-scan oracle
# ---------------------------------------------------------------------------

def test_one_dm_matches_grid_scan():
    from teamsolve.pbp import _FrozenEvaluator
    from teamsolve.problems import discrete_lq
    bundle = discrete_lq(stages=1)
    prob = bundle.problem
    profile = zero_profile(prob)
    spec = RegressionSpec("polynomial", degree=1)
    prof, trace, cert = solve_team(prob, profile, spec, budget=8, tol=2e-2,
                                   n_paths=20000, seed=9)

    # oracle: scan the 1-parameter family u = g * y on one shared ensemble
    grid = stage_grid(prob)
    ev = _FrozenEvaluator(prob, grid, 20000, 77, profile)
    est, _ = ev.payoff(prof)
    best = np.inf
    for g in np.linspace(-1.0, 1.0, 81):
        pol = RegularPolicy.zeros(prob, 0, grid, degree=1)
        for node in range(grid.steps + 1):
            pol.coefficients[node][1, 0] = g
        val, _ = ev.payoff(PolicyProfile([pol]))
        best = min(best, val)
    assert est <= best + 1e-2


# ---------------------------------------------------------------------------
# finite teams: exact conditioning and the enumeration oracle
# ---------------------------------------------------------------------------

def test_finite_team_solve_hits_enumeration_optimum():
    team = demo_team()
    tables_bf, val_bf = enumerate_optimum(team)
    prof, trace, cert = solve_team(team, team.uniform_profile(), budget=32,
                                   tol=1e-8)
    val_solver = payoff_exact(team, team.tables(prof))
    assert val_solver <= val_bf + 1e-6
    gaps = stationarity_gap(team, team.tables(prof))
    assert gaps.max() <= 1e-8
    assert cert == CERT_PBP


def test_finite_argmax_invariant_under_positive_scaling():
    team = demo_team()
    tables, _, _ = exact_pbp_solve(team)
    scaled = FiniteStaticTeam(team.probs, team.xs, team.obs_labels,
                              team.action_grids,
                              lambda x, u: 3.5 * team.cost(x, u))
    tables_scaled, _, _ = exact_pbp_solve(scaled)
    for a, b in zip(tables, tables_scaled):
        assert np.array_equal(a, b)


def test_relaxed_never_worse_than_regular_on_finite():
    team = demo_team()
    _, val_pure = enumerate_optimum(team)
    tables, val_relaxed, _ = exact_pbp_solve(team)
    assert val_relaxed <= val_pure + 1e-12


def test_budget_zero_returns_init():
    team = demo_team()
    init = team.uniform_profile()
    prof, trace, cert = solve_team(team, init, budget=0)
    assert cert == CERT_BUDGET
    assert prof is init
    assert trace.records == []


# ---------------------------------------------------------------------------
# realization of relaxed strategies
# ---------------------------------------------------------------------------

def _point_mass_policy(team, dm, atom_indices):
    cells = LabelCells(np.arange(team.n_labels[dm], dtype=float)[:, None])
    tab = np.zeros((team.n_labels[dm], len(team.action_grids[dm])))
    tab[np.arange(team.n_labels[dm]), atom_indices] = 1.0
    return RelaxedPolicy(team.action_spec(dm), cells, team.action_grids[dm], [tab])


def test_point_mass_realization_is_identity():
    team = demo_team()
    idx = [2, 0, 1, 2]
    pol = _point_mass_policy(team, 0, idx)
    for mode in (MEAN, MODE, SAMPLED):
        reg = realize_regular(pol, mode, seed=4)
        actions = np.asarray(reg.table[0])
        assert np.array_equal(actions, team.action_grids[0][idx])


def test_mean_realization_of_symmetric_mixture_linear_payoff():
    # two atoms +-1 mixed 50/50, payoff linear in the action: the mean
    # realization (atom nearest 0) gives the same expected payoff
    atoms = np.array([[-1.0], [0.0], [1.0]])
    team = FiniteStaticTeam(
        probs=[0.5, 0.5], xs=[[0.0], [1.0]], obs_labels=[[0, 0]],
        action_grids=[atoms],
        cost=lambda x, u: 2.0 * u[0][:, 0] + x[:, 0])
    cells = LabelCells([[0.0]])
    tab = np.array([[0.5, 0.0, 0.5]])
    pol = RelaxedPolicy(team.action_spec(0), cells, atoms, [tab])
    realized, rel, reg, gap = realization_report(team, PolicyProfile([pol]))
    assert abs(gap) < 1e-12
    assert np.array_equal(np.asarray(realized[0].table[0]), [[0.0]])


def test_mixing_over_indifferent_atoms_realizes_with_zero_gap():
    # payoff-equivalent atoms: a strictly mixing optimum realizes exactly,
    # matching the enumeration gap (zero) between best mixture and best pure
    atoms = np.array([[-1.0], [1.0]])
    team = FiniteStaticTeam(
        probs=[1.0], xs=[[0.0]], obs_labels=[[0]], action_grids=[atoms],
        cost=lambda x, u: u[0][:, 0] ** 2)
    cells = LabelCells([[0.0]])
    pol = RelaxedPolicy(team.action_spec(0), cells, atoms,
                        [np.array([[0.5, 0.5]])])
    _, val_pure = enumerate_optimum(team)
    relaxed_val = payoff_exact(team, [np.array([[0.5, 0.5]])])
    realized, rel, reg, gap = realization_report(team, PolicyProfile([pol]))
    assert relaxed_val == pytest.approx(val_pure)
    assert gap == pytest.approx(relaxed_val - val_pure, abs=1e-12)


# ---------------------------------------------------------------------------
# certificates
# ---------------------------------------------------------------------------

def test_certificate_team_optimal_for_convex_quadratic():
    assert certify_convexity(builtin("static_quadratic_full_info").problem)
    assert certify_convexity(builtin("radner_team").problem)


def test_certificate_downgrades_for_nonconvex_cost():
    prob = builtin("static_quadratic_full_info").problem
    prob.running_cost = type(prob.running_cost)(
        lambda t, x, u: -x[:, 0] ** 2 + u[0][:, 0] ** 2 + u[1][:, 0] ** 2, 0)
    prob.convexity_declared = True  # author lies; the sampled check catches it
    assert not certify_convexity(prob)


def test_certificate_not_team_for_grid_actions():
    team = demo_team()
    assert not certify_convexity(team)
