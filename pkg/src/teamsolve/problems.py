"""Built-in test problems.

Each entry bundles a problem with a default strategy profile builder so the
CLI and the verification suite can run end to end without user input.
Config files may reference these by name ("builtin:<name>").
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import families as fam
from .policies import PolicyProfile, RegularPolicy
from .problem import (ActionSpec, TeamProblem, current_obs, own_history,
                      state_snapshot)


@dataclass(frozen=True)
class ProblemBundle:
    name: str
    problem: TeamProblem
    make_profile: Callable  # grid -> PolicyProfile


def _linear_obs_profile(problem, grid, gains):
    """u_i = clip(g_i * y_i(current)) for snapshot/current-obs stencils."""
    pols = []
    for i, g in enumerate(gains):
        pol = RegularPolicy.zeros(problem, i, grid, degree=1)
        for node in range(grid.steps + 1):
            C = pol.coefficients[node]
            C[1:, :] = g * np.eye(C.shape[0] - 1, C.shape[1])
        pols.append(pol)
    return PolicyProfile(pols)


def _zero_profile(problem, grid):
    return PolicyProfile([RegularPolicy.zeros(problem, i, grid, degree=0)
                          for i in range(problem.dm_count)])


def bounded_h_scalar() -> ProblemBundle:
    """Scalar diffusion, bounded observation map h = tanh(x), unit noise."""
    prob = TeamProblem(
        flavor="continuous", horizon=1.0, state_dim=1, noise_dim=1, dm_count=1,
        action_specs=[ActionSpec(1, bounds=[[-1.0, 1.0]])],
        drift=fam.affine([[-0.5]]),
        diffusion=fam.constant_matrix([[1.0]]),
        observation_maps=[fam.saturation(1.0, [[1.0]])],
        observation_noise_scales=[[[1.0]]],
        running_cost=fam.quadratic_cost([[2.0, 0.0], [0.0, 0.0]]),
        terminal_cost=fam.quadratic_terminal([[2.0]]),
        initial=fam.GaussianInitial([0.0], [[1.0]]),
        information=[current_obs(0)],
    )
    return ProblemBundle("bounded_h_scalar", prob,
                         lambda grid: _linear_obs_profile(prob, grid, [0.2]))


def scalar_lq_partial() -> ProblemBundle:
    """Scalar LQ with a linear observation channel."""
    q, r = 1.0, 1.0
    prob = TeamProblem(
        flavor="continuous", horizon=1.0, state_dim=1, noise_dim=1, dm_count=1,
        action_specs=[ActionSpec(1, bounds=[[-4.0, 4.0]])],
        drift=fam.affine([[-0.5]], [[[1.0]]]),
        diffusion=fam.constant_matrix([[0.5]]),
        observation_maps=[fam.affine([[0.7]])],
        observation_noise_scales=[[[1.0]]],
        running_cost=fam.quadratic_cost([[q, 0.0], [0.0, r]]),
        terminal_cost=fam.quadratic_terminal([[1.0]]),
        initial=fam.GaussianInitial([0.5], [[0.25]]),
        information=[current_obs(0)],
    )
    return ProblemBundle("scalar_lq_partial", prob,
                         lambda grid: _linear_obs_profile(prob, grid, [-0.3]))


def scalar_lq_full_info(a=-0.5, b=1.0, q=1.0, r=1.0, m=1.0, sigma=1.0,
                        x0=1.0) -> ProblemBundle:
    """Scalar LQ with perfect state information (observation channel idle)."""
    prob = TeamProblem(
        flavor="continuous", horizon=1.0, state_dim=1, noise_dim=1, dm_count=1,
        action_specs=[ActionSpec(1, bounds=[[-8.0, 8.0]])],
        drift=fam.affine([[a]], [[[b]]]),
        diffusion=fam.constant_matrix([[sigma]]),
        observation_maps=[fam.zero(1)],
        observation_noise_scales=[[[1.0]]],
        running_cost=fam.quadratic_cost([[q, 0.0], [0.0, r]]),
        terminal_cost=fam.quadratic_terminal([[m]]),
        initial=fam.PointInitial([x0]),
        information=[state_snapshot()],
    )
    return ProblemBundle("scalar_lq_full_info", prob, lambda grid: _zero_profile(prob, grid))


def two_dm_coupled() -> ProblemBundle:
    """Two DMs steering one scalar state through separate bounded channels."""
    M = np.array([[2.0, 0.0, 0.0],
                  [0.0, 0.4, 0.0],
                  [0.0, 0.0, 0.4]])
    prob = TeamProblem(
        flavor="continuous", horizon=1.0, state_dim=1, noise_dim=1, dm_count=2,
        action_specs=[ActionSpec(1, bounds=[[-2.0, 2.0]]),
                      ActionSpec(1, bounds=[[-2.0, 2.0]])],
        drift=fam.affine([[-1.0]], [[[1.0]], [[1.0]]]),
        diffusion=fam.constant_matrix([[0.5]]),
        observation_maps=[fam.saturation(1.0, [[1.0]]),
                          fam.saturation(0.8, [[0.5]])],
        observation_noise_scales=[[[1.0]], [[0.5]]],
        running_cost=fam.quadratic_cost(M),
        terminal_cost=fam.quadratic_terminal([[1.0]]),
        initial=fam.GaussianInitial([0.0], [[1.0]]),
        information=[current_obs(0), current_obs(1)],
    )
    return ProblemBundle("two_dm_coupled", prob,
                         lambda grid: _linear_obs_profile(prob, grid, [-0.2, -0.2]))


def discrete_lq(stages=3) -> ProblemBundle:
    """Discrete-time scalar LQ with a linear observation channel."""
    prob = TeamProblem(
        flavor="discrete", horizon=stages, state_dim=1, dm_count=1,
        action_specs=[ActionSpec(1, bounds=[[-4.0, 4.0]])],
        drift=fam.affine([[0.5]], [[[0.3]]]),
        gain=[[1.0]],
        observation_maps=[fam.affine([[0.5]])],
        observation_noise_scales=[[[1.0]]],
        running_cost=fam.quadratic_cost([[2.0, 0.0], [0.0, 2.0]]),
        terminal_cost=fam.quadratic_terminal([[2.0]]),
        initial=fam.GaussianInitial([0.0], [[1.0]]),
        information=[current_obs(0)],
    )
    return ProblemBundle("discrete_lq", prob,
                         lambda grid: _linear_obs_profile(prob, grid, [-0.3]))


def discrete_tanh(stages=3) -> ProblemBundle:
    """Discrete-time bounded-coefficient problem (h = tanh(x))."""
    prob = TeamProblem(
        flavor="discrete", horizon=stages, state_dim=1, dm_count=1,
        action_specs=[ActionSpec(1, bounds=[[-1.0, 1.0]])],
        drift=fam.saturation(0.5, [[1.0]], [[[0.3]]]),
        gain=[[1.0]],
        observation_maps=[fam.saturation(1.0, [[1.0]])],
        observation_noise_scales=[[[1.0]]],
        running_cost=fam.quadratic_cost([[2.0, 0.0], [0.0, 0.2]]),
        terminal_cost=fam.quadratic_terminal([[2.0]]),
        initial=fam.GaussianInitial([0.0], [[1.0]]),
        information=[own_history()],
    )
    return ProblemBundle("discrete_tanh", prob,
                         lambda grid: _linear_obs_profile(prob, grid, [0.1]))


def radner_team(sx=1.0, s1=1.0, s2=1.0, h_scale=0.4) -> ProblemBundle:
    """Static two-DM quadratic-Gaussian team with private noisy observations.

    Cost (u1 + u2 - x)^2 + u1^2 + u2^2; DM i sees y_i = c x + v_i at stage 0
    (c < 1/(sx sqrt(2)) keeps the reference-measure weights square-integrable).
    """
    M = np.array([[2.0, -2.0, -2.0],
                  [-2.0, 4.0, 2.0],
                  [-2.0, 2.0, 4.0]])
    prob = TeamProblem(
        flavor="discrete", horizon=1, state_dim=1, dm_count=2,
        action_specs=[ActionSpec(1, bounds=[[-5.0, 5.0]]),
                      ActionSpec(1, bounds=[[-5.0, 5.0]])],
        drift=fam.zero(1),
        gain=[[1.0]],
        observation_maps=[fam.affine([[h_scale]]), fam.affine([[h_scale]])],
        observation_noise_scales=[[[s1 * s1]], [[s2 * s2]]],
        running_cost=fam.quadratic_cost(M),
        terminal_cost=fam.zero_terminal(1),
        initial=fam.GaussianInitial([0.0], [[sx * sx]]),
        information=[current_obs(0), current_obs(1)],
    )
    return ProblemBundle("radner_team", prob, lambda grid: _zero_profile(prob, grid))


def radner_optimal_gains(sx=1.0, s1=1.0, s2=1.0, h_scale=0.4):
    """Best-linear gains from the 2x2 stationarity system (closed form).

    With y_i = c x + v_i the conditionals are E[x | y_i] = b_i y_i and
    E[y_j | y_i] = c b_i y_i, b_i = c sx^2 / (c^2 sx^2 + s_i^2), and the
    first-order conditions 2 g_i + c b_i g_j = b_i form a 2x2 linear system.
    """
    c = h_scale
    b1 = c * sx * sx / (c * c * sx * sx + s1 * s1)
    b2 = c * sx * sx / (c * c * sx * sx + s2 * s2)
    A = np.array([[2.0, c * b1], [c * b2, 2.0]])
    rhs = np.array([b1, b2])
    return np.linalg.solve(A, rhs)


def static_quadratic_full_info() -> ProblemBundle:
    """Both DMs observe x exactly; optimum is u_i = x / 3."""
    M = np.array([[2.0, -2.0, -2.0],
                  [-2.0, 4.0, 2.0],
                  [-2.0, 2.0, 4.0]])
    prob = TeamProblem(
        flavor="discrete", horizon=1, state_dim=1, dm_count=2,
        action_specs=[ActionSpec(1, bounds=[[-5.0, 5.0]]),
                      ActionSpec(1, bounds=[[-5.0, 5.0]])],
        drift=fam.zero(1),
        gain=[[1.0]],
        observation_maps=[fam.zero(1), fam.zero(1)],
        observation_noise_scales=[[[1.0]], [[1.0]]],
        running_cost=fam.quadratic_cost(M),
        terminal_cost=fam.zero_terminal(1),
        initial=fam.GaussianInitial([0.0], [[1.0]]),
        information=[state_snapshot(), state_snapshot()],
    )
    return ProblemBundle("static_quadratic_full_info", prob,
                         lambda grid: _zero_profile(prob, grid))


CATALOG = {
    "bounded_h_scalar": bounded_h_scalar,
    "scalar_lq_partial": scalar_lq_partial,
    "scalar_lq_full_info": scalar_lq_full_info,
    "two_dm_coupled": two_dm_coupled,
    "discrete_lq": discrete_lq,
    "discrete_tanh": discrete_tanh,
    "radner_team": radner_team,
    "static_quadratic_full_info": static_quadratic_full_info,
}

#: the cross-measure payoff identity is checked on exactly these
PAYOFF_IDENTITY_SUITE = ("bounded_h_scalar", "scalar_lq_partial",
                         "two_dm_coupled", "discrete_lq", "discrete_tanh")


def builtin(name) -> ProblemBundle:
    try:
        return CATALOG[name]()
    except KeyError:
        raise KeyError(f"unknown builtin problem {name!r}; "
                       f"choices: {sorted(CATALOG)}") from None
