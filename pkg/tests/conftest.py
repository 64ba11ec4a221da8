import numpy as np
import pytest

from teamsolve import families as fam
from teamsolve.problem import ActionSpec, TeamProblem, current_obs, state_snapshot


def scalar_problem(*, drift=None, diffusion=1.0, obs=None, noise=1.0,
                   running=None, terminal=None, initial=None, info=None,
                   bounds=(-2.0, 2.0)):
    """One-DM scalar continuous problem with overridable pieces."""
    return TeamProblem(
        flavor="continuous", horizon=1.0, state_dim=1, noise_dim=1, dm_count=1,
        action_specs=[ActionSpec(1, bounds=[list(bounds)])],
        drift=drift if drift is not None else fam.zero(1),
        diffusion=fam.constant_matrix([[diffusion]]) if np.isscalar(diffusion) else diffusion,
        observation_maps=[obs if obs is not None else fam.zero(1)],
        observation_noise_scales=[[[noise]]],
        running_cost=running if running is not None else fam.constant_cost(0.0),
        terminal_cost=terminal if terminal is not None else fam.zero_terminal(1),
        initial=initial if initial is not None else fam.PointInitial([0.0]),
        information=[info if info is not None else current_obs(0)],
    )


def scalar_discrete(*, stages=2, drift=None, gain=1.0, obs=None, noise=1.0,
                    running=None, terminal=None, initial=None, info=None,
                    bounds=(-2.0, 2.0)):
    return TeamProblem(
        flavor="discrete", horizon=stages, state_dim=1, dm_count=1,
        action_specs=[ActionSpec(1, bounds=[list(bounds)])],
        drift=drift if drift is not None else fam.zero(1),
        gain=[[gain]] if np.isscalar(gain) else gain,
        observation_maps=[obs if obs is not None else fam.zero(1)],
        observation_noise_scales=[[[noise]]],
        running_cost=running if running is not None else fam.constant_cost(0.0),
        terminal_cost=terminal if terminal is not None else fam.zero_terminal(1),
        initial=initial if initial is not None else fam.PointInitial([0.0]),
        information=[info if info is not None else current_obs(0)],
    )
