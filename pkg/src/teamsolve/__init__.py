"""Solvers for decentralized stochastic dynamic team decision problems.

The package implements a likelihood-weighted static reduction of dynamic
team problems under a reference measure, person-by-person policy iteration,
a regression-based stochastic-maximum-principle loop, and a deterministic
two-stage benchmark with a nonclassical information pattern.
"""

from .problem import (ActionSpec, InformationStructure, TeamProblem,
                      ValidationReport, current_obs, delayed_sharing,
                      information_view, own_history, snapshot, state_snapshot,
                      validate)
from .simulate import (PathEnsemble, TimeGrid, ensemble_features,
                       increment_diagnostics, load_ensemble, save_ensemble,
                       simulate_discrete, simulate_original,
                       simulate_reference, stage_grid)

__version__ = "0.1.0"
