"""Radon-Nikodym likelihood processes linking reference and original measures.

The continuous-time weight is the exponential martingale driven by the
observation innovations; the discrete-time weight is the running product of
Gaussian density ratios for the state transition and observation channels.
Everything is accumulated in the log domain; exponentiation happens only
inside weighted means, under a max shift.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import (EffectiveSampleSizeWarning, MissingIncrements,
                     ShapeMismatch)
from .problem import CONTINUOUS, DISCRETE
from .simulate import REFERENCE, PathEnsemble, stencil_features

ESS_WARN_FRACTION = 0.05


@dataclass
class LikelihoodProcess:
    """Per-path log likelihood trajectories along the grid.

    log_values[p, j] is the accumulated log weight at node j.  For the
    continuous flavor the weight starts at exactly 1 (log 0); for the
    discrete flavor node 0 already carries the stage-0 observation factor
    (its state part is trivially 1, since x(0) has the same law under both
    measures).
    """

    log_values: np.ndarray
    measure_pair: str = "reference->original"
    flavor: str = CONTINUOUS

    @property
    def n_paths(self):
        return self.log_values.shape[0]

    def terminal_weights(self):
        """(shift m, w = exp(log - m)) so that true weights are exp(m) * w."""
        logs = self.log_values[:, -1]
        m = float(logs.max())
        return m, np.exp(logs - m)

    def reverse(self):
        """Weights of the reverse change of measure: exact log-domain negation."""
        pair = "->".join(reversed(self.measure_pair.split("->")))
        return LikelihoodProcess(-self.log_values, pair, self.flavor)


def effective_sample_size(log_weights):
    m = log_weights.max()
    w = np.exp(log_weights - m)
    return float(w.sum() ** 2 / (w**2).sum())


def _warn_ess(log_weights, where):
    n_eff = effective_sample_size(log_weights)
    n = len(log_weights)
    if n_eff < ESS_WARN_FRACTION * n:
        warnings.warn(f"{where}: effective sample size {n_eff:.1f} of {n} paths",
                      EffectiveSampleSizeWarning)
    return n_eff


def _ensemble_actions(problem, policy, ensemble):
    """Stored actions, or the given profile re-applied to the stored paths."""
    if policy is None:
        return ensemble.actions
    actions = []
    for i, pol in enumerate(policy):
        a = np.empty((ensemble.n_paths, ensemble.n_nodes, problem.action_specs[i].dim))
        for j in range(ensemble.n_nodes):
            feats = stencil_features(problem, i, j, ensemble.grid,
                                     ensemble.observations, ensemble.states)
            a[:, j] = pol.actions(feats, j, None)
        actions.append(a)
    return actions


# ---------------------------------------------------------------------------
# continuous-time exponential weight
# ---------------------------------------------------------------------------

def exponential_weight(problem, policy, ensemble: PathEnsemble) -> LikelihoodProcess:
    """Log of the exponential observation martingale along reference paths.

    log W(t_j) = sum_{l<j} sum_i [ h_i' D_i^{-1} dy_i  -  0.5 h_i' D_i^{-1} h_i dt ]
    with h evaluated at left endpoints.
    """
    if ensemble.flavor != CONTINUOUS:
        raise ShapeMismatch("exponential_weight needs a continuous-flavor ensemble")
    if ensemble.dB is None:
        raise MissingIncrements("ensemble lacks stored observation increments")
    grid = ensemble.grid
    P, M, dt = ensemble.n_paths, grid.steps, grid.dt
    actions = _ensemble_actions(problem, policy, ensemble)
    logs = np.zeros((P, M + 1))
    times = grid.times
    for j in range(M):
        t = float(times[j])
        x = ensemble.states[:, j]
        u = [a[:, j] for a in actions]
        term = np.zeros(P)
        for i, h in enumerate(problem.observation_maps):
            hij = np.asarray(h(t, x, u))
            _, _, Dinv, _ = problem.noise_scales[i].factors(t)
            dy = ensemble.observations[i][:, j + 1] - ensemble.observations[i][:, j]
            hD = hij @ Dinv
            term += np.einsum("pk,pk->p", hD, dy) - 0.5 * dt * np.einsum("pk,pk->p", hD, hij)
        logs[:, j + 1] = logs[:, j] + term
    return LikelihoodProcess(logs, "reference->original", CONTINUOUS)


# ---------------------------------------------------------------------------
# discrete-time density-ratio weight
# ---------------------------------------------------------------------------

def theta_weight(problem, policy, ensemble: PathEnsemble) -> LikelihoodProcess:
    """Running product of Gaussian density ratios along discrete reference paths.

    Stage tau contributes an observation factor for tau >= 0 and a state
    transition factor for tau >= 1, each with its Jacobian term:

      obs:   exp(-0.5 |D^{-1/2}(y - h)|^2 + 0.5 |y|^2) / |det D|^{1/2}
      state: exp(-0.5 |G^{-1}(x' - f)|^2 + 0.5 |x'|^2) / |det G|
    """
    if ensemble.flavor != DISCRETE:
        raise ShapeMismatch("theta_weight needs a discrete-flavor ensemble")
    grid = ensemble.grid
    P, T = ensemble.n_paths, grid.steps
    actions = _ensemble_actions(problem, policy, ensemble)
    logs = np.zeros((P, T + 1))
    acc = np.zeros(P)
    for tau in range(T + 1):
        x = ensemble.states[:, tau]
        u = [a[:, tau] for a in actions]
        if tau >= 1:
            uprev = [a[:, tau - 1] for a in actions]
            G, Ginv, logdetG = problem.gain.factors(tau - 1)
            resid = (x - problem.drift(float(tau - 1), ensemble.states[:, tau - 1], uprev)) @ Ginv.T
            acc += 0.5 * np.einsum("pn,pn->p", x, x) \
                - 0.5 * np.einsum("pn,pn->p", resid, resid) - logdetG
        for i, h in enumerate(problem.observation_maps):
            _, Dhalf_inv, _, logdetD = problem.noise_scales[i].factors(float(tau))
            y = ensemble.observations[i][:, tau]
            v = (y - np.asarray(h(float(tau), x, u))) @ Dhalf_inv.T
            acc += 0.5 * np.einsum("pk,pk->p", y, y) \
                - 0.5 * np.einsum("pk,pk->p", v, v) - 0.5 * logdetD
        logs[:, tau] = acc
    return LikelihoodProcess(logs, "reference->original", DISCRETE)


# ---------------------------------------------------------------------------
# payoffs under either measure
# ---------------------------------------------------------------------------

def _cost_terms(problem, ensemble, actions):
    """(running term per path, terminal term per path) without weights.

    Continuous: trapezoid of l(t_j) over the grid and phi(x(T)).
    Discrete: sum of l(t) over stages 0..T-1 and phi(x(T)) -- but the
    running term is returned per node for weight placement.
    """
    grid = ensemble.grid
    P = ensemble.n_paths
    times = grid.times
    nodes = grid.n_nodes
    ell = np.empty((P, nodes))
    for j in range(nodes):
        u = [a[:, j] for a in actions]
        ell[:, j] = problem.running_cost(float(times[j]), ensemble.states[:, j], u)
    phi = np.asarray(problem.terminal_cost(ensemble.states[:, -1]))
    return ell, phi


def _trapezoid_weights(n_nodes, dt):
    w = np.full(n_nodes, dt)
    w[0] *= 0.5
    w[-1] *= 0.5
    return w


def payoff_reference(problem, policy, ensemble: PathEnsemble,
                     weights: LikelihoodProcess):
    """Likelihood-weighted payoff estimate on a reference-measure ensemble.

    Continuous flavor pairs the weight at each node with the running cost
    there; discrete flavor weights the whole stage-cost sum by the terminal
    ratio.  Returns (estimate, stderr).
    """
    if ensemble.measure != REFERENCE:
        raise ShapeMismatch("payoff_reference expects a reference-measure ensemble")
    if weights.log_values.shape != (ensemble.n_paths, ensemble.n_nodes):
        raise ShapeMismatch("weights and ensemble disagree on paths or grid")
    actions = _ensemble_actions(problem, policy, ensemble)
    ell, phi = _cost_terms(problem, ensemble, actions)
    logv = weights.log_values
    shift = float(logv.max())
    w = np.exp(logv - shift)
    if ensemble.flavor == CONTINUOUS:
        tw = _trapezoid_weights(ensemble.n_nodes, ensemble.grid.dt)
        per_path = (w * ell) @ tw + w[:, -1] * phi
    else:
        stage_cost = ell[:, :-1].sum(axis=1) + phi
        per_path = w[:, -1] * stage_cost
    per_path = per_path * np.exp(shift)
    _warn_ess(logv[:, -1], "payoff_reference")
    est = float(per_path.mean())
    stderr = float(per_path.std(ddof=1) / np.sqrt(ensemble.n_paths)) \
        if ensemble.n_paths > 1 else 0.0
    return est, stderr


def payoff_original(problem, policy, ensemble: PathEnsemble):
    """Unweighted payoff estimate on an original-measure ensemble."""
    if ensemble.measure != "original":
        raise ShapeMismatch("payoff_original expects an original-measure ensemble")
    actions = _ensemble_actions(problem, policy, ensemble)
    ell, phi = _cost_terms(problem, ensemble, actions)
    if ensemble.flavor == CONTINUOUS:
        tw = _trapezoid_weights(ensemble.n_nodes, ensemble.grid.dt)
        per_path = ell @ tw + phi
    else:
        per_path = ell[:, :-1].sum(axis=1) + phi
    est = float(per_path.mean())
    stderr = float(per_path.std(ddof=1) / np.sqrt(ensemble.n_paths)) \
        if ensemble.n_paths > 1 else 0.0
    return est, stderr


def node_means(weights: LikelihoodProcess):
    """Sample mean and stderr of the weight at every node (martingale check)."""
    logs = weights.log_values
    shift = logs.max(axis=0, keepdims=True)
    w = np.exp(logs - shift) * np.exp(shift)
    mean = w.mean(axis=0)
    se = w.std(axis=0, ddof=1) / np.sqrt(w.shape[0])
    return mean, se
