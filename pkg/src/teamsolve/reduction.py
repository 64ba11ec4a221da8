"""Static reduction of discrete-time dynamic team problems.

Under the reference measure the whole trajectory is decision-free noise and
the payoff is a likelihood-weighted expectation, so a dynamic problem turns
into a static one: policies only enter through the weight and the stage
costs.  This module provides the equivalent static payoff, regression-based
conditional expectations, and the per-(DM, stage) stationarity residuals of
the component-wise conditional variational inequalities.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import NonsmoothCostWarning, ShapeMismatch
from .girsanov import payoff_reference, theta_weight
from .problem import DISCRETE
from .regression import RegressionSpec, fit as _fit_regression
from .simulate import (REFERENCE, reevaluate, simulate_discrete,
                       stencil_features)

__all__ = ["RegressionSpec", "StationarityReport", "conditional_expectation",
           "static_payoff", "stationarity_residual", "weighted_stage_terms"]


def conditional_expectation(targets, features, spec: RegressionSpec):
    """Least-squares fit of targets on basis(features); evaluable anywhere."""
    return _fit_regression(targets, features, spec)


@dataclass
class StationarityReport:
    """Residuals of the conditional variational inequalities, per (DM, stage)."""

    per_dm_per_stage_residual: np.ndarray  # [N, T]
    flags: tuple = ()

    @property
    def max_residual(self):
        return float(self.per_dm_per_stage_residual.max())

    def to_csv(self, path):
        arr = self.per_dm_per_stage_residual
        with open(path, "w") as fh:
            fh.write("dm,stage,residual\n")
            for k in range(arr.shape[0]):
                for t in range(arr.shape[1]):
                    fh.write(f"{k},{t},{arr[k, t]:.17g}\n")


def static_payoff(problem, profile, n_paths=20000, seed=0):
    """Equivalent static payoff: reference simulation + density-ratio weight."""
    if problem.flavor != DISCRETE:
        raise ShapeMismatch("static_payoff applies to the discrete flavor")
    ens = simulate_discrete(problem, profile, n_paths, seed, REFERENCE)
    w = theta_weight(problem, None, ens)
    return payoff_reference(problem, None, ens, w)


# ---------------------------------------------------------------------------
# per-stage terms of the weighted payoff, for cheap local perturbation
# ---------------------------------------------------------------------------

class weighted_stage_terms:
    """Per-path decomposition of the weighted payoff for a discrete reference
    ensemble: log-weight factors and stage costs, recomputable one stage at a
    time when a single action coordinate is perturbed."""

    def __init__(self, problem, ensemble, actions=None):
        if ensemble.flavor != DISCRETE or ensemble.measure != REFERENCE:
            raise ShapeMismatch("needs a discrete reference ensemble")
        self.problem = problem
        self.ensemble = ensemble
        self.actions = actions if actions is not None else ensemble.actions
        T = ensemble.grid.steps
        P = ensemble.n_paths
        self.T = T
        self.obs_logf = np.zeros((P, T + 1))
        self.state_logf = np.zeros((P, T + 1))  # index tau, used for tau >= 1
        self.stage_cost = np.zeros((P, T + 1))  # l(t) for t <= T-1, else 0
        for tau in range(T + 1):
            u = [a[:, tau] for a in self.actions]
            self.obs_logf[:, tau] = self._obs_logf(tau, u)
            if tau >= 1:
                uprev = [a[:, tau - 1] for a in self.actions]
                self.state_logf[:, tau] = self._state_logf(tau, uprev)
            if tau < T:
                self.stage_cost[:, tau] = problem.running_cost(
                    float(tau), ensemble.states[:, tau], u)
        self.terminal = np.asarray(problem.terminal_cost(ensemble.states[:, -1]))

    def _obs_logf(self, tau, u):
        ens, prob = self.ensemble, self.problem
        x = ens.states[:, tau]
        out = np.zeros(ens.n_paths)
        for i, h in enumerate(prob.observation_maps):
            _, Dhalf_inv, _, logdetD = prob.noise_scales[i].factors(float(tau))
            y = ens.observations[i][:, tau]
            v = (y - np.asarray(h(float(tau), x, u))) @ Dhalf_inv.T
            out += 0.5 * np.einsum("pk,pk->p", y, y) \
                - 0.5 * np.einsum("pk,pk->p", v, v) - 0.5 * logdetD
        return out

    def _state_logf(self, tau, uprev):
        ens, prob = self.ensemble, self.problem
        x = ens.states[:, tau]
        G, Ginv, logdetG = prob.gain.factors(tau - 1)
        resid = (x - prob.drift(float(tau - 1), ens.states[:, tau - 1], uprev)) @ Ginv.T
        return 0.5 * np.einsum("pn,pn->p", x, x) \
            - 0.5 * np.einsum("pn,pn->p", resid, resid) - logdetG

    def log_weight(self):
        return self.obs_logf.sum(axis=1) + self.state_logf[:, 1:].sum(axis=1)

    def total_cost(self):
        return self.stage_cost[:, :self.T].sum(axis=1) + self.terminal

    def weighted_value(self):
        return np.exp(self.log_weight()) * self.total_cost()

    def perturbed_value(self, dm, stage, delta):
        """Weighted payoff with u^dm(stage) shifted by delta [d] on all paths.

        Only the stage-local weight factors and cost change; everything else
        is reused, which makes finite differences exact and cheap.
        """
        u = [a[:, stage].copy() for a in self.actions]
        u[dm] = u[dm] + delta
        d_obs = self._obs_logf(stage, u) - self.obs_logf[:, stage]
        d_state = 0.0
        if stage + 1 <= self.T:
            d_state = self._state_logf(stage + 1, u) - self.state_logf[:, stage + 1]
        logw = self.log_weight() + d_obs + d_state
        cost = self.total_cost()
        if stage < self.T:
            new_l = self.problem.running_cost(
                float(stage), self.ensemble.states[:, stage], u)
            cost = cost + (new_l - self.stage_cost[:, stage])
        return np.exp(logw) * cost

    def substituted_value(self, dm, stage, action):
        """Weighted payoff with u^dm(stage) replaced by a fixed action row."""
        u = [a[:, stage].copy() for a in self.actions]
        u[dm] = np.broadcast_to(np.atleast_1d(action),
                                u[dm].shape).astype(float).copy()
        d_obs = self._obs_logf(stage, u) - self.obs_logf[:, stage]
        d_state = 0.0
        if stage + 1 <= self.T:
            d_state = self._state_logf(stage + 1, u) - self.state_logf[:, stage + 1]
        logw = self.log_weight() + d_obs + d_state
        cost = self.total_cost()
        if stage < self.T:
            new_l = self.problem.running_cost(
                float(stage), self.ensemble.states[:, stage], u)
            cost = cost + (new_l - self.stage_cost[:, stage])
        return np.exp(logw) * cost


_FD_REL = 1e-4


def _action_scale(spec):
    widths = spec.bounds[:, 1] - spec.bounds[:, 0]
    return max(float(np.max(widths)) * 0.5, 1.0)


def stationarity_residual(problem, profile, reg: RegressionSpec,
                          n_paths=20000, seed=0) -> StationarityReport:
    """Residuals of the conditional variational inequalities at the profile.

    For each (DM k, stage t) the per-path derivative of the weighted payoff
    integrand with respect to u^k(t) (central finite differences on the
    common reference paths) is regressed on DM k's features at stage t; the
    residual is the mean norm of the conditional gradient component that
    feasible directions do not block.  Grid action sets use the conditional
    best-substitution improvement gap instead of a gradient.
    """
    if problem.flavor != DISCRETE:
        raise ShapeMismatch("stationarity_residual applies to the discrete flavor")
    ens = simulate_discrete(problem, profile, n_paths, seed, REFERENCE)
    terms = weighted_stage_terms(problem, ens)
    T = ens.grid.steps
    N = problem.dm_count
    residuals = np.zeros((N, T))
    flags = []
    for k in range(N):
        spec = problem.action_specs[k]
        feats_cache = {}
        for t in range(T):
            feats = stencil_features(problem, k, t, ens.grid,
                                     ens.observations, ens.states)
            feats_cache[t] = feats
            if spec.is_grid:
                residuals[k, t] = _grid_gap_residual(terms, k, t, spec, feats, reg)
            else:
                residuals[k, t], flag = _box_gradient_residual(
                    terms, k, t, spec, feats, reg)
                if flag:
                    flags.append((k, t, "nonsmooth"))
    if flags:
        warnings.warn(f"finite-difference gradients disagreed at {flags}",
                      NonsmoothCostWarning)
    return StationarityReport(residuals, tuple(flags))


def _box_gradient_residual(terms, k, t, spec, feats, reg):
    P = terms.ensemble.n_paths
    d = spec.dim
    eps = _FD_REL * _action_scale(spec)
    grad = np.empty((P, d))
    nonsmooth = False
    for a in range(d):
        e = np.zeros(d)
        e[a] = eps
        up = terms.perturbed_value(k, t, e)
        dn = terms.perturbed_value(k, t, -e)
        grad[:, a] = (up - dn) / (2 * eps)
        # step-halving disagreement probe on a small batch
        B = min(P, 512)
        gh = (terms.perturbed_value(k, t, e / 2)[:B]
              - terms.perturbed_value(k, t, -e / 2)[:B]) / eps
        denom = np.abs(grad[:B, a]).mean() + 1e-12
        if np.abs(gh - grad[:B, a]).mean() / denom > 0.2:
            nonsmooth = True
    cond = _fit_regression(grad, feats, reg)(feats)
    cond = np.atleast_2d(cond.T).T if cond.ndim == 1 else cond
    u = terms.actions[k][:, t]
    lo, hi = spec.bounds[:, 0], spec.bounds[:, 1]
    width = hi - lo
    at_lo = u <= lo + 1e-9 * np.maximum(width, 1.0)
    at_hi = u >= hi - 1e-9 * np.maximum(width, 1.0)
    proj = cond.copy()
    proj[at_lo] = np.minimum(proj[at_lo], 0.0)
    proj[at_hi] = np.maximum(proj[at_hi], 0.0)
    return float(np.linalg.norm(proj, axis=1).mean()), nonsmooth


def _grid_gap_residual(terms, k, t, spec, feats, reg):
    atoms = spec.atoms
    P = terms.ensemble.n_paths
    values = np.empty((P, len(atoms)))
    for a, atom in enumerate(atoms):
        values[:, a] = terms.substituted_value(k, t, atom)
    cond = _fit_regression(values, feats, reg)(feats)  # [P, A]
    u = terms.actions[k][:, t]
    d2 = ((u[:, None, :] - atoms[None, :, :]) ** 2).sum(axis=2)
    cur = cond[np.arange(P), np.argmin(d2, axis=1)]
    gap = cur - cond.min(axis=1)
    return float(np.maximum(gap, 0.0).mean())
