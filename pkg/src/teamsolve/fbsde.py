"""Continuous-time stochastic-maximum-principle machinery.

The adjoint pair solves a backward SDE whose drift is the state gradient of
the Hamiltonian

    H(t, x, psi, q11, q22, u) = <f, psi> + l + tr(q22' sigma) + tr(q11' h'),

with terminal condition psi(T) equal to the terminal-cost gradient.  The
martingale intensities are never time-stepped: at each backward node they
exist only as least-squares surrogates, estimated from the covariance of the
next-node adjoint with the stored noise increments.  Policy improvement
walks the per-DM conditional Hamiltonian gradient through the feature basis
with damping and a backtracking line search.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ExplodingAdjoint, MissingIncrements, ShapeMismatch
from .girsanov import payoff_original
from .pbp import SolveTrace, SweepRecord, _MAX_HALVINGS
from .policies import PolicyProfile, RegularPolicy
from .problem import CONTINUOUS, OBS, STATE
from .regression import RegressionSpec, fit as _fit, polynomial_design
from .simulate import (ORIGINAL, PathEnsemble, reevaluate, simulate_original,
                       stencil_features)

_PSI_BOUND = 1e6


# ---------------------------------------------------------------------------
# Hamiltonian and its derivatives
# ---------------------------------------------------------------------------

def hamiltonian(problem, t, x, psi, q11, q22, u):
    """H = <f, psi> + l + tr(q22' sigma) + tr(q11' h'), batched over paths.

    x, psi: [P, n]; q11: [P, k_total]; q22: [P, n, m]; u: per-DM [P, d_i].
    """
    x = np.atleast_2d(x)
    P, n = x.shape
    if psi.shape != (P, n) or q22.shape[:2] != (P, n):
        raise ShapeMismatch("psi/q22 shapes disagree with the state batch")
    val = np.einsum("pn,pn->p", problem.drift(t, x, u), psi)
    val = val + problem.running_cost(t, x, u)
    val = val + np.einsum("pnm,pnm->p", q22, problem.diffusion(t, x, u))
    off = 0
    for i, h in enumerate(problem.observation_maps):
        k = problem.obs_dims[i]
        val = val + np.einsum("pk,pk->p", q11[:, off:off + k],
                              np.asarray(h(t, x, u)))
        off += k
    return val


def hamiltonian_dx(problem, t, x, psi, q11, q22, u):
    """State gradient of H (the backward drift), [P, n]."""
    g = np.einsum("pnm,pn->pm", problem.drift.dx(t, x, u), psi)
    g = g + problem.running_cost.dx(t, x, u)
    g = g + np.einsum("pnma,pnm->pa", problem.diffusion.dx(t, x, u), q22)
    off = 0
    for i, h in enumerate(problem.observation_maps):
        k = problem.obs_dims[i]
        g = g + np.einsum("pka,pk->pa", h.dx(t, x, u), q11[:, off:off + k])
        off += k
    return g


def hamiltonian_du(problem, t, x, psi, q11, q22, u, i):
    """Gradient of H in DM i's action, [P, d_i]."""
    g = np.einsum("pnd,pn->pd", problem.drift.du(t, x, u, i), psi)
    g = g + problem.running_cost.du(t, x, u, i)
    g = g + np.einsum("pnmd,pnm->pd", problem.diffusion.du(t, x, u, i), q22)
    off = 0
    for j, h in enumerate(problem.observation_maps):
        k = problem.obs_dims[j]
        g = g + np.einsum("pkd,pk->pd", h.du(t, x, u, i), q11[:, off:off + k])
        off += k
    return g


# ---------------------------------------------------------------------------
# adjoint ensemble
# ---------------------------------------------------------------------------

@dataclass
class AdjointEnsemble:
    """Adjoint paths and per-node regression surrogates for the intensities.

    psi[P, M+1, n] (terminal node exact per path); cost_to_go[P, M+1];
    q22[P, M, n, m] and q11[P, M, k_total] hold the surrogate evaluations at
    the path points; the fitted predictors themselves are kept for
    evaluation anywhere.
    """

    psi: np.ndarray
    cost_to_go: np.ndarray
    q22: np.ndarray
    q11: np.ndarray
    q22_surrogate: list
    q11_surrogate: list
    features_used: str = "state"


def _bsde_features(problem, ensemble, node):
    """Full-state regression features, plus observation features any policy
    conditions on (deduplicated by source label)."""
    cols = [ensemble.states[:, node]]
    seen = set()
    for i in range(problem.dm_count):
        for kind, idx, j in problem.information[i].labels(i, node, ensemble.grid):
            if kind == STATE or (kind, idx, j) in seen:
                continue
            seen.add((kind, idx, j))
            cols.append(ensemble.observations[idx][:, j])
    return np.concatenate(cols, axis=1)


def bsde_solve(problem, profile, ensemble: PathEnsemble,
               reg: RegressionSpec = None, implicit_iters=0,
               implicit_tol=1e-8) -> AdjointEnsemble:
    """Backward regression pass for the adjoint pair on stored paths.

    At node j the per-path target psi_{j+1} + H_x dt is projected onto the
    feature basis; the diffusion-paired intensity comes from regressing
    psi_{j+1} dW' / dt and the observation-paired one from regressing the
    cost-to-go times dB' / dt (then unscaling by the noise factor).  The
    explicit variant evaluates H_x at psi_{j+1}; implicit_iters > 0 refits
    with the freshly regressed psi_j up to the given tolerance.
    """
    if ensemble.flavor != CONTINUOUS or ensemble.measure != ORIGINAL:
        raise ShapeMismatch("bsde_solve needs an original-measure continuous ensemble")
    if ensemble.dW is None or ensemble.dB is None:
        raise MissingIncrements("bsde_solve needs stored noise increments")
    reg = reg or RegressionSpec("polynomial", degree=1)
    grid = ensemble.grid
    P, M, dt = ensemble.n_paths, grid.steps, grid.dt
    n, m = problem.state_dim, problem.noise_dim
    k_tot = sum(problem.obs_dims)
    times = grid.times

    psi = np.empty((P, M + 1, n))
    ctg = np.empty((P, M + 1))
    q22 = np.zeros((P, M, n, m))
    q11 = np.zeros((P, M, k_tot))
    q22_fits, q11_fits = [None] * M, [None] * M

    xT = ensemble.states[:, M]
    psi[:, M] = problem.terminal_cost.dx(xT)
    ctg[:, M] = problem.terminal_cost(xT)
    dB_all = np.concatenate(ensemble.dB, axis=2)  # [P, M, k_tot]

    Dhi = []  # block-diagonal D^{-1/2} factors per node
    for j in range(M):
        blocks = [problem.noise_scales[i].factors(float(times[j]))[1]
                  for i in range(problem.dm_count)]
        Dhi.append(blocks)

    for j in range(M - 1, -1, -1):
        t = float(times[j])
        x = ensemble.states[:, j]
        u = [a[:, j] for a in ensemble.actions]
        feats = _bsde_features(problem, ensemble, j)

        cov22 = np.einsum("pn,pm->pnm", psi[:, j + 1], ensemble.dW[:, j]) / dt
        fit22 = _fit(cov22.reshape(P, n * m), feats, reg)
        q22_fits[j] = fit22
        q22[:, j] = fit22(feats).reshape(P, n, m)

        cov11 = ctg[:, j + 1:j + 2] * dB_all[:, j] / dt  # estimates q11 D^{1/2}
        fit11 = _fit(cov11, feats, reg)
        q11_fits[j] = fit11
        raw = fit11(feats)
        off = 0
        for i, k in enumerate(problem.obs_dims):
            q11[:, j, off:off + k] = raw[:, off:off + k] @ Dhi[j][i].T
            off += k

        psi_hat = psi[:, j + 1]
        for _ in range(max(implicit_iters, 0) + 1):
            Hx = hamiltonian_dx(problem, t, x, psi_hat, q11[:, j], q22[:, j], u)
            target = psi[:, j + 1] + Hx * dt
            fit_psi = _fit(target if n > 1 else target[:, 0], feats, reg)
            new_psi = fit_psi(feats)
            new_psi = new_psi if n > 1 else new_psi[:, None]
            if np.max(np.abs(new_psi - psi_hat)) <= implicit_tol and psi_hat is not psi[:, j + 1]:
                psi_hat = new_psi
                break
            psi_hat = new_psi
        psi[:, j] = psi_hat
        worst = np.abs(psi[:, j]).max()
        if not np.isfinite(worst) or worst > _PSI_BOUND:
            raise ExplodingAdjoint(f"|psi| = {worst:.3g} at node {j}")

        ell = problem.running_cost(t, x, u)
        fit_ctg = _fit(ctg[:, j + 1] + ell * dt, feats, reg)
        ctg[:, j] = fit_ctg(feats)

    return AdjointEnsemble(psi, ctg, q22, q11, q22_fits, q11_fits)


# ---------------------------------------------------------------------------
# conditional Hamiltonian residuals
# ---------------------------------------------------------------------------

@dataclass
class HamiltonianReport:
    """Conditional Hamiltonian-gradient residuals per (DM, grid node)."""

    per_dm_per_node_residual: np.ndarray  # [N, M]

    @property
    def max_residual(self):
        return float(self.per_dm_per_node_residual.max())

    def to_csv(self, path):
        arr = self.per_dm_per_node_residual
        with open(path, "w") as fh:
            fh.write("dm,node,residual\n")
            for k in range(arr.shape[0]):
                for j in range(arr.shape[1]):
                    fh.write(f"{k},{j},{arr[k, j]:.17g}\n")


def conditional_hamiltonian_residual(problem, profile, ensemble,
                                     adjoint: AdjointEnsemble,
                                     reg: RegressionSpec = None) -> HamiltonianReport:
    """Project each DM's Hamiltonian action-gradient onto its information.

    Per (i, t): regress dH/du^i (using the adjoint and intensity surrogates
    at the current actions) on DM i's features; the residual is the mean
    norm of the box-feasible part of the conditional gradient.
    """
    reg = reg or RegressionSpec("polynomial", degree=1)
    grid = ensemble.grid
    P, M = ensemble.n_paths, grid.steps
    N = problem.dm_count
    out = np.zeros((N, M))
    times = grid.times
    for j in range(M):
        t = float(times[j])
        x = ensemble.states[:, j]
        u = [a[:, j] for a in ensemble.actions]
        for i in range(N):
            g = hamiltonian_du(problem, t, x, adjoint.psi[:, j],
                               adjoint.q11[:, j], adjoint.q22[:, j], u, i)
            feats = stencil_features(problem, i, j, grid,
                                     ensemble.observations, ensemble.states)
            cond = _fit(g if g.shape[1] > 1 else g[:, 0], feats, reg)(feats)
            cond = cond if cond.ndim > 1 else cond[:, None]
            spec = problem.action_specs[i]
            lo, hi = spec.bounds[:, 0], spec.bounds[:, 1]
            width = np.maximum(hi - lo, 1.0)
            proj = cond.copy()
            ui = u[i]
            proj[ui <= lo + 1e-9 * width] = np.minimum(
                proj[ui <= lo + 1e-9 * width], 0.0)
            proj[ui >= hi - 1e-9 * width] = np.maximum(
                proj[ui >= hi - 1e-9 * width], 0.0)
            out[i, j] = np.linalg.norm(proj, axis=1).mean()
    return HamiltonianReport(out)


# ---------------------------------------------------------------------------
# policy improvement along the conditional Hamiltonian gradient
# ---------------------------------------------------------------------------

def policy_gradient(problem, profile, ensemble, adjoint):
    """Chain-rule payoff gradient per DM per coefficient block.

    d J / d C_{i,j} = E[ dH/du^i(t_j) phi(features_{i,j})' ] dt for interior
    nodes; the terminal node only carries its trapezoid share of the running
    cost.  Tied policies accumulate one shared block.
    """
    grid = ensemble.grid
    M, dt = grid.steps, grid.dt
    times = grid.times
    grads = []
    for i, pol in enumerate(profile):
        nodes = range(M + 1)
        blocks = [np.zeros_like(c) for c in pol.coefficients]
        for j in nodes:
            t = float(times[j])
            x = ensemble.states[:, j]
            u = [a[:, j] for a in ensemble.actions]
            if j < M:
                g = hamiltonian_du(problem, t, x, adjoint.psi[:, j],
                                   adjoint.q11[:, j], adjoint.q22[:, j], u, i)
                weight = dt if j > 0 else dt  # dynamics effect is full-step
            else:
                g = problem.running_cost.du(t, x, u, i)
                weight = 0.5 * dt
            feats = stencil_features(problem, i, j, grid,
                                     ensemble.observations, ensemble.states)
            phi = polynomial_design(feats, pol.degree)
            gblock = weight * (phi.T @ g) / ensemble.n_paths
            blocks[0 if pol.tied else j] += gblock
        grads.append(blocks)
    return grads


def _gauss_newton_scale(problem, profile, ensemble, i, j, pol):
    """Per-node curvature E[phi H_uu phi'] dt; falls back to identity scale."""
    x = ensemble.states[:, j]
    u = [a[:, j] for a in ensemble.actions]
    hess = getattr(problem.running_cost, "hess_uu", None)
    if hess is None:
        return None
    H = hess(0.0, x, u, i)  # [P, d, d]
    feats = stencil_features(problem, i, j, ensemble.grid,
                             ensemble.observations, ensemble.states)
    phi = polynomial_design(feats, pol.degree)
    # block-diagonal curvature in (basis x action) coordinates
    G = np.einsum("pa,pb->ab", phi, phi) / ensemble.n_paths
    Hbar = H.mean(axis=0)
    return G, Hbar


def mp_improve(problem, profile, steps, reg: RegressionSpec = None,
               n_paths=10000, seed=0, grid=None, damping=1.0):
    """Iterate: simulate, solve the adjoint, step every DM's coefficients
    along the negative conditional Hamiltonian gradient with backtracking.

    Returns (profile, SolveTrace); zero steps returns the profile unchanged.
    """
    if problem.flavor != CONTINUOUS:
        raise ShapeMismatch("mp_improve drives the continuous flavor")
    if grid is None:
        raise ValueError("mp_improve needs an explicit time grid")
    reg = reg or RegressionSpec("polynomial", degree=1)
    trace = SolveTrace()
    profile = profile.copy()
    for step in range(steps):
        ens = simulate_original(problem, profile, grid, n_paths, seed + step)
        J0, se0 = payoff_original(problem, None, ens)
        adjoint = bsde_solve(problem, profile, ens, reg)
        rep = conditional_hamiltonian_residual(problem, profile, ens, adjoint, reg)
        grads = policy_gradient(problem, profile, ensemble=ens, adjoint=adjoint)

        new_profile = profile.copy()
        gnorm = 0.0
        for i, pol in enumerate(new_profile):
            scale = _gauss_newton_scale(problem, profile, ens, i, 0, pol)
            for b, gblock in enumerate(grads[i]):
                gnorm += float((gblock**2).sum())
                if scale is not None:
                    G, Hbar = scale
                    dt_w = grid.dt * (grid.steps if pol.tied else 1.0)
                    lhs = np.kron(Hbar, G) * dt_w
                    lam = 1e-8 * (np.abs(np.diag(lhs)).max() + 1.0)
                    step_f = np.linalg.solve(lhs + lam * np.eye(lhs.shape[0]),
                                             -gblock.T.ravel())
                    pol.coefficients[b][...] += damping * step_f.reshape(
                        gblock.T.shape).T
                else:
                    pol.coefficients[b][...] -= damping * gblock

        alpha = 1.0
        accepted = False
        flags = ()
        base = profile
        for _ in range(_MAX_HALVINGS):
            cand = PolicyProfile([
                _blend(base[i], new_profile[i], alpha)
                for i in range(len(base))])
            ens_c = reevaluate(problem, cand, ens)
            J_new, _ = payoff_original(problem, None, ens_c)
            if np.isfinite(J_new) and J_new <= J0 + 2 * se0 and J_new < J0 + 1e-12 * max(abs(J0), 1.0):
                profile = cand
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            flags = (("mp", step, "LineSearchFailed"),)
        trace.append(SweepRecord(step, J0, se0, rep.max_residual,
                                 (float(np.sqrt(gnorm)),), flags))
        if not accepted and np.sqrt(gnorm) < 1e-10:
            break
    return profile, trace


def _blend(old, new, alpha):
    out = old.copy()
    for b in range(len(out.coefficients)):
        out.coefficients[b][...] = (1 - alpha) * old.coefficients[b] \
            + alpha * new.coefficients[b]
    return out
