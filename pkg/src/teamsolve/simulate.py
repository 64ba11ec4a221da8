"""Monte Carlo path generation under reference and original measures.

Under the reference measure, observations are pure scaled noise independent
of every decision; under the original measure they carry the signal drift.
Euler-Maruyama with the explicit causality convention: the action at a node
is computed from observations at nodes <= that node, then the increments
advance.  Noise increments are stored with the ensemble so reweighting and
adjoint regression reuse the exact same randomness.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from ._rng import (PURPOSE_OBS_NOISE, PURPOSE_RELAXED, PURPOSE_STATE_NOISE,
                   normal_block, uniform_block)
from .errors import IncompatibleStencil, MalformedProblem, ShapeMismatch
from .problem import CONTINUOUS, DISCRETE, OBS, STATE, TeamProblem

REFERENCE = "reference"
ORIGINAL = "original"


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid 0 = t_0 < ... < t_M = end with step dt = end / steps."""

    end: float
    steps: int

    def __post_init__(self):
        if self.end <= 0 or self.steps < 1:
            raise ValueError("need end > 0 and steps >= 1")
        if abs(self.steps * self.dt - self.end) > 1e-9 * max(self.end, 1.0):
            raise ValueError("steps * dt must reproduce the horizon to 1e-9")

    @property
    def dt(self):
        return self.end / self.steps

    @property
    def n_nodes(self):
        return self.steps + 1

    @property
    def times(self):
        return np.linspace(0.0, self.end, self.steps + 1)

    @staticmethod
    def from_dt(end, dt):
        steps = int(round(end / dt))
        if steps < 1 or abs(steps * dt - end) > 1e-9 * max(end, 1.0):
            raise IncompatibleStencil(f"dt {dt} does not divide horizon {end}")
        return TimeGrid(float(end), steps)

    def node_of(self, t):
        j = int(round(t / self.dt))
        if j < 0 or j > self.steps or abs(j * self.dt - t) > 1e-9 * max(self.end, 1.0):
            raise IncompatibleStencil(f"time {t} is not a grid node")
        return j

    def nodes_of_duration(self, duration):
        r = duration / self.dt
        j = int(round(r))
        if abs(j - r) > 1e-9:
            raise IncompatibleStencil(f"duration {duration} is off-grid")
        return j


def stage_grid(problem):
    """Unit-step grid for a discrete problem's stages 0..T."""
    T = int(problem.horizon)
    return TimeGrid(float(T), T)


@dataclass
class PathEnsemble:
    """A Monte Carlo batch of state / observation / action trajectories.

    states [P, M+1, n]; observations per DM [P, M+1, k_i]; actions per DM
    [P, M+1, d_i]; dW [P, M, m] and dB per DM [P, M, k_i] hold the Brownian
    increments (continuous flavor) or driving normals (discrete flavor:
    dW [P, T, n] drives stages 1..T, dB per DM [P, T+1, k_i] drives stages
    0..T).  Treat as immutable once returned.
    """

    grid: TimeGrid
    flavor: str
    measure: str
    n_paths: int
    seed: int
    states: np.ndarray
    observations: list
    actions: list
    dW: np.ndarray = None
    dB: list = None

    @property
    def n_nodes(self):
        return self.grid.n_nodes


def stencil_features(problem, dm, node, grid, observations, states):
    """Feature matrix [P, F] for one DM at one node from raw path arrays."""
    labels = problem.information[dm].labels(dm, node, grid)
    if not labels:
        return np.zeros((states.shape[0], 0))
    cols = []
    for kind, idx, j in labels:
        arr = states if kind == STATE else observations[idx]
        cols.append(arr[:, j, :])
    return np.concatenate(cols, axis=1)


def ensemble_features(ensemble, problem, dm, node):
    return stencil_features(problem, dm, node, ensemble.grid,
                            ensemble.observations, ensemble.states)


def _relaxed_uniforms(profile, n_paths, n_nodes, seed):
    out = {}
    for i, pol in enumerate(profile):
        if pol.needs_uniforms:
            out[i] = uniform_block(seed, n_paths, (n_nodes,), PURPOSE_RELAXED + i)
    return out


def _noise_half_factors(problem, times):
    """Per-DM list of D^{1/2}(t_j) stacks [len(times), k_i, k_i]."""
    out = []
    for ns in problem.noise_scales:
        out.append(np.stack([ns.factors(float(t))[0] for t in times]))
    return out


# ---------------------------------------------------------------------------
# continuous flavor
# ---------------------------------------------------------------------------

def _continuous_noise(problem, grid, n_paths, seed):
    dt = grid.dt
    dW = normal_block(seed, n_paths, (grid.steps, problem.noise_dim),
                      PURPOSE_STATE_NOISE) * np.sqrt(dt)
    dB = [normal_block(seed, n_paths, (grid.steps, k), PURPOSE_OBS_NOISE + i) * np.sqrt(dt)
          for i, k in enumerate(problem.obs_dims)]
    return dW, dB


def _propagate_continuous(problem, profile, grid, x0, dW, dB, seed, original):
    P = x0.shape[0]
    M, dt = grid.steps, grid.dt
    times = grid.times
    n = problem.state_dim
    Dh = _noise_half_factors(problem, times)
    uniforms = _relaxed_uniforms(profile, P, M + 1, seed)

    states = np.empty((P, M + 1, n))
    states[:, 0] = x0
    obs = [np.zeros((P, M + 1, k)) for k in problem.obs_dims]
    if not original:
        # decision-free observations: scaled Brownian paths, precomputable
        for i in range(problem.dm_count):
            incr = np.einsum("jab,pjb->pja", Dh[i][:M], dB[i])
            obs[i][:, 1:] = np.cumsum(incr, axis=1)
    actions = [np.empty((P, M + 1, a.dim)) for a in problem.action_specs]

    for j in range(M + 1):
        u = []
        for i, pol in enumerate(profile):
            if getattr(pol, "needs_features", True):
                feats = stencil_features(problem, i, j, grid, obs, states)
            else:
                feats = np.zeros((P, 0))
            uni = uniforms[i][:, j] if i in uniforms else None
            u_i = pol.actions(feats, j, uni)
            actions[i][:, j] = u_i
            u.append(u_i)
        if j == M:
            break
        t = float(times[j])
        x = states[:, j]
        f = problem.drift(t, x, u)
        sig = problem.diffusion(t, x, u)
        states[:, j + 1] = x + f * dt + np.einsum("pnm,pm->pn", sig, dW[:, j])
        if original:
            for i, h in enumerate(problem.observation_maps):
                drift_i = np.asarray(h(t, x, u)) * dt
                obs[i][:, j + 1] = obs[i][:, j] + drift_i + dB[i][:, j] @ Dh[i][j].T
    return states, obs, actions


def simulate_reference(problem, profile, grid, n_paths, seed) -> PathEnsemble:
    """Paths under the reference measure: observations are pure scaled noise."""
    _require_flavor(problem, CONTINUOUS)
    x0 = problem.sample_initial(n_paths, seed)
    dW, dB = _continuous_noise(problem, grid, n_paths, seed)
    states, obs, actions = _propagate_continuous(problem, profile, grid, x0,
                                                 dW, dB, seed, original=False)
    return PathEnsemble(grid, CONTINUOUS, REFERENCE, n_paths, seed,
                        states, obs, actions, dW, dB)


def simulate_original(problem, profile, grid, n_paths, seed) -> PathEnsemble:
    """Paths under the original measure: observations carry the signal drift."""
    _require_flavor(problem, CONTINUOUS)
    x0 = problem.sample_initial(n_paths, seed)
    dW, dB = _continuous_noise(problem, grid, n_paths, seed)
    states, obs, actions = _propagate_continuous(problem, profile, grid, x0,
                                                 dW, dB, seed, original=True)
    return PathEnsemble(grid, CONTINUOUS, ORIGINAL, n_paths, seed,
                        states, obs, actions, dW, dB)


# ---------------------------------------------------------------------------
# discrete flavor
# ---------------------------------------------------------------------------

def _check_obs_maps_action_free(problem):
    """The within-stage loop y(t) <- u(t) <- y(t) is only well posed when the
    observation maps ignore the current actions; enforce that."""
    P = 4
    x = np.linspace(-1.0, 1.0, P * problem.state_dim).reshape(P, problem.state_dim)
    u = problem.probe_actions(P)
    for t in range(int(problem.horizon) + 1):
        for i, h in enumerate(problem.observation_maps):
            for k in range(problem.dm_count):
                if np.abs(h.du(float(t), x, u, k)).max() > 1e-9:
                    raise MalformedProblem(
                        "discrete observation maps must not depend on current actions")


def simulate_discrete(problem, profile, n_paths, seed, measure) -> PathEnsemble:
    """Discrete-time paths.

    Reference measure: x(0) ~ initial law, x(t) and y^m(t) are i.i.d.
    standard normal sequences.  Original measure: the state recursion
    x(t+1) = f(t, x(t), u(t)) + G(t) w(t+1) and observations
    y^m(t) = h^m(t, x(t)) + D^{m,1/2}(t) b^m(t), both driven by i.i.d.
    normals.
    """
    _require_flavor(problem, DISCRETE)
    if measure not in (REFERENCE, ORIGINAL):
        raise ValueError(f"measure must be '{REFERENCE}' or '{ORIGINAL}'")
    grid = stage_grid(problem)
    T = grid.steps
    n = problem.state_dim
    P = n_paths
    x0 = problem.sample_initial(P, seed)
    uniforms = _relaxed_uniforms(profile, P, T + 1, seed)
    actions = [np.empty((P, T + 1, a.dim)) for a in problem.action_specs]

    if measure == REFERENCE:
        states = np.empty((P, T + 1, n))
        states[:, 0] = x0
        states[:, 1:] = normal_block(seed, P, (T, n), PURPOSE_STATE_NOISE)
        obs = [normal_block(seed, P, (T + 1, k), PURPOSE_OBS_NOISE + i)
               for i, k in enumerate(problem.obs_dims)]
        for j in range(T + 1):
            for i, pol in enumerate(profile):
                feats = stencil_features(problem, i, j, grid, obs, states)
                uni = uniforms[i][:, j] if i in uniforms else None
                actions[i][:, j] = pol.actions(feats, j, uni)
        return PathEnsemble(grid, DISCRETE, REFERENCE, P, seed, states, obs,
                            actions, None, None)

    _check_obs_maps_action_free(problem)
    w = normal_block(seed, P, (T, n), PURPOSE_STATE_NOISE)
    b = [normal_block(seed, P, (T + 1, k), PURPOSE_OBS_NOISE + i)
         for i, k in enumerate(problem.obs_dims)]
    Dh = _noise_half_factors(problem, grid.times)
    states = np.empty((P, T + 1, n))
    states[:, 0] = x0
    obs = [np.empty((P, T + 1, k)) for k in problem.obs_dims]
    for t in range(T + 1):
        x = states[:, t]
        u_probe = problem.probe_actions(P)  # h verified action-free above
        for i, h in enumerate(problem.observation_maps):
            obs[i][:, t] = np.asarray(h(float(t), x, u_probe)) + b[i][:, t] @ Dh[i][t].T
        u = []
        for i, pol in enumerate(profile):
            feats = stencil_features(problem, i, t, grid, obs, states)
            uni = uniforms[i][:, t] if i in uniforms else None
            u_i = pol.actions(feats, t, uni)
            actions[i][:, t] = u_i
            u.append(u_i)
        if t < T:
            G = problem.gain.factors(t)[0]
            states[:, t + 1] = problem.drift(float(t), x, u) + w[:, t] @ G.T
    return PathEnsemble(grid, DISCRETE, ORIGINAL, P, seed, states, obs,
                        actions, w, b)


def _require_flavor(problem, flavor):
    if problem.flavor != flavor:
        raise MalformedProblem(f"expected a {flavor}-flavor problem")


# ---------------------------------------------------------------------------
# frozen-noise re-evaluation (common random numbers)
# ---------------------------------------------------------------------------

def reevaluate(problem, profile, ensemble) -> PathEnsemble:
    """Re-run the ensemble's paths under a different profile, reusing the
    ensemble's stored randomness exactly (common random numbers).

    Under the reference measure the observation paths are decision-free, so
    for the discrete flavor only the actions change; states still respond to
    actions in the continuous flavor and under the original measure.
    """
    if ensemble.flavor == CONTINUOUS:
        if ensemble.dW is None or ensemble.dB is None:
            raise MissingIncrements("re-evaluation needs stored increments")
        x0 = ensemble.states[:, 0].copy()
        states, obs, actions = _propagate_continuous(
            problem, profile, ensemble.grid, x0, ensemble.dW, ensemble.dB,
            ensemble.seed, original=(ensemble.measure == ORIGINAL))
        return PathEnsemble(ensemble.grid, CONTINUOUS, ensemble.measure,
                            ensemble.n_paths, ensemble.seed, states, obs,
                            actions, ensemble.dW, ensemble.dB)
    grid = ensemble.grid
    T = grid.steps
    P = ensemble.n_paths
    uniforms = _relaxed_uniforms(profile, P, T + 1, ensemble.seed)
    actions = [np.empty((P, T + 1, a.dim)) for a in problem.action_specs]
    if ensemble.measure == REFERENCE:
        for j in range(T + 1):
            for i, pol in enumerate(profile):
                feats = stencil_features(problem, i, j, grid,
                                         ensemble.observations, ensemble.states)
                uni = uniforms[i][:, j] if i in uniforms else None
                actions[i][:, j] = pol.actions(feats, j, uni)
        return PathEnsemble(grid, DISCRETE, REFERENCE, P, ensemble.seed,
                            ensemble.states, ensemble.observations, actions,
                            ensemble.dW, ensemble.dB)
    if ensemble.dW is None or ensemble.dB is None:
        raise MissingIncrements("re-evaluation needs stored driving normals")
    Dh = _noise_half_factors(problem, grid.times)
    states = np.empty((P, T + 1, problem.state_dim))
    states[:, 0] = ensemble.states[:, 0]
    obs = [np.empty((P, T + 1, k)) for k in problem.obs_dims]
    for t in range(T + 1):
        x = states[:, t]
        u_probe = problem.probe_actions(P)
        for i, h in enumerate(problem.observation_maps):
            obs[i][:, t] = np.asarray(h(float(t), x, u_probe)) + ensemble.dB[i][:, t] @ Dh[i][t].T
        u = []
        for i, pol in enumerate(profile):
            feats = stencil_features(problem, i, t, grid, obs, states)
            uni = uniforms[i][:, t] if i in uniforms else None
            u_i = pol.actions(feats, t, uni)
            actions[i][:, t] = u_i
            u.append(u_i)
        if t < T:
            G = problem.gain.factors(t)[0]
            states[:, t + 1] = problem.drift(float(t), x, u) + ensemble.dW[:, t] @ G.T
    return PathEnsemble(grid, DISCRETE, ORIGINAL, P, ensemble.seed, states,
                        obs, actions, ensemble.dW, ensemble.dB)


# ---------------------------------------------------------------------------
# diagnostics and ensemble dump
# ---------------------------------------------------------------------------

def increment_diagnostics(ensemble) -> dict:
    """Z-scores of increment first/second moments against their targets.

    Continuous: each dW column should have mean 0 and variance dt; discrete:
    the reference-state and driving normals should be standard.
    """
    out = {}
    P = ensemble.n_paths
    if ensemble.dW is None:
        return out
    target_var = ensemble.grid.dt if ensemble.flavor == CONTINUOUS else 1.0
    blocks = {"dW": ensemble.dW}
    for i, db in enumerate(ensemble.dB or []):
        blocks[f"dB[{i}]"] = db
    for name, arr in blocks.items():
        flat = arr.reshape(P, -1)
        mean_se = np.sqrt(target_var / P)
        var_se = target_var * np.sqrt(2.0 / max(P - 1, 1))
        out[f"{name}_mean_z"] = float(np.abs(flat.mean(axis=0)).max() / mean_se)
        out[f"{name}_var_z"] = float(np.abs(flat.var(axis=0) - target_var).max() / var_se)
    return out


_MAGIC = b"TSE1"


def save_ensemble(ensemble, path):
    """Binary columnar dump: magic, JSON header, little-endian float64 blocks.

    Block order: states, observations per DM, actions per DM, then dW and dB
    per DM when present; every block is row-major float64 with its shape
    recorded in the header.
    """
    blocks = [("states", ensemble.states)]
    blocks += [(f"obs{i}", o) for i, o in enumerate(ensemble.observations)]
    blocks += [(f"act{i}", a) for i, a in enumerate(ensemble.actions)]
    if ensemble.dW is not None:
        blocks.append(("dW", ensemble.dW))
    for i, db in enumerate(ensemble.dB or []):
        blocks.append((f"dB{i}", db))
    header = {
        "format": "teamsolve-ensemble", "version": 1,
        "flavor": ensemble.flavor, "measure": ensemble.measure,
        "seed": int(ensemble.seed), "n_paths": int(ensemble.n_paths),
        "grid": {"end": ensemble.grid.end, "steps": ensemble.grid.steps},
        "n_dms": len(ensemble.observations),
        "blocks": [[name, list(arr.shape)] for name, arr in blocks],
    }
    raw = json.dumps(header).encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(np.uint64(len(raw)).tobytes())
        fh.write(raw)
        for _, arr in blocks:
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_ensemble(path) -> PathEnsemble:
    with open(path, "rb") as fh:
        if fh.read(4) != _MAGIC:
            raise ShapeMismatch("not a teamsolve ensemble file")
        hlen = int(np.frombuffer(fh.read(8), dtype=np.uint64)[0])
        header = json.loads(fh.read(hlen).decode())
        data = {}
        for name, shape in header["blocks"]:
            count = int(np.prod(shape))
            data[name] = np.frombuffer(fh.read(count * 8), dtype="<f8").reshape(shape).copy()
    n_dms = header["n_dms"]
    grid = TimeGrid(header["grid"]["end"], header["grid"]["steps"])
    obs = [data[f"obs{i}"] for i in range(n_dms)]
    act = [data[f"act{i}"] for i in range(n_dms)]
    dB = [data[f"dB{i}"] for i in range(n_dms) if f"dB{i}" in data] or None
    return PathEnsemble(grid, header["flavor"], header["measure"],
                        header["n_paths"], header["seed"], data["states"],
                        obs, act, data.get("dW"), dB)
