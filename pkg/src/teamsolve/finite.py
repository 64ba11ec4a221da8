"""Desk-scale finite static teams with exact conditioning.

A finite static team has finitely many world atoms, a finite observation
label per DM per atom, and finite action grids, so conditional expectations
are exact sums and person-by-person updates minimize exactly; no sampling or
regression enters.  These problems back the solver's exact-conditioning path
and the exhaustive-enumeration oracles.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import product

import numpy as np

from .errors import MalformedProblem
from .policies import LabelCells, PolicyProfile, RelaxedPolicy
from .problem import ActionSpec


@dataclass
class FiniteStaticTeam:
    """probs[K] world-atom probabilities; xs[K, n] payoff-relevant states;
    obs_labels per DM: integer label in 0..L_i-1 per atom; action_grids per
    DM: [A_i, d_i]; cost(xs, u_list) -> [K] vectorized over atoms."""

    probs: np.ndarray
    xs: np.ndarray
    obs_labels: list
    action_grids: list
    cost: callable

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=np.float64)
        self.xs = np.atleast_2d(np.asarray(self.xs, dtype=np.float64))
        if abs(self.probs.sum() - 1.0) > 1e-12 or np.any(self.probs < 0):
            raise MalformedProblem("atom probabilities must form a distribution")
        self.obs_labels = [np.asarray(l, dtype=np.intp) for l in self.obs_labels]
        self.action_grids = [np.atleast_2d(np.asarray(g, dtype=np.float64))
                             for g in self.action_grids]
        self.n_dms = len(self.action_grids)
        self.n_labels = [int(l.max()) + 1 for l in self.obs_labels]
        self._tensor = None

    @property
    def n_atoms(self):
        return len(self.probs)

    def cost_tensor(self):
        """C[k, a_1, ..., a_N]: cost at atom k under each pure action combo."""
        if self._tensor is None:
            sizes = [len(g) for g in self.action_grids]
            C = np.empty([self.n_atoms] + sizes)
            for combo in product(*(range(s) for s in sizes)):
                u = [np.broadcast_to(self.action_grids[i][combo[i]],
                                     (self.n_atoms, self.action_grids[i].shape[1]))
                     for i in range(self.n_dms)]
                C[(slice(None),) + combo] = self.cost(self.xs, u)
            self._tensor = C
        return self._tensor

    def action_spec(self, i):
        return ActionSpec(self.action_grids[i].shape[1], atoms=self.action_grids[i])

    def uniform_profile(self) -> PolicyProfile:
        pols = []
        for i in range(self.n_dms):
            cells = LabelCells(np.arange(self.n_labels[i], dtype=float)[:, None])
            pols.append(RelaxedPolicy.uniform(self.action_spec(i), cells, 1))
        return PolicyProfile(pols)

    def tables(self, profile):
        return [np.asarray(profile[i].probs[0], dtype=np.float64)
                for i in range(self.n_dms)]

    def profile_from_tables(self, tables) -> PolicyProfile:
        pols = []
        for i, tab in enumerate(tables):
            cells = LabelCells(np.arange(self.n_labels[i], dtype=float)[:, None])
            pols.append(RelaxedPolicy(self.action_spec(i), cells,
                                      self.action_grids[i], [np.asarray(tab)]))
        return PolicyProfile(pols)


def payoff_exact(team: FiniteStaticTeam, tables) -> float:
    """Exact expected cost of a relaxed profile (multilinear contraction)."""
    C = team.cost_tensor()
    val = C
    # contract DM axes from the last to the first with per-atom distributions
    for i in reversed(range(team.n_dms)):
        q = np.asarray(tables[i])[team.obs_labels[i]]          # [K, A_i]
        val = np.einsum("k...a,ka->k...", val, q)
    return float(team.probs @ val)


def cell_action_values(team: FiniteStaticTeam, tables, dm) -> np.ndarray:
    """V[c, a]: exact conditional cost of DM ``dm`` playing atom a in cell c,
    the co-players following their current tables."""
    C = team.cost_tensor()
    val = np.moveaxis(C, 1 + dm, -1)  # [K, other action axes..., A_dm]
    for j in range(team.n_dms):
        if j == dm:
            continue
        q = np.asarray(tables[j])[team.obs_labels[j]]  # [K, A_j]
        val = np.einsum("ka...,ka->k...", val, q)      # eat axis 1 each pass
    A = val.shape[1]
    L = team.n_labels[dm]
    out = np.zeros((L, A))
    for c in range(L):
        mask = team.obs_labels[dm] == c
        w = team.probs[mask]
        if w.sum() > 0:
            out[c] = (w[:, None] * val[mask]).sum(axis=0) / w.sum()
    return out


def exact_pbp_solve(team: FiniteStaticTeam, tables=None, max_sweeps=64,
                    tol=1e-12):
    """Block-coordinate exact minimization over the relaxed tables.

    Each (DM, cell) update puts all mass on the conditionally best atom, so
    the payoff never increases; stops when a full sweep improves nothing.
    Returns (tables, payoff, sweeps_used).
    """
    if tables is None:
        tables = team.tables(team.uniform_profile())
    tables = [np.array(t, dtype=np.float64) for t in tables]
    last = payoff_exact(team, tables)
    for sweep in range(max_sweeps):
        for i in range(team.n_dms):
            V = cell_action_values(team, tables, i)
            best = np.argmin(V, axis=1)
            tab = np.zeros_like(tables[i])
            tab[np.arange(len(best)), best] = 1.0
            tables[i] = tab
        now = payoff_exact(team, tables)
        if last - now <= tol:
            return tables, now, sweep + 1
        last = now
    return tables, last, max_sweeps


def stationarity_gap(team: FiniteStaticTeam, tables) -> np.ndarray:
    """Per-DM expected one-shot conditional improvement (zero iff PbP)."""
    gaps = np.zeros(team.n_dms)
    for i in range(team.n_dms):
        V = cell_action_values(team, tables, i)
        cur = np.einsum("ca,ca->c", np.asarray(tables[i]), V)
        cell_probs = np.array([team.probs[team.obs_labels[i] == c].sum()
                               for c in range(team.n_labels[i])])
        gaps[i] = float(cell_probs @ np.maximum(cur - V.min(axis=1), 0.0))
    return gaps


def enumerate_optimum(team: FiniteStaticTeam):
    """Exhaustive search over all pure strategy profiles.

    Returns (tables, payoff): the best deterministic cell -> atom maps.
    """
    C = team.cost_tensor()
    sizes = [len(g) for g in team.action_grids]
    best_val = np.inf
    best_assign = None
    assignments = [list(product(range(sizes[i]), repeat=team.n_labels[i]))
                   for i in range(team.n_dms)]
    for combo in product(*assignments):
        idx = tuple(np.asarray(combo[i])[team.obs_labels[i]]
                    for i in range(team.n_dms))
        val = float(team.probs @ C[(np.arange(team.n_atoms),) + idx])
        if val < best_val - 1e-15:
            best_val = val
            best_assign = combo
    tables = []
    for i in range(team.n_dms):
        tab = np.zeros((team.n_labels[i], sizes[i]))
        tab[np.arange(team.n_labels[i]), list(best_assign[i])] = 1.0
        tables.append(tab)
    return tables, best_val


def demo_team() -> FiniteStaticTeam:
    """2 DMs, 3 action atoms each, 4-valued observations, 8 world atoms."""
    xs = np.linspace(-1.5, 1.5, 8)[:, None]
    probs = np.array([1, 2, 3, 4, 4, 3, 2, 1], dtype=float)
    probs /= probs.sum()
    obs1 = np.array([0, 0, 1, 1, 2, 2, 3, 3])
    obs2 = np.array([0, 1, 2, 3, 0, 1, 2, 3])
    atoms = np.array([[-1.0], [0.0], [1.0]])

    def cost(x, u):
        u1, u2 = u[0][:, 0], u[1][:, 0]
        return (u1 + u2 - x[:, 0]) ** 2 + 0.3 * u1**2 + 0.3 * u2**2

    return FiniteStaticTeam(probs, xs, [obs1, obs2], [atoms, atoms], cost)
