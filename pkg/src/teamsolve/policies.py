"""Strategy representations.

A regular policy maps a DM's information features through a polynomial basis
to an action, clipped to the action set; coefficients are held per grid node
so time-varying strategies come for free.  A relaxed policy holds, per
information cell of a declared piecewise-constant partition, a probability
vector over a finite action grid.  Profiles bundle one policy per DM.
"""

from __future__ import annotations

import numpy as np

from .errors import MalformedProblem, ShapeMismatch
from .problem import OBS, STATE
from .regression import polynomial_design, polynomial_powers

REGULAR = "regular"
RELAXED = "relaxed"


def feature_dim(problem, dm, node, grid):
    """Length of DM ``dm``'s feature vector at a grid node."""
    total = 0
    for kind, idx, _ in problem.information[dm].labels(dm, node, grid):
        total += problem.state_dim if kind == STATE else problem.obs_dims[idx]
    return total


# ---------------------------------------------------------------------------
# cell partitions (for relaxed policies and tabulated regular ones)
# ---------------------------------------------------------------------------

class UniformCells:
    """Per-dimension bin edges over feature space; cells are the products."""

    def __init__(self, edges):
        self.edges = [np.asarray(e, dtype=np.float64) for e in edges]
        self.n_cells = 1
        for e in self.edges:
            self.n_cells *= len(e) + 1

    def cell_index(self, features):
        features = np.atleast_2d(features)
        if features.shape[1] != len(self.edges):
            raise ShapeMismatch("feature dim does not match partition dims")
        idx = np.zeros(features.shape[0], dtype=np.intp)
        mult = 1
        for dim, e in enumerate(self.edges):
            idx += mult * np.searchsorted(e, features[:, dim], side="right")
            mult *= len(e) + 1
        return idx

    def spec_dict(self):
        return {"kind": "uniform", "edges": [e.tolist() for e in self.edges]}


class LabelCells:
    """Exact-match cells over a finite set of feature vectors."""

    def __init__(self, labels, atol=1e-9):
        self.labels = np.atleast_2d(np.asarray(labels, dtype=np.float64))
        self.n_cells = self.labels.shape[0]
        self.atol = atol

    def cell_index(self, features):
        features = np.atleast_2d(features)
        d2 = ((features[:, None, :] - self.labels[None, :, :]) ** 2).sum(axis=2)
        idx = np.argmin(d2, axis=1)
        if np.any(d2[np.arange(len(idx)), idx] > self.atol):
            raise ShapeMismatch("feature value not among the declared cell labels")
        return idx

    def spec_dict(self):
        return {"kind": "labels", "labels": self.labels.tolist()}


def partition_from_spec(d):
    if d["kind"] == "uniform":
        return UniformCells(d["edges"])
    if d["kind"] == "labels":
        return LabelCells(d["labels"])
    raise KeyError(f"unknown partition kind {d['kind']!r}")


# ---------------------------------------------------------------------------
# regular policies
# ---------------------------------------------------------------------------

class RegularPolicy:
    """Deterministic strategy: clip(poly_basis(features) @ C[node]).

    With ``tied=True`` a single coefficient block is shared by every node
    (a stationary strategy); this needs a feature dimension that does not
    grow with time, i.e. a snapshot-style stencil.
    """

    kind = REGULAR

    def __init__(self, action_spec, degree, coefficients, tied=False):
        self.action_spec = action_spec
        self.degree = int(degree)
        self.tied = bool(tied)
        self.coefficients = [np.asarray(c, dtype=np.float64) for c in coefficients]
        if self.tied and len(self.coefficients) != 1:
            raise ShapeMismatch("tied policies hold exactly one coefficient block")

    @staticmethod
    def zeros(problem, dm, grid, degree=1):
        coefs = []
        for node in range(grid.steps + 1):
            F = feature_dim(problem, dm, node, grid)
            nb = len(polynomial_powers(F, degree))
            coefs.append(np.zeros((nb, problem.action_specs[dm].dim)))
        return RegularPolicy(problem.action_specs[dm], degree, coefs)

    @staticmethod
    def tied_zeros(problem, dm, grid, degree=1):
        F = feature_dim(problem, dm, 0, grid)
        for node in range(grid.steps + 1):
            if feature_dim(problem, dm, node, grid) != F:
                raise ShapeMismatch("tied policies need a fixed feature dim")
        nb = len(polynomial_powers(F, degree))
        return RegularPolicy(problem.action_specs[dm], degree,
                             [np.zeros((nb, problem.action_specs[dm].dim))],
                             tied=True)

    @staticmethod
    def constant(problem, dm, grid, value):
        value = np.atleast_1d(np.asarray(value, dtype=np.float64))
        coefs = [value[None, :].copy() for _ in range(grid.steps + 1)]
        return RegularPolicy(problem.action_specs[dm], 0, coefs)

    def actions(self, features, node, uniforms=None):
        C = self.coefficients[0 if self.tied else node]
        if self.degree == 0:
            P = np.atleast_2d(features).shape[0]
            return self.action_spec.clip(np.broadcast_to(C[0], (P, C.shape[1])).copy())
        phi = polynomial_design(features, self.degree)
        if phi.shape[1] != C.shape[0]:
            raise ShapeMismatch(
                f"policy basis at node {node} expects {C.shape[0]} terms, got {phi.shape[1]}")
        return self.action_spec.clip(phi @ C)

    @property
    def needs_uniforms(self):
        return False

    @property
    def needs_features(self):
        return self.degree > 0

    def copy(self):
        return RegularPolicy(self.action_spec, self.degree,
                             [c.copy() for c in self.coefficients], self.tied)

    def flat_coefs(self):
        return np.concatenate([c.ravel() for c in self.coefficients])

    def with_flat_coefs(self, flat):
        out, pos = [], 0
        for c in self.coefficients:
            out.append(np.asarray(flat[pos:pos + c.size]).reshape(c.shape))
            pos += c.size
        return RegularPolicy(self.action_spec, self.degree, out, self.tied)

    def spec_dict(self):
        return {"kind": REGULAR, "degree": self.degree, "tied": self.tied,
                "action": self.action_spec.spec_dict(),
                "coefficients": [c.tolist() for c in self.coefficients]}


class CellRegularPolicy:
    """Regular policy tabulated per information cell (one action per cell)."""

    kind = REGULAR

    def __init__(self, action_spec, partition, table):
        self.action_spec = action_spec
        self.partition = partition
        self.table = [np.asarray(t, dtype=np.float64) for t in table]  # per node [n_cells, d]

    def actions(self, features, node, uniforms=None):
        idx = self.partition.cell_index(features)
        return self.action_spec.clip(self.table[node][idx])

    @property
    def needs_uniforms(self):
        return False

    @property
    def needs_features(self):
        return True

    def copy(self):
        return CellRegularPolicy(self.action_spec, self.partition,
                                 [t.copy() for t in self.table])

    def spec_dict(self):
        return {"kind": "cell_regular", "action": self.action_spec.spec_dict(),
                "partition": self.partition.spec_dict(),
                "table": [t.tolist() for t in self.table]}


class CallablePolicy:
    """Programmatic regular policy: fn(features, node) -> actions."""

    kind = REGULAR

    def __init__(self, action_spec, fn):
        self.action_spec = action_spec
        self._fn = fn

    def actions(self, features, node, uniforms=None):
        return self.action_spec.clip(np.atleast_2d(self._fn(np.atleast_2d(features), node)))

    @property
    def needs_uniforms(self):
        return False

    @property
    def needs_features(self):
        return True

    def copy(self):
        return CallablePolicy(self.action_spec, self._fn)


# ---------------------------------------------------------------------------
# relaxed policies
# ---------------------------------------------------------------------------

class RelaxedPolicy:
    """Stochastic kernel over a finite action grid, one simplex per cell."""

    kind = RELAXED

    def __init__(self, action_spec, partition, atoms, probs):
        if not action_spec.is_grid and atoms is None:
            raise MalformedProblem("relaxed policies need a finite action grid")
        self.action_spec = action_spec
        self.partition = partition
        self.atoms = np.atleast_2d(np.asarray(
            atoms if atoms is not None else action_spec.atoms, dtype=np.float64))
        self.probs = [np.asarray(p, dtype=np.float64) for p in probs]  # per node [n_cells, K]
        for p in self.probs:
            if np.any(p < -1e-12) or np.any(np.abs(p.sum(axis=1) - 1.0) > 1e-12):
                raise MalformedProblem("cell probabilities must be a simplex per cell")

    @staticmethod
    def uniform(action_spec, partition, n_nodes, atoms=None):
        atoms = np.atleast_2d(np.asarray(
            atoms if atoms is not None else action_spec.atoms, dtype=np.float64))
        K = atoms.shape[0]
        p = np.full((partition.n_cells, K), 1.0 / K)
        return RelaxedPolicy(action_spec, partition, atoms,
                             [p.copy() for _ in range(n_nodes)])

    def actions(self, features, node, uniforms=None):
        if uniforms is None:
            raise MalformedProblem("relaxed policy sampling needs uniform draws")
        idx = self.partition.cell_index(features)
        cum = np.cumsum(self.probs[node][idx], axis=1)
        k = (cum < uniforms[:, None]).sum(axis=1).clip(0, self.atoms.shape[0] - 1)
        return self.atoms[k]

    @property
    def needs_uniforms(self):
        return True

    @property
    def needs_features(self):
        return True

    def copy(self):
        return RelaxedPolicy(self.action_spec, self.partition, self.atoms,
                             [p.copy() for p in self.probs])

    def point_mass_indices(self, node):
        """Per-cell argmax atom; ties resolve to the lowest index."""
        return np.argmax(self.probs[node], axis=1)

    def spec_dict(self):
        return {"kind": RELAXED, "action": self.action_spec.spec_dict(),
                "partition": self.partition.spec_dict(),
                "atoms": self.atoms.tolist(),
                "probs": [p.tolist() for p in self.probs]}


# ---------------------------------------------------------------------------
# profiles
# ---------------------------------------------------------------------------

class PolicyProfile:
    """One policy per decision maker."""

    def __init__(self, per_dm):
        self.per_dm = list(per_dm)

    def __len__(self):
        return len(self.per_dm)

    def __getitem__(self, i):
        return self.per_dm[i]

    def __iter__(self):
        return iter(self.per_dm)

    def replace(self, i, policy):
        out = list(self.per_dm)
        out[i] = policy
        return PolicyProfile(out)

    def copy(self):
        return PolicyProfile([p.copy() for p in self.per_dm])

    def validate_for(self, problem):
        if len(self.per_dm) != problem.dm_count:
            raise ShapeMismatch("profile size != dm_count")
        return self

    def spec_dict(self):
        return {"per_dm": [p.spec_dict() for p in self.per_dm]}


def policy_from_spec(d, action_spec=None):
    from .problem import ActionSpec
    spec_action = ActionSpec.from_spec(d["action"]) if "action" in d else action_spec
    kind = d["kind"]
    if kind == REGULAR:
        return RegularPolicy(spec_action, d["degree"], d["coefficients"],
                             d.get("tied", False))
    if kind == "cell_regular":
        return CellRegularPolicy(spec_action, partition_from_spec(d["partition"]),
                                 d["table"])
    if kind == RELAXED:
        return RelaxedPolicy(spec_action, partition_from_spec(d["partition"]),
                             d["atoms"], d["probs"])
    raise KeyError(f"unknown policy kind {kind!r}")


def profile_from_spec(d):
    return PolicyProfile([policy_from_spec(p) for p in d["per_dm"]])
