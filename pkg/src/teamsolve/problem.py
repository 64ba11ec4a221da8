"""Domain model of a decentralized team decision problem.

A ``TeamProblem`` bundles dynamics, observation channels, costs, action sets
and per-DM information structures, in a continuous-time or a discrete-time
flavor.  Information is represented by finite feature stencils over the
observation (and optionally state) paths, so conditioning is computable by
regression or by exact enumeration; the continuum filtration never appears.

All objects here are immutable after construction and all operations are
pure.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import families
from ._rng import path_stream
from .errors import (FutureAccess, IncompatibleStencil, MalformedProblem,
                     SingularNoise)

CONTINUOUS = "continuous"
DISCRETE = "discrete"

# feature sources
OBS = "obs"
STATE = "state"


# ---------------------------------------------------------------------------
# action sets
# ---------------------------------------------------------------------------

class ActionSpec:
    """Closed bounded action set: a coordinate box or an explicit atom grid."""

    def __init__(self, dim, bounds=None, atoms=None):
        self.dim = int(dim)
        if (bounds is None) == (atoms is None):
            raise MalformedProblem("ActionSpec needs exactly one of bounds / atoms")
        if bounds is not None:
            b = np.asarray(bounds, dtype=np.float64).reshape(self.dim, 2)
            if not np.all(np.isfinite(b)) or np.any(b[:, 0] > b[:, 1]):
                raise MalformedProblem("action bounds must be finite with lo <= hi")
            self.bounds = b
            self.atoms = None
        else:
            a = np.atleast_2d(np.asarray(atoms, dtype=np.float64))
            if a.shape[0] == 0 or a.shape[1] != self.dim or not np.all(np.isfinite(a)):
                raise MalformedProblem("action atoms must be a nonempty finite [K, dim] grid")
            self.atoms = a
            self.bounds = np.stack([a.min(axis=0), a.max(axis=0)], axis=1)

    @property
    def is_grid(self):
        return self.atoms is not None

    def clip(self, u):
        u = np.asarray(u, dtype=np.float64)
        if self.is_grid:
            # snap to the nearest atom
            d2 = ((u[..., None, :] - self.atoms) ** 2).sum(axis=-1)
            return self.atoms[np.argmin(d2, axis=-1)]
        return np.clip(u, self.bounds[:, 0], self.bounds[:, 1])

    def center(self):
        if self.is_grid:
            return self.atoms[len(self.atoms) // 2]
        return 0.5 * (self.bounds[:, 0] + self.bounds[:, 1])

    def spec_dict(self):
        if self.is_grid:
            return {"dim": self.dim, "atoms": self.atoms.tolist()}
        return {"dim": self.dim, "bounds": self.bounds.tolist()}

    @staticmethod
    def from_spec(d):
        return ActionSpec(d["dim"], bounds=d.get("bounds"), atoms=d.get("atoms"))


# ---------------------------------------------------------------------------
# information structures
# ---------------------------------------------------------------------------

OWN_HISTORY = "own_history"
DELAYED_SHARING = "delayed_sharing"
SNAPSHOT = "snapshot"


@dataclass(frozen=True)
class InformationStructure:
    """Finite feature stencil a DM may condition on at each time.

    kind == own_history: every ``stride``-th own-observation node from 0 up
    to the current node (the current node always included).
    kind == delayed_sharing: own history plus, per (source, delay) edge,
    the source DM's history up to current time minus the delay.
    kind == snapshot: a fixed list of (source, lag) taps; entries whose tap
    time falls before 0 are dropped.  Sources are ("obs", dm) or ("state",).
    Snapshot stencils may be nonnested; the other two kinds are nested.
    """

    kind: str
    stride: int = 1
    sharing: tuple = ()          # ((source_dm, delay), ...)
    stencil: tuple = ()          # ((source_tuple, lag), ...)

    def __post_init__(self):
        if self.kind not in (OWN_HISTORY, DELAYED_SHARING, SNAPSHOT):
            raise MalformedProblem(f"unknown information kind {self.kind!r}")
        if self.stride < 1:
            raise MalformedProblem("stride must be >= 1")
        for _, delay in self.sharing:
            if delay < 0:
                raise MalformedProblem("sharing delays must be nonnegative")
        for _, lag in self.stencil:
            if lag < 0:
                raise FutureAccess("snapshot stencil reads beyond current time")

    def labels(self, dm, node, grid):
        """Feature labels ((source_kind, source_idx, node), ...) at a grid node.

        For nested kinds the labels at node j are a prefix-ordered subset of
        the labels at any j' >= j.
        """
        if self.kind == SNAPSHOT:
            out = []
            for source, lag in self.stencil:
                lag_nodes = grid.nodes_of_duration(lag)
                tap = node - lag_nodes
                if tap < 0:
                    continue
                if source[0] == STATE:
                    out.append((STATE, 0, tap))
                else:
                    out.append((OBS, int(source[1]), tap))
            return tuple(out)
        own = [(OBS, dm, j) for j in _strided_nodes(node, self.stride)]
        if self.kind == OWN_HISTORY:
            return tuple(own)
        shared = []
        for src, delay in self.sharing:
            cutoff = node - grid.nodes_of_duration(delay)
            if cutoff < 0:
                continue
            shared.extend((OBS, int(src), j) for j in _strided_nodes(cutoff, self.stride))
        return tuple(own + shared)

    def spec_dict(self):
        d = {"kind": self.kind}
        if self.kind != SNAPSHOT:
            d["stride"] = self.stride
        if self.kind == DELAYED_SHARING:
            d["sharing"] = [[int(s), float(e)] for s, e in self.sharing]
        if self.kind == SNAPSHOT:
            d["stencil"] = [[list(src), float(lag)] for src, lag in self.stencil]
        return d

    @staticmethod
    def from_spec(d):
        kind = d["kind"]
        if kind == SNAPSHOT:
            stencil = tuple((tuple(src), float(lag)) for src, lag in d["stencil"])
            return InformationStructure(kind=SNAPSHOT, stencil=stencil)
        sharing = tuple((int(s), float(e)) for s, e in d.get("sharing", []))
        return InformationStructure(kind=kind, stride=int(d.get("stride", 1)),
                                    sharing=sharing)


def own_history(stride=1):
    return InformationStructure(kind=OWN_HISTORY, stride=stride)


def delayed_sharing(edges, stride=1):
    return InformationStructure(kind=DELAYED_SHARING, stride=stride,
                                sharing=tuple((int(s), float(e)) for s, e in edges))


def snapshot(stencil):
    """stencil: iterable of (source, lag); source is ('obs', j) or ('state',)."""
    return InformationStructure(kind=SNAPSHOT,
                                stencil=tuple((tuple(s), float(l)) for s, l in stencil))


def state_snapshot():
    """Full state observation at the current time (perfect state information)."""
    return snapshot([((STATE,), 0.0)])


def current_obs(dm):
    """Only the DM's own current observation sample."""
    return snapshot([((OBS, dm), 0.0)])


def _strided_nodes(node, stride):
    # only stride-aligned nodes: forcing the current node in would break
    # nestedness of the feature sets across time
    return list(range(0, node + 1, stride))


def information_view(structure, dm, t, observations, grid, states=None):
    """Features DM ``dm`` may legally use at time ``t``.

    ``observations``: per-DM arrays, either [M+1, k_i] for a single path or
    [P, M+1, k_i] for a batch; ``states`` likewise when the stencil taps the
    state.  Returns a flat feature vector (single path) or [P, F].
    """
    node = grid.node_of(t)
    labels = structure.labels(dm, node, grid)
    batched = np.asarray(observations[0] if observations else states).ndim == 3
    cols = []
    for kind, idx, j in labels:
        if j > node:
            raise FutureAccess(f"stencil reads node {j} beyond current node {node}")
        if kind == STATE:
            if states is None:
                raise IncompatibleStencil("stencil taps the state but none was supplied")
            arr = np.asarray(states)
        else:
            arr = np.asarray(observations[idx])
        cols.append(arr[..., j, :])
    if not cols:
        empty = (0,) if not batched else (np.asarray(observations[0]).shape[0], 0)
        return np.zeros(empty)
    return np.concatenate(cols, axis=-1)


# ---------------------------------------------------------------------------
# noise-scale handling
# ---------------------------------------------------------------------------

class NoiseScale:
    """Symmetric positive-definite observation noise matrix D(t)."""

    def __init__(self, value):
        if callable(value):
            self._fn = value
            self.spec = None
            probe = np.atleast_2d(np.asarray(value(0.0), dtype=np.float64))
        else:
            mat = np.atleast_2d(np.asarray(value, dtype=np.float64))
            self._fn = lambda t: mat
            self.spec = mat.tolist()
            probe = mat
        self.dim = probe.shape[0]

    def factors(self, t):
        """(D_half, D_half_inv, D_inv, logdet_D) at time t; raises SingularNoise."""
        D = np.atleast_2d(np.asarray(self._fn(t), dtype=np.float64))
        D = 0.5 * (D + D.T)
        w, V = np.linalg.eigh(D)
        if w.min() <= 1e-300 or not np.all(np.isfinite(w)):
            raise SingularNoise(f"noise scale not positive definite at t={t}: eig {w.min()}")
        sq = V @ np.diag(np.sqrt(w)) @ V.T
        sq_inv = V @ np.diag(1.0 / np.sqrt(w)) @ V.T
        inv = V @ np.diag(1.0 / w) @ V.T
        return sq, sq_inv, inv, float(np.log(w).sum())


class Gain:
    """Invertible state gain G(t) for the discrete flavor."""

    def __init__(self, value):
        if callable(value):
            self._fn = value
            self.spec = None
        else:
            mat = np.atleast_2d(np.asarray(value, dtype=np.float64))
            self._fn = lambda t: mat
            self.spec = mat.tolist()

    def factors(self, t):
        """(G, G_inv, logabsdet_G); raises SingularGain on singular G."""
        from .errors import SingularGain
        G = np.atleast_2d(np.asarray(self._fn(t), dtype=np.float64))
        sign, logdet = np.linalg.slogdet(G)
        if sign == 0 or not np.isfinite(logdet):
            raise SingularGain(f"gain matrix singular at stage {t}")
        return G, np.linalg.inv(G), float(logdet)


# ---------------------------------------------------------------------------
# the problem itself
# ---------------------------------------------------------------------------

def _wrap_coeff(fn, out_dim):
    if isinstance(fn, families.CoefficientFunction):
        return fn
    return families.CoefficientFunction(fn, out_dim)


def _wrap_terminal(fn):
    if isinstance(fn, families.TerminalFunction):
        return fn
    return families.TerminalFunction(fn)


class TeamProblem:
    """Immutable description of a decentralized team decision problem."""

    def __init__(self, *, flavor, horizon, state_dim, noise_dim=None, dm_count,
                 action_specs, drift, diffusion=None, gain=None,
                 observation_maps, observation_noise_scales,
                 running_cost, terminal_cost, initial, information,
                 convexity=None):
        if flavor not in (CONTINUOUS, DISCRETE):
            raise MalformedProblem(f"unknown flavor {flavor!r}")
        self.flavor = flavor
        self.horizon = float(horizon) if flavor == CONTINUOUS else int(horizon)
        if self.horizon <= 0:
            raise MalformedProblem("horizon must be positive")
        self.state_dim = int(state_dim)
        self.dm_count = int(dm_count)
        self.action_specs = list(action_specs)
        if len(self.action_specs) != self.dm_count:
            raise MalformedProblem("dm_count != len(action_specs)")
        if len(observation_maps) != self.dm_count:
            raise MalformedProblem("dm_count != len(observation_maps)")
        if len(observation_noise_scales) != self.dm_count:
            raise MalformedProblem("dm_count != len(observation_noise_scales)")
        if len(information) != self.dm_count:
            raise MalformedProblem("dm_count != len(information)")

        self.noise_scales = [d if isinstance(d, NoiseScale) else NoiseScale(d)
                             for d in observation_noise_scales]
        self.obs_dims = [d.dim for d in self.noise_scales]
        self.drift = _wrap_coeff(drift, self.state_dim)
        if flavor == CONTINUOUS:
            if diffusion is None:
                raise MalformedProblem("continuous flavor needs a diffusion")
            self.noise_dim = int(noise_dim) if noise_dim is not None else self.state_dim
            self.diffusion = _wrap_coeff(diffusion, (self.state_dim, self.noise_dim))
            self.gain = None
        else:
            if gain is None:
                raise MalformedProblem("discrete flavor needs an invertible gain G(t)")
            self.gain = gain if isinstance(gain, Gain) else Gain(gain)
            self.noise_dim = self.state_dim
            self.diffusion = None
        self.observation_maps = [_wrap_coeff(h, k)
                                 for h, k in zip(observation_maps, self.obs_dims)]
        self.running_cost = _wrap_coeff(running_cost, 0)
        self.terminal_cost = _wrap_terminal(terminal_cost)
        self.initial = initial
        self.information = list(information)
        if convexity is None:
            convexity = self._auto_convexity()
        self.convexity_declared = bool(convexity)

    def _auto_convexity(self):
        parts = [self.drift.is_affine, self.running_cost.is_convex,
                 self.terminal_cost.is_convex]
        parts += [h.is_affine for h in self.observation_maps]
        if self.flavor == CONTINUOUS:
            parts.append(self.diffusion.is_affine)
        return all(parts)

    # -- probe helpers -----------------------------------------------------

    def probe_actions(self, n_batch):
        return [np.broadcast_to(a.center(), (n_batch, a.dim)).copy()
                for a in self.action_specs]

    def sample_initial(self, n_paths, seed):
        from ._rng import PURPOSE_INITIAL, normal_block, uniform_block
        z = normal_block(seed, n_paths, (self.initial.dim,), PURPOSE_INITIAL)
        if isinstance(self.initial, families.AtomInitial):
            uni = uniform_block(seed, n_paths, (), PURPOSE_INITIAL + 7)
            return self.initial.sample(z, uni)
        return self.initial.sample(z)

    def spec_dict(self):
        """JSON-serializable mirror; coefficients must come from named families."""
        from .errors import ConfigError
        def need(spec, what):
            if spec is None:
                raise ConfigError(f"{what} was built programmatically; "
                                  "config serialization needs a named family")
            return spec
        d = {
            "flavor": self.flavor,
            "horizon": self.horizon,
            "state_dim": self.state_dim,
            "dm_count": self.dm_count,
            "action_specs": [a.spec_dict() for a in self.action_specs],
            "drift": need(self.drift.spec, "drift"),
            "observations": [need(h.spec, f"observation map {i}")
                             for i, h in enumerate(self.observation_maps)],
            "noise_scales": [need(ns.spec, f"noise scale {i}")
                             for i, ns in enumerate(self.noise_scales)],
            "running_cost": need(self.running_cost.spec, "running cost"),
            "terminal_cost": need(self.terminal_cost.spec, "terminal cost"),
            "initial": self.initial.spec,
            "information": [s.spec_dict() for s in self.information],
            "convexity": self.convexity_declared,
        }
        if self.flavor == CONTINUOUS:
            d["noise_dim"] = self.noise_dim
            d["diffusion"] = need(self.diffusion.spec, "diffusion")
        else:
            d["gain"] = need(self.gain.spec, "gain")
        return d

    @staticmethod
    def from_spec(d):
        kw = dict(
            flavor=d["flavor"],
            horizon=d["horizon"],
            state_dim=d["state_dim"],
            dm_count=d["dm_count"],
            action_specs=[ActionSpec.from_spec(a) for a in d["action_specs"]],
            drift=families.coefficient_from_spec(d["drift"]),
            observation_maps=[families.coefficient_from_spec(h) for h in d["observations"]],
            observation_noise_scales=[NoiseScale(ns) for ns in d["noise_scales"]],
            running_cost=families.coefficient_from_spec(d["running_cost"]),
            terminal_cost=families.terminal_from_spec(d["terminal_cost"]),
            initial=families.initial_from_spec(d["initial"]),
            information=[InformationStructure.from_spec(s) for s in d["information"]],
            convexity=d.get("convexity"),
        )
        if d["flavor"] == CONTINUOUS:
            kw["noise_dim"] = d.get("noise_dim")
            kw["diffusion"] = families.coefficient_from_spec(d["diffusion"])
        else:
            kw["gain"] = Gain(d["gain"])
        return TeamProblem(**kw)


# ---------------------------------------------------------------------------
# validation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str


@dataclass(frozen=True)
class ValidationReport:
    checks: tuple

    @property
    def all_passed(self):
        return all(c.passed for c in self.checks)

    def __str__(self):
        lines = [f"[{'PASS' if c.passed else 'FAIL'}] {c.name}: {c.detail}"
                 for c in self.checks]
        return "\n".join(lines)


_PROBE_SEED = 0xC0FFEE
_N_PROBE = 32


def validate(problem: TeamProblem) -> ValidationReport:
    """Spot-check the standing assumptions at sampled probe points.

    Dimension mismatches raise MalformedProblem and a non-positive-definite
    noise scale raises SingularNoise; soft checks (boundedness, sampled
    Lipschitz ratios) are reported pass/fail.  Deterministic in the problem.
    """
    checks = []
    gen = path_stream(_PROBE_SEED, 0)
    n = problem.state_dim
    P = _N_PROBE
    x = gen.standard_normal((P, n)) * 2.0
    u = problem.probe_actions(P)
    t_probes = np.linspace(0.0, float(problem.horizon), 5)

    # hard check: noise scale positive definite
    for i, ns in enumerate(problem.noise_scales):
        for t in t_probes:
            ns.factors(float(t))  # raises SingularNoise
    checks.append(CheckResult("noise_scales_positive_definite", True,
                              f"{problem.dm_count} channels x {len(t_probes)} times"))

    # hard check: gain invertible (discrete)
    if problem.flavor == DISCRETE:
        for t in range(int(problem.horizon)):
            problem.gain.factors(t)
        checks.append(CheckResult("gain_invertible", True,
                                  f"{int(problem.horizon)} stages"))

    # hard checks: output dimensions
    def expect_shape(name, arr, shape):
        if tuple(arr.shape) != tuple(shape):
            raise MalformedProblem(f"{name} returned shape {arr.shape}, expected {shape}")

    f0 = problem.drift(0.0, x, u)
    expect_shape("drift", np.asarray(f0), (P, n))
    if problem.flavor == CONTINUOUS:
        s0 = np.asarray(problem.diffusion(0.0, x, u))
        expect_shape("diffusion", s0, (P, n, problem.noise_dim))
    for i, h in enumerate(problem.observation_maps):
        hi = np.asarray(h(0.0, x, u))
        expect_shape(f"observation_map[{i}]", hi, (P, problem.obs_dims[i]))
    expect_shape("running_cost", np.asarray(problem.running_cost(0.0, x, u)), (P,))
    expect_shape("terminal_cost", np.asarray(problem.terminal_cost(x)), (P,))
    checks.append(CheckResult("output_dimensions", True,
                              "drift/diffusion/observations/costs match declared dims"))

    # soft check: action sets bounded
    ok = all(np.all(np.isfinite(a.bounds)) for a in problem.action_specs)
    checks.append(CheckResult("action_sets_bounded", ok, "closed and bounded boxes/grids"))

    # soft check: h bounded on the probe grid
    hmax = 0.0
    for t in t_probes:
        for h in problem.observation_maps:
            hmax = max(hmax, float(np.abs(h(float(t), x, u)).max()))
    checks.append(CheckResult("observation_maps_finite_on_probes",
                              bool(np.isfinite(hmax)), f"max |h| = {hmax:.4g}"))

    # soft check: sampled Lipschitz ratios for drift and observation maps
    z = gen.standard_normal((P, n)) * 2.0
    dx_norm = np.linalg.norm(x - z, axis=1) + 1e-12
    ratios = [np.linalg.norm(problem.drift(0.0, x, u) - problem.drift(0.0, z, u), axis=1) / dx_norm]
    for h in problem.observation_maps:
        ratios.append(np.linalg.norm(np.asarray(h(0.0, x, u)) - np.asarray(h(0.0, z, u)), axis=1) / dx_norm)
    if problem.flavor == CONTINUOUS:
        ds = np.asarray(problem.diffusion(0.0, x, u)) - np.asarray(problem.diffusion(0.0, z, u))
        ratios.append(np.linalg.norm(ds.reshape(P, -1), axis=1) / dx_norm)
    rmax = float(np.max([r.max() for r in ratios]))
    checks.append(CheckResult("sampled_lipschitz_ratio_finite",
                              bool(np.isfinite(rmax)), f"max sampled ratio = {rmax:.4g}"))

    # soft check: stencils never read the future
    grid_probe = _ProbeGrid(problem)
    for i, s in enumerate(problem.information):
        labels = s.labels(i, grid_probe.mid_node, grid_probe)
        ok = all(j <= grid_probe.mid_node for _, _, j in labels)
        if not ok:
            checks.append(CheckResult(f"information[{i}]_nonanticipative", False, "reads future"))
            break
    else:
        checks.append(CheckResult("information_nonanticipative", True,
                                  "all stencil taps at or before current node"))

    return ValidationReport(tuple(checks))


class _ProbeGrid:
    """Minimal grid adapter used only by validate()."""

    def __init__(self, problem):
        if problem.flavor == DISCRETE:
            self._dt = 1.0
            self.mid_node = max(int(problem.horizon) // 2, 0)
        else:
            self._dt = float(problem.horizon) / 16.0
            self.mid_node = 8

    def nodes_of_duration(self, duration):
        ratio = duration / self._dt
        return int(round(ratio))

    def node_of(self, t):
        return int(round(t / self._dt))
