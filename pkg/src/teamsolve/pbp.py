"""Person-by-person (block-coordinate) optimization of strategy profiles.

One sweep holds every other DM fixed and improves each DM's policy in turn:
regular policies take a damped Gauss-Newton step on the common-random-number
payoff with a backtracking line search; relaxed policies minimize exactly
per information cell over the action grid.  Certification of team (not just
person-by-person) optimality rests on joint convexity, which the problem
either declares through its coefficient families or loses when a sampled
Hessian spot-check fails; sampling can only downgrade a certificate.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from ._rng import path_stream
from .errors import NaNPayoff
from .finite import (FiniteStaticTeam, enumerate_optimum, exact_pbp_solve,
                     payoff_exact, stationarity_gap)
from .girsanov import exponential_weight, payoff_reference, theta_weight
from .policies import (CellRegularPolicy, PolicyProfile, RegularPolicy,
                       RelaxedPolicy)
from .problem import CONTINUOUS, DISCRETE
from .reduction import RegressionSpec, stationarity_residual
from .simulate import (REFERENCE, reevaluate, simulate_discrete,
                       simulate_reference, stage_grid)

CERT_TEAM = "TeamOptimalSufficient"
CERT_PBP = "PbPStationaryOnly"
CERT_BUDGET = "BudgetExhausted"


@dataclass(frozen=True)
class SweepRecord:
    sweep: int
    payoff: float
    stderr: float
    max_residual: float
    coef_change: tuple
    flags: tuple = ()


@dataclass
class SolveTrace:
    records: list = field(default_factory=list)

    def append(self, rec: SweepRecord):
        if self.records and rec.sweep <= self.records[-1].sweep:
            raise ValueError("sweep indices must be strictly increasing")
        self.records.append(rec)

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write("sweep,payoff,stderr,max_residual,coef_change,flags\n")
            for r in self.records:
                change = ";".join(f"{c:.6g}" for c in r.coef_change)
                flags = ";".join(str(f) for f in r.flags)
                fh.write(f"{r.sweep},{r.payoff:.17g},{r.stderr:.17g},"
                         f"{r.max_residual:.17g},{change},{flags}\n")


class _FrozenEvaluator:
    """CRN payoff of any profile on one frozen ensemble.

    measure='reference' evaluates the likelihood-weighted static form (the
    default); measure='original' evaluates the plain payoff on re-propagated
    paths, which stays well conditioned when many stages would degrade the
    importance weights.
    """

    def __init__(self, problem, grid, n_paths, seed, base_profile,
                 measure=REFERENCE):
        from .girsanov import payoff_original
        from .simulate import ORIGINAL, simulate_original
        self.problem = problem
        self.grid = grid
        self.measure = measure
        if problem.flavor == DISCRETE:
            self.base = simulate_discrete(problem, base_profile, n_paths, seed,
                                          measure)
        elif measure == REFERENCE:
            self.base = simulate_reference(problem, base_profile, grid,
                                           n_paths, seed)
        else:
            self.base = simulate_original(problem, base_profile, grid,
                                          n_paths, seed)

    def payoff(self, profile):
        from .girsanov import payoff_original
        ens = reevaluate(self.problem, profile, self.base)
        if self.measure == REFERENCE:
            if self.problem.flavor == DISCRETE:
                w = theta_weight(self.problem, None, ens)
            else:
                w = exponential_weight(self.problem, None, ens)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")  # ESS warnings handled by caller
                est, se = payoff_reference(self.problem, None, ens, w)
        else:
            est, se = payoff_original(self.problem, None, ens)
        if not np.isfinite(est):
            raise NaNPayoff("payoff evaluation produced a non-finite value")
        return est, se


def _decision_nodes(problem, grid):
    if problem.flavor == DISCRETE:
        return list(range(grid.steps))  # stage-T actions never enter the cost
    return list(range(grid.steps + 1))


# ---------------------------------------------------------------------------
# block updates
# ---------------------------------------------------------------------------

_MAX_HALVINGS = 20
_HESS_LIMIT = 24  # full FD Hessian only for small coefficient blocks


def _update_regular_block(evaluator, profile, i, nodes):
    """Damped Gauss-Newton (or preconditioned gradient) step on DM i."""
    pol = profile[i]
    blocks = [0] if getattr(pol, "tied", False) else nodes
    sizes = [pol.coefficients[j].size for j in blocks]
    m = sum(sizes)
    if m == 0:
        return profile, 0.0, ()

    def with_flat(flat):
        new = pol.copy()
        pos = 0
        for j, sz in zip(blocks, sizes):
            new.coefficients[j][...] = flat[pos:pos + sz].reshape(
                pol.coefficients[j].shape)
            pos += sz
        return profile.replace(i, new)

    c0 = np.concatenate([pol.coefficients[j].ravel() for j in blocks])
    J0, se0 = evaluator.payoff(profile)
    h = 1e-3 * np.maximum(1.0, np.abs(c0))
    grad = np.empty(m)
    evals = {}

    def payoff_at(flat):
        key = flat.tobytes()
        if key not in evals:
            evals[key] = evaluator.payoff(with_flat(flat))[0]
        return evals[key]

    for a in range(m):
        e = np.zeros(m)
        e[a] = h[a]
        grad[a] = (payoff_at(c0 + e) - payoff_at(c0 - e)) / (2 * h[a])

    if m <= _HESS_LIMIT:
        H = np.empty((m, m))
        for a in range(m):
            ea = np.zeros(m)
            ea[a] = h[a]
            H[a, a] = (payoff_at(c0 + ea) - 2 * J0 + payoff_at(c0 - ea)) / h[a]**2
            for b in range(a + 1, m):
                eb = np.zeros(m)
                eb[b] = h[b]
                H[a, b] = H[b, a] = (
                    payoff_at(c0 + ea + eb) - payoff_at(c0 + ea - eb)
                    - payoff_at(c0 - ea + eb) + payoff_at(c0 - ea - eb)
                ) / (4 * h[a] * h[b])
    else:
        diag = np.empty(m)
        for a in range(m):
            ea = np.zeros(m)
            ea[a] = h[a]
            diag[a] = (payoff_at(c0 + ea) - 2 * J0 + payoff_at(c0 - ea)) / h[a]**2
        H = np.diag(diag)

    scale = np.abs(np.diag(H)).max() + 1e-12
    step = None
    for lam in (1e-8, 1e-4, 1e-2, 1.0, 1e2):
        try:
            cand = np.linalg.solve(H + lam * scale * np.eye(m), -grad)
        except np.linalg.LinAlgError:
            continue
        if cand @ grad < 0:  # descent direction
            step = cand
            break
    if step is None:
        step = -grad / scale

    alpha = 1.0
    for _ in range(_MAX_HALVINGS):
        J_new = payoff_at(c0 + alpha * step)
        if J_new <= J0 + 2 * se0 and J_new < J0 + 1e-14 * max(abs(J0), 1.0):
            newp = with_flat(c0 + alpha * step)
            return newp, float(np.linalg.norm(alpha * step)), ()
        alpha *= 0.5
    return profile, 0.0, ((i, "LineSearchFailed"),)


def _update_relaxed_block(evaluator, profile, i, nodes):
    """Exact per-cell minimization over the action grid, cell by cell."""
    pol = profile[i].copy()
    prof = profile.replace(i, pol)
    change = 0.0
    for j in nodes:
        probs = pol.probs[j]
        n_cells, K = probs.shape
        for c in range(n_cells):
            best_val, best_a = np.inf, None
            saved = probs[c].copy()
            for a in range(K):
                probs[c, :] = 0.0
                probs[c, a] = 1.0
                val, _ = evaluator.payoff(prof)
                if val < best_val - 1e-15:
                    best_val, best_a = val, a
            probs[c, :] = 0.0
            probs[c, best_a] = 1.0
            change += float(np.linalg.norm(probs[c] - saved))
    return prof, change, ()


def pbp_sweep(problem, profile, reg: RegressionSpec, n_paths=20000, seed=0,
              grid=None):
    """One person-by-person pass over all DMs in ascending index order.

    Returns (updated profile, SweepRecord).  The CRN payoff never increases
    by more than twice its standard error on any accepted block step.
    Continuous-flavor problems need an explicit grid (they usually run
    through the maximum-principle loop instead).
    """
    if isinstance(problem, FiniteStaticTeam):
        return _finite_sweep(problem, profile, sweep_index=0)
    if problem.flavor == DISCRETE:
        grid = stage_grid(problem)
    elif grid is None:
        raise ValueError("continuous-flavor problems need an explicit grid")
    return pbp_sweep_grid(problem, profile, grid, reg, n_paths, seed)


def pbp_sweep_grid(problem, profile, grid, reg, n_paths=20000, seed=0,
                   sweep_index=0, measure=REFERENCE):
    evaluator = _FrozenEvaluator(problem, grid, n_paths, seed, profile, measure)
    nodes = _decision_nodes(problem, grid)
    flags = ()
    changes = []
    for i in range(problem.dm_count):
        if isinstance(profile[i], RelaxedPolicy):
            profile, ch, fl = _update_relaxed_block(evaluator, profile, i, nodes)
        else:
            profile, ch, fl = _update_regular_block(evaluator, profile, i, nodes)
        changes.append(ch)
        flags += fl
    est, se = evaluator.payoff(profile)
    if problem.flavor == DISCRETE:
        rep = stationarity_residual(problem, profile, reg, n_paths, seed + 1)
        max_res = rep.max_residual
    else:
        max_res = float("nan")
    rec = SweepRecord(sweep_index, est, se, max_res, tuple(changes), flags)
    return profile, rec


def _finite_sweep(team, profile, sweep_index):
    tables = team.tables(profile)
    tables, payoff, _ = exact_pbp_solve(team, tables, max_sweeps=1, tol=-1.0)
    gaps = stationarity_gap(team, tables)
    prof = team.profile_from_tables(tables)
    rec = SweepRecord(sweep_index, payoff, 0.0, float(gaps.max()),
                      tuple(gaps.tolist()))
    return prof, rec


# ---------------------------------------------------------------------------
# convexity certification
# ---------------------------------------------------------------------------

_N_CONVEXITY_PROBES = 64


def certify_convexity(problem) -> bool:
    """Declared convexity, spot-checked; a failed sample always downgrades."""
    if isinstance(problem, FiniteStaticTeam):
        return False
    if not problem.convexity_declared:
        return False
    if any(a.is_grid for a in problem.action_specs):
        return False  # finite action grids are nonconvex strategy spaces
    gen = path_stream(0xCE87, 0)
    n = problem.state_dim
    P = _N_CONVEXITY_PROBES
    x = gen.standard_normal((P, n)) * 2.0
    u = []
    for a in problem.action_specs:
        lo, hi = a.bounds[:, 0], a.bounds[:, 1]
        u.append(lo + (hi - lo) * gen.random((P, a.dim)))
    dims = [a.dim for a in problem.action_specs]
    nz = n + sum(dims)
    eps = 1e-4

    def stacked_cost(z):
        xs = z[:, :n]
        us, off = [], n
        for d in dims:
            us.append(z[:, off:off + d])
            off += d
        return problem.running_cost(0.0, xs, us)

    z0 = np.concatenate([x] + u, axis=1)
    for p in range(0, P, 8):  # a few full Hessians are enough
        zp = z0[p:p + 1]
        H = np.empty((nz, nz))
        f0 = stacked_cost(zp)[0]
        for a in range(nz):
            ea = np.zeros(nz)
            ea[a] = eps
            H[a, a] = (stacked_cost(zp + ea)[0] - 2 * f0 + stacked_cost(zp - ea)[0]) / eps**2
            for b in range(a + 1, nz):
                eb = np.zeros(nz)
                eb[b] = eps
                H[a, b] = H[b, a] = (
                    stacked_cost(zp + ea + eb)[0] - stacked_cost(zp + ea - eb)[0]
                    - stacked_cost(zp - ea + eb)[0] + stacked_cost(zp - ea - eb)[0]
                ) / (4 * eps**2)
        scale = np.abs(H).max() + 1.0
        if np.linalg.eigvalsh(0.5 * (H + H.T)).min() < -1e-5 * scale:
            return False
    # terminal cost convex along sampled directions
    for _ in range(8):
        d = gen.standard_normal(n)
        d /= np.linalg.norm(d)
        second = problem.terminal_cost(x + eps * d) - 2 * problem.terminal_cost(x) \
            + problem.terminal_cost(x - eps * d)
        if second.min() / eps**2 < -1e-5 * (np.abs(second).max() / eps**2 + 1.0):
            return False
    return True


# ---------------------------------------------------------------------------
# the outer solve
# ---------------------------------------------------------------------------

def solve_team(problem, init: PolicyProfile, reg: RegressionSpec = None,
               budget=30, tol=1e-3, n_paths=20000, seed=0, n_paths_max=None,
               measure=REFERENCE):
    """Repeat person-by-person sweeps until the stationarity residual falls
    below ``tol`` or the sweep budget runs out.

    Returns (profile, SolveTrace, certificate).  The certificate is
    'TeamOptimalSufficient' only when the residual test passed and joint
    convexity of the stage cost plus affinity of the coefficients is
    declared and survives the sampled spot-check; otherwise a stationary
    profile earns 'PbPStationaryOnly' and a spent budget 'BudgetExhausted'.
    """
    reg = reg or RegressionSpec("polynomial", degree=1)
    trace = SolveTrace()
    profile = init
    if budget < 1:
        return init, trace, CERT_BUDGET

    if isinstance(problem, FiniteStaticTeam):
        tables = problem.tables(init)
        stationary = False
        for sweep in range(budget):
            tables, payoff, _ = exact_pbp_solve(problem, tables, max_sweeps=1,
                                                tol=-1.0)
            gaps = stationarity_gap(problem, tables)
            trace.append(SweepRecord(sweep, payoff, 0.0, float(gaps.max()),
                                     tuple(gaps.tolist())))
            if gaps.max() <= tol:
                stationary = True
                break
        profile = problem.profile_from_tables(tables)
        return profile, trace, (CERT_PBP if stationary else CERT_BUDGET)

    if n_paths_max is None:
        n_paths_max = 8 * n_paths
    paths = n_paths
    last_payoff = None
    stationary = False
    for sweep in range(budget):
        profile, rec = pbp_sweep_grid(problem, profile,
                                      stage_grid(problem), reg, paths,
                                      seed + 1000 * sweep, sweep_index=sweep,
                                      measure=measure)
        trace.append(rec)
        if rec.max_residual <= tol:
            stationary = True
            break
        if last_payoff is not None and last_payoff - rec.payoff < 2 * rec.stderr:
            paths = min(2 * paths, n_paths_max)  # sample-average refinement
        last_payoff = rec.payoff
    if not stationary:
        return profile, trace, CERT_BUDGET
    if certify_convexity(problem):
        return profile, trace, CERT_TEAM
    return profile, trace, CERT_PBP


# ---------------------------------------------------------------------------
# realization of relaxed strategies by regular ones
# ---------------------------------------------------------------------------

MEAN = "mean"
MODE = "mode"
SAMPLED = "sampled"


def realize_regular(relaxed: RelaxedPolicy, mode=MEAN, seed=0) -> CellRegularPolicy:
    """Collapse a relaxed policy to a regular one on the same atom grid.

    mean: probability-weighted mean action snapped to the nearest atom;
    mode: most probable atom (ties to the lowest index); sampled: one atom
    drawn per cell from the cell's distribution.
    """
    atoms = relaxed.atoms
    table = []
    gen = path_stream(seed, 0, purpose=9)
    for node, probs in enumerate(relaxed.probs):
        if mode == MEAN:
            mean = probs @ atoms
            d2 = ((mean[:, None, :] - atoms[None, :, :]) ** 2).sum(axis=2)
            rows = atoms[np.argmin(d2, axis=1)]
        elif mode == MODE:
            rows = atoms[np.argmax(probs, axis=1)]
        elif mode == SAMPLED:
            u = gen.random(probs.shape[0])
            cum = np.cumsum(probs, axis=1)
            idx = (cum < u[:, None]).sum(axis=1).clip(0, len(atoms) - 1)
            rows = atoms[idx]
        else:
            raise ValueError(f"unknown realization mode {mode!r}")
        table.append(rows)
    return CellRegularPolicy(relaxed.action_spec, relaxed.partition, table)


def _finite_tables(team, profile):
    """Point-mass or relaxed tables for a finite team from either policy kind."""
    tables = []
    for i, pol in enumerate(profile):
        if isinstance(pol, RelaxedPolicy):
            tables.append(np.asarray(pol.probs[0]))
            continue
        atoms = team.action_grids[i]
        acts = np.asarray(pol.table[0])
        tab = np.zeros((team.n_labels[i], len(atoms)))
        d2 = ((acts[:, None, :] - atoms[None, :, :]) ** 2).sum(axis=2)
        tab[np.arange(len(acts)), np.argmin(d2, axis=1)] = 1.0
        tables.append(tab)
    return tables


def realization_report(problem, profile, mode=MEAN, seed=0, n_paths=20000):
    """Realize every relaxed policy and report both payoffs and their gap."""
    realized = PolicyProfile([
        realize_regular(p, mode, seed) if isinstance(p, RelaxedPolicy) else p.copy()
        for p in profile])
    if isinstance(problem, FiniteStaticTeam):
        relaxed_payoff = payoff_exact(problem, _finite_tables(problem, profile))
        regular_payoff = payoff_exact(problem, _finite_tables(problem, realized))
        return realized, (relaxed_payoff, 0.0), (regular_payoff, 0.0), \
            regular_payoff - relaxed_payoff
    from .reduction import static_payoff
    rel = static_payoff(problem, profile, n_paths, seed)
    reg_ = static_payoff(problem, realized, n_paths, seed)
    return realized, rel, reg_, reg_[0] - rel[0]
