"""Named coefficient-function families.

Problems built from config files reference coefficients by family name plus
parameter arrays; problems built programmatically may pass any callable.
Every family is vectorized over a path batch: drift/observation maps take
(t, x[P,n], u = list of [P,d_i]) and return [P,out]; costs return [P].

Families carry analytic x/u derivatives where cheap and fall back to central
finite differences otherwise, plus affinity/convexity flags used by the
sufficiency certificate.
"""

from __future__ import annotations

import numpy as np

_FD_STEP = 1e-6


def _as2d(a, name):
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError(f"{name} must be a 2-D array, got shape {a.shape}")
    return a


class CoefficientFunction:
    """Vectorized map (t, x, u) -> [P, out_dim] with optional analytic grads.

    ``dx`` returns [P, out_dim, n]; ``du(i)`` returns [P, out_dim, d_i].
    Scalar-valued maps (costs) use out_dim == 0 meaning shape [P].
    """

    def __init__(self, fn, out_dim, *, dx=None, du=None, spec=None,
                 is_affine=False, is_convex=False, is_bounded=False):
        self._fn = fn
        self.out_dim = out_dim
        self._dx = dx
        self._du = du
        self.spec = spec
        self.is_affine = is_affine
        self.is_convex = is_convex
        self.is_bounded = is_bounded

    def __call__(self, t, x, u):
        return self._fn(t, x, u)

    def dx(self, t, x, u):
        if self._dx is not None:
            return self._dx(t, x, u)
        return _fd_dx(self._fn, t, x, u, self.out_dim)

    def du(self, t, x, u, i):
        if self._du is not None:
            return self._du(t, x, u, i)
        return _fd_du(self._fn, t, x, u, i, self.out_dim)


class TerminalFunction:
    """Terminal cost x -> [P] with gradient [P, n]."""

    def __init__(self, fn, *, dx=None, spec=None, is_convex=False):
        self._fn = fn
        self._dx = dx
        self.spec = spec
        self.is_convex = is_convex

    def __call__(self, x):
        return self._fn(x)

    def dx(self, x):
        if self._dx is not None:
            return self._dx(x)
        n = x.shape[1]
        g = np.empty((x.shape[0], n))
        for a in range(n):
            e = np.zeros(n)
            e[a] = _FD_STEP
            g[:, a] = (self._fn(x + e) - self._fn(x - e)) / (2 * _FD_STEP)
        return g


def _fd_dx(fn, t, x, u, out_dim):
    n = x.shape[1]
    base = fn(t, x, u)
    shape = base.shape + (n,)
    g = np.empty(shape)
    for a in range(n):
        e = np.zeros(n)
        e[a] = _FD_STEP
        g[..., a] = (fn(t, x + e, u) - fn(t, x - e, u)) / (2 * _FD_STEP)
    return g


def _fd_du(fn, t, x, u, i, out_dim):
    d = u[i].shape[1]
    base = fn(t, x, u)
    g = np.empty(base.shape + (d,))
    for a in range(d):
        e = np.zeros(d)
        e[a] = _FD_STEP
        up = [v.copy() if j == i else v for j, v in enumerate(u)]
        um = [v.copy() if j == i else v for j, v in enumerate(u)]
        up[i] = u[i] + e
        um[i] = u[i] - e
        g[..., a] = (fn(t, x, up, ) - fn(t, x, um)) / (2 * _FD_STEP)
    return g


# ---------------------------------------------------------------------------
# vector-valued families (drift, observation maps)
# ---------------------------------------------------------------------------

def affine(A, B=None, c=None, out_dim=None):
    """x @ A.T + sum_i u_i @ B_i.T + c."""
    A = _as2d(A, "A")
    out = A.shape[0] if out_dim is None else out_dim
    Bs = [(_as2d(Bi, "B") if Bi is not None else None) for Bi in (B or [])]
    cv = np.zeros(out) if c is None else np.asarray(c, dtype=np.float64)

    def fn(t, x, u):
        y = x @ A.T + cv
        for i, Bi in enumerate(Bs):
            if Bi is not None:
                y = y + u[i] @ Bi.T
        return y

    def dx(t, x, u):
        return np.broadcast_to(A, (x.shape[0],) + A.shape)

    def du(t, x, u, i):
        Bi = Bs[i] if i < len(Bs) and Bs[i] is not None else np.zeros((out, u[i].shape[1]))
        return np.broadcast_to(Bi, (x.shape[0],) + Bi.shape)

    spec = {"family": "affine", "A": A.tolist(),
            "B": [None if Bi is None else Bi.tolist() for Bi in Bs],
            "c": cv.tolist()}
    return CoefficientFunction(fn, out, dx=dx, du=du, spec=spec, is_affine=True)


def saturation(scale, A, B=None, c=None):
    """scale * tanh(x @ A.T + sum_i u_i @ B_i.T + c); bounded observation map."""
    A = _as2d(A, "A")
    out = A.shape[0]
    Bs = [(_as2d(Bi, "B") if Bi is not None else None) for Bi in (B or [])]
    cv = np.zeros(out) if c is None else np.asarray(c, dtype=np.float64)
    sv = np.asarray(scale, dtype=np.float64) * np.ones(out)

    def _inner(t, x, u):
        z = x @ A.T + cv
        for i, Bi in enumerate(Bs):
            if Bi is not None:
                z = z + u[i] @ Bi.T
        return z

    def fn(t, x, u):
        return sv * np.tanh(_inner(t, x, u))

    def dx(t, x, u):
        sech2 = 1.0 - np.tanh(_inner(t, x, u)) ** 2  # [P, out]
        return (sv[:, None] * A) * sech2[:, :, None]

    def du(t, x, u, i):
        Bi = Bs[i] if i < len(Bs) and Bs[i] is not None else None
        if Bi is None:
            return np.zeros((x.shape[0], out, u[i].shape[1]))
        sech2 = 1.0 - np.tanh(_inner(t, x, u)) ** 2
        return (sv[:, None] * Bi) * sech2[:, :, None]

    spec = {"family": "saturation", "scale": sv.tolist(), "A": A.tolist(),
            "B": [None if Bi is None else Bi.tolist() for Bi in Bs],
            "c": cv.tolist()}
    return CoefficientFunction(fn, out, dx=dx, du=du, spec=spec, is_bounded=True)


def bilinear(A, B, c=None):
    """(x @ A.T) * (sum_i u_i @ B_i.T + c), elementwise product of two affines."""
    A = _as2d(A, "A")
    out = A.shape[0]
    Bs = [(_as2d(Bi, "B") if Bi is not None else None) for Bi in B]
    cv = np.zeros(out) if c is None else np.asarray(c, dtype=np.float64)

    def _ufac(x, u):
        z = np.broadcast_to(cv, (x.shape[0], out)).copy()
        for i, Bi in enumerate(Bs):
            if Bi is not None:
                z = z + u[i] @ Bi.T
        return z

    def fn(t, x, u):
        return (x @ A.T) * _ufac(x, u)

    def dx(t, x, u):
        return A * _ufac(x, u)[:, :, None]

    def du(t, x, u, i):
        Bi = Bs[i] if i < len(Bs) and Bs[i] is not None else None
        if Bi is None:
            return np.zeros((x.shape[0], out, u[i].shape[1]))
        return Bi * (x @ A.T)[:, :, None]

    spec = {"family": "bilinear", "A": A.tolist(),
            "B": [None if Bi is None else Bi.tolist() for Bi in Bs],
            "c": cv.tolist()}
    return CoefficientFunction(fn, out, dx=dx, du=du, spec=spec)


def zero(out_dim):
    def fn(t, x, u):
        return np.zeros((x.shape[0], out_dim))

    def dx(t, x, u):
        return np.zeros((x.shape[0], out_dim, x.shape[1]))

    def du(t, x, u, i):
        return np.zeros((x.shape[0], out_dim, u[i].shape[1]))

    return CoefficientFunction(fn, out_dim, dx=dx, du=du,
                               spec={"family": "zero", "out_dim": out_dim},
                               is_affine=True, is_bounded=True)


def constant_matrix(value):
    """Constant diffusion sigma(t,x,u) = value, shape [n, m]."""
    V = _as2d(value, "value")

    def fn(t, x, u):
        return np.broadcast_to(V, (x.shape[0],) + V.shape)

    def dx(t, x, u):
        return np.zeros((x.shape[0],) + V.shape + (x.shape[1],))

    def du(t, x, u, i):
        return np.zeros((x.shape[0],) + V.shape + (u[i].shape[1],))

    return CoefficientFunction(fn, V.shape, dx=dx, du=du,
                               spec={"family": "constant", "value": V.tolist()},
                               is_affine=True, is_bounded=True)


# ---------------------------------------------------------------------------
# cost families
# ---------------------------------------------------------------------------

def quadratic_cost(M, b=None, c=0.0, dims=None):
    """l(t,x,u) = 0.5 z' M z + b' z + c over the stacked vector z = (x, u_1..u_N).

    ``dims`` = (n, [d_1..d_N]) fixes the block split of z.
    """
    M = _as2d(M, "M")
    M = 0.5 * (M + M.T)
    nz = M.shape[0]
    bv = np.zeros(nz) if b is None else np.asarray(b, dtype=np.float64)
    eigs = np.linalg.eigvalsh(M)
    convex = bool(eigs.min() >= -1e-10)

    def _stack(x, u):
        return np.concatenate([x] + list(u), axis=1)

    def fn(t, x, u):
        z = _stack(x, u)
        return 0.5 * np.einsum("pa,ab,pb->p", z, M, z) + z @ bv + c

    def _grad(x, u):
        z = _stack(x, u)
        return z @ M + bv  # [P, nz]

    def dx(t, x, u):
        return _grad(x, u)[:, : x.shape[1]]

    def du(t, x, u, i):
        off = x.shape[1] + sum(uj.shape[1] for uj in u[:i])
        return _grad(x, u)[:, off: off + u[i].shape[1]]

    spec = {"family": "quadratic", "M": M.tolist(), "b": bv.tolist(), "c": float(c)}
    if dims is not None:
        spec["dims"] = [int(dims[0]), [int(d) for d in dims[1]]]
    f = CoefficientFunction(fn, 0, dx=dx, du=du, spec=spec, is_convex=convex)
    f.hess_uu = lambda t, x, u, i: _quad_block(M, x.shape[1], [uj.shape[1] for uj in u], i, x.shape[0])
    return f


def _quad_block(M, n, ds, i, P):
    off = n + sum(ds[:i])
    H = M[off: off + ds[i], off: off + ds[i]]
    return np.broadcast_to(H, (P,) + H.shape)


def constant_cost(value):
    v = float(value)

    def fn(t, x, u):
        return np.full(x.shape[0], v)

    def dx(t, x, u):
        return np.zeros((x.shape[0], x.shape[1]))

    def du(t, x, u, i):
        return np.zeros((x.shape[0], u[i].shape[1]))

    return CoefficientFunction(fn, 0, dx=dx, du=du,
                               spec={"family": "constant", "value": v},
                               is_affine=True, is_convex=True, is_bounded=True)


def quadratic_terminal(P, b=None, c=0.0):
    """phi(x) = 0.5 x' P x + b' x + c."""
    Pm = _as2d(P, "P")
    Pm = 0.5 * (Pm + Pm.T)
    n = Pm.shape[0]
    bv = np.zeros(n) if b is None else np.asarray(b, dtype=np.float64)
    convex = bool(np.linalg.eigvalsh(Pm).min() >= -1e-10)

    def fn(x):
        return 0.5 * np.einsum("pa,ab,pb->p", x, Pm, x) + x @ bv + c

    def dx(x):
        return x @ Pm + bv

    spec = {"family": "quadratic_terminal", "P": Pm.tolist(), "b": bv.tolist(), "c": float(c)}
    return TerminalFunction(fn, dx=dx, spec=spec, is_convex=convex)


def linear_terminal(b, c=0.0):
    bv = np.asarray(b, dtype=np.float64)

    def fn(x):
        return x @ bv + c

    def dx(x):
        return np.broadcast_to(bv, x.shape)

    return TerminalFunction(fn, dx=dx,
                            spec={"family": "linear_terminal", "b": bv.tolist(), "c": float(c)},
                            is_convex=True)


def zero_terminal(n):
    return TerminalFunction(lambda x: np.zeros(x.shape[0]),
                            dx=lambda x: np.zeros_like(x),
                            spec={"family": "zero_terminal", "n": int(n)},
                            is_convex=True)


# ---------------------------------------------------------------------------
# initial distributions
# ---------------------------------------------------------------------------

class GaussianInitial:
    def __init__(self, mean, cov):
        self.mean = np.atleast_1d(np.asarray(mean, dtype=np.float64))
        self.cov = np.atleast_2d(np.asarray(cov, dtype=np.float64))
        self._chol = np.linalg.cholesky(self.cov + 1e-300 * np.eye(len(self.mean))) \
            if np.any(self.cov) else np.zeros_like(self.cov)
        self.dim = len(self.mean)
        self.spec = {"kind": "gaussian", "mean": self.mean.tolist(), "cov": self.cov.tolist()}

    def sample(self, z, _uniforms=None):
        return self.mean + z @ self._chol.T

    def logpdf(self, x):
        d = x - self.mean
        cov = self.cov + 1e-300 * np.eye(self.dim)
        sol = np.linalg.solve(cov, d.T).T
        _, logdet = np.linalg.slogdet(cov)
        return -0.5 * (np.sum(d * sol, axis=1) + logdet + self.dim * np.log(2 * np.pi))


class PointInitial:
    def __init__(self, value):
        self.value = np.atleast_1d(np.asarray(value, dtype=np.float64))
        self.dim = len(self.value)
        self.spec = {"kind": "point", "value": self.value.tolist()}

    def sample(self, z, _uniforms=None):
        return np.broadcast_to(self.value, (z.shape[0], self.dim)).copy()

    logpdf = None


class AtomInitial:
    """Finite-support initial law: atoms [K, n] with probabilities [K]."""

    def __init__(self, atoms, probs):
        self.atoms = np.atleast_2d(np.asarray(atoms, dtype=np.float64))
        self.probs = np.asarray(probs, dtype=np.float64)
        if abs(self.probs.sum() - 1.0) > 1e-9 or np.any(self.probs < 0):
            raise ValueError("atom probabilities must be nonnegative and sum to 1")
        self.dim = self.atoms.shape[1]
        self._cum = np.cumsum(self.probs)
        self.spec = {"kind": "atoms", "atoms": self.atoms.tolist(), "probs": self.probs.tolist()}

    def sample(self, z, uniforms=None):
        if uniforms is None:
            raise ValueError("AtomInitial needs uniform draws")
        idx = np.searchsorted(self._cum, uniforms, side="right").clip(0, len(self.probs) - 1)
        return self.atoms[idx]

    logpdf = None


# ---------------------------------------------------------------------------
# config-file dispatch
# ---------------------------------------------------------------------------

def coefficient_from_spec(spec):
    fam = spec.get("family")
    if fam == "affine":
        return affine(spec["A"], spec.get("B"), spec.get("c"))
    if fam == "saturation":
        return saturation(spec["scale"], spec["A"], spec.get("B"), spec.get("c"))
    if fam == "bilinear":
        return bilinear(spec["A"], spec.get("B") or [], spec.get("c"))
    if fam == "zero":
        return zero(int(spec["out_dim"]))
    if fam == "constant" and "value" in spec and np.ndim(spec["value"]) == 2:
        return constant_matrix(spec["value"])
    if fam == "constant":
        return constant_cost(spec["value"])
    if fam == "quadratic":
        return quadratic_cost(spec["M"], spec.get("b"), spec.get("c", 0.0),
                              dims=spec.get("dims"))
    raise KeyError(f"unknown coefficient family: {fam!r}")


def terminal_from_spec(spec):
    fam = spec.get("family")
    if fam == "quadratic_terminal":
        return quadratic_terminal(spec["P"], spec.get("b"), spec.get("c", 0.0))
    if fam == "linear_terminal":
        return linear_terminal(spec["b"], spec.get("c", 0.0))
    if fam == "zero_terminal":
        return zero_terminal(int(spec["n"]))
    raise KeyError(f"unknown terminal-cost family: {fam!r}")


def initial_from_spec(spec):
    kind = spec.get("kind")
    if kind == "gaussian":
        return GaussianInitial(spec["mean"], spec["cov"])
    if kind == "point":
        return PointInitial(spec["value"])
    if kind == "atoms":
        return AtomInitial(spec["atoms"], spec["probs"])
    raise KeyError(f"unknown initial-distribution kind: {kind!r}")
