"""Least-squares conditional-expectation estimators.

Conditioning on an information stencil is realized by regress-then-evaluate:
fit a linear model in a declared feature basis by ridge least squares, then
read the fit off at the sample points.  Features are standardized internally
so predictions are invariant under affine rescaling of the inputs; the ridge
floor (1e-10, relative to the Gram scale) silently absorbs rank deficiency.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from itertools import combinations_with_replacement

import numpy as np

from .errors import DegenerateFeaturesWarning

PIECEWISE = "piecewise_constant"
POLYNOMIAL = "polynomial"
RADIAL = "radial"

_RIDGE_FLOOR = 1e-10


@dataclass(frozen=True)
class RegressionSpec:
    """Basis choice for conditional-expectation fits.

    basis: 'piecewise_constant' (bins per feature dim), 'polynomial'
    (total degree), or 'radial' (center count + width in data-std units).
    """

    basis: str = POLYNOMIAL
    degree: int = 1
    bins: int = 8
    centers: int = 16
    width: float = 1.0
    ridge: float = 0.0

    def __post_init__(self):
        if self.basis not in (PIECEWISE, POLYNOMIAL, RADIAL):
            raise ValueError(f"unknown basis {self.basis!r}")
        if self.bins < 1 or self.degree < 0 or self.ridge < 0 or self.centers < 1:
            raise ValueError("bins >= 1, degree >= 0, centers >= 1, ridge >= 0 required")

    def spec_dict(self):
        return {"basis": self.basis, "degree": self.degree, "bins": self.bins,
                "centers": self.centers, "width": self.width, "ridge": self.ridge}

    @staticmethod
    def from_spec(d):
        return RegressionSpec(**d)


def polynomial_powers(n_features, degree):
    """Exponent tuples of all monomials with total degree <= degree."""
    powers = [(0,) * n_features]
    for deg in range(1, degree + 1):
        for combo in combinations_with_replacement(range(n_features), deg):
            p = [0] * n_features
            for c in combo:
                p[c] += 1
            powers.append(tuple(p))
    return powers


def _as_columns(features):
    """1-D input means one feature per path: reshape [P] -> [P, 1]."""
    f = np.asarray(features, dtype=np.float64)
    return f[:, None] if f.ndim == 1 else f


def polynomial_design(features, degree):
    """Raw multivariate monomial design matrix [P, n_terms]."""
    features = _as_columns(features)
    P, F = features.shape
    cols = [np.ones(P)]
    for p in polynomial_powers(F, degree)[1:]:
        col = np.ones(P)
        for dim, k in enumerate(p):
            if k:
                col = col * features[:, dim] ** k
        cols.append(col)
    return np.stack(cols, axis=1)


class FittedPredictor:
    """A fitted conditional-expectation surrogate, evaluable anywhere."""

    def __init__(self, spec, mean, scale, keep, extra, coef, scalar):
        self._spec = spec
        self._mean = mean
        self._scale = scale
        self._keep = keep
        self._extra = extra          # bin edges / rbf centers, standardized space
        self._coef = coef            # [n_basis, q]
        self._scalar = scalar

    def __call__(self, features):
        features = _as_columns(features)
        z = (features[:, self._keep] - self._mean) / self._scale
        phi = _design(self._spec, z, self._extra)
        out = phi @ self._coef
        return out[:, 0] if self._scalar else out


def _design(spec, z, extra):
    """Design matrix [P, n_basis] for standardized features."""
    P = z.shape[0]
    if spec.basis == POLYNOMIAL:
        return polynomial_design(z, spec.degree)
    if spec.basis == RADIAL:
        centers = extra
        d2 = ((z[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        phi = np.exp(-0.5 * d2 / spec.width**2)
        return np.concatenate([np.ones((P, 1)), phi], axis=1)
    edges, n_cells = extra
    idx = _cell_index(z, edges)
    phi = np.zeros((P, n_cells))
    phi[np.arange(P), idx] = 1.0
    return phi


def _cell_index(z, edges):
    """Ravel per-dim bin memberships into a flat cell id."""
    idx = np.zeros(z.shape[0], dtype=np.intp)
    mult = 1
    for dim, interior in enumerate(edges):
        k = np.searchsorted(interior, z[:, dim], side="right")
        idx = idx + mult * k
        mult *= len(interior) + 1
    return idx


def _fit_extra(spec, z):
    if spec.basis == POLYNOMIAL:
        return None
    if spec.basis == RADIAL:
        n = z.shape[0]
        count = min(spec.centers, n)
        order = np.lexsort(z.T[::-1]) if z.shape[1] else np.arange(n)
        ranks = (np.arange(count) * (n - 1) / max(count - 1, 1)).round().astype(int)
        return z[order[ranks]]
    # piecewise constant: uniform bins over the standardized data range
    edges = []
    for dim in range(z.shape[1]):
        lo, hi = z[:, dim].min(), z[:, dim].max()
        if hi - lo < 1e-12 and spec.bins > 1:
            warnings.warn("constant feature coordinate collapsed to one bin",
                          DegenerateFeaturesWarning)
            edges.append(np.empty(0))
            continue
        edges.append(np.linspace(lo, hi, spec.bins + 1)[1:-1])
    n_cells = 1
    for e in edges:
        n_cells *= len(e) + 1
    return edges, n_cells


def fit(targets, features, spec: RegressionSpec) -> FittedPredictor:
    """Ridge least-squares fit of targets on basis(features).

    targets: [P] or [P, q]; features: [P] or [P, F].
    """
    y = np.asarray(targets, dtype=np.float64)
    scalar_target = y.ndim == 1
    y2 = y[:, None] if scalar_target else y
    features = _as_columns(features)
    if features.shape[0] != y2.shape[0]:
        raise ValueError("targets and features must be aligned")
    mean = features.mean(axis=0)
    scale = features.std(axis=0)
    keep = scale > 1e-12
    if spec.basis == PIECEWISE and spec.bins > 1 and not keep.all():
        warnings.warn("constant feature coordinate collapsed before binning",
                      DegenerateFeaturesWarning)
    z = (features[:, keep] - mean[keep]) / scale[keep]
    extra = _fit_extra(spec, z)
    phi = _design(spec, z, extra)
    gram = phi.T @ phi
    gscale = np.trace(gram) / max(gram.shape[0], 1) + 1.0
    lam = (spec.ridge + _RIDGE_FLOOR) * gscale
    coef = np.linalg.solve(gram + lam * np.eye(gram.shape[0]), phi.T @ y2)
    if spec.basis == PIECEWISE:
        # cells with no training points get the overall mean, not ~zero
        counts = phi.sum(axis=0)
        if np.any(counts == 0):
            coef[counts == 0, :] = y2.mean(axis=0)
    return FittedPredictor(spec, mean[keep], scale[keep], keep, extra, coef,
                           scalar_target)


def fit_predict(targets, features, spec: RegressionSpec):
    """Fit and evaluate at the training points in one call."""
    pred = fit(targets, features, spec)
    return pred(features), pred
