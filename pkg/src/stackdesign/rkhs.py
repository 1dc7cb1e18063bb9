"""Single-level RKHS interpolation with Matérn kernels.

Fitting, prediction, the power function, the data-driven RKHS-norm
estimate ``sqrt(z^T Phi^{-1} z)``, closed-form leave-one-out
cross-validation, and LOOCV-based hyperparameter selection.
"""
from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .designs import shifted_sobol
from .exceptions import FactorizationFailure
from .kernels import (
    GramFactor,
    KernelSpec,
    _as_points,
    _check_distinct,
    factorize,
    gram_matrix,
    kernel_matrix,
)

__all__ = [
    "Interpolant",
    "LengthscaleSearch",
    "DEFAULT_NU_GRID",
    "fit",
    "loocv_error",
    "fit_hyperparameters",
    "evaluation_points",
    "function_norm",
    "norm_of_power_function",
]

log = logging.getLogger(__name__)

DEFAULT_NU_GRID = (0.5, 1.5, 2.5, 3.5, 4.5)

L2 = "l2"
LINF = "linf"


def _check_norm(norm):
    norm = norm.lower()
    if norm not in (L2, LINF):
        raise ValueError(f"norm must be 'l2' or 'linf', got {norm!r}")
    return norm


@dataclass
class Interpolant:
    """Fitted interpolant ``P(x) = sum_i coeffs_i Phi(x, x_i)``."""

    spec: KernelSpec
    design: np.ndarray
    z: np.ndarray
    coeffs: np.ndarray
    gram: GramFactor = field(repr=False)

    @property
    def jitter_used(self):
        return self.gram.jitter

    @property
    def n(self):
        return len(self.z)

    def _points(self, x):
        x = np.asarray(x, dtype=float)
        single = x.ndim == 0 or (x.ndim == 1 and (self.spec.dim > 1 or x.size == 1))
        return _as_points(x, self.spec.dim), single

    def predict(self, x):
        """Interpolant value at one point or at each row of an ``(m, d)`` array."""
        X, single = self._points(x)
        out = kernel_matrix(self.spec, X, self.design) @ self.coeffs
        return float(out[0]) if single else out

    def power_function(self, x):
        """``sqrt(max(0, Phi(x, x) - k(x)^T Phi^{-1} k(x)))``."""
        X, single = self._points(x)
        K = kernel_matrix(self.spec, self.design, X)
        W = self.gram.half_solve(K)
        s2 = np.maximum(1.0 - np.einsum("ij,ij->j", W, W), 0.0)
        out = np.sqrt(s2)
        return float(out[0]) if single else out

    def rkhs_norm_estimate(self):
        """``sqrt(z^T Phi^{-1} z)``, the RKHS norm of the interpolant itself."""
        return float(np.sqrt(max(float(self.z @ self.coeffs), 0.0)))

    @classmethod
    def from_parts(cls, spec, design, z, jitter):
        """Rebuild an interpolant with a known jitter (used when reloading)."""
        design = _as_points(design, spec.dim)
        z = np.asarray(z, dtype=float)
        _check_distinct(design)
        K = kernel_matrix(spec, design, design)
        gram = factorize(K, ladder=(jitter / float(np.mean(np.diag(K))),) if jitter else (0.0,))
        return cls(spec=spec, design=design, z=z, coeffs=gram.solve(z), gram=gram)


def fit(spec, X, z):
    """Interpolate data ``z`` observed at design ``X`` with kernel ``spec``."""
    X = _as_points(X, spec.dim)
    z = np.asarray(z, dtype=float).ravel()
    if len(X) != len(z):
        raise ValueError(f"{len(X)} design points but {len(z)} responses")
    if len(z) < 1:
        raise ValueError("need at least one design point")
    gram = gram_matrix(spec, X)
    return Interpolant(spec=spec, design=X, z=z, coeffs=gram.solve(z), gram=gram)


def _loocv_from_kernel(K, z):
    gram = factorize(K)
    inv = gram.inverse()
    c = inv @ z
    resid = c / np.diag(inv)
    return float(np.mean(resid**2))


def loocv_error(spec, X, z):
    """Closed-form leave-one-out error ``(1/n) ||diag(Phi^{-1})^{-1} Phi^{-1} z||^2``."""
    X = _as_points(X, spec.dim)
    z = np.asarray(z, dtype=float).ravel()
    if len(X) != len(z):
        raise ValueError(f"{len(X)} design points but {len(z)} responses")
    if len(z) < 2:
        raise ValueError("LOOCV needs at least two points")
    _check_distinct(X)
    return _loocv_from_kernel(kernel_matrix(spec, X, X), z)


@dataclass
class LengthscaleSearch:
    """Two-stage lengthscale search: log grid, then a Nelder-Mead polish.

    ``side`` is the per-dimension domain side length; when omitted the data
    range is used.  Bounds are multiples of ``side``; lengthscales longer than
    the domain inflate the RKHS-norm estimate, hence ``high = 1``.  For
    ``d > max_grid_dim`` the grid is isotropic.
    """

    side: tuple = None
    grid_size: int = 8
    low: float = 0.05
    high: float = 1.0
    polish: bool = True
    polish_maxiter: int = 100
    polish_low: float = 0.05
    polish_high: float = 1.0
    max_grid_dim: int = 3


def _side_lengths(X, search):
    if search.side is not None:
        side = np.broadcast_to(np.asarray(search.side, dtype=float), (X.shape[1],))
    else:
        side = np.ptp(X, axis=0)
    return np.where(side > 0, side, 1.0)


def fit_hyperparameters(X, z, nu_grid=DEFAULT_NU_GRID, search=None):
    """Choose ``(nu, lengthscales)`` minimizing the closed-form LOOCV error.

    Every ``nu`` in ``nu_grid`` is crossed with a log-spaced lengthscale grid;
    the winner's lengthscales are then polished by Nelder-Mead in log space
    with ``nu`` held fixed.
    """
    search = search or LengthscaleSearch()
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    z = np.asarray(z, dtype=float).ravel()
    n, d = X.shape
    if n != len(z):
        raise ValueError(f"{n} design points but {len(z)} responses")
    if n < 3:
        raise ValueError("hyperparameter selection needs at least three points")
    _check_distinct(X)

    side = _side_lengths(X, search)

    def objective(nu, ls):
        try:
            return _loocv_from_kernel(kernel_matrix(KernelSpec(nu, tuple(ls)), X, X), z)
        except FactorizationFailure:
            return np.inf

    base = np.geomspace(search.low, search.high, search.grid_size)
    if d <= search.max_grid_dim:
        candidates = [np.array(c) * side for c in itertools.product(base, repeat=d)]
    else:
        candidates = [b * side for b in base]

    best = (np.inf, None, None)
    for nu in nu_grid:
        for ls in candidates:
            val = objective(nu, ls)
            if val < best[0]:
                best = (val, nu, ls)
    if best[1] is None:
        raise FactorizationFailure("every hyperparameter candidate failed to factorize")
    best_val, best_nu, best_ls = best

    if search.polish:
        lo = np.log(search.polish_low * side)
        hi = np.log(search.polish_high * side)
        res = optimize.minimize(
            lambda t: objective(best_nu, np.exp(np.clip(t, lo, hi))),
            np.log(best_ls),
            method="Nelder-Mead",
            bounds=list(zip(lo, hi)),
            options={"maxiter": search.polish_maxiter, "xatol": 1e-3, "fatol": 0.0},
        )
        if np.isfinite(res.fun) and res.fun < best_val:
            best_val, best_ls = float(res.fun), np.exp(np.clip(res.x, lo, hi))

    log.debug("selected nu=%s lengthscales=%s loocv=%.4g", best_nu, best_ls, best_val)
    return KernelSpec(nu=best_nu, lengthscales=tuple(best_ls))


def evaluation_points(domain, norm, budget, seed):
    """Fixed point set for estimating a function norm over ``domain``.

    L2 uses ``budget`` seeded uniform points; Linf uses ``budget`` shifted
    Sobol' candidates (distinct from the design stream).
    """
    norm = _check_norm(norm)
    if budget < 1:
        raise ValueError("budget must be at least 1")
    if norm == L2:
        return domain.uniform(budget, seed)
    return shifted_sobol(domain, budget, seed)


def function_norm(values, norm, domain):
    """L2 (``sqrt(Vol * mean(v^2))``) or Linf (``max |v|``) of sampled values."""
    norm = _check_norm(norm)
    values = np.abs(np.asarray(values, dtype=float))
    if norm == L2:
        return float(np.sqrt(domain.volume * np.mean(values**2)))
    return float(np.max(values))


def norm_of_power_function(interp, norm, domain, budget=None, seed=0, points=None):
    """Monte Carlo (L2) or candidate-max (Linf) norm of the power function."""
    norm = _check_norm(norm)
    if points is None:
        if budget is None:
            budget = 2000 if norm == L2 else 4096
        points = evaluation_points(domain, norm, budget, seed)
    return function_norm(interp.power_function(points), norm, domain)
