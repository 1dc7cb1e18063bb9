"""Matérn kernels with anisotropic (diagonal) lengthscales.

The kernel between two inputs is ``phi_nu(||(x - y) / theta||_2)`` where

    phi_nu(r) = 2**(1 - nu) / Gamma(nu) * (r * sqrt(2 nu))**nu * K_nu(r * sqrt(2 nu))

and ``K_nu`` is the modified Bessel function of the second kind.  For
half-integer ``nu`` the closed form (a polynomial times an exponential) is
used; other values go through :func:`scipy.special.kv`.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from math import factorial

import numpy as np
from scipy import linalg, special
from scipy.spatial import distance

from .exceptions import FactorizationFailure

__all__ = [
    "KernelSpec",
    "GramFactor",
    "matern_phi",
    "kernel_eval",
    "kernel_matrix",
    "gram_matrix",
    "JITTER_LADDER",
]

# Relative jitters tried in order; 0 first so well-conditioned systems stay exact.
JITTER_LADDER = (0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6)

_UNDERFLOW_ARG = 700.0


def _is_half_integer(nu):
    p = nu - 0.5
    return p >= 0 and abs(p - round(p)) < 1e-12


def _half_integer_coefficients(p):
    # phi_{p+1/2}(r) = exp(-s) * sum_i c_i s**(p-i),  s = r sqrt(2 nu)
    # exact rationals so the constant term is exactly 1
    return [
        float(Fraction(factorial(p) * factorial(p + i) * 2 ** (p - i),
                       factorial(2 * p) * factorial(i) * factorial(p - i)))
        for i in range(p + 1)
    ]


def matern_phi(r, nu):
    """Radial Matérn profile, normalized so that ``matern_phi(0, nu) == 1``.

    Parameters
    ----------
    r : float or array_like
        Non-negative scaled distances.
    nu : float
        Smoothness, ``nu > 0``.

    Returns
    -------
    float or ndarray
        Values in ``[0, 1]``; arguments with ``r * sqrt(2 nu) > 700`` saturate to 0.
    """
    if nu <= 0:
        raise ValueError(f"nu must be positive, got {nu}")
    r = np.asarray(r, dtype=float)
    if np.any(r < 0):
        raise ValueError("r must be non-negative")
    s = r * np.sqrt(2.0 * nu)
    out = np.zeros_like(s)
    live = s <= _UNDERFLOW_ARG
    sl = s[live]

    if _is_half_integer(nu):
        p = int(round(nu - 0.5))
        poly = np.zeros_like(sl)
        for c in _half_integer_coefficients(p):
            poly = poly * sl + c
        out[live] = np.exp(-sl) * poly
    else:
        vals = np.ones_like(sl)
        pos = sl > 0
        sp = sl[pos]
        log_pref = (1.0 - nu) * np.log(2.0) - special.gammaln(nu)
        # kve(nu, s) = kv(nu, s) * exp(s), keeps the large-s tail finite
        vals[pos] = np.exp(log_pref + nu * np.log(sp) - sp) * special.kve(nu, sp)
        out[live] = np.minimum(vals, 1.0)

    if out.ndim == 0:
        return float(out)
    return out


@dataclass(frozen=True)
class KernelSpec:
    """Matérn smoothness and per-dimension lengthscales (diagonal of Theta)."""

    nu: float
    lengthscales: tuple

    def __post_init__(self):
        ls = tuple(float(v) for v in np.atleast_1d(self.lengthscales))
        object.__setattr__(self, "lengthscales", ls)
        object.__setattr__(self, "nu", float(self.nu))
        if not self.nu > 0:
            raise ValueError(f"nu must be positive, got {self.nu}")
        if len(ls) < 1:
            raise ValueError("need at least one lengthscale")
        if any(not v > 0 for v in ls):
            raise ValueError(f"lengthscales must be positive, got {ls}")

    @property
    def dim(self):
        return len(self.lengthscales)

    @property
    def inverse_scale_norm(self):
        """Spectral norm of Theta^{-1}, i.e. the largest inverse lengthscale."""
        return 1.0 / min(self.lengthscales)

    def to_dict(self):
        return {"nu": self.nu, "lengthscales": list(self.lengthscales)}

    @classmethod
    def from_dict(cls, data):
        return cls(nu=data["nu"], lengthscales=tuple(data["lengthscales"]))


def _as_points(X, d):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(1, -1) if d > 1 or X.size == 1 else X.reshape(-1, 1)
    if X.ndim != 2 or X.shape[1] != d:
        raise ValueError(f"expected points of dimension {d}, got array of shape {X.shape}")
    return X


def kernel_matrix(spec, X, Y):
    """Cross-kernel matrix ``[Phi(x_i, y_j)]`` of shape ``(len(X), len(Y))``."""
    ls = np.asarray(spec.lengthscales)
    X = _as_points(X, spec.dim) / ls
    Y = _as_points(Y, spec.dim) / ls
    return matern_phi(distance.cdist(X, Y), spec.nu)


def kernel_eval(spec, x, y):
    """Kernel value between two single points."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if x.shape != (spec.dim,) or y.shape != (spec.dim,):
        raise ValueError(
            f"dimension mismatch: spec has d={spec.dim}, got {x.shape} and {y.shape}"
        )
    # |x - y| is symmetric in floating point, so the result is exactly symmetric
    r = np.sqrt(np.sum((np.abs(x - y) / np.asarray(spec.lengthscales)) ** 2))
    return matern_phi(r, spec.nu)


@dataclass
class GramFactor:
    """Cholesky factor of ``Phi + jitter * I``."""

    matrix: np.ndarray
    chol: np.ndarray = field(repr=False)
    jitter: float

    def solve(self, b):
        return linalg.cho_solve((self.chol, True), b, check_finite=False)

    def half_solve(self, b):
        """Return ``L^{-1} b`` for the lower Cholesky factor ``L``."""
        return linalg.solve_triangular(self.chol, b, lower=True, check_finite=False)

    def jittered(self):
        return self.matrix + self.jitter * np.eye(len(self.matrix))

    def inverse(self):
        return self.solve(np.eye(len(self.matrix)))


def _check_distinct(X):
    if len(X) < 2:
        return
    order = np.lexsort(X.T[::-1])
    Xs = X[order]
    dup = np.all(Xs[1:] == Xs[:-1], axis=1)
    if np.any(dup):
        i = int(order[np.argmax(dup) + 1])
        raise FactorizationFailure(f"duplicate design point at index {i}: {X[i].tolist()}")


def factorize(K, ladder=JITTER_LADDER):
    """Cholesky-factorize a symmetric kernel matrix, escalating jitter on failure."""
    n = len(K)
    scale = float(np.mean(np.diag(K))) if n else 1.0
    for rel in ladder:
        delta = rel * scale
        try:
            chol = linalg.cholesky(K + delta * np.eye(n), lower=True, check_finite=False)
        except linalg.LinAlgError:
            continue
        if np.all(np.isfinite(chol)) and np.min(np.diag(chol)) > 0:
            return GramFactor(matrix=K, chol=chol, jitter=delta)
    raise FactorizationFailure(
        f"kernel matrix of size {n} not positive definite at jitter {ladder[-1]:g}"
    )


def gram_matrix(spec, X, ladder=JITTER_LADDER):
    """Factorize the Gram matrix of ``X`` under ``spec``.

    Raises
    ------
    FactorizationFailure
        On duplicate points or when the jitter ceiling is reached.
    """
    X = _as_points(X, spec.dim)
    _check_distinct(X)
    K = kernel_matrix(spec, X, X)
    return factorize(K, ladder)
