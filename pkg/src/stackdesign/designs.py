"""Nested quasi-uniform designs from an unscrambled Sobol' sequence.

Designs at every fidelity level are prefixes of one deterministic point
stream, so ``X_L ⊆ X_{L-1} ⊆ ... ⊆ X_1`` holds by construction.  The origin
(index 0 of the stream) is skipped.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

__all__ = [
    "Domain",
    "MAX_DIM",
    "sobol_unit",
    "sobol_prefix",
    "shifted_sobol",
    "fill_distance",
    "DesignLadder",
]

# Joe & Kuo direction numbers (new-joe-kuo-6.21201), dimensions 2..20.
# Columns: d  s  a  m_1 .. m_s
_JOE_KUO = """\
2 1 0 1
3 2 1 1 3
4 3 1 1 3 1
5 3 2 1 1 1
6 4 1 1 1 3 3
7 4 4 1 3 5 13
8 5 2 1 1 5 5 17
9 5 4 1 1 5 5 5
10 5 7 1 1 7 11 19
11 5 11 1 1 5 1 1
12 5 13 1 1 1 3 11
13 5 14 1 3 5 5 31
14 6 1 1 3 3 9 7 49
15 6 13 1 1 1 15 21 21
16 6 16 1 3 1 13 27 49
17 6 19 1 1 1 15 7 5
18 6 22 1 3 1 15 13 25
19 6 25 1 1 5 5 19 61
20 7 1 1 3 7 11 23 15 103
"""

MAX_DIM = 20
_BITS = 32


def _parse_table(text):
    rows = {}
    for line in text.strip().splitlines():
        vals = [int(t) for t in line.split()]
        d, s, a, m = vals[0], vals[1], vals[2], vals[3:]
        if len(m) != s:
            raise ValueError(f"malformed direction-number row for d={d}")
        rows[d] = (s, a, m)
    return rows


def _direction_numbers(d):
    rows = _parse_table(_JOE_KUO)
    V = np.zeros((d, _BITS), dtype=np.uint64)
    V[0] = [1 << (_BITS - 1 - k) for k in range(_BITS)]
    for j in range(1, d):
        s, a, m = rows[j + 1]
        v = [0] * _BITS
        for k in range(min(s, _BITS)):
            v[k] = m[k] << (_BITS - 1 - k)
        for k in range(s, _BITS):
            val = v[k - s] ^ (v[k - s] >> s)
            for i in range(1, s):
                if (a >> (s - 1 - i)) & 1:
                    val ^= v[k - i]
            v[k] = val
        V[j] = v
    return V


_V_CACHE = {}


def sobol_unit(d, n, skip=1):
    """Points ``skip .. skip + n - 1`` of the Sobol' stream in ``[0, 1)^d``."""
    if not 1 <= d <= MAX_DIM:
        raise ValueError(f"Sobol' dimension must be in [1, {MAX_DIM}], got {d}")
    if n < 0:
        raise ValueError("n must be non-negative")
    if skip + n > 2**_BITS:
        raise ValueError("requested more points than the 32-bit generator provides")
    if d not in _V_CACHE:
        _V_CACHE[d] = _direction_numbers(d)
    V = _V_CACHE[d]
    idx = np.arange(skip, skip + n, dtype=np.uint64)
    gray = idx ^ (idx >> np.uint64(1))
    acc = np.zeros((n, d), dtype=np.uint64)
    for k in range(_BITS):
        bit = ((gray >> np.uint64(k)) & np.uint64(1)).astype(bool)
        if not bit.any():
            continue
        acc[bit] ^= V[:, k]
    return acc.astype(np.float64) / float(2**_BITS)


@dataclass(frozen=True)
class Domain:
    """Axis-aligned box ``prod_j [lower_j, upper_j]``."""

    lower: tuple
    upper: tuple

    def __post_init__(self):
        lo = tuple(float(v) for v in np.atleast_1d(self.lower))
        hi = tuple(float(v) for v in np.atleast_1d(self.upper))
        if len(lo) != len(hi) or not lo:
            raise ValueError("lower and upper must have the same non-zero length")
        if any(not h > l for l, h in zip(lo, hi)):
            raise ValueError(f"empty domain: lower={lo}, upper={hi}")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def unit(cls, d):
        return cls((0.0,) * d, (1.0,) * d)

    @property
    def dim(self):
        return len(self.lower)

    @property
    def sides(self):
        return np.asarray(self.upper) - np.asarray(self.lower)

    @property
    def volume(self):
        return float(np.prod(self.sides))

    def from_unit(self, U):
        return np.asarray(self.lower) + np.asarray(U) * self.sides

    def grid(self, resolution):
        axes = [np.linspace(l, h, resolution) for l, h in zip(self.lower, self.upper)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def uniform(self, n, seed):
        rng = np.random.default_rng(seed)
        return self.from_unit(rng.random((n, self.dim)))

    def to_dict(self):
        return {"lower": list(self.lower), "upper": list(self.upper)}

    @classmethod
    def from_dict(cls, data):
        return cls(tuple(data["lower"]), tuple(data["upper"]))


def sobol_prefix(d, n, domain=None):
    """First ``n`` nonzero Sobol' points mapped onto ``domain`` (unit cube by default)."""
    if n < 1:
        raise ValueError("n must be at least 1")
    domain = Domain.unit(d) if domain is None else domain
    if domain.dim != d:
        raise ValueError(f"domain has dimension {domain.dim}, expected {d}")
    return domain.from_unit(sobol_unit(d, n))


def shifted_sobol(domain, n, seed):
    """Randomly shifted (mod 1) Sobol' points; used as a candidate set distinct from designs."""
    rng = np.random.default_rng(seed)
    shift = rng.random(domain.dim)
    U = np.mod(sobol_unit(domain.dim, n, skip=0) + shift, 1.0)
    return domain.from_unit(U)


def fill_distance(X, domain, resolution=256):
    """Numerical fill distance ``sup_x min_i ||x - x_i||`` over ``domain``.

    The sup is taken over a ``resolution**d`` grid for ``d <= 2`` and over
    ``2**16`` Sobol' candidates otherwise, so the value underestimates the
    true fill distance and converges from below as the evaluation set grows.
    """
    X = np.asarray(X, dtype=float)
    if X.size == 0:
        raise ValueError("fill distance of an empty design is undefined")
    X = X.reshape(len(X), -1) if X.ndim > 1 else X.reshape(-1, domain.dim)
    if domain.dim <= 2:
        cand = domain.grid(resolution)
    else:
        cand = domain.from_unit(sobol_unit(domain.dim, 2**16, skip=0))
    dist, _ = cKDTree(X).query(cand)
    return float(np.max(dist))


@dataclass
class DesignLadder:
    """Nested prefix designs over one Sobol' stream on a domain."""

    domain: Domain

    def __post_init__(self):
        self._cache = np.empty((0, self.domain.dim))

    def points(self, n):
        if n > len(self._cache):
            self._cache = sobol_prefix(self.domain.dim, max(n, 2 * len(self._cache)), self.domain)
        return self._cache[:n].copy()

    def designs(self, sizes):
        """Designs for non-increasing prefix sizes ``n_1 >= n_2 >= ...``."""
        sizes = list(sizes)
        if any(b > a for a, b in zip(sizes, sizes[1:])):
            raise ValueError(f"prefix sizes must be non-increasing, got {sizes}")
        return [self.points(n) for n in sizes]
