"""Multi-level emulator ``f_hat_L(x) = sum_l P_l(x)`` built from per-level refinements."""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .designs import Domain
from .kernels import KernelSpec
from .rkhs import Interpolant, _check_norm, norm_of_power_function

__all__ = ["LevelState", "MultiLevelEmulator", "EMULATOR_SCHEMA"]

EMULATOR_SCHEMA = "stackdesign.emulator/1"


@dataclass
class LevelState:
    """One fidelity level: its design, refinement data and fitted interpolant.

    ``z`` holds ``f_l - f_{l-1}`` on ``design`` (with ``f_0 = 0``).
    """

    level: int
    xi: float
    cost: float
    interpolant: Interpolant
    norm_estimate: float
    sigma_norm: float = None

    @property
    def design(self):
        return self.interpolant.design

    @property
    def z(self):
        return self.interpolant.z

    @property
    def n(self):
        return self.interpolant.n

    @property
    def spec(self):
        return self.interpolant.spec

    def to_dict(self):
        it = self.interpolant
        return {
            "level": self.level,
            "xi": self.xi,
            "cost": self.cost,
            "kernel": it.spec.to_dict(),
            "jitter": it.jitter_used,
            "design": it.design.tolist(),
            "z": it.z.tolist(),
            "coeffs": it.coeffs.tolist(),
            "norm_estimate": self.norm_estimate,
            "sigma_norm": self.sigma_norm,
        }

    @classmethod
    def from_dict(cls, data):
        spec = KernelSpec.from_dict(data["kernel"])
        interp = Interpolant.from_parts(spec, data["design"], data["z"], data["jitter"])
        return cls(
            level=int(data["level"]),
            xi=float(data["xi"]),
            cost=float(data["cost"]),
            interpolant=interp,
            norm_estimate=float(data["norm_estimate"]),
            sigma_norm=None if data.get("sigma_norm") is None else float(data["sigma_norm"]),
        )


@dataclass
class MultiLevelEmulator:
    """Sum of per-level RKHS interpolants over nested designs ``X_L ⊆ ... ⊆ X_1``."""

    levels: list
    xi0: float
    T: int
    domain: Domain
    norm: str = "l2"
    alpha_hat: float = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        sizes = [lv.n for lv in self.levels]
        if any(b > a for a, b in zip(sizes, sizes[1:])):
            raise ValueError(f"level designs are not nested: sizes {sizes}")
        for lo, hi in zip(self.levels, self.levels[1:]):
            if not np.array_equal(hi.design, lo.design[: hi.n]):
                raise ValueError(f"design of level {hi.level} is not a prefix of level {lo.level}")

    @property
    def L(self):
        return len(self.levels)

    @property
    def dim(self):
        return self.domain.dim

    def _rows(self, x):
        x = np.asarray(x, dtype=float)
        single = x.ndim == 0 or (x.ndim == 1 and (self.dim > 1 or x.size == 1))
        X = x.reshape(1, -1) if single else (x.reshape(-1, 1) if x.ndim == 1 else x)
        if X.ndim != 2 or X.shape[1] != self.dim:
            raise ValueError(f"expected points of dimension {self.dim}, got shape {x.shape}")
        return X, single

    def level_predictions(self, x):
        """Array of shape ``(L, m)`` with each ``P_l`` at the rows of ``x``."""
        X, _ = self._rows(x)
        return np.array([lv.interpolant.predict(X) for lv in self.levels]).reshape(self.L, len(X))

    def predict(self, x):
        X, single = self._rows(x)
        out = self.level_predictions(X).sum(axis=0)
        return float(out[0]) if single else out

    def emulation_error_bound(self, norm=None, budget=None, seed=0):
        """``sum_l ||sigma_l|| * norm_estimate_l``.

        Uses the stored power-function norms when ``norm`` matches the
        emulator's norm; otherwise they are recomputed.
        """
        norm = self.norm if norm is None else _check_norm(norm)
        total = 0.0
        for lv in self.levels:
            if norm == self.norm and lv.sigma_norm is not None:
                s = lv.sigma_norm
            else:
                s = norm_of_power_function(lv.interpolant, norm, self.domain, budget, seed)
            total += s * lv.norm_estimate
        return total

    def error_interval(self, x, alpha=None):
        """Approximate pointwise interval for the limiting solution ``f_inf(x)``.

        Half-width ``|P_L(x)| / (T**alpha - 1) + sum_l sigma_l(x) norm_estimate_l``.
        """
        alpha = self.alpha_hat if alpha is None else alpha
        if self.L < 2:
            raise ValueError("error interval needs at least two levels")
        if alpha is None or not alpha > 0:
            raise ValueError(f"alpha must be positive, got {alpha}")
        X, single = self._rows(x)
        preds = self.level_predictions(X)
        center = preds.sum(axis=0)
        half = np.abs(preds[-1]) / (float(self.T) ** alpha - 1.0)
        for lv in self.levels:
            half = half + lv.interpolant.power_function(X) * lv.norm_estimate
        lower, upper = center - half, center + half
        if single:
            return float(lower[0]), float(upper[0])
        return lower, upper

    def to_dict(self):
        return {
            "schema": EMULATOR_SCHEMA,
            "xi0": self.xi0,
            "T": self.T,
            "norm": self.norm,
            "alpha_hat": self.alpha_hat,
            "domain": self.domain.to_dict(),
            "levels": [lv.to_dict() for lv in self.levels],
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, data):
        if data.get("schema") != EMULATOR_SCHEMA:
            raise ValueError(f"unsupported emulator schema {data.get('schema')!r}")
        return cls(
            levels=[LevelState.from_dict(d) for d in data["levels"]],
            xi0=float(data["xi0"]),
            T=int(data["T"]),
            domain=Domain.from_dict(data["domain"]),
            norm=data.get("norm", "l2"),
            alpha_hat=data.get("alpha_hat"),
            meta=data.get("meta", {}),
        )

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))
