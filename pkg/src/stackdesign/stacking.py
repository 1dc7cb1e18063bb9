"""Stacking designs: batch-sequential multi-fidelity sampling to a target accuracy.

Each stage adds one fidelity level.  Sample sizes follow ``n_l = floor(mu r_l)``
with ``mu`` chosen so the power-function bound on the emulation error is at
most ``epsilon / 2``; from three levels on, a Richardson-type estimate of the
remaining simulation error decides whether to stop.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .benchmarks import CostLedger
from .designs import DesignLadder
from .exceptions import BudgetInfeasible, MaxLevelsExceeded, SimulatorError
from .multilevel import LevelState, MultiLevelEmulator
from .rkhs import (
    DEFAULT_NU_GRID,
    LengthscaleSearch,
    _check_norm,
    evaluation_points,
    fit,
    fit_hyperparameters,
    function_norm,
)

__all__ = [
    "StackingConfig",
    "StageReport",
    "MuResult",
    "TheoreticalAllocation",
    "allocation_ratios",
    "realize_allocation",
    "find_mu",
    "estimate_alpha",
    "simulation_error_bound",
    "theoretical_allocation",
    "StackingEngine",
    "run_stacking",
    "STAGE_CSV_COLUMNS",
    "stages_to_csv",
]

log = logging.getLogger(__name__)


@dataclass
class StackingConfig:
    """Settings for one stacking campaign.

    ``n0`` defaults to ``5 d``.  ``mc_budget`` defaults to 2000 uniform points
    for the L2 norm and 4096 shifted Sobol' candidates for Linf.  Setting
    ``alpha`` pins the simulation-error rate instead of estimating it.
    """

    epsilon: float
    norm: str = "l2"
    n0: int = None
    T: int = 2
    xi0: float = 1.0
    max_levels: int = 10
    nu_grid: tuple = DEFAULT_NU_GRID
    mc_budget: int = None
    seed: int = 0
    alpha: float = None
    mu_rtol: float = 0.01
    max_total_points: int = 1_000_000
    max_level_points: int = 4000
    search: LengthscaleSearch = None
    shared_nu: bool = True

    def __post_init__(self):
        self.validate()

    def validate(self):
        if not (isinstance(self.epsilon, (int, float)) and self.epsilon > 0 and math.isfinite(self.epsilon)):
            raise ValueError(f"epsilon must be a positive number, got {self.epsilon!r}")
        self.norm = _check_norm(self.norm)
        if self.n0 is not None and self.n0 < 3:
            raise ValueError(f"n0 must be at least 3, got {self.n0}")
        if int(self.T) != self.T or self.T < 2:
            raise ValueError(f"T must be an integer >= 2, got {self.T}")
        if not self.xi0 > 0:
            raise ValueError(f"xi0 must be positive, got {self.xi0}")
        if self.max_levels < 1:
            raise ValueError(f"max_levels must be at least 1, got {self.max_levels}")
        if self.alpha is not None and not self.alpha > 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if self.mc_budget is not None and self.mc_budget < 1:
            raise ValueError(f"mc_budget must be at least 1, got {self.mc_budget}")
        if not self.nu_grid or any(not nu > 0 for nu in self.nu_grid):
            raise ValueError(f"nu_grid must hold positive values, got {self.nu_grid}")

    @property
    def budget(self):
        if self.mc_budget is not None:
            return self.mc_budget
        return 2000 if self.norm == "l2" else 4096

    def to_dict(self):
        out = asdict(self)
        out["nu_grid"] = list(self.nu_grid)
        return out


@dataclass
class StageReport:
    """Summary of one stage of the campaign (one row block of the stage table)."""

    L: int
    xi: list
    cost_per_run: list
    n: list
    emulation_bound: float
    cumulative_cost: float
    converged: bool
    mu: float
    alpha_hat: float = None
    simulation_bound: float = None
    updated_emulation_bound: float = None
    kernels: list = field(default_factory=list)
    norm_estimates: list = field(default_factory=list)

    def to_dict(self):
        return asdict(self)


STAGE_CSV_COLUMNS = (
    "L", "l", "xi_l", "C_l", "n_l", "alpha_hat", "sim_bound", "emu_bound", "cum_cost", "converged",
)


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    return repr(float(v)) if isinstance(v, float) else str(v)


def stages_to_csv(reports):
    """Stage table as CSV text, one row per (stage, level)."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(STAGE_CSV_COLUMNS)
    for r in reports:
        for i in range(r.L):
            w.writerow([_fmt(v) for v in (
                r.L, i + 1, r.xi[i], r.cost_per_run[i], r.n[i], r.alpha_hat,
                r.simulation_bound, r.emulation_bound, r.cumulative_cost, r.converged,
            )])
    return buf.getvalue()


def allocation_ratios(levels, d):
    """Optimal sample-size ratios ``r_l`` for a fixed number of levels.

    ``r_l = (||Theta_l^{-1}||^{nu_l} * norm_l / C_l) ** (d / (nu_min + d))``
    where ``levels`` holds ``(KernelSpec, C_l, norm_estimate_l)`` triples.
    """
    levels = list(levels)
    if not levels:
        raise ValueError("need at least one level")
    nu_min = min(spec.nu for spec, _, _ in levels)
    out = []
    for spec, cost, norm in levels:
        if not cost > 0:
            raise ValueError(f"per-run cost must be positive, got {cost}")
        if norm < 0:
            raise ValueError(f"norm estimate must be non-negative, got {norm}")
        base = spec.inverse_scale_norm**spec.nu * norm / cost
        out.append(base ** (d / (nu_min + d)))
    return np.array(out)


def realize_allocation(mu, ratios, floors):
    """``n_l = max(floor(mu r_l), floor_l)``, then made non-increasing in ``l``."""
    n = [max(int(math.floor(mu * r)), int(f)) for r, f in zip(ratios, floors)]
    for i in range(len(n) - 2, -1, -1):
        n[i] = max(n[i], n[i + 1])
    return tuple(n)


@dataclass
class MuResult:
    mu: float
    n: tuple
    bound: float
    sigma_norms: tuple


def find_mu(sigma_norm, norm_estimates, ratios, floors, epsilon, rtol=0.01,
            max_total_points=1_000_000, max_level_points=None):
    """Smallest ``mu`` whose allocation keeps ``sum_l ||sigma_l|| norm_l <= epsilon / 2``.

    ``sigma_norm(i, n)`` returns the power-function norm of level ``i`` (0-based)
    with its first ``n`` design points.  The feasibility indicator is a
    monotone step function of ``mu``; ``mu`` is doubled until feasible and then
    bisected until the bracketing allocations are adjacent, or until the
    achieved bound is within ``rtol`` of the target.
    """
    ratios = np.asarray(ratios, dtype=float)
    norm_estimates = np.asarray(norm_estimates, dtype=float)
    if np.any(ratios < 0) or not np.any(ratios > 0) and np.any(norm_estimates > 0):
        raise ValueError(f"ratios must be non-negative with at least one positive: {ratios}")
    target = epsilon / 2.0
    evaluated = {}

    def check(n):
        if n in evaluated:
            return evaluated[n]
        if sum(n) > max_total_points or (max_level_points and max(n) > max_level_points):
            raise BudgetInfeasible(
                f"emulation bound cannot reach {target:.4g} within the point cap (allocation {list(n)})"
            )
        sig = tuple(sigma_norm(i, k) for i, k in enumerate(n))
        bound = float(np.dot(sig, norm_estimates))
        evaluated[n] = (bound, sig)
        return evaluated[n]

    pos = ratios > 0
    lo = float(np.min(np.asarray(floors, dtype=float)[pos] / ratios[pos])) if pos.any() else 0.0
    n_lo = realize_allocation(lo, ratios, floors)
    bound, sig = check(n_lo)
    if bound <= target:
        return MuResult(lo, n_lo, bound, sig)
    if not pos.any():
        raise BudgetInfeasible("all ratios are zero but the floor allocation is infeasible")

    # largest mu whose allocation can respect the caps; doubling never passes it
    mu_cap = max_total_points / float(np.sum(ratios))
    if max_level_points:
        mu_cap = min(mu_cap, max_level_points / float(np.max(ratios)))
    hi = max(lo, 1e-12) * 2.0
    while True:
        if hi >= mu_cap:
            hi = max(mu_cap, lo)
        n_hi = realize_allocation(hi, ratios, floors)
        bound, sig = check(n_hi)
        if bound <= target:
            break
        if hi >= mu_cap:
            raise BudgetInfeasible(
                f"emulation bound cannot reach {target:.4g} within the point cap (allocation {list(n_hi)})"
            )
        lo, n_lo = hi, n_hi
        hi *= 2.0

    for _ in range(200):
        if bound >= (1.0 - rtol) * target or hi - lo <= 1e-12 * hi:
            break
        mid = 0.5 * (lo + hi)
        n_mid = realize_allocation(mid, ratios, floors)
        if n_mid == n_hi:
            hi = mid
            continue
        if n_mid == n_lo:
            lo = mid
            continue
        b_mid, s_mid = check(n_mid)
        if b_mid <= target:
            hi, n_hi, bound, sig = mid, n_mid, b_mid, s_mid
        else:
            lo, n_lo = mid, n_mid

    if not bound <= target:
        raise AssertionError(f"allocation {n_hi} violates the emulation target: {bound} > {target}")
    return MuResult(hi, n_hi, bound, sig)


def estimate_alpha(level_evals, T):
    """Average observed order of convergence across levels ``3..L``.

    ``level_evals[l - 1]`` holds ``f_l`` on the first ``n_l`` stream points,
    with ``n_1 >= n_2 >= ...``.  Points where either successive difference is
    negligible (``< 1e-12 (1 + |f|)``) are dropped.
    """
    L = len(level_evals)
    if L < 3:
        raise ValueError(f"need at least three levels to estimate alpha, got {L}")
    if T < 2:
        raise ValueError(f"T must be at least 2, got {T}")
    logT = math.log(T)
    per_level = []
    for l in range(3, L + 1):
        f_l = np.asarray(level_evals[l - 1], dtype=float)
        n = len(f_l)
        f_prev = np.asarray(level_evals[l - 2], dtype=float)[:n]
        f_prev2 = np.asarray(level_evals[l - 3], dtype=float)[:n]
        if len(f_prev) < n or len(f_prev2) < n:
            raise ValueError(f"level {l} design is not nested in the lower levels")
        top = f_prev - f_prev2
        bottom = f_l - f_prev
        keep = (np.abs(bottom) >= 1e-12 * (1 + np.abs(f_l))) & (
            np.abs(top) >= 1e-12 * (1 + np.abs(f_prev))
        )
        if not keep.any():
            raise ValueError(f"every point at level {l} has a negligible refinement")
        per_level.append(float(np.mean(np.log(np.abs(top[keep] / bottom[keep])))) / logT)
    return float(np.mean(per_level))


def simulation_error_bound(interp, T, alpha, norm, domain, budget=None, seed=0, points=None):
    """``||P_L|| / (T**alpha - 1)`` with the norm estimated on a fixed point set."""
    if not alpha > 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    if T < 2:
        raise ValueError(f"T must be at least 2, got {T}")
    norm = _check_norm(norm)
    if points is None:
        budget = budget or (2000 if norm == "l2" else 4096)
        points = evaluation_points(domain, norm, budget, seed)
    return function_norm(interp.predict(points), norm, domain) / (float(T) ** alpha - 1.0)


@dataclass
class TheoreticalAllocation:
    """Asymptotic allocation and cost rates for given error and cost exponents."""

    sample_sizes: np.ndarray
    work: np.ndarray
    regime: str
    cost_exponent: float
    log_exponent: float
    single_fidelity_exponent: float

    @property
    def multilevel_improves(self):
        return self.regime == "high-fidelity-dominated"


def theoretical_allocation(alpha, beta, nu, d, xi_list):
    """Theory-optimal ``n_l ∝ xi_l**((alpha + 2 beta) d / (2 (nu + d)))`` and cost rates.

    The total cost scales as ``eps**cost_exponent * |log eps|**log_exponent``;
    a single-fidelity interpolator scales as ``eps**single_fidelity_exponent``.
    """
    for name, v in (("alpha", alpha), ("beta", beta), ("nu", nu), ("d", d)):
        if not v > 0:
            raise ValueError(f"{name} must be positive, got {v}")
    xi = np.asarray(xi_list, dtype=float)
    if np.any(xi <= 0):
        raise ValueError("fidelity parameters must be positive")
    n = xi ** ((alpha + 2 * beta) * d / (2 * (nu + d)))
    work = n * xi ** (-beta)
    ratio, critical = alpha / beta, 2 * nu / d
    base = -d / nu
    if math.isclose(ratio, critical, rel_tol=1e-12):
        regime, exponent, log_exp = "balanced", base, 1 + d / nu
    elif ratio > critical:
        regime, exponent, log_exp = "low-fidelity-dominated", base, 0.0
    else:
        regime = "high-fidelity-dominated"
        exponent = base - (2 * beta * nu - alpha * d) / (2 * alpha * (nu + d))
        log_exp = 0.0
    return TheoreticalAllocation(
        sample_sizes=n,
        work=work,
        regime=regime,
        cost_exponent=exponent,
        log_exponent=log_exp,
        single_fidelity_exponent=-beta / alpha - d / (2 * nu),
    )


class StackingEngine:
    """Stateful stacking campaign; :meth:`run` can be called again with a smaller
    ``epsilon`` to stack further points on the existing design."""

    def __init__(self, simulator, config, domain=None):
        self.sim = simulator
        self.config = config
        self.domain = domain if domain is not None else getattr(simulator, "domain", None)
        if self.domain is None:
            raise ValueError("a domain is required when the simulator does not define one")
        self.d = self.domain.dim
        self.n0 = config.n0 if config.n0 is not None else 5 * self.d
        self.ladder = DesignLadder(self.domain)
        self.values = []
        self.ledger = CostLedger()
        self.reports = []
        self.L = 0
        self.emulator = None
        self._hyper_cache = {}
        self._nu = None
        self._points = evaluation_points(self.domain, config.norm, config.budget, config.seed)
        self._search = config.search or LengthscaleSearch(side=tuple(self.domain.sides))

    def xi(self, level):
        return self.config.xi0 * float(self.config.T) ** (-level)

    def _evaluate(self, level, start, stop):
        if stop <= start:
            return
        X = self.ladder.points(stop)[start:stop]
        try:
            vals, costs = self.sim.evaluate_many(level, X)
        except SimulatorError as exc:
            exc.args = (f"stage L={self.L}, level {level}: {exc}",) + exc.args[1:]
            raise
        for i, (v, c) in enumerate(zip(vals, costs)):
            self.ledger.record(level, start + i, v, c)
        if level > len(self.values):
            self.values.append(np.asarray(vals, dtype=float))
        else:
            self.values[level - 1] = np.concatenate([self.values[level - 1], vals])

    def _refinement(self, level, n):
        f = self.values[level - 1][:n]
        return f if level == 1 else f - self.values[level - 2][:n]

    def _cost(self, level):
        c = self.sim.cost(level)
        return c if c is not None else self.ledger.mean_cost(level)

    def _hyperparameters(self, level):
        m = len(self.values[level - 1])
        nu_grid = self.config.nu_grid if self._nu is None else (self._nu,)
        key = (level, m, nu_grid)
        if key not in self._hyper_cache:
            self._hyper_cache[key] = fit_hyperparameters(
                self.ladder.points(m), self._refinement(level, m), nu_grid, self._search
            )
        return self._hyper_cache[key]

    def _stage(self):
        cfg, L = self.config, self.L
        counts = [len(v) for v in self.values]
        if cfg.shared_nu and self._nu is None:
            # smoothness is read off the level-1 pilot once and shared by all levels
            self._nu = fit_hyperparameters(
                self.ladder.points(self.n0), self._refinement(1, self.n0), cfg.nu_grid, self._search
            ).nu
        specs = [self._hyperparameters(l) for l in range(1, L + 1)]
        norms = []
        for l, spec in enumerate(specs, start=1):
            m = counts[l - 1]
            current = fit(spec, self.ladder.points(m), self._refinement(l, m))
            norms.append(current.rkhs_norm_estimate())
        costs = [self._cost(l) for l in range(1, L + 1)]
        ratios = allocation_ratios(zip(specs, costs, norms), self.d)
        base = max(self.n0, self.d + 1)
        floors = [max(base, c) for c in counts]

        sigma_cache = {}
        last_checked = {}

        def sigma_norm(i, n):
            key = (i, n)
            if key not in sigma_cache:
                interp = fit(specs[i], self.ladder.points(n), np.zeros(n))
                sigma_cache[key] = function_norm(
                    interp.power_function(self._points), cfg.norm, self.domain
                )
                prev = last_checked.get(i)
                if prev is not None:
                    (pn, ps), s = prev, sigma_cache[key]
                    if (n > pn and s > ps * (1 + 1e-6) + 1e-6) or (n < pn and s < ps * (1 - 1e-6) - 1e-6):
                        log.warning("power-function norm not monotone at level %d: n=%d->%d", i + 1, pn, n)
                last_checked[i] = (n, sigma_cache[key])
            return sigma_cache[key]

        res = find_mu(sigma_norm, norms, ratios, floors, cfg.epsilon, cfg.mu_rtol,
                      cfg.max_total_points, cfg.max_level_points)
        if not res.bound <= cfg.epsilon / 2:
            raise AssertionError("emulation bound above epsilon / 2 after the mu search")

        for l in range(1, L + 1):
            self._evaluate(l, counts[l - 1], res.n[l - 1])

        levels = []
        for l in range(1, L + 1):
            n = res.n[l - 1]
            interp = fit(specs[l - 1], self.ladder.points(n), self._refinement(l, n))
            levels.append(LevelState(
                level=l,
                xi=self.xi(l),
                cost=costs[l - 1],
                interpolant=interp,
                norm_estimate=interp.rkhs_norm_estimate(),
                sigma_norm=res.sigma_norms[l - 1],
            ))

        alpha_hat = sim_bound = None
        converged = False
        if L >= 3:
            alpha_hat = cfg.alpha
            if alpha_hat is None:
                try:
                    alpha_hat = estimate_alpha([v[:n] for v, n in zip(self.values, res.n)], cfg.T)
                except ValueError:
                    # every refinement negligible: no rate to read off
                    alpha_hat = None
            top = function_norm(levels[-1].interpolant.predict(self._points), cfg.norm, self.domain)
            if top == 0.0:
                sim_bound = 0.0
            elif alpha_hat is not None and alpha_hat > 0:
                sim_bound = top / (float(cfg.T) ** alpha_hat - 1.0)
            else:
                sim_bound = math.inf
            converged = sim_bound <= cfg.epsilon / 2

        self.emulator = MultiLevelEmulator(
            levels=levels, xi0=cfg.xi0, T=cfg.T, domain=self.domain, norm=cfg.norm,
            alpha_hat=alpha_hat,
        )
        report = StageReport(
            L=L,
            xi=[self.xi(l) for l in range(1, L + 1)],
            cost_per_run=[float(c) for c in costs],
            n=list(res.n),
            emulation_bound=res.bound,
            cumulative_cost=self.ledger.total,
            converged=converged,
            mu=res.mu,
            alpha_hat=alpha_hat,
            simulation_bound=sim_bound,
            updated_emulation_bound=self.emulator.emulation_error_bound(),
            kernels=[s.to_dict() for s in specs],
            norm_estimates=norms,
        )
        self.reports.append(report)
        log.info(
            "stage L=%d n=%s emu=%.4g sim=%s alpha=%s cost=%.6g",
            L, list(res.n), res.bound, sim_bound, alpha_hat, self.ledger.total,
        )
        return converged

    def run(self, epsilon=None):
        """Run stages until the stopping rule fires; returns ``(emulator, reports)``."""
        if epsilon is not None:
            self.config.epsilon = epsilon
            self.config.validate()
        max_level = self.config.max_levels
        if getattr(self.sim, "max_level", None):
            max_level = min(max_level, self.sim.max_level)
        if self.L == 0:
            self.L = 1
        while True:
            if self.L > max_level:
                raise MaxLevelsExceeded(
                    f"stopping rule not satisfied within {max_level} levels"
                )
            if len(self.values) < self.L:
                self._evaluate(self.L, 0, self.n0)
            if self._stage():
                return self.emulator, list(self.reports)
            self.L += 1


def run_stacking(simulator, config, domain=None):
    """Run a fresh stacking campaign; returns ``(emulator, stage reports)``."""
    engine = StackingEngine(simulator, config, domain)
    return engine.run()


def report_dict(config, reports, ledger, emulator=None):
    """JSON-ready campaign summary."""
    return {
        "schema": "stackdesign.report/1",
        "config": config.to_dict(),
        "converged": bool(reports and reports[-1].converged),
        "L_final": reports[-1].L if reports else 0,
        "total_cost": ledger.total,
        "n_calls": len(ledger.entries),
        "alpha_hat": reports[-1].alpha_hat if reports else None,
        "stages": [r.to_dict() for r in reports],
    }


def dumps_report(config, reports, ledger):
    return json.dumps(report_dict(config, reports, ledger), indent=1)
