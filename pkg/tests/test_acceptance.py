"""The ten acceptance criteria, each at its stated tolerance.

Every test prints one ``criterion k: PASS|FAIL`` line; the lines are also
collected into the terminal summary.
"""
import itertools
import math
import time

import numpy as np

from conftest import ACCEPTANCE_LINES
from stackdesign.benchmarks import currin_family
from stackdesign.cli import achieved_error
from stackdesign.designs import DesignLadder, Domain, fill_distance, sobol_prefix
from stackdesign.kernels import KernelSpec
from stackdesign.rkhs import fit, loocv_error
from stackdesign.stacking import (
    StackingConfig,
    StackingEngine,
    allocation_ratios,
    estimate_alpha,
    theoretical_allocation,
)

_CAMPAIGNS = {}


def report(k, ok, detail):
    line = f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}"
    print(line)
    ACCEPTANCE_LINES.append(line)
    assert ok, line


def currin_campaign(epsilon, norm="l2"):
    key = (epsilon, norm)
    if key not in _CAMPAIGNS:
        sim = currin_family()
        engine = StackingEngine(sim, StackingConfig(epsilon=epsilon, norm=norm, T=2, xi0=16.0, n0=10))
        t0 = time.perf_counter()
        em, reports = engine.run()
        elapsed = time.perf_counter() - t0
        err = achieved_error(em, sim, norm)
        _CAMPAIGNS[key] = dict(engine=engine, em=em, reports=reports, seconds=elapsed, error=err)
    return _CAMPAIGNS[key]


def test_criterion_1_currin_reproduction():
    c = currin_campaign(1.0)
    last = c["reports"][-1]
    # independent error estimate: 10^4 uniform points against the analytic limit
    X = Domain.unit(2).uniform(10_000, 12345)
    err = math.sqrt(np.mean((c["em"].predict(X) - currin_family().limit(X)) ** 2))
    ok = (
        last.converged and last.L in (3, 4, 5) and err <= 1.0
        and 0.85 <= last.alpha_hat <= 1.15 and c["seconds"] <= 120
    )
    report(1, ok, f"L={last.L} n={last.n} error={err:.3f} alpha_hat={last.alpha_hat:.4f} "
                  f"sim={last.simulation_bound:.3f} emu={last.emulation_bound:.3f} "
                  f"cost={last.cumulative_cost:g} time={c['seconds']:.1f}s")


def test_criterion_2_first_stage_size():
    first = currin_campaign(1.0)["reports"][0]
    n1 = first.n[0]
    ok = 18 <= n1 <= 28 and first.emulation_bound <= 0.5
    report(2, ok, f"n_1={n1} (target 18..28) emulation bound={first.emulation_bound:.3f} (<= 0.5)")


def test_criterion_3_tolerance_sweep():
    lines, ok = [], True
    for norm, eps_list in (("l2", (4.0, 2.0, 1.0)), ("linf", (4.0, 2.0))):
        costs = []
        for eps in eps_list:
            c = currin_campaign(eps, norm)
            cost = c["engine"].ledger.total
            ok &= c["error"] <= eps
            costs.append(cost)
            lines.append(f"{norm} eps={eps:g} err={c['error']:.3f} cost={cost:g}")
        ok &= all(b >= a for a, b in zip(costs, costs[1:]))
    report(3, ok, "; ".join(lines))


def test_criterion_4_exact_rate_recovery():
    X = np.random.default_rng(4).random((30, 2))
    f_inf, g = np.cos(2 * X[:, 0]) * X[:, 1], 0.5 + X[:, 0]
    worst = 0.0
    for alpha, T in itertools.product((0.5, 1.0, 2.0), (2, 3)):
        evals = [(f_inf + 3.0 * float(T) ** (-alpha * l) * g)[: 30 - 4 * l] for l in range(1, 6)]
        worst = max(worst, abs(estimate_alpha(evals, T) - alpha))
    report(4, worst <= 1e-6, f"max |alpha_hat - alpha| = {worst:.2e}")


def explicit_loo(spec, X, z):
    res = []
    for j in range(len(z)):
        keep = np.arange(len(z)) != j
        res.append(z[j] - fit(spec, X[keep], z[keep]).predict(X[j : j + 1])[0])
    return float(np.mean(np.square(res)))


def test_criterion_5_loocv_oracle():
    worst = 0.0
    for seed in range(50):
        rng = np.random.default_rng(1000 + seed)
        d, n = int(rng.integers(1, 4)), int(rng.integers(3, 21))
        spec = KernelSpec(float(rng.choice([0.5, 1.5, 2.5, 3.5])), tuple(rng.uniform(0.1, 0.5, d)))
        X, z = rng.random((n, d)), rng.normal(size=n)
        closed, brute = loocv_error(spec, X, z), explicit_loo(spec, X, z)
        worst = max(worst, abs(closed - brute) / brute)
    report(5, worst <= 1e-8, f"max relative gap over 50 instances = {worst:.2e}")


def test_criterion_6_interpolation_identities():
    interp_gap, sigma_max, mono_viol = 0.0, 0.0, 0.0
    for seed in range(20):
        rng = np.random.default_rng(2000 + seed)
        d = int(rng.integers(1, 4))
        # kernel matrices stay below condition ~1e7 here; beyond ~1e10 double
        # precision alone puts the interpolation residual above 1e-8
        spec = KernelSpec(float(rng.choice([0.5, 1.5, 2.5, 3.5])), tuple(rng.uniform(0.1, 0.4, d)))
        m = int(rng.integers(3, 18))
        n = m + int(rng.integers(1, 18))
        X = sobol_prefix(d, n)
        z = rng.normal(size=n)
        big = fit(spec, X, z)
        interp_gap = max(interp_gap, np.max(np.abs(big.predict(X) - z)) / (1 + np.max(np.abs(z))))
        sigma_max = max(sigma_max, float(np.max(big.power_function(X))))
        probe = rng.random((300, d))
        small = fit(spec, X[:m], z[:m])
        mono_viol = max(mono_viol, float(np.max(big.power_function(probe) - small.power_function(probe))))
    ok = interp_gap <= 1e-8 and sigma_max <= 1e-6 and mono_viol <= 1e-10
    report(6, ok, f"interp gap={interp_gap:.1e} max sigma at design={sigma_max:.1e} "
                  f"max sigma increase={mono_viol:.1e}")


def test_criterion_7_allocation_oracle():
    cases = [
        (2, [(KernelSpec(2.5, (0.3, 0.3)), 4.0, 10.0), (KernelSpec(2.5, (0.5, 0.2)), 16.0, 2.0)]),
        (1, [(KernelSpec(1.5, (0.2,)), 2.0, 3.0), (KernelSpec(3.5, (0.5,)), 8.0, 1.0)]),
        (2, [(KernelSpec(2.5, (0.3, 0.3)), 4.0, 10.0), (KernelSpec(2.5, (0.5, 0.2)), 16.0, 2.0),
             (KernelSpec(2.5, (0.4, 0.6)), 64.0, 0.5)]),
        (3, [(KernelSpec(1.5, (0.5, 0.5, 0.5)), 1.0, 2.0), (KernelSpec(2.5, (0.3, 0.8, 0.5)), 3.0, 1.0),
             (KernelSpec(3.5, (0.9, 0.9, 0.2)), 9.0, 0.2)]),
    ]
    worst = 0.0
    for d, levels in cases:
        k, costs, budget = len(levels), np.array([c for _, c, _ in levels]), 1e4
        steps = 201 if k == 2 else 21
        nu_min = min(s.nu for s, _, _ in levels)

        def objective(n):
            return sum(s.inverse_scale_norm**s.nu * m * nl ** (-nu_min / d) for (s, _, m), nl in zip(levels, n))

        cands = [np.array(p + (steps - sum(p),)) / steps
                 for p in itertools.product(range(1, steps), repeat=k - 1) if steps - sum(p) >= 1]
        best = min(cands, key=lambda t: objective(t * budget / costs))
        r = allocation_ratios(levels, d)
        share = r * costs / np.dot(r, costs)
        worst = max(worst, float(np.max(np.abs(best - share))) * steps)
    report(7, worst <= 1.0, f"max budget-share gap = {worst:.2f} grid steps (<= 1)")


def test_criterion_8_mu_contract():
    total, bad = 0, []
    for (eps, norm), c in _CAMPAIGNS.items():
        for r in c["reports"]:
            total += 1
            if not r.emulation_bound <= eps / 2:
                bad.append((eps, norm, r.L))
    # a fresh campaign in case this test runs on its own
    extra = currin_campaign(2.0)
    for r in extra["reports"]:
        total += 1
        if not r.emulation_bound <= 1.0:
            bad.append((2.0, "l2", r.L))
    report(8, not bad, f"{total} stage reports checked, violations: {bad or 'none'}")


def test_criterion_9_regime_classifier():
    t = theoretical_allocation(1.0, 0.37, 3.5, 1, [0.2, 0.1, 0.05])
    ok = t.regime == "high-fidelity-dominated"
    cases = [
        ((4.0, 1.0, 1.0, 2), "low-fidelity-dominated", -2.0, 0.0),
        ((3.0, 0.5, 2.5, 1), "low-fidelity-dominated", -0.4, 0.0),
        ((2.0, 1.0, 2.0, 2), "balanced", -1.0, 2.0),
        ((1.0, 0.25, 4.0, 2), "balanced", -0.5, 1.5),
        ((1.0, 0.37, 3.5, 1), "high-fidelity-dominated", -1 / 3.5 - (2 * 0.37 * 3.5 - 1) / 9.0, 0.0),
        ((1.0, 2.0, 1.5, 2), "high-fidelity-dominated", -4 / 3 - 4.0 / 7.0, 0.0),
    ]
    for (a, b, nu, d), regime, exponent, log_exp in cases:
        got = theoretical_allocation(a, b, nu, d, [1.0, 0.5])
        ok &= got.regime == regime
        ok &= math.isclose(got.cost_exponent, exponent, rel_tol=1e-12)
        ok &= math.isclose(got.log_exponent, log_exp, abs_tol=1e-12)
        ok &= math.isclose(got.single_fidelity_exponent, -b / a - d / (2 * nu), rel_tol=1e-12)
    report(9, ok, f"Poisson-like inputs -> {t.regime}; 6 hand-substituted cases checked")


def test_criterion_10_designs():
    same = all(sobol_prefix(d, 500).tobytes() == sobol_prefix(d, 500).tobytes() for d in (1, 2, 5, 20))
    c = currin_campaign(1.0)
    designs = [lv.design for lv in c["em"].levels]
    nested = all(np.array_equal(hi, lo[: len(hi)]) for lo, hi in zip(designs, designs[1:]))
    pilot = DesignLadder(Domain.unit(2)).points(c["engine"].n0)
    nested &= all(np.array_equal(X[: len(pilot)], pilot) for X in designs)
    ratios = []
    for d in (1, 2):
        dom = Domain.unit(d)
        h = {n: fill_distance(sobol_prefix(d, n), dom) for n in (16, 64, 256)}
        c16 = h[16] * 16 ** (1 / d)
        ratios += [h[n] * n ** (1 / d) / c16 for n in (64, 256)]
    scaling = all(0.5 <= r <= 2.0 for r in ratios)
    report(10, same and nested and scaling,
           f"byte-identical={same} nested={nested} scaling ratios={[round(r, 2) for r in ratios]}")
