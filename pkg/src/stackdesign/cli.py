"""Command-line driver: ``stackdesign run | sweep | predict``.

Exit codes
----------
0  converged (or predictions written)
2  bad configuration, bad input file or emulator schema mismatch
3  stopping rule not met within the maximum number of levels
4  simulator failure (crash, timeout, malformed response)
5  emulation target unreachable within the point cap
6  kernel matrix could not be factorized
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import warnings

import numpy as np

from .benchmarks import BUILTIN_FAMILIES, SubprocessSimulator, builtin_family
from .designs import Domain
from .exceptions import (
    BudgetInfeasible,
    FactorizationFailure,
    MaxLevelsExceeded,
    SimulatorError,
)
from .multilevel import MultiLevelEmulator
from .rkhs import function_norm
from .stacking import StackingConfig, StackingEngine, report_dict, stages_to_csv

__all__ = ["main", "build_parser", "EXIT_CODES"]

log = logging.getLogger("stackdesign")

EXIT_CODES = {
    "ok": 0,
    "config": 2,
    "max_levels": 3,
    "simulator": 4,
    "budget": 5,
    "factorization": 6,
}

_BUILTIN_DEFAULTS = {"currin": {"xi0": 16.0, "T": 2}, "poissonlike": {"xi0": 0.4, "T": 2}}


class ConfigError(ValueError):
    pass


def _floats(text):
    return [float(v) for v in str(text).split(",") if v.strip()]


def build_parser():
    p = argparse.ArgumentParser(prog="stackdesign", description=__doc__.split("\n")[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def campaign_flags(sp):
        sp.add_argument("--config", help="JSON file with any of the options below")
        sp.add_argument("--norm", choices=["l2", "linf"])
        sp.add_argument("--T", type=int)
        sp.add_argument("--xi0", type=float)
        sp.add_argument("--n0", type=int)
        sp.add_argument("--max-levels", type=int, dest="max_levels")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--sim", help="currin, poissonlike or cmd:<command line>")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--alpha", type=float, help="pin the simulation-error rate")
        sp.add_argument("--mc-budget", type=int, dest="mc_budget")
        sp.add_argument("--lower", help="domain lower bounds, comma separated (external simulators)")
        sp.add_argument("--upper", help="domain upper bounds, comma separated (external simulators)")
        sp.add_argument("--costs", help="per-level run costs, comma separated (external simulators)")
        sp.add_argument("--timeout", type=float, help="seconds per simulator request")
        sp.add_argument("--workers", type=int, help="simulator processes run in parallel")

    run = sub.add_parser("run", help="run one stacking campaign")
    campaign_flags(run)
    run.add_argument("--epsilon", type=float)

    sweep = sub.add_parser("sweep", help="run one campaign per tolerance")
    campaign_flags(sweep)
    sweep.add_argument("--epsilon", dest="epsilons", help="comma-separated tolerances, e.g. 4,2,1")

    pred = sub.add_parser("predict", help="evaluate a saved emulator")
    pred.add_argument("emulator", help="emulator.json written by 'run'")
    pred.add_argument("points", help="CSV of points, one per row (optional header)")
    pred.add_argument("--out", help="output CSV (default: stdout)")
    pred.add_argument("--alpha", type=float, help="override the stored rate for the intervals")
    return p


_OPTION_KEYS = (
    "epsilon", "epsilons", "norm", "T", "xi0", "n0", "max_levels", "seed", "sim", "out",
    "alpha", "mc_budget", "lower", "upper", "costs", "timeout", "workers",
)


def resolve_options(args):
    """Merge the optional JSON config file with command-line flags (flags win)."""
    opts = {}
    if getattr(args, "config", None):
        try:
            with open(args.config) as fh:
                opts = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(opts, dict):
            raise ConfigError("config file must hold a JSON object")
        unknown = sorted(set(opts) - set(_OPTION_KEYS) - {"domain"})
        if unknown:
            raise ConfigError(f"unknown config fields: {', '.join(unknown)}")
        if "domain" in opts:
            opts.setdefault("lower", opts["domain"].get("lower"))
            opts.setdefault("upper", opts["domain"].get("upper"))
    for key in _OPTION_KEYS:
        val = getattr(args, key, None)
        if val is not None:
            opts[key] = val
    opts.setdefault("sim", "currin")
    opts.setdefault("out", ".")
    return opts


def _as_list(val):
    if val is None:
        return None
    return _floats(val) if isinstance(val, str) else [float(v) for v in val]


def make_simulator(opts):
    """Simulator, its domain and the ladder ``(xi0, T)`` implied by the options."""
    name = opts["sim"]
    if name.startswith("cmd:"):
        lower, upper = _as_list(opts.get("lower")), _as_list(opts.get("upper"))
        if not lower or not upper:
            raise ConfigError("external simulators need --lower and --upper domain bounds")
        try:
            domain = Domain(tuple(lower), tuple(upper))
        except ValueError as exc:
            raise ConfigError(f"domain: {exc}") from exc
        xi0, T = float(opts.get("xi0", 1.0)), int(opts.get("T", 2))
        costs = _as_list(opts.get("costs"))
        sim = SubprocessSimulator(
            name[4:], xi0=xi0, T=T, costs=costs,
            timeout=float(opts.get("timeout", 600.0)), workers=int(opts.get("workers", 1)),
            max_level=len(costs) if costs else None,
        )
        return sim, domain, xi0, T
    if name not in BUILTIN_FAMILIES:
        raise ConfigError(f"sim: unknown simulator {name!r}; use {sorted(BUILTIN_FAMILIES)} or cmd:<command>")
    xi0 = float(opts.get("xi0", _BUILTIN_DEFAULTS[name]["xi0"]))
    T = int(opts.get("T", _BUILTIN_DEFAULTS[name]["T"]))
    sim = builtin_family(name, xi0=xi0, T=T)
    return sim, sim.domain, xi0, T


def make_config(opts, epsilon, xi0, T):
    kwargs = {"epsilon": epsilon, "xi0": xi0, "T": T}
    for key in ("norm", "n0", "max_levels", "seed", "alpha", "mc_budget"):
        if opts.get(key) is not None:
            kwargs[key] = opts[key]
    try:
        return StackingConfig(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def achieved_error(emulator, sim, norm, seed=0):
    """Error of the emulator against the analytic limit: 10^4 MC points or a 256^2 grid."""
    domain = sim.domain
    if norm == "l2":
        pts = domain.uniform(10_000, seed + 7919)
    elif domain.dim <= 2:
        pts = domain.grid(256)
    else:
        pts = domain.uniform(65_536, seed + 7919)
    return function_norm(emulator.predict(pts) - sim.limit(pts), norm, domain)


def format_table(reports):
    head = f"{'L':>2} {'l':>2} {'xi_l':>10} {'C_l':>10} {'n_l':>6} {'alpha':>7} {'sim':>9} {'emu':>9} {'cost':>11}"
    lines = [head]
    for r in reports:
        for i in range(r.L):
            first = i == 0
            alpha = f"{r.alpha_hat:7.3f}" if first and r.alpha_hat is not None else " " * 7
            sim = f"{r.simulation_bound:9.4f}" if first and r.simulation_bound is not None else " " * 9
            emu = f"{r.emulation_bound:9.4f}" if first else " " * 9
            cost = f"{r.cumulative_cost:11.6g}" if first else " " * 11
            lines.append(
                f"{r.L if first else '':>2} {i + 1:>2} {r.xi[i]:10.5g} {r.cost_per_run[i]:10.5g} "
                f"{r.n[i]:6d} {alpha} {sim} {emu} {cost}"
            )
    return "\n".join(lines)


def _exit_code(exc):
    if isinstance(exc, ConfigError):
        return EXIT_CODES["config"]
    if isinstance(exc, MaxLevelsExceeded):
        return EXIT_CODES["max_levels"]
    if isinstance(exc, SimulatorError):
        return EXIT_CODES["simulator"]
    if isinstance(exc, BudgetInfeasible):
        return EXIT_CODES["budget"]
    if isinstance(exc, FactorizationFailure):
        return EXIT_CODES["factorization"]
    raise exc


def _write(path, text):
    with open(path, "w", newline="") as fh:
        fh.write(text)


def _campaign(opts, epsilon):
    sim, domain, xi0, T = make_simulator(opts)
    config = make_config(opts, epsilon, xi0, T)
    engine = StackingEngine(sim, config, domain)
    try:
        engine.run()
        return engine, sim, None
    except (MaxLevelsExceeded, SimulatorError, BudgetInfeasible, FactorizationFailure) as exc:
        return engine, sim, exc
    finally:
        sim.close()


def cmd_run(opts):
    epsilon = opts.get("epsilon")
    if epsilon is None:
        raise ConfigError("epsilon: a tolerance is required")
    out = opts["out"]
    os.makedirs(out, exist_ok=True)
    engine, _, exc = _campaign(opts, epsilon)
    if engine.reports:
        print(format_table(engine.reports))
    report = report_dict(engine.config, engine.reports, engine.ledger)
    if exc is not None:
        report["error"] = {"type": type(exc).__name__, "message": str(exc)}
    _write(os.path.join(out, "report.json"), json.dumps(report, indent=1) + "\n")
    _write(os.path.join(out, "stages.csv"), stages_to_csv(engine.reports))
    if exc is None:
        engine.emulator.save(os.path.join(out, "emulator.json"))
        return EXIT_CODES["ok"]
    print(f"error: {exc}", file=sys.stderr)
    return _exit_code(exc)


def cmd_sweep(opts):
    eps_list = opts.get("epsilons", opts.get("epsilon"))
    if eps_list is None:
        raise ConfigError("epsilon: at least one tolerance is required")
    eps_list = _as_list(eps_list) if not isinstance(eps_list, (int, float)) else [float(eps_list)]
    if not eps_list or any(not e > 0 for e in eps_list):
        raise ConfigError(f"epsilon: tolerances must be positive, got {eps_list}")
    out = opts["out"]
    os.makedirs(out, exist_ok=True)
    oracle = not opts["sim"].startswith("cmd:")
    if not oracle:
        warnings.warn("external simulator has no analytic limit; achieved_error is omitted")
    header = ["epsilon"] + (["achieved_error"] if oracle else []) + ["total_cost", "L_final", "n_l"]
    rows, code = [], 0
    for eps in eps_list:
        engine, sim, exc = _campaign(opts, eps)
        if exc is not None:
            print(f"epsilon={eps}: {exc}", file=sys.stderr)
            code = max(code, _exit_code(exc))
            continue
        last = engine.reports[-1]
        row = [repr(float(eps))]
        if oracle:
            row.append(repr(achieved_error(engine.emulator, sim, engine.config.norm, engine.config.seed)))
        row += [repr(float(engine.ledger.total)), str(last.L), ";".join(str(n) for n in last.n)]
        rows.append(row)
        print(f"epsilon={eps:g} L={last.L} n={last.n} cost={engine.ledger.total:g}"
              + (f" error={float(row[1]):.4g}" if oracle else ""))
    with open(os.path.join(out, "sweep.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    return code


def read_points(path, dim):
    """Rows of a CSV points file; a non-numeric first row is treated as a header."""
    rows = []
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise ConfigError(f"cannot read points file {path}: {exc}") from exc
    with fh:
        for i, rec in enumerate(csv.reader(fh)):
            if not rec or all(not c.strip() for c in rec):
                continue
            try:
                vals = [float(c) for c in rec]
            except ValueError:
                if i == 0:
                    continue
                raise ConfigError(f"row {i}: non-numeric entry in {rec}") from None
            if len(vals) != dim:
                raise ConfigError(f"row {i}: expected {dim} coordinates, got {len(vals)}")
            rows.append(vals)
    return np.array(rows, dtype=float).reshape(-1, dim)


def cmd_predict(emulator_path, points_path, out=None, alpha=None):
    try:
        em = MultiLevelEmulator.load(emulator_path)
    except (OSError, KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"cannot load emulator {emulator_path}: {exc}") from exc
    X = read_points(points_path, em.dim)
    alpha = em.alpha_hat if alpha is None else alpha
    with_interval = em.L >= 2 and alpha is not None and alpha > 0
    header = [f"x{j + 1}" for j in range(em.dim)] + ["prediction", "lower", "upper"]
    fh = open(out, "w", newline="") if out else sys.stdout
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        if len(X):
            pred = em.predict(X)
            if with_interval:
                lo, hi = em.error_interval(X, alpha)
            for i, x in enumerate(X):
                bounds = [repr(float(lo[i])), repr(float(hi[i]))] if with_interval else ["", ""]
                w.writerow([repr(float(v)) for v in x] + [repr(float(pred[i]))] + bounds)
    finally:
        if out:
            fh.close()
    return EXIT_CODES["ok"]


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "predict":
            return cmd_predict(args.emulator, args.points, args.out, args.alpha)
        opts = resolve_options(args)
        if args.command == "run":
            return cmd_run(opts)
        return cmd_sweep(opts)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CODES["config"]


if __name__ == "__main__":
    sys.exit(main())
