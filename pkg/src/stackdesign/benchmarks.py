"""Simulators: analytic multi-fidelity families and a JSON-lines subprocess bridge.

A simulator maps ``(level, x)`` to ``(value, cost)``.  Level ``l`` runs with
fidelity parameter ``xi_l = xi0 * T**-l``.

Subprocess protocol
-------------------
The engine writes one JSON object per line to the child's stdin::

    {"level": 3, "xi": 2.0, "x": [0.25, 0.75]}

and reads exactly one JSON line back per request, in order::

    {"y": 1.2345, "cost": 64.0}

A child that exits is restarted; after ``retries`` restarts the request
fails with :class:`SimulatorCrash`.
"""
from __future__ import annotations

import json
import math
import queue
import shlex
import subprocess
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .designs import Domain
from .exceptions import ProtocolError, SimulatorCrash, SimulatorTimeout

__all__ = [
    "Simulator",
    "SyntheticFamily",
    "CostLedger",
    "SubprocessSimulator",
    "currin_limit",
    "currin_level",
    "currin_family",
    "poisson_like_family",
    "builtin_family",
    "BUILTIN_FAMILIES",
]


class Simulator:
    """Base class for multi-fidelity simulators.

    Subclasses implement :meth:`evaluate`.  :meth:`cost` may return ``None``
    when the per-run cost is only known after running; the stacking engine
    then uses the mean observed cost.
    """

    max_level = None
    concurrency_safe = False
    xi0 = 1.0
    T = 2

    def xi(self, level):
        return self.xi0 * float(self.T) ** (-level)

    def cost(self, level):
        return None

    def evaluate(self, level, x):
        raise NotImplementedError

    def evaluate_many(self, level, X):
        """Evaluate every row of ``X``; results are ordered like ``X``."""
        out = [self.evaluate(level, x) for x in np.asarray(X, dtype=float)]
        values = np.array([v for v, _ in out], dtype=float)
        costs = np.array([c for _, c in out], dtype=float)
        return values, costs

    def close(self):
        pass


@dataclass
class SyntheticFamily(Simulator):
    """``f_l(x) = f_inf(x) + xi_l**alpha * g(x)`` with ``C_l = cost_coeff * xi_l**-beta``.

    ``f_inf`` and ``discrepancy`` take an ``(m, d)`` array and return ``(m,)``.
    """

    name: str
    f_inf: object
    discrepancy: object
    domain: Domain
    alpha: float = 1.0
    xi0: float = 1.0
    T: int = 2
    cost_coeff: float = 1.0
    beta: float = 1.0
    max_level: int = None
    concurrency_safe: bool = True

    def level_values(self, level, X):
        if level < 1:
            raise ValueError(f"levels start at 1, got {level}")
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return self.f_inf(X) + self.xi(level) ** self.alpha * self.discrepancy(X)

    def cost(self, level):
        return self.cost_coeff * self.xi(level) ** (-self.beta)

    def evaluate(self, level, x):
        x = np.asarray(x, dtype=float).reshape(1, -1)
        return float(self.level_values(level, x)[0]), self.cost(level)

    def evaluate_many(self, level, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return self.level_values(level, X), np.full(len(X), self.cost(level))

    def limit(self, X):
        return self.f_inf(np.atleast_2d(np.asarray(X, dtype=float)))


def currin_limit(x1, x2):
    """Currin test function on ``[0, 1]^2``; the bracket tends to 1 as ``x2 -> 0``."""
    x1 = np.asarray(x1, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    with np.errstate(divide="ignore"):
        bracket = np.where(x2 > 0, -np.expm1(-1.0 / (2.0 * np.where(x2 > 0, x2, 1.0))), 1.0)
    num = 2300 * x1**3 + 1900 * x1**2 + 2092 * x1 + 60
    den = 100 * x1**3 + 500 * x1**2 + 4 * x1 + 20
    out = bracket * num / den
    return float(out) if out.ndim == 0 else out


def _currin_discrepancy(X):
    return np.exp(-1.4 * X[:, 0]) * np.cos(3.5 * np.pi * X[:, 1])


def _currin_inf(X):
    return currin_limit(X[:, 0], X[:, 1])


def currin_level(level, x, alpha=1.0, xi0=16.0, T=2):
    """Level-``level`` Currin simulator ``f_inf(x) + xi_l**alpha exp(-1.4 x1) cos(3.5 pi x2)``."""
    if level < 1:
        raise ValueError(f"levels start at 1, got {level}")
    X = np.atleast_2d(np.asarray(x, dtype=float))
    xi = xi0 * float(T) ** (-level)
    out = _currin_inf(X) + xi**alpha * _currin_discrepancy(X)
    return float(out[0]) if np.ndim(x) == 1 else out


def currin_family(alpha=1.0, xi0=16.0, T=2):
    # 256 * xi_l**-2 == 4**l for xi0 = 16, T = 2
    return SyntheticFamily(
        name="currin",
        f_inf=_currin_inf,
        discrepancy=_currin_discrepancy,
        domain=Domain.unit(2),
        alpha=alpha,
        xi0=xi0,
        T=T,
        cost_coeff=xi0**2,
        beta=2.0,
    )


def _poisson_inf(X):
    x = X[:, 0]
    return 2.0 * (np.exp(x) + 1.0) / (x**2 + np.pi**2)


def _poisson_discrepancy(X):
    x = X[:, 0]
    return np.exp(-x) * (1.0 + 0.5 * np.sin(3.0 * x))


def poisson_like_family(alpha=1.0, xi0=0.4, T=2, beta=0.37, cost_coeff=0.1):
    """1-d family with the closed-form integrated Poisson solution as its limit.

    The discrepancy is synthetic with a known rate ``alpha``; this family does
    not reproduce finite-element outputs.
    """
    return SyntheticFamily(
        name="poissonlike",
        f_inf=_poisson_inf,
        discrepancy=_poisson_discrepancy,
        domain=Domain((-1.0,), (1.0,)),
        alpha=alpha,
        xi0=xi0,
        T=T,
        cost_coeff=cost_coeff,
        beta=beta,
    )


BUILTIN_FAMILIES = {"currin": currin_family, "poissonlike": poisson_like_family}


def builtin_family(name, **kwargs):
    try:
        factory = BUILTIN_FAMILIES[name]
    except KeyError:
        raise ValueError(
            f"unknown builtin simulator {name!r}; choose from {sorted(BUILTIN_FAMILIES)}"
        ) from None
    return factory(**kwargs)


@dataclass
class CostLedger:
    """Log of every simulator call: ``(level, point index, value, cost)``."""

    entries: list = field(default_factory=list)

    def record(self, level, index, value, cost):
        self.entries.append((int(level), int(index), float(value), float(cost)))

    @property
    def total(self):
        return math.fsum(e[3] for e in self.entries)

    def calls(self, level=None):
        return [e for e in self.entries if level is None or e[0] == level]

    def mean_cost(self, level):
        costs = [e[3] for e in self.entries if e[0] == level]
        return float(np.mean(costs)) if costs else None

    def keys(self):
        return [(e[0], e[1]) for e in self.entries]


class _Worker:
    """One child process plus a reader thread feeding a line queue."""

    def __init__(self, argv, cwd=None, env=None):
        self.argv = argv
        self.cwd = cwd
        self.env = env
        self.proc = None
        self.lines = None
        self.start()

    def start(self):
        self.proc = subprocess.Popen(
            self.argv,
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            stderr=subprocess.DEVNULL,
            text=True,
            bufsize=1,
            cwd=self.cwd,
            env=self.env,
        )
        self.lines = queue.Queue()
        threading.Thread(target=self._pump, args=(self.proc, self.lines), daemon=True).start()

    @staticmethod
    def _pump(proc, lines):
        for line in proc.stdout:
            lines.put(line)
        lines.put(None)

    def stop(self):
        if self.proc is not None and self.proc.poll() is None:
            self.proc.kill()
            self.proc.wait()

    def request(self, payload, timeout):
        try:
            self.proc.stdin.write(payload + "\n")
            self.proc.stdin.flush()
        except (BrokenPipeError, OSError, ValueError):
            return None
        try:
            return self.lines.get(timeout=timeout)
        except queue.Empty:
            self.stop()
            raise SimulatorTimeout(f"no response within {timeout} s to {payload}") from None


class SubprocessSimulator(Simulator):
    """Simulator backed by external processes speaking the JSON-lines protocol.

    Parameters
    ----------
    command : str or list of str
        Command line launching one simulator process.
    xi0, T : float, int
        Fidelity ladder; ``xi`` is sent with every request.
    costs : callable or sequence, optional
        Known per-run cost by level (``costs(l)`` or ``costs[l - 1]``).  When
        omitted the engine uses the mean cost reported by the process.
    timeout : float
        Seconds to wait for each response.
    retries : int
        Restarts allowed per request before :class:`SimulatorCrash`.
    workers : int
        Number of processes; more than one enables concurrent evaluation.
    """

    def __init__(self, command, xi0=1.0, T=2, costs=None, timeout=600.0, retries=2,
                 workers=1, max_level=None, cwd=None, env=None):
        self.argv = shlex.split(command) if isinstance(command, str) else list(command)
        self.xi0 = float(xi0)
        self.T = int(T)
        self._costs = costs
        self.timeout = float(timeout)
        self.retries = int(retries)
        self.max_level = max_level
        self.concurrency_safe = workers > 1
        self._cwd, self._env = cwd, env
        self._workers = None
        self._nworkers = int(workers)

    def _pool(self):
        if self._workers is None:
            self._workers = queue.Queue()
            for _ in range(self._nworkers):
                try:
                    self._workers.put(_Worker(self.argv, self._cwd, self._env))
                except OSError as exc:
                    raise SimulatorCrash(f"cannot launch {self.argv!r}: {exc}") from exc
        return self._workers

    def cost(self, level):
        if self._costs is None:
            return None
        if callable(self._costs):
            return float(self._costs(level))
        return float(self._costs[level - 1])

    def _parse(self, line):
        try:
            msg = json.loads(line)
            y, cost = float(msg["y"]), float(msg["cost"])
        except (ValueError, TypeError, KeyError) as exc:
            raise ProtocolError(f"malformed simulator response: {line!r}", line=line) from exc
        if not (math.isfinite(y) and math.isfinite(cost)):
            raise ProtocolError(f"non-finite simulator response: {line!r}", line=line)
        return y, cost

    def evaluate(self, level, x):
        payload = json.dumps(
            {"level": int(level), "xi": self.xi(level), "x": [float(v) for v in np.ravel(x)]}
        )
        pool = self._pool()
        worker = pool.get()
        try:
            for attempt in range(self.retries + 1):
                if attempt:
                    worker.stop()
                    worker.start()
                line = worker.request(payload, self.timeout)
                if line is not None:
                    return self._parse(line.strip())
            raise SimulatorCrash(
                f"simulator exited {self.retries + 1} times on request {payload}"
            )
        finally:
            pool.put(worker)

    def evaluate_many(self, level, X):
        X = np.asarray(X, dtype=float)
        if self._nworkers <= 1 or len(X) <= 1:
            return super().evaluate_many(level, X)
        with ThreadPoolExecutor(max_workers=self._nworkers) as ex:
            out = list(ex.map(lambda x: self.evaluate(level, x), X))
        return np.array([v for v, _ in out]), np.array([c for _, c in out])

    def close(self):
        if self._workers is None:
            return
        while not self._workers.empty():
            self._workers.get().stop()
        self._workers = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
