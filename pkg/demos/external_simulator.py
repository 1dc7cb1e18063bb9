"""Driving an external simulator through the subprocess bridge.

``echo_simulator.py`` integrates exp(x t) over [0, 1] with a midpoint rule
whose step is the fidelity parameter, so the rate of the simulation error is
alpha = 2.  Costs are unknown up front; the engine uses the mean reported cost.
The same campaign runs from the shell with::

    stackdesign run --sim "cmd:python demos/echo_simulator.py" --epsilon 0.002 \
        --xi0 0.5 --lower 0 --upper 2 --out runs/echo
"""
# %%
import math
import sys
from pathlib import Path

import numpy as np

from stackdesign import Domain, StackingConfig, StackingEngine, SubprocessSimulator

here = Path(__file__).parent
command = [sys.executable, str(here / "echo_simulator.py")]
domain = Domain((0.0,), (2.0,))

with SubprocessSimulator(command, xi0=0.5, T=2, workers=2, timeout=30) as sim:
    engine = StackingEngine(sim, StackingConfig(epsilon=0.002, xi0=0.5), domain)
    emulator, reports = engine.run()

last = reports[-1]
print(f"L={last.L} n={last.n} alpha_hat={last.alpha_hat:.3f} cost={engine.ledger.total:g}")

# %% [markdown]
# The exact integral is (e^x - 1) / x, so the emulator can be checked here
# even though the engine never saw it.

# %%
x = np.linspace(0.01, 2.0, 400)
exact = np.expm1(x) / x
err = math.sqrt(np.mean((emulator.predict(x.reshape(-1, 1)) - exact) ** 2) * domain.volume)
print(f"L2 error against the exact integral: {err:.2e}")
