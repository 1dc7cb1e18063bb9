"""Where should the budget go?  Theory-optimal allocations by regime.

With error rate alpha, cost rate beta, smoothness nu and dimension d, the
comparison of alpha / beta with 2 nu / d decides whether coarse or fine
levels receive most of the budget, and whether stacking beats a single
high-fidelity interpolator.
"""
# %%
import numpy as np

from stackdesign import theoretical_allocation

xi = 0.4 * 2.0 ** -np.arange(1, 7)
cases = {
    "smooth 1-d, slow cost growth": (1.0, 0.37, 3.5, 1),
    "boundary case": (2.0, 1.0, 2.0, 2),
    "fast-converging solver": (4.0, 1.0, 1.0, 2),
}
for label, (alpha, beta, nu, d) in cases.items():
    t = theoretical_allocation(alpha, beta, nu, d, xi)
    share = t.work / t.work.sum()
    print(f"{label}: {t.regime}")
    print(f"  budget share by level {np.round(share, 3)}")
    log = f" |log eps|^{t.log_exponent:g}" if t.log_exponent else ""
    print(f"  stacked cost ~ eps^{t.cost_exponent:.3f}{log}, single fidelity ~ eps^{t.single_fidelity_exponent:.3f}")
