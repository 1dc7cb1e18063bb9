"""Stacking designs for multi-fidelity kernel emulation.

Build a multi-level RKHS interpolator of a simulator family ``f_1, f_2, ...``
that converges to a limiting solution ``f_inf``, choosing both the number of
fidelity levels and the nested sample size at each level so that the
prediction error stays below a target tolerance.
"""
from .benchmarks import (
    CostLedger,
    Simulator,
    SubprocessSimulator,
    SyntheticFamily,
    builtin_family,
    currin_family,
    currin_level,
    currin_limit,
    poisson_like_family,
)
from .designs import DesignLadder, Domain, fill_distance, shifted_sobol, sobol_prefix
from .exceptions import (
    BudgetInfeasible,
    FactorizationFailure,
    MaxLevelsExceeded,
    ProtocolError,
    SimulatorCrash,
    SimulatorError,
    SimulatorTimeout,
    StackingError,
)
from .kernels import KernelSpec, gram_matrix, kernel_eval, kernel_matrix, matern_phi
from .multilevel import LevelState, MultiLevelEmulator
from .rkhs import (
    Interpolant,
    LengthscaleSearch,
    fit,
    fit_hyperparameters,
    loocv_error,
    norm_of_power_function,
)
from .stacking import (
    StackingConfig,
    StackingEngine,
    StageReport,
    allocation_ratios,
    estimate_alpha,
    find_mu,
    run_stacking,
    simulation_error_bound,
    theoretical_allocation,
)

__version__ = "0.1.0"
