"""Simulation and temporal homogenization of multiscale Caputo fractional SDEs."""

__version__ = "0.1.0"

from .brownian import BrownianLattice, coarsen, generate
from .errors import (
    AveragingDivergenceError,
    BlowUpError,
    CapacityError,
    ConfigError,
    ConvergenceError,
    DomainError,
    EvaluationError,
    FsdeError,
    RangeError,
)
from .experiment import (
    ConvergenceTable,
    dt_study,
    eps_study,
    homogenization_comparison,
    mean_square_error,
    mu_study,
)
from .frackernel import WeightTable, build_weights, gamma_fn, mittag_leffler, rl_integral
from .homogenize import (
    AveragedCoefficient,
    AveragingConfig,
    AveragingProfile,
    average_coefficient,
    balanced_step,
    build_homogenized_problem,
    strong_profile,
    weak_profile,
)
from .model import FsdeProblem, StateBox, make_problem, probe_assumptions
from .solver import PathEnsemble, em_solve, empirical_moment, picard_solve

__all__ = [name for name in dir() if not name.startswith("_")]
