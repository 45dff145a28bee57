"""Constrained optimal trading and storage control in a linear propagator model.

The solver runs a stochastic dual ascent on Monte Carlo multiplier paths,
re-solving a discretized Fredholm first-order condition at each step.
"""

from .config import ConfigError, ScenarioConfig, bundled, bundled_scenarios, load, loads
from .constraints import ConstraintEnsemble, ScenarioKind, build_constraints
from .fredholm import NystromOperator, assemble, solve_control
from .kernels import DiscreteKernel, KernelSpec, TimeGrid, build_discrete_kernel
from .lsmc import LSMCConfig
from .oracles import QPInstance, clip_oracle, dense_deterministic_solve, solve_qp
from .pipeline import Problem, build_problem
from .signals import SignalEnsemble, SignalParams, simulate
from .uzawa import NumericalAbort, UzawaConfig, UzawaResult, UzawaSolver

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "ScenarioConfig", "bundled", "bundled_scenarios", "load", "loads",
    "ConstraintEnsemble", "ScenarioKind", "build_constraints",
    "NystromOperator", "assemble", "solve_control",
    "DiscreteKernel", "KernelSpec", "TimeGrid", "build_discrete_kernel",
    "LSMCConfig",
    "QPInstance", "clip_oracle", "dense_deterministic_solve", "solve_qp",
    "Problem", "build_problem",
    "SignalEnsemble", "SignalParams", "simulate",
    "NumericalAbort", "UzawaConfig", "UzawaResult", "UzawaSolver",
]
