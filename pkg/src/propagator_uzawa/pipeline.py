"""From a scenario configuration to a solved, certified run."""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .config import ScenarioConfig
from .constraints import ConstraintEnsemble, build_constraints, max_violation
from .fredholm import NystromOperator, assemble, fredholm_residual, pnl
from .kernels import DiscreteKernel, TimeGrid, build_discrete_kernel
from .lsmc import lambda_rows
from .signals import SignalEnsemble, simulate
from .uzawa import UzawaResult, UzawaSolver


@dataclass
class Problem:
    config: ScenarioConfig
    grid: TimeGrid
    dk: DiscreteKernel
    op: NystromOperator
    ensemble: SignalEnsemble
    constraints: ConstraintEnsemble

    def solver(self) -> UzawaSolver:
        return UzawaSolver(self.ensemble, self.constraints, self.op, self.config.uzawa, self.config.lsmc)


def resolve_threads(threads: int) -> int:
    return os.cpu_count() or 1 if threads == 0 else threads


def build_problem(cfg: ScenarioConfig) -> Problem:
    grid = cfg.grid
    dk = build_discrete_kernel(cfg.kernel, grid)
    op = assemble(dk)
    ensemble = simulate(cfg.signal, grid, cfg.run.paths, cfg.run.seed, resolve_threads(cfg.run.threads))
    sc = cfg.scenario
    ce = build_constraints(
        sc.kind, ensemble, grid, sc.X0,
        S_ref=sc.S_ref, u_max=sc.u_max, X_max=sc.X_max, u_bound=sc.u_bound,
        big_M=sc.big_M, big_M_prime=sc.big_M_prime,
    )
    return Problem(cfg, grid, dk, op, ensemble, ce)


def residual_certificate(solver: UzawaSolver, result: UzawaResult) -> float:
    """Fredholm residual of the returned control against ``R + Lambda`` rebuilt row by row."""
    st = result.state
    ens = solver.ensemble
    rows = {}
    gen = lambda_rows(st.lam1, st.lam2, st.lam3, st.lam4, result.features, solver.lsmc_cfg, solver.weight)
    for i, lam_row in gen:
        rows[i] = ens.slope[i, i:] * ens.drift[:, i : i + 1] + ens.offset[i, i:] + lam_row
    return fredholm_residual(solver.op, result.control, rows.__getitem__)


def summary_metrics(problem: Problem, result: UzawaResult, residual: float | None) -> dict:
    ce = problem.constraints
    d = result.diagnostics
    u, X = result.control, result.inventory
    out = {
        "iterations": result.iterations,
        "converged": bool(result.converged),
        "slackness": list(d.slackness[-1]) if len(d) else [0.0, 0.0, 0.0, 0.0],
        "max_violation": max_violation(u, X, ce),
        "mean_pnl": float(np.mean(pnl(u, problem.ensemble.alpha, problem.dk, problem.grid))),
        "max_abs_terminal_inventory": float(np.max(np.abs(X[:, -1]))),
        "max_abs_control": float(np.max(np.abs(u))),
        "regression_fallbacks": int(sum(d.fallbacks)),
        "fredholm_residual": residual,
    }
    if ce.tau_index is not None:
        out["stopped_paths"] = int(np.sum(ce.tau_index < problem.grid.n_steps))
    return out
