"""Stochastic Uzawa: projected dual ascent over multiplier sample paths.

Each iteration moves the four multiplier arrays along the constraint map of
the current control, projects them on the positive cone, re-estimates their
conditional expectations by LSMC and re-solves the Nystrom system.

Learning rate: ``delta_n = delta / n**beta`` for ``n >= 1`` and
``delta_0 = delta`` (the power law is undefined at ``n = 0``).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from .constraints import ConstraintEnsemble, violation
from .fredholm import NystromOperator, inventory, pnl, solve_from_source, transient_state
from .lsmc import LSMCConfig, LSMCDiagnostics, fit_predict_lambda, lambda_projection
from .signals import SignalEnsemble

log = logging.getLogger(__name__)


class NumericalAbort(RuntimeError):
    """Raised when iterates stop being finite, typically a learning rate too large."""

    def __init__(self, message: str, diagnostics: "Diagnostics | None" = None):
        super().__init__(message)
        self.diagnostics = diagnostics


@dataclass(frozen=True)
class UzawaConfig:
    delta: float = 1.0
    beta: float = 0.5
    max_iters: int = 100
    eps_bar: float = 1e-3
    feas_tol: float | None = None  # absolute; None means 10 * eps_bar * max(1, |X0|)
    slackness_mode: Literal["sum", "max"] = "sum"
    # weight of inventory multipliers in the aggregated multiplier tail sum
    inventory_weight: Literal["unit", "dt"] = "unit"

    def __post_init__(self) -> None:
        if not self.delta > 0:
            raise ValueError(f"uzawa.delta must be > 0, got {self.delta}")
        if self.beta < 0:
            raise ValueError(f"uzawa.beta must be >= 0, got {self.beta}")
        if self.max_iters < 0:
            raise ValueError(f"uzawa.max_iters must be >= 0, got {self.max_iters}")
        if not self.eps_bar > 0:
            raise ValueError(f"uzawa.eps_bar must be > 0, got {self.eps_bar}")
        if self.slackness_mode not in ("sum", "max"):
            raise ValueError(f"uzawa.slackness_mode must be 'sum' or 'max', got {self.slackness_mode!r}")
        if self.inventory_weight not in ("unit", "dt"):
            raise ValueError(f"uzawa.inventory_weight must be 'unit' or 'dt', got {self.inventory_weight!r}")

    def learning_rate(self, n: int) -> float:
        return self.delta if n == 0 else self.delta / n**self.beta


@dataclass
class MultiplierState:
    """``lam[0..1]`` on rate nodes ``t_0..t_{N-1}``, ``lam[2..3]`` on ``t_1..t_N``."""

    lam: np.ndarray
    n: int = 0

    @classmethod
    def zeros(cls, n_paths: int, n_steps: int) -> "MultiplierState":
        return cls(np.zeros((4, n_paths, n_steps)), 0)

    @property
    def lam1(self) -> np.ndarray:
        return self.lam[0]

    @property
    def lam2(self) -> np.ndarray:
        return self.lam[1]

    @property
    def lam3(self) -> np.ndarray:
        return self.lam[2]

    @property
    def lam4(self) -> np.ndarray:
        return self.lam[3]


@dataclass
class Diagnostics:
    slackness: list[tuple[float, float, float, float]] = field(default_factory=list)
    max_violation: list[float] = field(default_factory=list)
    mean_pnl: list[float] = field(default_factory=list)
    fallbacks: list[int] = field(default_factory=list)
    max_condition: list[float] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.max_violation)

    def append(self, s, viol: float, mean_pnl: float, lsmc: LSMCDiagnostics) -> None:
        self.slackness.append(tuple(float(v) for v in s))
        self.max_violation.append(float(viol))
        self.mean_pnl.append(float(mean_pnl))
        self.fallbacks.append(lsmc.fallbacks)
        self.max_condition.append(lsmc.max_condition)


def step(
    state: MultiplierState,
    u_prev: np.ndarray,
    X_prev: np.ndarray,
    ce: ConstraintEnsemble,
    cfg: UzawaConfig,
) -> MultiplierState:
    rate = cfg.learning_rate(state.n)
    gaps = np.stack(violation(u_prev, X_prev, ce))
    return MultiplierState(np.maximum(state.lam + rate * gaps, 0.0), state.n + 1)


def slackness(
    state: MultiplierState,
    u: np.ndarray,
    X: np.ndarray,
    ce: ConstraintEnsemble,
    dt: float,
    mode: str = "sum",
) -> np.ndarray:
    """Empirical ``(S1, S2, S3, S4)``: path average of gap times multiplier.

    ``mode="sum"`` integrates over time with weight ``dt``; ``mode="max"``
    reports the largest per-node path average in absolute value (signed).
    """
    out = np.empty(4)
    for k, g in enumerate(violation(u, X, ce)):
        lam = state.lam[k]
        prod = np.where(lam > 0, g * lam, 0.0)  # big-M gaps times zero multipliers stay exactly 0
        per_node = prod.mean(axis=0)
        if mode == "sum":
            out[k] = per_node.sum() * dt
        else:
            out[k] = per_node[np.argmax(np.abs(per_node))]
    return out


def _max_violation(blocks) -> float:
    return max(float(np.max(g, initial=0.0)) for g in blocks)


@dataclass
class UzawaResult:
    control: np.ndarray
    inventory: np.ndarray
    impact: np.ndarray
    state: MultiplierState
    diagnostics: Diagnostics
    converged: bool
    features: np.ndarray  # state used for the last regression (from the previous iterate)

    @property
    def iterations(self) -> int:
        return self.state.n


class UzawaSolver:
    """Runs the ascent for one signal ensemble, constraint ensemble and kernel."""

    def __init__(
        self,
        ensemble: SignalEnsemble,
        constraints: ConstraintEnsemble,
        op: NystromOperator,
        cfg: UzawaConfig,
        lsmc_cfg: LSMCConfig | None = None,
    ):
        if constraints.shape != (ensemble.n_paths, ensemble.grid.n_steps):
            raise ValueError(
                f"constraint shape {constraints.shape} does not match ensemble {(ensemble.n_paths, ensemble.grid.n_steps)}"
            )
        if op.n != ensemble.grid.n_steps:
            raise ValueError("operator and grid disagree on the number of steps")
        self.ensemble = ensemble
        self.ce = constraints
        self.op = op
        self.cfg = cfg
        self.lsmc_cfg = lsmc_cfg or LSMCConfig()
        self.grid = ensemble.grid
        self.dk = op.dk
        self.alpha = ensemble.alpha
        n = self.grid.n_steps
        C = op.row_cache
        # sum_j C_ij R_ij is affine in I_{t_i}, so the signal part of the source is cheap
        proj_R = ensemble.drift[:, :n] * np.sum(C * ensemble.slope, axis=1) + np.sum(C * ensemble.offset, axis=1)
        self.signal_source = self.alpha - proj_R
        self.weight = 1.0 if cfg.inventory_weight == "unit" else self.grid.step
        X0 = constraints.X0
        self.feas_tol = cfg.feas_tol if cfg.feas_tol is not None else 10 * cfg.eps_bar * max(1.0, abs(X0))

    def features(self, u: np.ndarray, X: np.ndarray) -> np.ndarray:
        n = self.grid.n_steps
        columns = {"signal": lambda: self.alpha, "impact": lambda: transient_state(self.dk, u), "inventory": lambda: X[:, :n]}
        return np.stack([columns[name]() for name in self.lsmc_cfg.features], axis=-1)

    def control(self, state: MultiplierState, features: np.ndarray):
        lam_diag, projected, lsmc_diag = lambda_projection(
            state.lam1, state.lam2, state.lam3, state.lam4, features, self.op.row_cache, self.lsmc_cfg, self.weight
        )
        source = self.signal_source + lam_diag - projected
        if not np.all(np.isfinite(source)):
            raise FloatingPointError("non-finite source term")
        return solve_from_source(self.op, source), lsmc_diag

    def full_lambda(self, state: MultiplierState, features: np.ndarray) -> np.ndarray:
        lam, _ = fit_predict_lambda(
            state.lam1, state.lam2, state.lam3, state.lam4, features, self.lsmc_cfg, self.weight
        )
        return lam

    def run(self, callback=None) -> UzawaResult:
        cfg = self.cfg
        M, n = self.ce.shape
        X0 = self.ce.X0
        state = MultiplierState.zeros(M, n)
        u = solve_from_source(self.op, self.signal_source)
        X = inventory(u, self.grid, X0)
        feats = self.features(u, X)
        diag = Diagnostics()
        converged = False
        while state.n < cfg.max_iters:
            rate = cfg.learning_rate(state.n)
            with np.errstate(over="ignore", invalid="ignore"):
                state = step(state, u, X, self.ce, cfg)
                feats = self.features(u, X)
                try:
                    if not np.all(np.isfinite(state.lam)):
                        raise FloatingPointError("non-finite multipliers")
                    u, lsmc_diag = self.control(state, feats)
                    X = inventory(u, self.grid, X0)
                    if not np.all(np.isfinite(X)):
                        raise FloatingPointError("non-finite inventory")
                except (FloatingPointError, np.linalg.LinAlgError) as exc:
                    raise NumericalAbort(
                        f"{exc} at iteration {state.n} (learning rate {rate:g}); reduce uzawa.delta", diag
                    ) from None
                s = slackness(state, u, X, self.ce, self.grid.step, cfg.slackness_mode)
                viol = _max_violation(violation(u, X, self.ce))
                diag.append(s, viol, float(np.mean(pnl(u, self.alpha, self.dk, self.grid))), lsmc_diag)
            if callback is not None:
                callback(state, u, X, diag)
            if np.max(np.abs(s)) <= cfg.eps_bar and viol <= self.feas_tol:
                converged = True
                break
        log.info("uzawa stopped after %d iterations (converged=%s)", state.n, converged)
        return UzawaResult(u, X, transient_state(self.dk, u), state, diag, converged, feats)


def run(
    ensemble: SignalEnsemble,
    constraints: ConstraintEnsemble,
    op: NystromOperator,
    cfg: UzawaConfig,
    lsmc_cfg: LSMCConfig | None = None,
) -> UzawaResult:
    return UzawaSolver(ensemble, constraints, op, cfg, lsmc_cfg).run()
