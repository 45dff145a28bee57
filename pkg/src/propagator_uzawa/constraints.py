"""Constraining processes ``a^1 <= u <= a^2`` and ``a^3 <= X <= a^4``.

Rate bounds live on ``t_0 .. t_{N-1}`` and inventory bounds on ``t_1 .. t_N``,
so every array here is ``M x N`` with column ``k`` of ``a3``/``a4`` referring to
node ``t_{k+1}``. Unconstrained sides use a huge finite bound ("big M").
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .kernels import TimeGrid
from .signals import SignalEnsemble

BIG_M = 1e16
BIG_M_PRIME = 7.5e15


class ScenarioKind(str, Enum):
    SANITY = "sanity"
    NO_BUY = "no_buy"
    NO_SHORT = "no_short"
    STOP_TRADING = "stop_trading"
    BATTERY = "battery"
    RATE_ONLY = "rate_only"
    CUSTOM = "custom"


class InvalidScenario(ValueError):
    pass


@dataclass(frozen=True)
class ConstraintEnsemble:
    a1: np.ndarray
    a2: np.ndarray
    a3: np.ndarray
    a4: np.ndarray
    X0: float
    big_M: float = BIG_M
    tau_index: np.ndarray | None = None  # stop-trading node index per path (N when never hit)

    def __post_init__(self) -> None:
        shapes = {a.shape for a in (self.a1, self.a2, self.a3, self.a4)}
        if len(shapes) != 1 or len(next(iter(shapes))) != 2:
            raise ValueError(f"constraint arrays must share one (M, N) shape, got {shapes}")
        if np.any(self.a1 > self.a2) or np.any(self.a3 > self.a4):
            raise InvalidScenario("constraining processes must satisfy a1 <= a2 and a3 <= a4")

    @property
    def shape(self) -> tuple[int, int]:
        return self.a1.shape

    def binding_mask(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Entries whose bound is a genuine constraint rather than a big-M stand-in."""
        cut = 1e-3 * self.big_M
        return tuple(np.abs(a) < cut for a in (self.a1, self.a2, self.a3, self.a4))


def _full(shape, value) -> np.ndarray:
    return np.full(shape, float(value))


def stop_trading_index(S: np.ndarray, S_ref: float) -> np.ndarray:
    """First node index with ``S < S_ref`` per path, ``N`` if never."""
    below = S < S_ref
    hit = below.any(axis=1)
    first = np.argmax(below, axis=1)
    return np.where(hit, first, S.shape[1] - 1)


def build_constraints(
    kind: ScenarioKind | str,
    ensemble: SignalEnsemble,
    grid: TimeGrid,
    X0: float,
    *,
    S_ref: float | None = None,
    u_max: float | None = None,
    X_max: float | None = None,
    u_bound: float | None = None,
    big_M: float = BIG_M,
    big_M_prime: float = BIG_M_PRIME,
    custom: tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray] | None = None,
) -> ConstraintEnsemble:
    kind = ScenarioKind(kind)
    if ensemble.grid.n_steps != grid.n_steps:
        raise ValueError("ensemble and grid disagree on the number of steps")
    shape = (ensemble.n_paths, grid.n_steps)
    M = big_M

    if kind in (ScenarioKind.SANITY, ScenarioKind.NO_BUY, ScenarioKind.NO_SHORT):
        a1, a2 = _full(shape, -M), _full(shape, M)
        a3, a4 = _full(shape, -M), _full(shape, M)
        if kind is ScenarioKind.NO_BUY:
            a2[:] = 0.0
        if kind is ScenarioKind.NO_SHORT:
            a3[:] = 0.0
        a3[:, -1] = a4[:, -1] = 0.0
        return ConstraintEnsemble(a1, a2, a3, a4, float(X0), big_M)

    if kind is ScenarioKind.RATE_ONLY:
        bound = 1.0 if u_bound is None else float(u_bound)
        return ConstraintEnsemble(
            _full(shape, -bound), _full(shape, bound), _full(shape, -M), _full(shape, M), float(X0), big_M
        )

    if kind is ScenarioKind.STOP_TRADING:
        if S_ref is None:
            raise InvalidScenario("stop_trading needs S_ref")
        if S_ref >= ensemble.params.S0:
            raise InvalidScenario(f"stop_trading needs S_ref < S0, got S_ref={S_ref}, S0={ensemble.params.S0}")
        tau = stop_trading_index(ensemble.price, S_ref)
        t_idx = np.arange(grid.n_steps)
        allowed = t_idx[None, :] <= tau[:, None]
        a2 = np.where(allowed, M, 0.0)
        a4 = _full(shape, big_M_prime)
        # full liquidation only where the price never dropped below S_ref before T
        a4[:, -1] = np.where(tau < grid.n_steps, big_M_prime, 0.0)
        return ConstraintEnsemble(-a2, a2, -a4, a4, float(X0), big_M, tau_index=tau)

    if kind is ScenarioKind.BATTERY:
        if u_max is None or X_max is None or u_max <= 0 or X_max <= 0:
            raise InvalidScenario(f"battery needs u_max > 0 and X_max > 0, got u_max={u_max}, X_max={X_max}")
        if not 0 <= X0 <= X_max:
            raise InvalidScenario(f"battery needs 0 <= X0 <= X_max, got X0={X0}")
        return ConstraintEnsemble(
            _full(shape, -u_max), _full(shape, u_max), _full(shape, 0.0), _full(shape, X_max), float(X0), big_M
        )

    if custom is None:
        raise InvalidScenario("custom scenario needs explicit (a1, a2, a3, a4) arrays")
    arrays = [np.broadcast_to(np.asarray(a, dtype=float), shape).copy() for a in custom]
    return ConstraintEnsemble(*arrays, float(X0), big_M)


def violation(u: np.ndarray, X: np.ndarray, ce: ConstraintEnsemble):
    """The four blocks ``(a1 - u, u - a2, a3 - X_{1..N}, X_{1..N} - a4)``.

    Positive entries are violations.
    """
    u = np.asarray(u, dtype=float)
    X = np.asarray(X, dtype=float)
    if u.shape[-1] + 1 != X.shape[-1]:
        raise ValueError(f"inventory must have one more node than the control, got {u.shape} and {X.shape}")
    Xn = X[..., 1:]
    return ce.a1 - u, u - ce.a2, ce.a3 - Xn, Xn - ce.a4


def max_violation(u: np.ndarray, X: np.ndarray, ce: ConstraintEnsemble) -> float:
    return max(float(np.max(g, initial=0.0)) for g in violation(u, X, ce))
