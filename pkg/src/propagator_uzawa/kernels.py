"""Uniform time grids and Volterra propagator kernels.

Every kernel here is of convolution type ``K(t, s) = k(t - s) 1{t > s}`` so the
interval integrals needed by the Nystrom scheme reduce to differences of a
closed-form antiderivative of ``k``. Those closed forms are exact even for the
power-law kernel, whose pointwise value blows up on the diagonal.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal

import numpy as np


class SingularEvaluation(ValueError):
    """Pointwise evaluation of a kernel at a singular point."""


@dataclass(frozen=True)
class TimeGrid:
    """Uniform partition ``0 = t_0 < ... < t_N = T``."""

    horizon: float
    n_steps: int

    def __post_init__(self) -> None:
        if not isinstance(self.n_steps, (int, np.integer)) or self.n_steps < 1:
            raise ValueError(f"n_steps must be a positive integer, got {self.n_steps!r}")
        if not np.isfinite(self.horizon) or self.horizon <= 0:
            raise ValueError(f"horizon must be positive, got {self.horizon!r}")

    @property
    def step(self) -> float:
        return self.horizon / self.n_steps

    @property
    def nodes(self) -> np.ndarray:
        # i * step rather than linspace so lags (i - j) * step are exact multiples
        t = np.arange(self.n_steps + 1) * self.step
        t[-1] = self.horizon
        return t

    def __len__(self) -> int:
        return self.n_steps


KernelType = Literal["zero", "exponential", "power_law", "sum"]


@dataclass(frozen=True)
class KernelSpec:
    """A propagator kernel ``K(t, s) = k(t - s)`` for ``t > s``.

    Use the constructors :meth:`zero`, :meth:`exponential`, :meth:`power_law`
    and :meth:`sum_of_exponentials` rather than filling fields by hand.
    """

    kind: KernelType
    c: float = 0.0
    rho: float = 0.0
    alpha: float = 0.0
    terms: tuple["KernelSpec", ...] = field(default=())

    def __post_init__(self) -> None:
        if self.kind == "zero":
            return
        if self.kind == "exponential":
            if not (self.c > 0 and self.rho > 0):
                raise ValueError(f"exponential kernel needs c > 0 and rho > 0, got c={self.c}, rho={self.rho}")
        elif self.kind == "power_law":
            if not (self.c > 0 and 0 < self.alpha < 1):
                raise ValueError(
                    f"power-law kernel needs c > 0 and alpha in (0, 1), got c={self.c}, alpha={self.alpha}"
                )
        elif self.kind == "sum":
            if len(self.terms) != 2 or any(t.kind != "exponential" for t in self.terms):
                raise ValueError("sum kernel must combine exactly two exponential terms")
        else:
            raise ValueError(f"unknown kernel type {self.kind!r}")

    @classmethod
    def zero(cls) -> "KernelSpec":
        return cls("zero")

    @classmethod
    def exponential(cls, c: float, rho: float) -> "KernelSpec":
        return cls("exponential", c=float(c), rho=float(rho))

    @classmethod
    def power_law(cls, c: float, alpha: float) -> "KernelSpec":
        return cls("power_law", c=float(c), alpha=float(alpha))

    @classmethod
    def sum_of_exponentials(cls, first: "KernelSpec", second: "KernelSpec") -> "KernelSpec":
        return cls("sum", terms=(first, second))

    @property
    def is_zero(self) -> bool:
        return self.kind == "zero"

    def lag_value(self, x):
        """``k(x)`` for lags ``x > 0``."""
        x = np.asarray(x, dtype=float)
        if self.kind == "zero":
            return np.zeros_like(x)
        if self.kind == "exponential":
            return self.c * np.exp(-self.rho * x)
        if self.kind == "power_law":
            return self.c * x ** (self.alpha - 1.0)
        return sum(term.lag_value(x) for term in self.terms)

    def interval_integral(self, a, b):
        """``int_a^b k(x) dx`` for lags ``0 <= a <= b``, in closed form."""
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        if self.kind == "zero":
            return np.zeros(np.broadcast(a, b).shape)
        if self.kind == "exponential":
            # e^{-rho a} (1 - e^{-rho (b - a)}) avoids cancellation for long lags
            return (self.c / self.rho) * np.exp(-self.rho * a) * -np.expm1(-self.rho * (b - a))
        if self.kind == "power_law":
            # 0 ** alpha == 0, so the integral over [0, b] is finite and exact
            return (self.c / self.alpha) * (b**self.alpha - a**self.alpha)
        return sum(term.interval_integral(a, b) for term in self.terms)

    def to_dict(self) -> dict:
        if self.kind == "zero":
            return {"type": "zero"}
        if self.kind == "exponential":
            return {"type": "exponential", "c": self.c, "rho": self.rho}
        if self.kind == "power_law":
            return {"type": "power_law", "c": self.c, "alpha": self.alpha}
        return {"type": "sum", "terms": [t.to_dict() for t in self.terms]}

    @classmethod
    def from_dict(cls, data: dict) -> "KernelSpec":
        data = dict(data)
        kind = data.pop("type")
        allowed = {
            "zero": set(),
            "exponential": {"c", "rho"},
            "power_law": {"c", "alpha"},
            "sum": {"terms"},
        }
        if kind not in allowed:
            raise ValueError(f"kernel.type: unknown kernel type {kind!r}")
        unknown = set(data) - allowed[kind]
        if unknown:
            raise ValueError(f"kernel: unknown keys {sorted(unknown)} for type {kind!r}")
        if kind == "zero":
            return cls.zero()
        if kind == "exponential":
            return cls.exponential(data["c"], data["rho"])
        if kind == "power_law":
            return cls.power_law(data["c"], data["alpha"])
        first, second = (cls.from_dict(t) for t in data["terms"])
        return cls.sum_of_exponentials(first, second)


def eval_kernel(spec: KernelSpec, t: float, s: float) -> float:
    """Pointwise ``K(t, s)``; zero on and above the diagonal except where singular."""
    if t > s:
        return float(spec.lag_value(t - s))
    if t == s and spec.kind == "power_law":
        raise SingularEvaluation("power-law kernel is infinite at t == s; use interval integrals")
    return 0.0


@dataclass(frozen=True)
class DiscreteKernel:
    """Interval-integral matrices of a kernel on a grid.

    ``lower[i, j] = int_{t_j}^{t_{j+1}} K(t_i, s) ds`` for ``j < i`` and
    ``upper[i, j] = int_{t_j}^{t_{j+1}} K(s, t_i) ds`` for ``j >= i``.
    """

    spec: KernelSpec
    grid: TimeGrid
    lower: np.ndarray
    upper: np.ndarray

    @property
    def n(self) -> int:
        return self.grid.n_steps


def build_discrete_kernel(spec: KernelSpec, grid: TimeGrid) -> DiscreteKernel:
    n = grid.n_steps
    dt = grid.step
    # the grid is uniform, so both matrices are Toeplitz in the lag
    lags = np.arange(n + 1) * dt
    w = spec.interval_integral(lags[:-1], lags[1:])  # w[k] = int_{k dt}^{(k+1) dt} k(x) dx
    i, j = np.indices((n, n))
    lower = np.where(j < i, w[np.clip(i - j - 1, 0, n - 1)], 0.0)
    upper = np.where(j >= i, w[np.clip(j - i, 0, n - 1)], 0.0)
    lower.setflags(write=False)
    upper.setflags(write=False)
    return DiscreteKernel(spec, grid, lower, upper)


def mask_kernel(dk: DiscreteKernel, i: int) -> tuple[np.ndarray, np.ndarray]:
    """Restrict ``lower``/``upper`` to rows and columns with index ``>= i``."""
    n = dk.n
    if not 0 <= i <= n - 1:
        raise IndexError(f"mask index {i} outside [0, {n - 1}]")
    keep = np.arange(n) >= i
    mask = np.outer(keep, keep)
    return dk.lower * mask, dk.upper * mask
