"""Exogenous price and level-seasonal Ornstein-Uhlenbeck drift signal.

The price is ``S_t = S_0 + int_0^t I_s ds + sigma B_t`` with drift

    dI_t = (theta sin(w t + phi) - kappa I_t) dt + xi dW_t,

and the trading signal is ``alpha_t = E_t[int_t^T I_s ds]``. Its conditional
expectations ``E_{t_i}[alpha_{t_j}]`` are affine in ``I_{t_i}``, which is what
:func:`cond_exp_coefficients` exploits.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np

from .kernels import TimeGrid


@dataclass(frozen=True)
class SignalParams:
    theta: float = 0.0
    w: float = 0.0
    phi: float = 0.0
    kappa: float = 1.0
    xi: float = 0.0
    I0: float = 0.0
    S0: float = 100.0
    sigma: float = 0.0

    def __post_init__(self) -> None:
        if not self.kappa > 0:
            raise ValueError(f"signal.kappa must be > 0, got {self.kappa}")
        if self.xi < 0:
            raise ValueError(f"signal.xi must be >= 0, got {self.xi}")
        if self.sigma < 0:
            raise ValueError(f"signal.sigma must be >= 0, got {self.sigma}")
        if not 0 <= self.phi < 2 * math.pi:
            raise ValueError(f"signal.phi must lie in [0, 2 pi), got {self.phi}")

    def to_dict(self) -> dict:
        return asdict(self)


def seasonal_mean(params: SignalParams, t):
    """Periodic particular solution of ``m' = theta sin(w t + phi) - kappa m``."""
    t = np.asarray(t, dtype=float)
    k, w = params.kappa, params.w
    arg = w * t + params.phi
    return params.theta / (k * k + w * w) * (k * np.sin(arg) - w * np.cos(arg))


def seasonal_tail_integral(params: SignalParams, a, horizon: float):
    """``int_a^T seasonal_mean(s) ds``, stable down to ``w = 0``.

    The ``(kappa/w)(cos - cos)`` term is rewritten with a product formula and a
    sinc factor so that small pulsations lose no digits; at ``w = 0`` it is the
    analytic limit ``theta sin(phi) (T - a) / kappa``.
    """
    a = np.asarray(a, dtype=float)
    k, w, phi = params.kappa, params.w, params.phi
    length = horizon - a
    mid = 0.5 * w * (horizon + a) + phi
    # (1/w)(cos(wT+phi) - cos(wa+phi)) = -length * sin(mid) * sinc(w length / 2)
    cos_term = -length * np.sin(mid) * np.sinc(w * length / (2 * np.pi))
    sin_term = np.sin(w * horizon + phi) - np.sin(w * a + phi)
    return -params.theta / (k * k + w * w) * (k * cos_term + sin_term)


def cond_exp_coefficients(params: SignalParams, grid: TimeGrid) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(slope, offset)`` with ``R[i, j] = slope[i, j] * I_{t_i} + offset[i, j]``.

    Both are ``N x N`` and vanish below the diagonal.
    """
    n = grid.n_steps
    t = grid.nodes[:n]
    T = grid.horizon
    k = params.kappa
    ti, tj = t[:, None], t[None, :]
    slope = (np.exp(-k * (tj - ti)) - np.exp(-k * (T - ti))) / k
    offset = -seasonal_mean(params, ti) * slope + seasonal_tail_integral(params, tj, T)
    upper = np.triu(np.ones((n, n), dtype=bool))
    return np.where(upper, slope, 0.0), np.where(upper, offset, 0.0)


def cond_exp_matrix(params: SignalParams, grid: TimeGrid, I_path) -> np.ndarray:
    """Upper-triangular matrix ``E_{t_i}[alpha_{t_j}]`` for one drift path."""
    I_path = np.asarray(I_path, dtype=float)
    if I_path.shape[-1] != grid.n_steps + 1:
        raise ValueError(f"drift path must have N+1 = {grid.n_steps + 1} entries, got {I_path.shape[-1]}")
    slope, offset = cond_exp_coefficients(params, grid)
    return slope * I_path[..., : grid.n_steps, None] + offset


def ou_transition(params: SignalParams, t: float, dt: float, I_t):
    """Mean and standard deviation of ``I_{t+dt}`` given ``I_t`` (exact)."""
    decay = math.exp(-params.kappa * dt)
    mean = seasonal_mean(params, t + dt) + (np.asarray(I_t, dtype=float) - seasonal_mean(params, t)) * decay
    std = params.xi * math.sqrt(-math.expm1(-2 * params.kappa * dt) / (2 * params.kappa))
    return mean, std


def path_generator(seed: int, path_index: int) -> np.random.Generator:
    """Counter-based stream keyed by ``(seed, path_index)``."""
    key = np.array([seed & 0xFFFFFFFFFFFFFFFF, path_index], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


@dataclass(frozen=True)
class SignalEnsemble:
    """``M`` simulated drift and price paths on ``N + 1`` nodes."""

    params: SignalParams
    grid: TimeGrid
    drift: np.ndarray
    price: np.ndarray
    rng_seed: int
    slope: np.ndarray
    offset: np.ndarray

    @property
    def n_paths(self) -> int:
        return self.drift.shape[0]

    @property
    def alpha(self) -> np.ndarray:
        """Realized signal ``alpha_{t_i}`` for ``i < N`` (the diagonal of ``R``)."""
        n = self.grid.n_steps
        return np.diagonal(self.slope) * self.drift[:, :n] + np.diagonal(self.offset)

    def cond_exp(self, path: int | None = None) -> np.ndarray:
        """Per-path ``R`` matrices, ``(N, N)`` for one path or ``(M, N, N)`` for all."""
        n = self.grid.n_steps
        if path is not None:
            return self.slope * self.drift[path, :n, None] + self.offset
        return self.slope[None] * self.drift[:, :n, None] + self.offset[None]


def simulate(
    params: SignalParams,
    grid: TimeGrid,
    n_paths: int,
    seed: int,
    threads: int = 1,
) -> SignalEnsemble:
    if n_paths < 1:
        raise ValueError(f"n_paths must be >= 1, got {n_paths}")
    n = grid.n_steps
    dt = grid.step
    t = grid.nodes
    decay = math.exp(-params.kappa * dt)
    ou_std = params.xi * math.sqrt(-math.expm1(-2 * params.kappa * dt) / (2 * params.kappa))
    m = seasonal_mean(params, t)

    noise = np.empty((n_paths, 2, n))

    def fill(paths: range) -> None:
        for p in paths:
            noise[p] = path_generator(seed, p).standard_normal((2, n))

    threads = max(1, int(threads))
    chunks = [range(lo, min(lo + 256, n_paths)) for lo in range(0, n_paths, 256)]
    if threads == 1:
        for chunk in chunks:
            fill(chunk)
    else:
        with ThreadPoolExecutor(threads) as pool:
            list(pool.map(fill, chunks))

    drift = np.empty((n_paths, n + 1))
    price = np.empty((n_paths, n + 1))
    drift[:, 0] = params.I0
    price[:, 0] = params.S0
    sq = math.sqrt(dt)
    for i in range(n):
        drift[:, i + 1] = m[i + 1] + (drift[:, i] - m[i]) * decay + ou_std * noise[:, 0, i]
        price[:, i + 1] = price[:, i] + drift[:, i] * dt + params.sigma * sq * noise[:, 1, i]

    slope, offset = cond_exp_coefficients(params, grid)
    return SignalEnsemble(params, grid, drift, price, int(seed), slope, offset)
