"""Independent reference solvers.

* :func:`clip_oracle` -- closed-form optimum without impact and with rate bounds only.
* :func:`solve_qp` -- exact primal active-set method for the deterministic
  battery / execution program with slippage, transient weights and box bounds.
* :func:`enumerate_active_sets` -- brute force over active sets, tiny sizes only.
* :func:`dense_deterministic_solve` -- ``(I + L + U) u = rhs`` by dense LU.
"""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg as sla

from .kernels import DiscreteKernel, TimeGrid


class InfeasibleInstance(ValueError):
    pass


class LPCaseUnsupported(ValueError):
    """Zero slippage makes the program linear; its optimum need not be unique."""


def clip_oracle(alpha, a1, a2) -> np.ndarray:
    alpha, a1, a2 = np.broadcast_arrays(*(np.asarray(x, dtype=float) for x in (alpha, a1, a2)))
    return np.minimum(np.maximum(alpha, a1), a2)


def clip_multipliers(alpha, a1, a2) -> tuple[np.ndarray, np.ndarray]:
    """Rate multipliers ``((a1 - alpha)^+, (alpha - a2)^+)`` paired with :func:`clip_oracle`."""
    alpha = np.asarray(alpha, dtype=float)
    return np.maximum(np.asarray(a1) - alpha, 0.0), np.maximum(alpha - np.asarray(a2), 0.0)


def dense_deterministic_solve(dk: DiscreteKernel, rhs) -> np.ndarray:
    rhs = np.asarray(rhs, dtype=float)
    op = np.eye(dk.n) + dk.lower + dk.upper
    lu = sla.lu_factor(op)
    if np.min(np.abs(np.diag(lu[0]))) < 1e-14:
        raise np.linalg.LinAlgError("I + L + U is numerically singular")
    return sla.lu_solve(lu, rhs)


@dataclass
class QPInstance:
    """Maximize ``-sum_i (S_i + gamma_i u_i / 2 + sum_{j<i} K_ij u_j) dt u_i + X_N S_N``.

    ``forecast`` has ``N + 1`` entries, rate data ``N`` entries and inventory
    bounds ``N`` entries for nodes ``1..N``. ``X_terminal`` pins ``X_N`` when set.
    """

    forecast: np.ndarray
    gamma: np.ndarray
    step: float
    u_min: np.ndarray
    u_max: np.ndarray
    X_min: np.ndarray
    X_max: np.ndarray
    X0: float = 0.0
    X_terminal: float | None = 0.0
    weights: np.ndarray | None = None

    def __post_init__(self) -> None:
        self.forecast = np.asarray(self.forecast, dtype=float)
        n = self.forecast.size - 1
        if n < 1:
            raise ValueError("forecast needs at least two nodes")
        as_vec = lambda v: np.broadcast_to(np.asarray(v, dtype=float), (n,)).copy()
        self.gamma = as_vec(self.gamma)
        self.u_min, self.u_max = as_vec(self.u_min), as_vec(self.u_max)
        self.X_min, self.X_max = as_vec(self.X_min), as_vec(self.X_max)
        self.weights = np.zeros((n, n)) if self.weights is None else np.asarray(self.weights, dtype=float)
        if not self.step > 0:
            raise ValueError(f"step must be > 0, got {self.step}")
        if self.weights.shape != (n, n) or np.any(np.triu(self.weights) != 0):
            raise ValueError("weights must be a strictly lower-triangular N x N matrix")
        if np.any(self.u_min > self.u_max) or np.any(self.X_min > self.X_max):
            raise ValueError("bounds must satisfy min <= max")
        if np.any(self.gamma < 0):
            raise ValueError("slippage intensities must be >= 0")
        if self.X_terminal is not None and not self.X_min[-1] <= self.X_terminal <= self.X_max[-1]:
            raise InfeasibleInstance(f"terminal inventory {self.X_terminal} lies outside its bounds")

    @property
    def n(self) -> int:
        return self.gamma.size

    def hessian(self) -> np.ndarray:
        return self.step * (np.diag(self.gamma) + self.weights + self.weights.T)

    def linear(self) -> np.ndarray:
        return self.step * (self.forecast[:-1] - self.forecast[-1])

    def inventory(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        return np.concatenate([[self.X0], self.X0 + self.step * np.cumsum(u)])

    def objective(self, u) -> float:
        """The PnL being maximized, evaluated term by term."""
        u = np.asarray(u, dtype=float)
        price = self.forecast
        cash = -np.sum((price[:-1] + 0.5 * self.gamma * u + self.weights @ u) * self.step * u)
        return float(cash + self.inventory(u)[-1] * price[-1])

    def inequality_system(self) -> tuple[np.ndarray, np.ndarray]:
        """``G u <= h`` stacking rate bounds then inventory bounds at nodes ``1..N``."""
        n = self.n
        eye = np.eye(n)
        cum = self.step * np.tril(np.ones((n, n)))
        G = np.vstack([eye, -eye, cum, -cum])
        h = np.concatenate([self.u_max, -self.u_min, self.X_max - self.X0, self.X0 - self.X_min])
        keep = np.isfinite(h)
        if self.X_terminal is not None:
            # a pinned X_N makes its bounds parallel to the equality row
            keep[[3 * n - 1, 4 * n - 1]] = False
        return G[keep], h[keep]

    def equality_system(self) -> tuple[np.ndarray, np.ndarray]:
        if self.X_terminal is None:
            return np.zeros((0, self.n)), np.zeros(0)
        return np.full((1, self.n), self.step), np.array([self.X_terminal - self.X0])

    def with_terminal_free(self) -> "QPInstance":
        return QPInstance(
            self.forecast, self.gamma, self.step, self.u_min, self.u_max, self.X_min, self.X_max,
            self.X0, None, self.weights,
        )

    @classmethod
    def from_csv(cls, path, step: float, X0: float = 0.0, X_terminal: float | None = 0.0, **bounds) -> "QPInstance":
        """Columns ``forecast`` and ``gamma`` are required, one row per node ``0..N``.

        Optional columns ``u_min``, ``u_max`` (rows ``0..N-1``) and ``X_min``,
        ``X_max`` (rows ``1..N``) override the scalar ``bounds`` keywords.
        """
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
        if len(rows) < 2:
            raise ValueError(f"{path}: need at least two rows")
        missing = {"forecast", "gamma"} - set(rows[0])
        if missing:
            raise ValueError(f"{path}: missing columns {sorted(missing)}")

        def column(name: str, rows_slice, default):
            if name in rows[0]:
                return np.array([float(r[name]) for r in rows_slice])
            if default is None:
                raise ValueError(f"{path}: no column or value for {name}")
            return default

        forecast = np.array([float(r["forecast"]) for r in rows])
        rate_rows, inv_rows = rows[:-1], rows[1:]
        return cls(
            forecast=forecast,
            gamma=column("gamma", rate_rows, None),
            step=step,
            u_min=column("u_min", rate_rows, bounds.get("u_min", -np.inf)),
            u_max=column("u_max", rate_rows, bounds.get("u_max", np.inf)),
            X_min=column("X_min", inv_rows, bounds.get("X_min", -np.inf)),
            X_max=column("X_max", inv_rows, bounds.get("X_max", np.inf)),
            X0=X0,
            X_terminal=X_terminal,
        )


@dataclass
class QPSolution:
    control: np.ndarray
    inventory: np.ndarray
    objective: float
    ineq_multipliers: np.ndarray
    eq_multipliers: np.ndarray
    kkt_residual: float
    iterations: int
    active: list[int] = field(default_factory=list)


def _kkt_solve(H, g, A):
    """Minimize ``p^T H p / 2 + g^T p`` s.t. ``A p = 0``; returns ``(p, mu)`` with ``H p + g = A^T mu``."""
    n = H.shape[0]
    m = A.shape[0]
    if m == 0:
        return sla.cho_solve(sla.cho_factor(H), -g), np.zeros(0)
    K = np.block([[H, A.T], [A, np.zeros((m, m))]])
    sol = np.linalg.solve(K, np.concatenate([-g, np.zeros(m)]))
    return sol[:n], -sol[n:]


def _feasible_start(inst: QPInstance, G, h, Aeq, beq, tol) -> np.ndarray:
    n = inst.n
    total = inst.step * n
    rate = 0.0 if inst.X_terminal is None else (inst.X_terminal - inst.X0) / total
    u = np.full(n, rate)
    if np.all(G @ u <= h + tol) and np.allclose(Aeq @ u, beq, atol=tol):
        return u
    raise InfeasibleInstance(
        "the uniform-rate strategy violates the bounds; an instance whose feasibility "
        "is not witnessed by it is rejected"
    )


def kkt_residual(inst: QPInstance, u, z, y) -> float:
    """Max of stationarity, primal, dual and complementarity residuals, relative."""
    H, q = inst.hessian(), -inst.linear()
    G, h = inst.inequality_system()
    Aeq, beq = inst.equality_system()
    grad = H @ u - q
    scale = 1.0 + np.max(np.abs(q)) + np.max(np.abs(H @ u))
    stat = np.max(np.abs(grad + G.T @ z + Aeq.T @ y)) / scale
    slack = h - G @ u
    hscale = 1.0 + np.max(np.abs(h), initial=0.0)
    primal = max(np.max(-slack, initial=0.0), np.max(np.abs(Aeq @ u - beq), initial=0.0)) / hscale
    dual = np.max(-z, initial=0.0) / scale
    comp = np.max(np.abs(z * slack), initial=0.0) / (scale * hscale)
    return float(max(stat, primal, dual, comp))


def solve_qp(inst: QPInstance, tol: float = 1e-11, max_iter: int | None = None) -> QPSolution:
    """Primal active-set method on ``min u^T H u / 2 - q^T u`` (the negated PnL).

    Starts from the uniform-rate strategy, so instances it does not satisfy are
    rejected as infeasible. The working set stays linearly independent because
    a blocking constraint always has ``a^T p > 0`` while working rows have
    ``a^T p = 0``.
    """
    H = inst.hessian()
    try:
        sla.cholesky(H)
    except np.linalg.LinAlgError:
        raise LPCaseUnsupported(
            "the program is not strictly convex (some slippage intensity is zero); "
            "its optimum is not unique and this oracle certifies only the QP case"
        ) from None
    c = inst.linear()
    G, h = inst.inequality_system()
    Aeq, beq = inst.equality_system()
    scale_h = 1.0 + np.max(np.abs(h), initial=0.0)
    u = _feasible_start(inst, G, h, Aeq, beq, 1e-9 * scale_h)
    n_eq = Aeq.shape[0]
    working: list[int] = []
    max_iter = max_iter or 50 * (G.shape[0] + inst.n + 10)
    it = 0
    while True:
        it += 1
        if it > max_iter:
            raise RuntimeError(f"active-set method did not terminate in {max_iter} iterations")
        A = np.vstack([Aeq, G[working]]) if working else Aeq
        g = H @ u + c
        p, mu = _kkt_solve(H, g, A)
        pscale = 1.0 + np.max(np.abs(u))
        if np.max(np.abs(p)) <= tol * pscale:
            z_work = -mu[n_eq:]  # g = A^T mu at p = 0, and stationarity needs g + G^T z = 0
            if not working or np.min(z_work) >= -tol * (1.0 + np.max(np.abs(g))):
                break
            working.pop(int(np.argmin(z_work)))
            continue
        Gp = G @ p
        slack = h - G @ u
        step = 1.0
        block = -1
        in_work = np.zeros(G.shape[0], dtype=bool)
        in_work[working] = True
        cand = np.flatnonzero((Gp > 1e-12 * np.linalg.norm(G, axis=1) * np.linalg.norm(p)) & ~in_work)
        if cand.size:
            ratios = np.maximum(slack[cand], 0.0) / Gp[cand]
            k = int(np.argmin(ratios))
            if ratios[k] < 1.0:
                step, block = float(ratios[k]), int(cand[k])
        u = u + step * p
        if block >= 0:
            working.append(block)

    z = np.zeros(G.shape[0])
    if working:
        z[working] = np.maximum(-mu[n_eq:], 0.0)
    y = -mu[:n_eq]
    res = kkt_residual(inst, u, z, y)
    return QPSolution(u, inst.inventory(u), inst.objective(u), z, y, res, it, sorted(working))


def enumerate_active_sets(inst: QPInstance, tol: float = 1e-9) -> QPSolution:
    """Brute force: every subset of inequality rows of size ``<= n - n_eq`` as equalities.

    Returns the best primal-feasible stationary point. Cost is combinatorial;
    intended for ``N <= 4`` or so.
    """
    H = inst.hessian()
    c = inst.linear()
    G, h = inst.inequality_system()
    Aeq, beq = inst.equality_system()
    n, n_eq = inst.n, Aeq.shape[0]
    if G.shape[0] > 24:
        raise ValueError(f"enumeration over {G.shape[0]} inequalities is too large")
    best = None
    scale_h = 1.0 + np.max(np.abs(h), initial=0.0)
    for size in range(0, n - n_eq + 1):
        for subset in itertools.combinations(range(G.shape[0]), size):
            A = np.vstack([Aeq, G[list(subset)]])
            b = np.concatenate([beq, h[list(subset)]])
            m = A.shape[0]
            if m and np.linalg.matrix_rank(A) < m:
                continue
            K = np.block([[H, A.T], [A, np.zeros((m, m))]]) if m else H
            rhs = np.concatenate([-c, b]) if m else -c
            try:
                sol = np.linalg.solve(K, rhs)
            except np.linalg.LinAlgError:
                continue
            u = sol[:n]
            if np.any(G @ u > h + tol * scale_h):
                continue
            val = inst.objective(u)
            if best is None or val > best[1] + 1e-15 * abs(val):
                best = (u, val, list(subset))
    if best is None:
        raise InfeasibleInstance("no feasible active set")
    u, val, subset = best
    return QPSolution(u, inst.inventory(u), val, np.zeros(G.shape[0]), np.zeros(n_eq), math.nan, 0, subset)


def day_ahead_instance(slippage: str = "sinusoidal", n_steps: int = 96, level: float = 0.5, amplitude: float = 1.0) -> QPInstance:
    """Synthetic quarter-hour day-ahead battery program with a two-peak price curve.

    ``slippage`` is ``"near_zero"`` (1e-6, an LP stand-in), ``"constant"``
    (``level``) or ``"sinusoidal"`` (``level + amplitude sin(pi i / (N - 1))``).
    Rates in [-20, 20], storage in [0, 40], empty at both ends.
    """
    step = 24.0 / n_steps
    t = step * np.arange(n_steps + 1)
    forecast = 60.0 - 18.0 * np.cos(2 * np.pi * t / 24.0) - 12.0 * np.cos(4 * np.pi * (t - 2.0) / 24.0)
    i = np.arange(n_steps)
    if slippage == "near_zero":
        gamma = np.full(n_steps, 1e-6)
    elif slippage == "constant":
        gamma = np.full(n_steps, level)
    elif slippage == "sinusoidal":
        gamma = level + amplitude * np.sin(np.pi * i / (n_steps - 1))
    else:
        raise ValueError(f"unknown slippage profile {slippage!r}")
    return QPInstance(forecast, gamma, step, -20.0, 20.0, 0.0, 40.0, X0=0.0, X_terminal=0.0)


def coarsen(inst: QPInstance, factor: int) -> QPInstance:
    """Aggregate ``factor`` consecutive steps (forecast sampled, slippage averaged)."""
    n = inst.n
    if n % factor:
        raise ValueError(f"{n} steps not divisible by {factor}")
    idx = np.arange(0, n + 1, factor)
    rate = lambda v: v.reshape(-1, factor).mean(axis=1)
    return QPInstance(
        inst.forecast[idx], rate(inst.gamma), inst.step * factor,
        rate(inst.u_min), rate(inst.u_max), inst.X_min[idx[1:] - 1], inst.X_max[idx[1:] - 1],
        inst.X0, inst.X_terminal,
    )


def deterministic_qp_instance(
    dk: DiscreteKernel,
    alpha,
    grid: TimeGrid,
    u_min, u_max, X_min, X_max,
    X0: float,
    X_terminal: float | None,
) -> QPInstance:
    """QP closest to the Nystrom first-order condition with a deterministic signal.

    The forecast reproduces the linear term (``S_N - S_i = alpha_i``). The
    Nystrom operator ``I + L + U`` is not symmetric, so the Hessian uses its
    symmetric part: slippage ``1 + U_ii`` and weights ``(L + U^T) / 2`` below
    the diagonal. The two problems agree up to ``O(dt)``.
    """
    alpha = np.asarray(alpha, dtype=float)
    n = dk.n
    strict_upper = np.triu(dk.upper, k=1)
    weights = np.tril(0.5 * (dk.lower + strict_upper.T), k=-1)
    forecast = np.concatenate([-alpha, [0.0]])
    return QPInstance(
        forecast, 1.0 + np.diag(dk.upper), grid.step, u_min, u_max, X_min, X_max,
        X0=X0, X_terminal=X_terminal, weights=weights,
    )


def write_solution_csv(path: Path, inst: QPInstance, sol: QPSolution) -> None:
    fmt = lambda v: format(float(v), ".17g")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "time", "u", "X"])
        for i in range(inst.n + 1):
            u = fmt(sol.control[i]) if i < inst.n else ""
            w.writerow([i, fmt(i * inst.step), u, fmt(sol.inventory[i])])
