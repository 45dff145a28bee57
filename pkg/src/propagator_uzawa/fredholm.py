"""Nystrom discretization of the stochastic Fredholm first-order condition.

On the grid the optimality condition reads, for every path and ``i < N``,

    u_i + sum_{j<i} L[i, j] u_j + sum_{j>=i} U[i, j] E_i[u_j] = A[i, i],

with ``A[i, j] = E_{t_i}[alpha_{t_j} + phi_{t_j}]``. Conditioning the same
equation on ``F_{t_i}`` at later nodes gives ``E_i[u_.]`` through the masked
operator ``D_i = I + L^{(i)} + U^{(i)}``, and eliminating it leaves the unit
lower-triangular system ``(I - B) u = a``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .kernels import DiscreteKernel, TimeGrid


class AssemblyError(RuntimeError):
    pass


@dataclass(frozen=True)
class NystromOperator:
    """Signal-independent pieces of the scheme, shared by all paths.

    ``row_cache[i, j]`` holds ``(U[i, :] D_i^{-1})[j]`` (zero for ``j < i``), so
    the projected source term is ``a_i = A[i, i] - row_cache[i] . A[i]``.
    """

    dk: DiscreteKernel
    coupling: np.ndarray
    row_cache: np.ndarray
    factors: tuple | None

    @property
    def n(self) -> int:
        return self.coupling.shape[0]

    @property
    def D0(self) -> np.ndarray:
        return np.eye(self.n) + self.dk.lower + self.dk.upper

    def masked_block(self, i: int) -> np.ndarray:
        """The active ``(N - i) x (N - i)`` block of ``D_i``; identity elsewhere."""
        return np.eye(self.n - i) + self.dk.lower[i:, i:] + self.dk.upper[i:, i:]

    def masked_solve(self, i: int, rhs: np.ndarray) -> np.ndarray:
        """Solve ``D_i[i:, i:] x = rhs`` (rhs has ``N - i`` rows)."""
        if self.factors is not None:
            return sla.lu_solve(self.factors[i], rhs)
        return np.linalg.solve(self.masked_block(i), rhs)


def assemble(dk: DiscreteKernel, cache_factors: bool = True) -> NystromOperator:
    n = dk.n
    L, U = dk.lower, dk.upper
    B = np.zeros((n, n))
    cache = np.zeros((n, n))
    factors = [] if cache_factors else None
    if dk.spec.is_zero:
        eye = np.eye(n)
        if factors is not None:
            factors = [sla.lu_factor(eye[i:, i:]) for i in range(n)]
        return NystromOperator(dk, B, cache, tuple(factors) if factors is not None else None)
    for i in range(n):
        block = np.eye(n - i) + L[i:, i:] + U[i:, i:]
        lu = sla.lu_factor(block, check_finite=True)
        if not np.all(np.isfinite(lu[0])) or np.min(np.abs(np.diag(lu[0]))) < 1e-14:
            raise AssemblyError(f"masked operator D_{i} is numerically singular")
        # c_i = U[i, i:] D_i^{-1}  <=>  D_i^T c_i^T = U[i, i:]^T
        c = sla.lu_solve(lu, U[i, i:], trans=1)
        cache[i, i:] = c
        if i > 0:
            B[i, :i] = c @ L[i:, :i] - L[i, :i]
        if factors is not None:
            factors.append(lu)
    B.setflags(write=False)
    cache.setflags(write=False)
    return NystromOperator(dk, B, cache, tuple(factors) if factors is not None else None)


def source_term(op: NystromOperator, A: np.ndarray) -> np.ndarray:
    """``a_i = A[i, i] - U[i, :] D_i^{-1} A[i, :]^T`` for ``(N, N)`` or ``(M, N, N)`` input."""
    A = np.asarray(A, dtype=float)
    n = op.n
    if A.shape[-2:] != (n, n):
        raise ValueError(f"expected trailing shape ({n}, {n}), got {A.shape}")
    diag = np.diagonal(A, axis1=-2, axis2=-1)
    return diag - np.einsum("ij,...ij->...i", op.row_cache, A)


def solve_from_source(op: NystromOperator, a: np.ndarray) -> np.ndarray:
    """``(I - B)^{-1} a`` by forward substitution; ``a`` is ``(N,)`` or ``(M, N)``."""
    a = np.asarray(a, dtype=float)
    if a.shape[-1] != op.n:
        raise ValueError(f"source term must have length {op.n}, got {a.shape}")
    system = np.eye(op.n) - op.coupling
    if a.ndim == 1:
        return sla.solve_triangular(system, a, lower=True, unit_diagonal=True)
    return sla.solve_triangular(system, a.T, lower=True, unit_diagonal=True).T


def solve_control(op: NystromOperator, A: np.ndarray) -> np.ndarray:
    """Control from the upper-triangular conditional-expectation matrix ``R + Lambda``."""
    return solve_from_source(op, source_term(op, A))


def inventory(u: np.ndarray, grid: TimeGrid, X0: float) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    X = np.empty(u.shape[:-1] + (u.shape[-1] + 1,))
    X[..., 0] = X0
    X[..., 1:] = X0 + grid.step * np.cumsum(u, axis=-1)
    return X


def transient_state(dk: DiscreteKernel, u: np.ndarray) -> np.ndarray:
    """``Z_i = L[i, :] . u``, the left-rectangle transient impact."""
    return np.asarray(u, dtype=float) @ dk.lower.T


def pnl(u: np.ndarray, alpha: np.ndarray, dk: DiscreteKernel, grid: TimeGrid) -> np.ndarray:
    """Per-path ``sum_i (alpha_i - u_i / 2 - Z_i) u_i dt``.

    This is the expected-PnL objective up to the control-free ``X_0 E[S_T]``.
    """
    u = np.asarray(u, dtype=float)
    Z = transient_state(dk, u)
    return np.sum((alpha - 0.5 * u - Z) * u, axis=-1) * grid.step


def fredholm_residual(op: NystromOperator, u: np.ndarray, A_rows) -> float:
    """Largest violation of the discrete first-order condition.

    ``A_rows(i)`` must return the ``(M, N - i)`` slice ``A[:, i, i:]`` used in
    the solve. The implied conditional expectations ``E_i[u_j]`` are rebuilt
    through ``D_i`` exactly as the scheme does, so this checks both that they
    reproduce ``u_i`` at ``j = i`` and that the original equation holds.
    """
    L, U = op.dk.lower, op.dk.upper
    u = np.atleast_2d(np.asarray(u, dtype=float))
    worst = 0.0
    for i in range(op.n):
        rows = np.atleast_2d(A_rows(i))
        g = rows - u[:, :i] @ L[i:, :i].T
        m = op.masked_solve(i, g.T).T
        eq = u[:, i] + u[:, :i] @ L[i, :i] + m @ U[i, i:] - rows[:, 0]
        scale = 1.0 + np.max(np.abs(rows[:, 0]))
        worst = max(worst, float(np.max(np.abs(eq))) / scale, float(np.max(np.abs(m[:, 0] - u[:, i]))) / scale)
    return worst
