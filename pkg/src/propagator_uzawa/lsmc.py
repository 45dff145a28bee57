"""Least-squares Monte Carlo estimates of multiplier conditional expectations.

At each node ``t_i`` with ``i > 0`` the filtration is proxied by the state
``(alpha_{t_i}, Z_{t_i}, X_{t_i})`` of the previous control iterate, and
``E_{t_i}[Y]`` is approximated by a ridge regression of ``Y`` on products of
Laguerre polynomials ``L_p(alpha) L_q(Z) L_r(X)`` with ``p + q + r <= d``.
At ``t_0`` the filtration is trivial and plain cross-path means are used.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla


FEATURES = ("signal", "impact", "inventory")


@dataclass(frozen=True)
class LSMCConfig:
    degree: int = 2
    ridge: float = 1e-8
    standardize: bool = True
    # state variables at t_i from the previous control iterate, in basis order
    features: tuple[str, ...] = FEATURES

    def __post_init__(self) -> None:
        if self.degree < 0:
            raise ValueError(f"lsmc.degree must be >= 0, got {self.degree}")
        if self.ridge < 0:
            raise ValueError(f"lsmc.ridge must be >= 0, got {self.ridge}")
        object.__setattr__(self, "features", tuple(self.features))
        unknown = [f for f in self.features if f not in FEATURES]
        if unknown or not self.features or len(set(self.features)) != len(self.features):
            raise ValueError(f"lsmc.features must be distinct entries of {FEATURES}, got {list(self.features)}")


def laguerre(x: np.ndarray, degree: int) -> list[np.ndarray]:
    """``[L_0(x), ..., L_degree(x)]`` by the three-term recurrence."""
    x = np.asarray(x, dtype=float)
    out = [np.ones_like(x)]
    if degree >= 1:
        out.append(1.0 - x)
    for k in range(1, degree):
        out.append(((2 * k + 1 - x) * out[k] - k * out[k - 1]) / (k + 1))
    return out


def multi_indices(n_features: int, degree: int) -> list[tuple[int, ...]]:
    """Exponent tuples with total degree ``<= degree``, constant term first."""
    idx = [p for p in itertools.product(range(degree + 1), repeat=n_features) if sum(p) <= degree]
    return sorted(idx, key=lambda p: (sum(p), tuple(-q for q in p)))


@dataclass
class RegressionBasis:
    """Laguerre tensor basis on (optionally standardized) features.

    Features that are constant across paths carry no information and would
    only duplicate the intercept, so they are dropped before the expansion.
    """

    degree: int
    mean: np.ndarray
    scale: np.ndarray
    active: np.ndarray
    standardize: bool = True
    indices: list[tuple[int, ...]] = field(init=False)

    def __post_init__(self) -> None:
        self.indices = multi_indices(int(self.active.sum()), self.degree)

    @classmethod
    def fit(cls, features: np.ndarray, degree: int, standardize: bool = True) -> "RegressionBasis":
        features = np.asarray(features, dtype=float)
        mean = features.mean(axis=0)
        scale = features.std(axis=0)
        active = scale > 1e-12 * (1.0 + np.abs(mean))
        if not standardize:
            mean = np.zeros_like(mean)
            scale = np.ones_like(scale)
        scale = np.where(active, scale, 1.0)
        return cls(degree, mean, scale, active, standardize)

    @property
    def size(self) -> int:
        return len(self.indices)

    def design(self, features: np.ndarray) -> np.ndarray:
        x = (np.asarray(features, dtype=float)[:, self.active] - self.mean[self.active]) / self.scale[self.active]
        polys = [laguerre(x[:, k], self.degree) for k in range(x.shape[1])]
        cols = []
        for powers in self.indices:
            col = np.ones(x.shape[0])
            for k, p in enumerate(powers):
                if p:
                    col = col * polys[k][p]
            cols.append(col)
        return np.column_stack(cols)


@dataclass
class RidgeResult:
    coef: np.ndarray
    fallback: bool
    condition: float


def ridge_fit(design: np.ndarray, Y: np.ndarray, ridge: float) -> RidgeResult:
    """Ridge least squares with penalty ``ridge * trace(gram) / p`` on ``gram = Phi^T Phi``.

    Falls back to the plain mean (intercept only) when the regularized normal
    matrix is still unusable.
    """
    Y = np.asarray(Y, dtype=float)
    squeeze = Y.ndim == 1
    Y2 = Y[:, None] if squeeze else Y
    p = design.shape[1]
    gram = design.T @ design
    pen = ridge * np.trace(gram) / p
    Gr = gram + pen * np.eye(p)
    coef = None
    cond = np.inf
    try:
        cond = float(np.linalg.cond(Gr))
        if np.isfinite(cond) and cond < 1e13:
            coef = sla.cho_solve(sla.cho_factor(Gr), design.T @ Y2)
    except (np.linalg.LinAlgError, ValueError):
        coef = None
    fallback = coef is None or not np.all(np.isfinite(coef))
    if fallback:
        coef = np.zeros((p, Y2.shape[1]))
        coef[0] = Y2.mean(axis=0)  # column 0 is the constant basis function
    return RidgeResult(coef[:, 0] if squeeze else coef, fallback, cond)


def fit_coefficients(features: np.ndarray, Y: np.ndarray, cfg: LSMCConfig) -> tuple[RegressionBasis, RidgeResult]:
    basis = RegressionBasis.fit(features, cfg.degree, cfg.standardize)
    return basis, ridge_fit(basis.design(features), Y, cfg.ridge)


def multiplier_targets(
    lam1: np.ndarray, lam2: np.ndarray, lam3: np.ndarray, lam4: np.ndarray, weight: float = 1.0
) -> tuple[np.ndarray, np.ndarray]:
    """Regression targets ``(Y_chi, Y_phi)``, both ``M x N``.

    ``Y_chi[:, j] = sum_{l > j} (lam3 - lam4)_l`` over inventory nodes
    ``t_{j+1} .. t_N`` and ``Y_phi = lam1 - lam2 + weight * Y_chi``.
    """
    nu = lam3 - lam4  # column k is node t_{k+1}
    y_chi = np.cumsum(nu[:, ::-1], axis=1)[:, ::-1]
    return y_chi, lam1 - lam2 + weight * y_chi


@dataclass
class LSMCDiagnostics:
    fallbacks: int = 0
    max_condition: float = 0.0

    def record(self, res: RidgeResult) -> None:
        self.fallbacks += int(res.fallback)
        if np.isfinite(res.condition):
            self.max_condition = max(self.max_condition, res.condition)


def lambda_rows(
    lam1: np.ndarray,
    lam2: np.ndarray,
    lam3: np.ndarray,
    lam4: np.ndarray,
    features: np.ndarray,
    cfg: LSMCConfig,
    weight: float = 1.0,
    diag: LSMCDiagnostics | None = None,
):
    """Yield ``(i, Lambda[:, i, i:])`` for ``i = 0 .. N-1``, one regression per row."""
    M, N = lam1.shape
    y_chi, y_phi = multiplier_targets(lam1, lam2, lam3, lam4, weight)
    diag = diag if diag is not None else LSMCDiagnostics()
    yield 0, np.broadcast_to(y_phi.mean(axis=0), (M, N))
    for i in range(1, N):
        basis = RegressionBasis.fit(features[:, i], cfg.degree, cfg.standardize)
        Phi = basis.design(features[:, i])
        res = ridge_fit(Phi, np.column_stack([y_chi[:, i], y_phi[:, i + 1 :]]), cfg.ridge)
        diag.record(res)
        pred = Phi @ res.coef
        row = np.empty((M, N - i))
        row[:, 0] = lam1[:, i] - lam2[:, i] + weight * pred[:, 0]
        row[:, 1:] = pred[:, 1:]
        yield i, row


def fit_predict_lambda(
    lam1: np.ndarray,
    lam2: np.ndarray,
    lam3: np.ndarray,
    lam4: np.ndarray,
    features: np.ndarray,
    cfg: LSMCConfig,
    weight: float = 1.0,
) -> tuple[np.ndarray, LSMCDiagnostics]:
    """Full aggregated-multiplier matrices ``Lambda`` of shape ``(M, N, N)``.

    ``features`` is ``(M, N, F)`` with the state at ``t_0 .. t_{N-1}``. Memory
    grows as ``M N^2``; the Uzawa driver uses :func:`lambda_projection` instead.
    """
    M, N = lam1.shape
    out = np.zeros((M, N, N))
    diag = LSMCDiagnostics()
    for i, row in lambda_rows(lam1, lam2, lam3, lam4, features, cfg, weight, diag):
        out[:, i, i:] = row
    return out, diag


def lambda_projection(
    lam1: np.ndarray,
    lam2: np.ndarray,
    lam3: np.ndarray,
    lam4: np.ndarray,
    features: np.ndarray,
    row_cache: np.ndarray,
    cfg: LSMCConfig,
    weight: float = 1.0,
) -> tuple[np.ndarray, np.ndarray, LSMCDiagnostics]:
    """``(diag Lambda, row_cache . Lambda)`` per path without forming ``Lambda``.

    Least squares is linear in the target, so the estimate of
    ``sum_{j > i} c_{ij} E_i[Y_phi_j]`` equals the regression of the single
    target ``sum_{j > i} c_{ij} Y_phi_j``. Both outputs are ``(M, N)`` and agree
    with :func:`fit_predict_lambda` up to rounding.
    """
    M, N = lam1.shape
    y_chi, y_phi = multiplier_targets(lam1, lam2, lam3, lam4, weight)
    strict = np.triu(row_cache, k=1)
    contracted = y_phi @ strict.T  # [m, i] = sum_{j>i} c_ij Y_phi[m, j]
    lam_diag = np.empty((M, N))
    projected = np.empty((M, N))
    diag = LSMCDiagnostics()
    means = y_phi.mean(axis=0)
    lam_diag[:, 0] = means[0]
    projected[:, 0] = row_cache[0] @ means
    for i in range(1, N):
        basis = RegressionBasis.fit(features[:, i], cfg.degree, cfg.standardize)
        Phi = basis.design(features[:, i])
        res = ridge_fit(Phi, np.column_stack([y_chi[:, i], contracted[:, i]]), cfg.ridge)
        diag.record(res)
        pred = Phi @ res.coef
        lam_diag[:, i] = lam1[:, i] - lam2[:, i] + weight * pred[:, 0]
        projected[:, i] = row_cache[i, i] * lam_diag[:, i] + pred[:, 1]
    return lam_diag, projected, diag
