import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.special import eval_laguerre

from propagator_uzawa.fredholm import assemble
from propagator_uzawa.kernels import KernelSpec, TimeGrid, build_discrete_kernel
from propagator_uzawa.lsmc import (
    LSMCConfig,
    RegressionBasis,
    fit_coefficients,
    fit_predict_lambda,
    lambda_projection,
    laguerre,
    multi_indices,
    multiplier_targets,
    ridge_fit,
)


@pytest.mark.parametrize("degree", range(5))
def test_basis_size(degree):
    assert len(multi_indices(3, degree)) == math.comb(degree + 3, 3)
    assert multi_indices(3, degree)[0] == (0, 0, 0)


def test_laguerre_matches_scipy():
    x = np.linspace(0, 12, 101)
    polys = laguerre(x, 6)
    assert (polys[0] == 1).all()
    for k, p in enumerate(polys):
        np.testing.assert_allclose(p, eval_laguerre(k, x), rtol=1e-12, atol=1e-12)


def test_constant_features_are_dropped(rng):
    feats = np.column_stack([rng.normal(size=50), np.full(50, 3.0), rng.normal(size=50)])
    basis = RegressionBasis.fit(feats, 2)
    assert basis.active.tolist() == [True, False, True]
    assert basis.design(feats).shape == (50, math.comb(4, 2))


def _random_multipliers(rng, M, N, zero=False):
    lam = np.zeros((4, M, N)) if zero else np.abs(rng.normal(size=(4, M, N)))
    return lam, rng.normal(size=(M, N, 3))


def test_zero_multipliers_give_zero(rng):
    lam, feats = _random_multipliers(rng, 40, 6, zero=True)
    out, diag = fit_predict_lambda(*lam, feats, LSMCConfig())
    assert not out.any() and diag.fallbacks == 0


def test_deterministic_multipliers_reproduced(rng):
    M, N = 30, 5
    lam = np.broadcast_to(np.abs(rng.normal(size=(4, 1, N))), (4, M, N)).copy()
    _, feats = _random_multipliers(rng, M, N)
    out, _ = fit_predict_lambda(*lam, feats, LSMCConfig(ridge=0.0))
    y_chi, y_phi = multiplier_targets(*lam)
    for i in range(N):
        np.testing.assert_allclose(out[:, i, i + 1 :], y_phi[:, i + 1 :], atol=1e-9)
        np.testing.assert_allclose(out[:, i, i], lam[0, :, i] - lam[1, :, i] + y_chi[:, i], atol=1e-9)


def test_single_path_is_its_own_expectation(rng):
    lam, feats = _random_multipliers(rng, 1, 4)
    out, _ = fit_predict_lambda(*lam, feats, LSMCConfig(ridge=0.0))
    _, y_phi = multiplier_targets(*lam)
    np.testing.assert_allclose(out[0, 0], y_phi[0], atol=1e-9)
    np.testing.assert_allclose(out[0, 2, 3], y_phi[0, 3], atol=1e-9)


def test_targets_tail_sums():
    lam = np.zeros((4, 1, 3))
    lam[2, 0] = [1.0, 2.0, 3.0]
    lam[3, 0] = [0.5, 0.0, 1.0]
    lam[0, 0] = [0.1, 0.2, 0.3]
    y_chi, y_phi = multiplier_targets(*lam, weight=2.0)
    np.testing.assert_allclose(y_chi[0], [4.5, 4.0, 2.0])
    np.testing.assert_allclose(y_phi[0], [9.1, 8.2, 4.3])


def test_ridge_normal_equations(rng):
    Phi = np.column_stack([np.ones(200), rng.normal(size=(200, 4))])
    Y = rng.normal(size=200)
    res = ridge_fit(Phi, Y, 1e-3)
    G = Phi.T @ Phi
    pen = 1e-3 * np.trace(G) / 5
    np.testing.assert_allclose((G + pen * np.eye(5)) @ res.coef, Phi.T @ Y, rtol=1e-10, atol=1e-10)
    assert not res.fallback


def test_degree_zero_is_the_mean(rng):
    feats = rng.normal(size=(100, 3))
    Y = rng.normal(size=100)
    basis, res = fit_coefficients(feats, Y, LSMCConfig(degree=0, ridge=0.0))
    assert basis.size == 1
    assert res.coef[0] == pytest.approx(Y.mean(), rel=1e-12)


def test_singular_design_falls_back(rng):
    Phi = np.column_stack([np.ones(20), np.ones(20) * 2.0])
    Y = rng.normal(size=20)
    res = ridge_fit(Phi, Y, 0.0)
    assert res.fallback
    assert res.coef[0] == pytest.approx(Y.mean()) and res.coef[1] == 0.0


def _regression_error(M, seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=M)
    Y = 1.0 + 0.5 * x - 0.2 * x**2 + rng.normal(size=M)
    basis, res = fit_coefficients(x[:, None], Y, LSMCConfig(degree=2, ridge=0.0))
    grid = np.linspace(-1.5, 1.5, 31)[:, None]
    fitted = basis.design(grid) @ res.coef
    return float(np.sqrt(np.mean((fitted - (1.0 + 0.5 * grid[:, 0] - 0.2 * grid[:, 0] ** 2)) ** 2)))


def test_sample_rate():
    small = np.mean([_regression_error(1000, s) for s in range(30)])
    large = np.mean([_regression_error(10000, s) for s in range(30)])
    # root-M rate: a tenfold sample shrinks the error by about sqrt(10)
    assert 2.0 < small / large < 5.0


@given(st.integers(0, 2**32 - 1))
def test_projection_agrees_with_full_matrix(seed):
    rng = np.random.default_rng(seed)
    M, N = 60, 7
    lam, feats = _random_multipliers(rng, M, N)
    op = assemble(build_discrete_kernel(KernelSpec.power_law(2.0, 0.6), TimeGrid(1.0, N)))
    cfg = LSMCConfig()
    full, _ = fit_predict_lambda(*lam, feats, cfg, weight=1.3)
    lam_diag, projected, _ = lambda_projection(*lam, feats, op.row_cache, cfg, weight=1.3)
    np.testing.assert_allclose(lam_diag, np.diagonal(full, axis1=1, axis2=2), atol=1e-9)
    np.testing.assert_allclose(projected, np.einsum("ij,mij->mi", op.row_cache, full), atol=1e-8)


@pytest.mark.parametrize(
    "kwargs", [{"degree": -1}, {"ridge": -1.0}, {"features": ("signal", "price")}, {"features": ()},
               {"features": ("signal", "signal")}]
)
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        LSMCConfig(**kwargs)


def test_feature_subset(rng):
    lam, feats = _random_multipliers(rng, 50, 4)
    out, _ = fit_predict_lambda(*lam, feats[..., :1], LSMCConfig(features=("signal",)))
    assert out.shape == (50, 4, 4)
