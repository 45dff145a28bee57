import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate

from propagator_uzawa.kernels import (
    KernelSpec,
    SingularEvaluation,
    TimeGrid,
    build_discrete_kernel,
    eval_kernel,
    mask_kernel,
)

EXP = KernelSpec.exponential(5.0, 1.0)
POW = KernelSpec.power_law(2.0, 0.6)

exp_specs = st.builds(
    KernelSpec.exponential, st.floats(0.1, 20.0), st.floats(0.05, 30.0)
)
pow_specs = st.builds(KernelSpec.power_law, st.floats(0.1, 20.0), st.floats(0.05, 0.95))
specs = st.one_of(exp_specs, pow_specs)


def test_exponential_value():
    assert eval_kernel(EXP, 1.0, 0.0) == pytest.approx(5 * math.exp(-1), abs=1e-4)
    assert eval_kernel(EXP, 1.0, 0.0) == pytest.approx(1.8394, abs=1e-4)


@pytest.mark.parametrize("spec", [EXP, POW, KernelSpec.zero()])
def test_zero_above_diagonal(spec):
    assert eval_kernel(spec, 0.3, 0.5) == 0.0


def test_zero_kernel_value():
    assert eval_kernel(KernelSpec.zero(), 0.9, 0.1) == 0.0


def test_power_law_singular_pointwise():
    with pytest.raises(SingularEvaluation):
        eval_kernel(POW, 0.4, 0.4)
    assert eval_kernel(EXP, 0.4, 0.4) == 0.0


@pytest.mark.parametrize(
    "make",
    [
        lambda: KernelSpec.exponential(0.0, 1.0),
        lambda: KernelSpec.exponential(1.0, -1.0),
        lambda: KernelSpec.power_law(1.0, 1.0),
        lambda: KernelSpec.power_law(1.0, 0.0),
        lambda: KernelSpec.power_law(-1.0, 0.5),
        lambda: KernelSpec.sum_of_exponentials(EXP, POW),
        lambda: KernelSpec("cubic"),
    ],
)
def test_invalid_specs_rejected(make):
    with pytest.raises(ValueError):
        make()


def test_exponential_lower_entry():
    dk = build_discrete_kernel(EXP, TimeGrid(1.0, 10))
    assert dk.lower[5, 0] == pytest.approx(5 * (math.exp(-0.4) - math.exp(-0.5)), abs=1e-12)
    assert dk.lower[5, 0] == pytest.approx(0.31895, abs=1e-5)


def test_power_law_lower_entry_adjacent():
    dk = build_discrete_kernel(POW, TimeGrid(1.0, 10))
    assert dk.lower[5, 4] == pytest.approx((2 / 0.6) * 0.1**0.6, rel=1e-12)
    assert dk.lower[5, 4] == pytest.approx(0.83730, abs=1e-5)


def test_zero_kernel_matrices():
    dk = build_discrete_kernel(KernelSpec.zero(), TimeGrid(1.0, 7))
    assert not dk.lower.any() and not dk.upper.any()


def test_mask_first_index_is_identity():
    dk = build_discrete_kernel(EXP, TimeGrid(1.0, 6))
    lo, up = mask_kernel(dk, 0)
    np.testing.assert_array_equal(lo, dk.lower)
    np.testing.assert_array_equal(up, dk.upper)


def test_mask_last_index_keeps_single_entry():
    dk = build_discrete_kernel(EXP, TimeGrid(1.0, 3))
    lo, up = mask_kernel(dk, 2)
    assert not lo.any()
    expected = np.zeros((3, 3))
    expected[2, 2] = dk.upper[2, 2]
    np.testing.assert_array_equal(up, expected)
    # hand value: int_0^{1/3} 5 e^{-x} dx
    assert up[2, 2] == pytest.approx(5 * (1 - math.exp(-1 / 3)), rel=1e-14)


def test_mask_zero_kernel_and_bounds():
    dk = build_discrete_kernel(KernelSpec.zero(), TimeGrid(1.0, 4))
    for i in range(4):
        lo, up = mask_kernel(dk, i)
        assert not lo.any() and not up.any()
    with pytest.raises(IndexError):
        mask_kernel(dk, 4)
    with pytest.raises(IndexError):
        mask_kernel(dk, -1)


@given(specs, st.integers(1, 80), st.data())
def test_mask_definition(spec, n, data):
    dk = build_discrete_kernel(spec, TimeGrid(1.0, n))
    i = data.draw(st.integers(0, n - 1))
    lo, up = mask_kernel(dk, i)
    keep = np.arange(n) >= i
    mask = keep[:, None] & keep[None, :]
    np.testing.assert_array_equal(lo, np.where(mask, dk.lower, 0.0))
    np.testing.assert_array_equal(up, np.where(mask, dk.upper, 0.0))


@given(specs, st.integers(1, 120), st.floats(0.1, 10.0))
def test_triangular_and_non_negative(spec, n, horizon):
    dk = build_discrete_kernel(spec, TimeGrid(horizon, n))
    assert not np.triu(dk.lower).any()
    assert not np.tril(dk.upper, -1).any()
    assert (dk.lower >= 0).all() and (dk.upper >= 0).all()
    assert np.isfinite(dk.lower).all() and np.isfinite(dk.upper).all()


@given(specs, st.integers(2, 40))
def test_entries_match_adaptive_quadrature(spec, n):
    grid = TimeGrid(1.0, n)
    dk = build_discrete_kernel(spec, grid)
    t = grid.nodes
    for i in range(n):
        for j in range(i):
            if spec.kind == "power_law" and j == i - 1:
                continue  # interval touches the singularity: closed form only
            ref, _ = integrate.quad(lambda s: eval_kernel(spec, t[i], s), t[j], t[j + 1], epsabs=0, epsrel=1e-12)
            assert dk.lower[i, j] == pytest.approx(ref, rel=1e-8)
        for j in range(i + (spec.kind == "power_law"), n):
            ref, _ = integrate.quad(lambda s: eval_kernel(spec, s, t[i]), t[j], t[j + 1], epsabs=0, epsrel=1e-12)
            assert dk.upper[i, j] == pytest.approx(ref, rel=1e-8)


@given(specs, st.integers(1, 60), st.integers(0, 2**32 - 1))
def test_gram_positivity(spec, n, seed):
    grid = TimeGrid(1.0, n)
    dk = build_discrete_kernel(spec, grid)
    rng = np.random.default_rng(seed)
    for _ in range(100):
        f = rng.normal(size=n) * rng.choice([1e-3, 1.0, 1e3])
        q = f @ (dk.lower + dk.upper) @ f * grid.step
        assert q >= -1e-10 * (f @ f)


@given(specs, st.integers(1, 60))
def test_refinement_consistency(spec, n):
    coarse = build_discrete_kernel(spec, TimeGrid(1.0, n))
    fine = build_discrete_kernel(spec, TimeGrid(1.0, 2 * n))
    i, j = np.tril_indices(n, -1)
    agg = fine.lower[2 * i, 2 * j] + fine.lower[2 * i, 2 * j + 1]
    np.testing.assert_allclose(coarse.lower[i, j], agg, rtol=1e-12, atol=0)


def test_sum_kernel_is_linear_in_integrals():
    a, b = KernelSpec.exponential(5.0, 1.0), KernelSpec.exponential(0.5, 20.0)
    grid = TimeGrid(2.0, 30)
    total = build_discrete_kernel(KernelSpec.sum_of_exponentials(a, b), grid)
    parts = [build_discrete_kernel(k, grid) for k in (a, b)]
    np.testing.assert_allclose(total.lower, parts[0].lower + parts[1].lower, rtol=1e-14)
    np.testing.assert_allclose(total.upper, parts[0].upper + parts[1].upper, rtol=1e-14)


def test_spec_dict_round_trip():
    for spec in (EXP, POW, KernelSpec.zero(), KernelSpec.sum_of_exponentials(EXP, KernelSpec.exponential(1.0, 2.0))):
        assert KernelSpec.from_dict(spec.to_dict()) == spec
    with pytest.raises(ValueError, match="unknown"):
        KernelSpec.from_dict({"type": "exponential", "c": 1.0, "rho": 1.0, "alpha": 0.3})


def test_grid_validation():
    with pytest.raises(ValueError):
        TimeGrid(1.0, 0)
    with pytest.raises(ValueError):
        TimeGrid(-1.0, 10)
    g = TimeGrid(2.0, 8)
    assert g.step == 0.25 and g.nodes[-1] == 2.0 and len(g.nodes) == 9
