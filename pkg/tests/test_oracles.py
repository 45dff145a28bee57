import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from propagator_uzawa.kernels import KernelSpec, TimeGrid, build_discrete_kernel
from propagator_uzawa.oracles import (
    InfeasibleInstance,
    LPCaseUnsupported,
    QPInstance,
    clip_multipliers,
    clip_oracle,
    coarsen,
    day_ahead_instance,
    dense_deterministic_solve,
    enumerate_active_sets,
    solve_qp,
    write_solution_csv,
)


def test_clip_examples():
    assert clip_oracle(3.0, -1.0, 2.0) == 2.0
    assert clip_oracle(0.5, -1.0, 2.0) == 0.5
    assert clip_oracle(-5.0, -1.0, 2.0) == -1.0


@given(st.lists(st.floats(-100, 100), min_size=1, max_size=20), st.floats(-10, 0), st.floats(0, 10))
def test_clip_feasible_with_zero_slackness(alpha, lo, hi):
    alpha = np.array(alpha)
    u = clip_oracle(alpha, lo, hi)
    assert np.all(u >= lo) and np.all(u <= hi)
    m1, m2 = clip_multipliers(alpha, lo, hi)
    np.testing.assert_allclose(u, alpha + m1 - m2, atol=1e-12)
    assert np.max(np.abs(m1 * (lo - u))) <= 1e-12 and np.max(np.abs(m2 * (u - hi))) <= 1e-12


def _three_step(**kw):
    base = dict(forecast=[0.0, 1.0, 3.0, 2.0], gamma=1.0, step=1.0, u_min=-10.0, u_max=1.8,
                X_min=-10.0, X_max=2.0, X0=0.0, X_terminal=None)
    base.update(kw)
    return QPInstance(**base)


def test_three_step_hand_solution():
    # unconstrained optimum S_N - S_i = (2, 1, -1); X_2 <= 2 binds and projects (2, 1) onto u_1 + u_2 = 2
    inst = _three_step()
    sol = solve_qp(inst)
    np.testing.assert_allclose(sol.control, [1.5, 0.5, -1.0], atol=1e-12)
    brute = enumerate_active_sets(inst)
    np.testing.assert_allclose(brute.control, sol.control, atol=1e-12)
    assert sol.kkt_residual <= 1e-8


def test_no_signal_no_trade():
    inst = QPInstance(np.full(11, 50.0), 1.0, 0.1, -5.0, 5.0, -1.0, 1.0, X0=0.0, X_terminal=0.0)
    sol = solve_qp(inst)
    np.testing.assert_allclose(sol.control, 0.0, atol=1e-14)


def test_zero_slippage_rejected():
    inst = QPInstance(np.arange(5.0), [1.0, 0.0, 1.0, 1.0], 1.0, -1.0, 1.0, -5.0, 5.0, X_terminal=0.0)
    with pytest.raises(LPCaseUnsupported):
        solve_qp(inst)


def test_infeasible_instances():
    with pytest.raises(InfeasibleInstance):
        QPInstance(np.arange(5.0), 1.0, 1.0, -1.0, 1.0, 0.0, 2.0, X_terminal=3.0)
    with pytest.raises(InfeasibleInstance):
        solve_qp(QPInstance(np.arange(5.0), 1.0, 1.0, -0.5, 0.5, -10.0, 10.0, X_terminal=3.0))


def test_coarse_instance_matches_enumeration():
    coarse = coarsen(day_ahead_instance("sinusoidal"), 24)
    assert coarse.n == 4
    sol, brute = solve_qp(coarse), enumerate_active_sets(coarse)
    assert sol.objective == pytest.approx(brute.objective, rel=1e-10)
    np.testing.assert_allclose(sol.control, brute.control, atol=1e-9)


@pytest.mark.parametrize("factor", [8, 1], ids=["N12", "N96"])
def test_matches_interior_point_reference(factor):
    cvxopt = pytest.importorskip("cvxopt")
    inst = coarsen(day_ahead_instance("sinusoidal"), factor)
    G, h = inst.inequality_system()
    A, b = inst.equality_system()
    mat = lambda a: cvxopt.matrix(np.asarray(a, dtype=float))
    cvxopt.solvers.options.update(show_progress=False, abstol=1e-12, reltol=1e-12, feastol=1e-12)
    ref = cvxopt.solvers.qp(mat(inst.hessian()), mat(inst.linear()), mat(G), mat(h), mat(A), mat(b))
    u_ref = np.array(ref["x"]).ravel()
    sol = solve_qp(inst)
    assert sol.objective == pytest.approx(inst.objective(u_ref), rel=1e-6)


@pytest.mark.parametrize("profile", ["near_zero", "constant", "sinusoidal"])
def test_day_ahead_certificates(profile):
    inst = day_ahead_instance(profile)
    sol = solve_qp(inst)
    assert sol.kkt_residual <= 1e-8
    assert sol.objective == pytest.approx(inst.objective(sol.control), rel=1e-10)
    assert abs(sol.inventory[-1]) <= 1e-9
    assert sol.inventory.min() >= -1e-9 and sol.inventory.max() <= 40 + 1e-9


def test_slippage_smooths_the_schedule():
    spread = [np.std(solve_qp(day_ahead_instance(p)).control) for p in ("near_zero", "constant", "sinusoidal")]
    assert spread[0] > spread[1] > spread[2]


def test_dense_solve_examples(rng):
    grid = TimeGrid(1.0, 20)
    zero = build_discrete_kernel(KernelSpec.zero(), grid)
    rhs = rng.normal(size=20)
    np.testing.assert_array_equal(dense_deterministic_solve(zero, rhs), rhs)
    dk = build_discrete_kernel(KernelSpec.exponential(5.0, 1.0), grid)
    assert not dense_deterministic_solve(dk, np.zeros(20)).any()
    u = dense_deterministic_solve(dk, rhs)
    D = np.eye(20) + dk.lower + dk.upper
    assert np.linalg.norm(D @ u - rhs) <= 1e-11 * np.linalg.norm(rhs)


def test_csv_round_trip(tmp_path):
    inst = day_ahead_instance("constant", n_steps=24)
    src = tmp_path / "inst.csv"
    with open(src, "w") as fh:
        fh.write("forecast,gamma\n")
        for i in range(inst.n + 1):
            g = format(inst.gamma[i], ".17g") if i < inst.n else ""
            fh.write(f"{inst.forecast[i]:.17g},{g}\n")
    loaded = QPInstance.from_csv(src, inst.step, u_min=-20.0, u_max=20.0, X_min=0.0, X_max=40.0)
    sol = solve_qp(loaded)
    assert sol.objective == pytest.approx(solve_qp(inst).objective, rel=1e-12)
    out = tmp_path / "solution.csv"
    write_solution_csv(out, loaded, sol)
    lines = out.read_text().splitlines()
    assert lines[0] == "step,time,u,X" and len(lines) == inst.n + 2
    assert lines[-1].split(",")[2] == ""
    np.testing.assert_array_equal([float(l.split(",")[2]) for l in lines[1:-1]], sol.control)


def test_csv_missing_column(tmp_path):
    src = tmp_path / "bad.csv"
    src.write_text("forecast\n1\n2\n")
    with pytest.raises(ValueError):
        QPInstance.from_csv(src, 1.0)
