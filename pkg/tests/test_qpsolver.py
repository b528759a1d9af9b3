import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from frs_coord import qpsolver
from frs_coord.qpsolver import QpProblem, Status, kkt_residual, solve
from frs_coord.verify import check_qp, enumerate_qp, planted_qp, random_qp

KERNELS = ["python"] + (["cython"] if qpsolver._qpcore is not None else [])


@pytest.fixture(params=KERNELS)
def kernel(request):
    return request.param


def test_unconstrained(kernel):
    sol = solve(QpProblem(np.eye(2), [-1.0, 0.0]), kernel=kernel)
    assert sol.status is Status.OPTIMAL
    np.testing.assert_allclose(sol.x, [1.0, 0.0], atol=1e-12)


def test_single_halfspace(kernel):
    sol = solve(QpProblem(np.eye(2), np.zeros(2), [[1.0, 0.0]], [1.0]), kernel=kernel)
    np.testing.assert_allclose(sol.x, [1.0, 0.0], atol=1e-12)
    np.testing.assert_allclose(sol.duals, [1.0], atol=1e-12)
    assert list(sol.active_rows) == [0]
    assert sol.kkt_residual <= 1e-12


def test_box_bounds(kernel):
    sol = solve(QpProblem(np.eye(2), [-5.0, 5.0], lower=[-1, -1], upper=[1, 1]), kernel=kernel)
    np.testing.assert_allclose(sol.x, [1.0, -1.0], atol=1e-12)
    # upper bound on x0 carries a negative box dual, lower bound on x1 a positive one
    assert sol.box_duals[0] < 0 < sol.box_duals[1]


def test_infeasible_rows(kernel):
    prob = QpProblem(np.eye(1), [0.0], [[1.0], [-1.0]], [1.0, 0.0])
    assert solve(prob, kernel=kernel).status is Status.INFEASIBLE


def test_max_iter_reported(kernel):
    prob, _ = planted_qp(np.random.default_rng(5), n=10, m=30)
    sol = solve(prob, max_iter=1, kernel=kernel)
    if sol.status is not Status.OPTIMAL:
        assert sol.status is Status.MAX_ITER


def test_validation():
    with pytest.raises(ValueError):
        QpProblem(np.array([[1.0, 1.0], [0.0, 1.0]]), np.zeros(2))
    with pytest.raises(ValueError):
        QpProblem(np.eye(2), np.zeros(3))
    with pytest.raises(ValueError):
        QpProblem(np.eye(2), np.zeros(2), [[1.0, 0.0]], [1.0, 2.0])
    with pytest.raises(ValueError):
        solve(QpProblem(np.eye(2), np.zeros(2)), tol=0.0)
    with pytest.raises(ValueError):
        solve(QpProblem(-np.eye(2), np.zeros(2)))


def test_kkt_detects_perturbation():
    prob = QpProblem(np.eye(2), np.zeros(2), [[1.0, 0.0]], [1.0])
    sol = solve(prob)
    assert kkt_residual(prob, sol) <= 1e-12
    sol.x = sol.x + 1e-3
    assert kkt_residual(prob, sol) >= 1e-4


def test_kernels_agree():
    if len(KERNELS) < 2:
        pytest.skip("compiled kernel not built")
    rng = np.random.default_rng(11)
    for _ in range(50):
        prob = random_qp(rng)
        a = solve(prob, kernel="python")
        b = solve(prob, kernel="cython")
        assert a.status == b.status
        np.testing.assert_allclose(a.x, b.x, atol=1e-9)


def test_deterministic(kernel):
    prob = random_qp(np.random.default_rng(4), n=12, m=30)
    a, b = solve(prob, kernel=kernel), solve(prob, kernel=kernel)
    assert np.array_equal(a.x, b.x) and np.array_equal(a.duals, b.duals)


def test_warm_start_same_answer(kernel):
    rng = np.random.default_rng(8)
    for _ in range(30):
        prob, _ = planted_qp(rng)
        cold = solve(prob, kernel=kernel)
        warm = solve(prob, warm_start=cold, kernel=kernel)
        assert warm.status is Status.OPTIMAL
        np.testing.assert_allclose(warm.x, cold.x, atol=1e-8)
        assert warm.iterations <= cold.iterations


def test_warm_start_from_index_list(kernel):
    prob, x = planted_qp(np.random.default_rng(9), n=6, m=12)
    sol = solve(prob, warm_start=[0, 3, 5], kernel=kernel)
    np.testing.assert_allclose(sol.x, x, atol=1e-8)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.01, 100.0))
def test_scaling_covariance(seed, lam):
    prob = random_qp(np.random.default_rng(seed), n=6, m=10)
    scaled = QpProblem(lam * prob.hessian, lam * prob.linear, prob.ineq_matrix, prob.ineq_rhs, prob.lower, prob.upper)
    np.testing.assert_allclose(solve(scaled).x, solve(prob).x, atol=1e-7)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_matches_enumeration(seed):
    rng = np.random.default_rng(seed)
    prob = random_qp(rng, n=int(rng.integers(1, 5)), m=int(rng.integers(0, 7)))
    x_ref, val = enumerate_qp(prob)
    sol = solve(prob)
    assert sol.status is Status.OPTIMAL
    assert prob.objective(sol.x) == pytest.approx(val, rel=1e-9, abs=1e-9)
    assert sol.kkt_residual <= 1e-8


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_planted_optimum(seed):
    prob, x = planted_qp(np.random.default_rng(seed))
    sol = solve(prob)
    assert sol.status is Status.OPTIMAL
    np.testing.assert_allclose(sol.x, x, atol=1e-7)


def test_against_cvxpy():
    cp = pytest.importorskip("cvxpy")
    rng = np.random.default_rng(21)
    for _ in range(10):
        prob = random_qp(rng, n=10, m=20)
        x = cp.Variable(prob.n)
        cons = [prob.ineq_matrix @ x >= prob.ineq_rhs]
        lo, up = prob.lower, prob.upper
        if np.isfinite(lo).any():
            cons += [x >= lo, x <= up]
        cp.Problem(cp.Minimize(0.5 * cp.quad_form(x, cp.psd_wrap(prob.hessian)) + prob.linear @ x), cons).solve(
            solver=cp.CLARABEL
        )
        sol = solve(prob)
        assert prob.objective(sol.x) == pytest.approx(prob.objective(x.value), rel=1e-6, abs=1e-6)


def test_oracle_check_quick():
    res = check_qp(np.random.default_rng(0), n_instances=40)
    assert res.passed, res.detail


def test_oracle_catches_wrong_solver():
    def sloppy(prob):
        sol = solve(prob)
        sol.x = sol.x + 1e-4
        return sol

    assert not check_qp(np.random.default_rng(0), n_instances=20, solver=sloppy).passed
