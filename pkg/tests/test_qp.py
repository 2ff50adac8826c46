import numpy as np
import pytest

from cgfolio.qp import (
    KktResiduals,
    QuadraticProgram,
    QpSolution,
    SolverStatus,
    kkt_residuals,
    solve_qp,
)
from oracles import grid_min_simplex, markowitz_grid_2simplex


def simplex_qp(Q, c, n):
    return QuadraticProgram(
        Q=Q, c=c,
        A_ineq=-np.eye(n), b_ineq=np.zeros(n),
        A_eq=np.ones((1, n)), b_eq=np.array([1.0]),
    )


def test_symmetric_equality_instance():
    # min x1^2 + x2^2  s.t. x1 + x2 = 1, x >= 0
    sol = solve_qp(simplex_qp(np.eye(2), np.zeros(2), 2))
    assert sol.status is SolverStatus.OPTIMAL
    np.testing.assert_allclose(sol.x, [0.5, 0.5], atol=1e-8)
    assert sol.objective == pytest.approx(0.5, abs=1e-9)


def test_single_active_inequality_dual():
    # min x^2  s.t. x >= 2  encoded as -x <= -2: x* = 2, dual 4, stationarity 2x - s = 0
    qp = QuadraticProgram(Q=np.array([[1.0]]), c=np.zeros(1),
                          A_ineq=np.array([[-1.0]]), b_ineq=np.array([-2.0]),
                          A_eq=np.zeros((0, 1)), b_eq=np.zeros(0))
    sol = solve_qp(qp)
    assert sol.status is SolverStatus.OPTIMAL
    assert sol.x[0] == pytest.approx(2.0, abs=1e-7)
    assert sol.s_ineq[0] == pytest.approx(4.0, abs=1e-6)
    assert sol.kkt.comp_slack <= 1e-8


def test_markowitz_3asset_against_grid_oracle():
    # Omega = diag(0.04, 0.09, 0.01), lambda = 5, alpha = (0.01, 0.02, 0.005).
    # Value frozen from the 2-simplex grid at step 1e-4: -0.0439923468,
    # argmin (0.3622, 0.4388, 0.1990).
    omega = np.diag([0.04, 0.09, 0.01])
    lam = 5.0
    alpha = np.array([0.01, 0.02, 0.005])
    sol = solve_qp(simplex_qp(omega, -lam * alpha, 3))
    assert sol.status is SolverStatus.OPTIMAL
    assert sol.objective == pytest.approx(-0.0439923468, abs=1e-6)
    np.testing.assert_allclose(sol.x, [0.3622, 0.4388, 0.1990], atol=1e-3)
    # live grid re-check at coarser resolution
    grid_best, grid_arg = markowitz_grid_2simplex([0.04, 0.09, 0.01], alpha, lam, step=1e-3)
    assert sol.objective <= grid_best + 1e-9
    assert grid_best - sol.objective <= 1e-5
    np.testing.assert_allclose(sol.x, grid_arg, atol=2e-3)
    # duals: budget multiplier from stationarity 2*Omega*w - lam*alpha + s_eq = 0
    assert sol.s_eq[0] == pytest.approx(0.02102041, abs=1e-6)


def test_infeasible_inequalities_detected():
    qp = QuadraticProgram(Q=np.array([[1.0]]), c=np.zeros(1),
                          A_ineq=np.array([[1.0], [-1.0]]), b_ineq=np.array([-1.0, -1.0]),
                          A_eq=np.zeros((0, 1)), b_eq=np.zeros(0))
    sol = solve_qp(qp)
    assert sol.status is SolverStatus.INFEASIBLE


def test_infeasible_equalities_certified():
    qp = QuadraticProgram(Q=np.eye(2), c=np.zeros(2),
                          A_ineq=np.zeros((0, 2)), b_ineq=np.zeros(0),
                          A_eq=np.array([[1.0, 1.0], [1.0, 1.0]]), b_eq=np.array([1.0, 2.0]))
    sol = solve_qp(qp)
    assert sol.status is SolverStatus.INFEASIBLE
    assert sol.iterations == 0


def test_kkt_residuals_at_optimum_are_tiny():
    omega = np.diag([0.04, 0.09, 0.01])
    qp = simplex_qp(omega, -5.0 * np.array([0.01, 0.02, 0.005]), 3)
    sol = solve_qp(qp, tol=1e-10)
    res = kkt_residuals(qp, sol)
    assert res.max() <= 1e-9


def test_kkt_residuals_equality_perturbation():
    # perturbing one coordinate of an equality-constrained optimum by +0.1
    # moves primal_eq by exactly 0.1
    qp = simplex_qp(np.eye(2), np.zeros(2), 2)
    sol = solve_qp(qp)
    x = sol.x.copy()
    x[0] += 0.1
    res = kkt_residuals(qp, x=x, s_ineq=sol.s_ineq, s_eq=sol.s_eq)
    assert res.primal_eq == pytest.approx(0.1, abs=1e-7)


def test_kkt_residuals_zero_duals_gradient():
    rng = np.random.default_rng(7)
    B = rng.normal(size=(4, 4))
    Q = B @ B.T / 4 + 0.1 * np.eye(4)
    c = rng.normal(size=4)
    qp = QuadraticProgram(Q=Q, c=c,
                          A_ineq=-np.eye(4), b_ineq=np.ones(4),
                          A_eq=np.zeros((0, 4)), b_eq=np.zeros(0))
    x = rng.uniform(-0.5, 0.5, size=4)
    res = kkt_residuals(qp, x=x, s_ineq=np.zeros(4), s_eq=np.zeros(0))
    assert res.stationarity == pytest.approx(np.max(np.abs(2 * Q @ x + c)), rel=1e-12)


def test_kkt_residuals_dimension_mismatch():
    qp = simplex_qp(np.eye(2), np.zeros(2), 2)
    with pytest.raises(ValueError):
        kkt_residuals(qp, x=np.zeros(3), s_ineq=np.zeros(2), s_eq=np.zeros(1))


def test_objective_field_matches_definition():
    rng = np.random.default_rng(11)
    for _ in range(20):
        n = rng.integers(2, 8)
        B = rng.normal(size=(n, n))
        Q = B @ B.T / n
        c = rng.normal(size=n)
        const = float(rng.normal())
        qp = QuadraticProgram(Q=Q, c=c,
                              A_ineq=-np.eye(n), b_ineq=np.zeros(n),
                              A_eq=np.ones((1, n)), b_eq=np.array([1.0]),
                              constant=const)
        sol = solve_qp(qp)
        assert sol.status is SolverStatus.OPTIMAL
        direct = sol.x @ qp.Q @ sol.x + qp.c @ sol.x + const
        assert sol.objective == pytest.approx(direct, rel=1e-9, abs=1e-12)
        assert np.all(sol.s_ineq >= -1e-9)
        assert sol.kkt.comp_slack <= 1e-8


def test_scaling_leaves_argmin_and_scales_duals():
    rng = np.random.default_rng(3)
    n = 5
    B = rng.normal(size=(n, n))
    Q = B @ B.T / n + 0.05 * np.eye(n)
    c = rng.normal(size=n) * 0.1
    sols = {}
    for t in (1.0, 10.0):
        qp = QuadraticProgram(Q=t * Q, c=t * c,
                              A_ineq=-np.eye(n), b_ineq=np.zeros(n),
                              A_eq=np.ones((1, n)), b_eq=np.array([1.0]),
                              constant=t * 0.3)
        sols[t] = solve_qp(qp, tol=1e-10)
    np.testing.assert_allclose(sols[1.0].x, sols[10.0].x, atol=1e-6)
    np.testing.assert_allclose(10.0 * sols[1.0].s_eq, sols[10.0].s_eq, rtol=1e-5, atol=1e-8)
    active = sols[1.0].s_ineq > 1e-6
    np.testing.assert_allclose(10.0 * sols[1.0].s_ineq[active],
                               sols[10.0].s_ineq[active], rtol=1e-4)


def test_random_instances_beat_simplex_grid():
    rng = np.random.default_rng(19)
    step = 0.05
    for _ in range(10):
        n = int(rng.integers(2, 6))
        B = rng.normal(size=(n, n))
        Q = B @ B.T / n
        c = rng.normal(size=n) * 0.2
        upper = np.full(n, 0.9)
        qp = QuadraticProgram(
            Q=Q, c=c,
            A_ineq=np.vstack([-np.eye(n), np.eye(n)]),
            b_ineq=np.concatenate([np.zeros(n), upper]),
            A_eq=np.ones((1, n)), b_eq=np.array([1.0]),
        )
        sol = solve_qp(qp)
        assert sol.status is SolverStatus.OPTIMAL
        grid_best = grid_min_simplex(Q, c, step, upper=upper)
        lipschitz = 2 * np.max(np.abs(Q)) * n + np.max(np.abs(c))
        assert sol.objective <= grid_best + 1e-8
        assert grid_best - sol.objective <= lipschitz * step * n


def test_psd_repair_clamps_negative_eigenvalues():
    Q = np.array([[1.0, 0.0], [0.0, -0.5]])
    qp = QuadraticProgram(Q=Q, c=np.zeros(2),
                          A_ineq=-np.eye(2), b_ineq=np.zeros(2),
                          A_eq=np.ones((1, 2)), b_eq=np.array([1.0]))
    assert np.linalg.eigvalsh(qp.Q)[0] >= -1e-12


def test_asymmetric_q_rejected():
    Q = np.array([[1.0, 0.5], [0.0, 1.0]])
    with pytest.raises(ValueError):
        QuadraticProgram(Q=Q, c=np.zeros(2),
                         A_ineq=np.zeros((0, 2)), b_ineq=np.zeros(0),
                         A_eq=np.zeros((0, 2)), b_eq=np.zeros(0))


def test_max_iter_reports_residuals():
    qp = simplex_qp(np.eye(3), np.zeros(3), 3)
    sol = solve_qp(qp, tol=1e-14, max_iter=2)
    assert sol.status in (SolverStatus.MAX_ITER, SolverStatus.OPTIMAL)
    assert np.isfinite(sol.kkt.max())
