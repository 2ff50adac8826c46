"""Dense convex QP solver with certified primal and dual solutions.

Problem form:

    minimize    x' Q x + c' x + constant
    subject to  A_ineq x <= b_ineq     (duals s_ineq >= 0)
                A_eq   x == b_eq       (duals s_eq free)

Note the quadratic term carries no 1/2: the objective gradient is
``2 Q x + c`` and the stationarity residual is

    | 2 Q x + c + A_ineq' s_ineq + A_eq' s_eq |_inf

The solver is an infeasible-start Mehrotra predictor-corrector
primal-dual interior-point method operating on dense matrices, which is
adequate for master problems of a few hundred rows and <= ~70 variables.
Every solve is self-contained (no shared mutable state), so distinct
problems may be solved concurrently from different threads.
"""

from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

__all__ = [
    "QuadraticProgram",
    "QpSolution",
    "KktResiduals",
    "SolverStatus",
    "solve_qp",
    "kkt_residuals",
]

# Below this eigenvalue the quadratic term is repaired by clamping; in the
# band [-PSD_TOL, 0) it is tolerated as estimation noise.
PSD_TOL = 1e-8
SYM_TOL = 1e-10


class SolverStatus(enum.Enum):
    OPTIMAL = "Optimal"
    MAX_ITER = "MaxIter"
    INFEASIBLE = "Infeasible"

    def __str__(self) -> str:  # pragma: no cover - cosmetic
        return self.value


@dataclass(frozen=True)
class KktResiduals:
    """Unscaled infinity-norm KKT residuals of a candidate solution."""

    primal_ineq: float
    primal_eq: float
    stationarity: float
    comp_slack: float

    def max(self) -> float:
        return max(self.primal_ineq, self.primal_eq, self.stationarity, self.comp_slack)

    def within(self, tol: float) -> bool:
        return self.max() <= tol


@dataclass
class QuadraticProgram:
    """Dense QP data. Symmetrizes Q on construction and repairs mild indefiniteness.

    ``check_psd=False`` skips the eigenvalue check for callers that already
    hold a PSD guarantee (e.g. principal submatrices of a validated
    covariance matrix).
    """

    Q: np.ndarray
    c: np.ndarray
    A_ineq: np.ndarray
    b_ineq: np.ndarray
    A_eq: np.ndarray
    b_eq: np.ndarray
    constant: float = 0.0
    check_psd: bool = field(default=True, repr=False)

    def __post_init__(self) -> None:
        self.Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        self.c = np.asarray(self.c, dtype=float).ravel()
        n = self.c.shape[0]
        if self.Q.shape != (n, n):
            raise ValueError(f"Q has shape {self.Q.shape}, expected ({n}, {n})")
        asym = np.max(np.abs(self.Q - self.Q.T)) if n else 0.0
        if asym > SYM_TOL * max(1.0, np.max(np.abs(self.Q))):
            raise ValueError(f"Q asymmetric beyond tolerance: max |Q - Q'| = {asym:.3e}")
        self.Q = 0.5 * (self.Q + self.Q.T)

        self.A_ineq = np.asarray(self.A_ineq, dtype=float).reshape(-1, n)
        self.b_ineq = np.asarray(self.b_ineq, dtype=float).ravel()
        self.A_eq = np.asarray(self.A_eq, dtype=float).reshape(-1, n)
        self.b_eq = np.asarray(self.b_eq, dtype=float).ravel()
        if self.A_ineq.shape[0] != self.b_ineq.shape[0]:
            raise ValueError("A_ineq/b_ineq row mismatch")
        if self.A_eq.shape[0] != self.b_eq.shape[0]:
            raise ValueError("A_eq/b_eq row mismatch")
        self.constant = float(self.constant)

        if self.check_psd and n:
            w = np.linalg.eigvalsh(self.Q)
            if w[0] < -PSD_TOL:
                w_full, V = np.linalg.eigh(self.Q)
                self.Q = (V * np.clip(w_full, 0.0, None)) @ V.T
                self.Q = 0.5 * (self.Q + self.Q.T)

    @property
    def n(self) -> int:
        return self.c.shape[0]

    @property
    def n_ineq(self) -> int:
        return self.b_ineq.shape[0]

    @property
    def n_eq(self) -> int:
        return self.b_eq.shape[0]

    def objective(self, x: np.ndarray) -> float:
        x = np.asarray(x, dtype=float).ravel()
        return float(x @ self.Q @ x + self.c @ x + self.constant)


@dataclass
class QpSolution:
    x: np.ndarray
    s_ineq: np.ndarray
    s_eq: np.ndarray
    objective: float
    status: SolverStatus
    kkt: KktResiduals
    iterations: int = 0

    @property
    def optimal(self) -> bool:
        return self.status is SolverStatus.OPTIMAL


def kkt_residuals(qp: QuadraticProgram, sol: QpSolution | None = None, *,
                  x: np.ndarray | None = None,
                  s_ineq: np.ndarray | None = None,
                  s_eq: np.ndarray | None = None) -> KktResiduals:
    """Recompute KKT residuals from scratch; pure function of its inputs.

    Accepts either a QpSolution or the raw (x, s_ineq, s_eq) triple.
    """
    if sol is not None:
        x, s_ineq, s_eq = sol.x, sol.s_ineq, sol.s_eq
    x = np.asarray(x, dtype=float).ravel()
    s_ineq = np.asarray(s_ineq, dtype=float).ravel()
    s_eq = np.asarray(s_eq, dtype=float).ravel()
    if x.shape[0] != qp.n:
        raise ValueError(f"x has length {x.shape[0]}, expected {qp.n}")
    if s_ineq.shape[0] != qp.n_ineq or s_eq.shape[0] != qp.n_eq:
        raise ValueError("dual vector length mismatch")

    grad = 2.0 * (qp.Q @ x) + qp.c
    if qp.n_ineq:
        slack = qp.b_ineq - qp.A_ineq @ x
        primal_ineq = float(max(0.0, np.max(-slack)))
        comp = float(np.max(np.abs(s_ineq * slack)))
        grad = grad + qp.A_ineq.T @ s_ineq
    else:
        primal_ineq = 0.0
        comp = 0.0
    if qp.n_eq:
        primal_eq = float(np.max(np.abs(qp.A_eq @ x - qp.b_eq)))
        grad = grad + qp.A_eq.T @ s_eq
    else:
        primal_eq = 0.0
    stationarity = float(np.max(np.abs(grad))) if qp.n else 0.0
    return KktResiduals(primal_ineq=primal_ineq, primal_eq=primal_eq,
                        stationarity=stationarity, comp_slack=comp)


def _solve_equality_qp(qp: QuadraticProgram, tol: float) -> QpSolution:
    """Direct KKT solve for problems without inequality rows."""
    n, p = qp.n, qp.n_eq
    K = np.zeros((n + p, n + p))
    K[:n, :n] = 2.0 * qp.Q + 1e-12 * np.eye(n)
    if p:
        K[:n, n:] = qp.A_eq.T
        K[n:, :n] = qp.A_eq
        K[n:, n:] = -1e-12 * np.eye(p)
    rhs = np.concatenate([-qp.c, qp.b_eq])
    try:
        sol = np.linalg.solve(K, rhs)
    except np.linalg.LinAlgError:
        sol, *_ = np.linalg.lstsq(K, rhs, rcond=None)
    x, y = sol[:n], sol[n:]
    res = kkt_residuals(qp, x=x, s_ineq=np.zeros(0), s_eq=y)
    status = SolverStatus.OPTIMAL if res.within(tol) else SolverStatus.INFEASIBLE
    return QpSolution(x=x, s_ineq=np.zeros(0), s_eq=y, objective=qp.objective(x),
                      status=status, kkt=res, iterations=1)


def solve_qp(qp: QuadraticProgram, tol: float = 1e-8, max_iter: int = 200) -> QpSolution:
    """Solve a convex QP, returning primal and dual vectors with KKT residuals.

    Status is OPTIMAL only when every residual in :class:`KktResiduals` is
    <= ``tol``. INFEASIBLE is reported on an equality-inconsistency
    certificate or when primal residuals stall above tolerance while the
    barrier parameter has collapsed. MAX_ITER returns the current iterate
    with its residuals so callers can inspect how far the solve got.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    n, m, p = qp.n, qp.n_ineq, qp.n_eq

    # Certificate: inconsistent equalities are detectable by least squares.
    if p:
        x_ls, *_ = np.linalg.lstsq(qp.A_eq, qp.b_eq, rcond=None)
        eq_gap = np.max(np.abs(qp.A_eq @ x_ls - qp.b_eq))
        if eq_gap > 1e-7 * (1.0 + np.max(np.abs(qp.b_eq))):
            res = kkt_residuals(qp, x=x_ls, s_ineq=np.zeros(m), s_eq=np.zeros(p))
            return QpSolution(x=x_ls, s_ineq=np.zeros(m), s_eq=np.zeros(p),
                              objective=qp.objective(x_ls), status=SolverStatus.INFEASIBLE,
                              kkt=res, iterations=0)
        x = x_ls
    else:
        x = np.zeros(n)

    if m == 0:
        return _solve_equality_qp(qp, tol)

    P = 2.0 * qp.Q
    G, h = qp.A_ineq, qp.b_ineq
    A, b = qp.A_eq, qp.b_eq

    t = np.maximum(h - G @ x, 1.0)  # slacks, kept strictly positive
    z = np.ones(m)
    y = np.zeros(p)

    reg = 1e-12 * (1.0 + (float(np.max(np.abs(P))) if n else 0.0))
    best_pinf = np.inf
    stall = 0
    status = SolverStatus.MAX_ITER
    iters_done = max_iter

    for it in range(max_iter):
        res = kkt_residuals(qp, x=x, s_ineq=z, s_eq=y)
        if res.within(tol):
            status = SolverStatus.OPTIMAL
            iters_done = it
            break

        pinf = max(res.primal_ineq, res.primal_eq)
        if pinf < best_pinf * 0.9:
            best_pinf = pinf
            stall = 0
        else:
            stall += 1
        mu = float(t @ z) / m
        b_scale = 1.0 + (float(np.max(np.abs(h))) if m else 0.0)
        dual_blowup = float(np.max(np.abs(z))) > 1e12
        if (stall >= 25 and pinf > max(100.0 * tol, 1e-7 * b_scale)) or dual_blowup:
            status = SolverStatus.INFEASIBLE
            iters_done = it
            break

        r_d = P @ x + qp.c + G.T @ z + (A.T @ y if p else 0.0)
        r_p = (A @ x - b) if p else np.zeros(0)
        r_g = G @ x + t - h

        w_diag = z / t
        M = P + (G.T * w_diag) @ G
        if not np.isfinite(M).all():
            # slack collapse: the scaling matrix blew up, which only happens
            # when the iterates are wedged against an empty feasible region
            status = SolverStatus.INFEASIBLE
            iters_done = it
            break
        K = np.zeros((n + p, n + p))
        K[:n, :n] = M + reg * np.eye(n)
        if p:
            K[:n, n:] = A.T
            K[n:, :n] = A
            K[n:, n:] = -reg * np.eye(p)
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
                lu, piv = scipy.linalg.lu_factor(K)
        except (scipy.linalg.LinAlgError, ValueError):
            status = SolverStatus.INFEASIBLE
            iters_done = it
            break

        def newton_step(rc: np.ndarray) -> tuple[np.ndarray, ...]:
            # a singular factorization yields non-finite steps; the caller
            # treats those as an infeasibility signal
            with np.errstate(invalid="ignore", over="ignore"):
                rhs1 = -r_d + G.T @ (rc / t - w_diag * r_g)
                rhs = np.concatenate([rhs1, -r_p]) if p else rhs1
                d = scipy.linalg.lu_solve((lu, piv), rhs, check_finite=False)
                dx, dy = d[:n], d[n:]
                dt = -r_g - G @ dx
                dz = -rc / t + w_diag * r_g + w_diag * (G @ dx)
            return dx, dy, dt, dz

        # Predictor (affine scaling) step.
        rc_aff = z * t
        dx_a, dy_a, dt_a, dz_a = newton_step(rc_aff)
        if not (np.isfinite(dx_a).all() and np.isfinite(dt_a).all()
                and np.isfinite(dz_a).all()):
            status = SolverStatus.INFEASIBLE
            iters_done = it
            break
        alpha_aff = _max_step(t, dt_a, z, dz_a)
        mu_aff = float((t + alpha_aff * dt_a) @ (z + alpha_aff * dz_a)) / m
        sigma = (mu_aff / mu) ** 3 if mu > 0 else 0.0

        # Corrector with centering.
        rc = z * t + dt_a * dz_a - sigma * mu
        dx, dy, dt, dz = newton_step(rc)
        tau = 0.99 if mu > 1e-6 else 0.999
        alpha = tau * _max_step(t, dt, z, dz)
        alpha = min(1.0, alpha)

        x = x + alpha * dx
        if p:
            y = y + alpha * dy
        t = t + alpha * dt
        z = z + alpha * dz
        t = np.maximum(t, 1e-300)
        z = np.maximum(z, 1e-300)
    else:
        iters_done = max_iter

    res = kkt_residuals(qp, x=x, s_ineq=z, s_eq=y)
    if status is SolverStatus.MAX_ITER and res.within(tol):
        status = SolverStatus.OPTIMAL
    return QpSolution(x=x, s_ineq=z, s_eq=y, objective=qp.objective(x),
                      status=status, kkt=res, iterations=iters_done)


def _max_step(t: np.ndarray, dt: np.ndarray, z: np.ndarray, dz: np.ndarray) -> float:
    """Largest alpha in (0, 1] keeping t + alpha dt > 0 and z + alpha dz > 0."""
    alpha = 1.0
    neg_t = dt < 0
    if np.any(neg_t):
        alpha = min(alpha, float(np.min(-t[neg_t] / dt[neg_t])))
    neg_z = dz < 0
    if np.any(neg_z):
        alpha = min(alpha, float(np.min(-z[neg_z] / dz[neg_z])))
    return alpha
