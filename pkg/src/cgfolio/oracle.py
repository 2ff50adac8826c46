"""Ground-truth engines for small instances.

Exhaustive cardinality enumeration and perturbed re-solves are slow but
independent of the heuristic search path, which makes them usable as
oracles in tests and in the acceptance suite.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations
from math import comb

import numpy as np

from .errors import InfeasibleByConstruction, TooLarge
from .model import AssetUniverse, Bounds, DEFAULT_BOUNDS, MasterProblem, build_master
from .qp import QuadraticProgram, SolverStatus, solve_qp

__all__ = ["ExactResult", "SubsetRecord", "enumerate_exact", "perturbed_resolve"]

ENUMERATION_GUARD = 20


@dataclass(frozen=True)
class SubsetRecord:
    subset: tuple
    objective: float | None
    status: str


@dataclass
class ExactResult:
    best_subset: tuple
    best_objective: float
    evaluated_subsets: int
    solved_subsets: int
    per_subset_objectives: list = field(default_factory=list)


def enumerate_exact(u: AssetUniverse, k_min: int, k_max: int, lam: float,
                    bounds: Bounds = DEFAULT_BOUNDS, *, allow_large: bool = False,
                    keep_table: bool = False, tol: float = 1e-8,
                    max_iter: int = 200) -> ExactResult:
    """Minimum master objective over every candidate subset in the size band.

    Subsets that are infeasible by construction (or that the solver certifies
    infeasible) are skipped; they still count toward ``evaluated_subsets`` so
    the enumeration tally stays sum-of-binomials.
    """
    if not 1 <= k_min <= k_max <= u.n:
        raise ValueError(f"bad cardinality band [{k_min}, {k_max}] for n={u.n}")
    if u.n > ENUMERATION_GUARD and not allow_large:
        raise TooLarge(
            f"n={u.n} exceeds the enumeration guard rail ({ENUMERATION_GUARD}); "
            f"pass allow_large=True to override")

    best_obj = np.inf
    best_subset: tuple = ()
    evaluated = 0
    solved = 0
    table: list[SubsetRecord] = []

    for k in range(k_min, k_max + 1):
        for subset in combinations(range(u.n), k):
            evaluated += 1
            try:
                mp = build_master(u, subset, lam, bounds)
            except InfeasibleByConstruction:
                if keep_table:
                    table.append(SubsetRecord(subset, None, "InfeasibleByConstruction"))
                continue
            sol = solve_qp(mp.qp, tol=tol, max_iter=max_iter)
            if sol.status is not SolverStatus.OPTIMAL:
                if keep_table:
                    table.append(SubsetRecord(subset, None, str(sol.status)))
                continue
            solved += 1
            if keep_table:
                table.append(SubsetRecord(subset, sol.objective, "Optimal"))
            if sol.objective < best_obj:
                best_obj = sol.objective
                best_subset = subset

    expected = sum(comb(u.n, k) for k in range(k_min, k_max + 1))
    assert evaluated == expected
    return ExactResult(best_subset=best_subset, best_objective=float(best_obj),
                       evaluated_subsets=evaluated, solved_subsets=solved,
                       per_subset_objectives=table)


def perturbed_resolve(mp: MasterProblem, u: AssetUniverse, i: int,
                      eps: float = 1e-4, *, tol: float = 1e-8,
                      max_iter: int = 200) -> float:
    """Objective change from forcing w_i = eps on top of the current master.

    Re-solves the master over C and over C + {i} with the extra equality
    w_i = eps, and returns the difference: the finite-difference ground truth
    that a first-order marginal effect times eps should approximate.
    """
    i = int(i)
    if i in mp.col_of:
        raise ValueError(f"asset index {i} is already a candidate")
    base = solve_qp(mp.qp, tol=tol, max_iter=max_iter)
    if base.status is not SolverStatus.OPTIMAL:
        raise RuntimeError(f"base master did not solve to optimality: {base.status}")

    ext = build_master(u, tuple(mp.candidates) + (i,), mp.lam, mp.bounds)
    col = ext.col_of[i]
    pin = np.zeros(ext.qp.n)
    pin[col] = 1.0
    # the new variable is the deviation d_i, so w_i = eps pins d_i = eps - bench_i
    qp = QuadraticProgram(
        Q=ext.qp.Q, c=ext.qp.c,
        A_ineq=ext.qp.A_ineq, b_ineq=ext.qp.b_ineq,
        A_eq=np.vstack([ext.qp.A_eq, pin[None, :]]),
        b_eq=np.concatenate([ext.qp.b_eq, [eps - float(u.bench[i])]]),
        constant=ext.qp.constant, check_psd=False,
    )
    pert = solve_qp(qp, tol=tol, max_iter=max_iter)
    if pert.status is not SolverStatus.OPTIMAL:
        raise RuntimeError(f"perturbed master did not solve to optimality: {pert.status}")
    return float(pert.objective - base.objective)
