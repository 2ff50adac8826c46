"""Market data model and restricted master problem assembly.

The master problem optimizes per-asset deviations from a benchmark over a
candidate set C. Assets outside C are fixed at zero weight, i.e. their
deviation is pinned at minus the benchmark weight; those fixed deviations
feed the objective (cross terms move into the linear term, pure fixed terms
into the constant) and shift the right-hand side of every group constraint.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np

from .errors import InfeasibleByConstruction, ValidationError
from .qp import QuadraticProgram

__all__ = [
    "AssetUniverse",
    "PortfolioVec",
    "Bounds",
    "MasterProblem",
    "RowTag",
    "build_master",
    "active_share",
    "total_abs_deviation",
]

BENCH_SUM_TOL = 1e-6
OMEGA_SYM_TOL = 1e-6
OMEGA_PSD_TOL = 1e-8


@dataclass(frozen=True)
class Bounds:
    """Constraint bands of the basic model."""

    dev: float = 0.05        # per-asset deviation from benchmark weight
    sector: float = 0.1      # net sector active weight
    mcapq: float = 0.1       # net market-cap-quintile active weight
    beta: float = 0.1        # net beta-weighted active weight


DEFAULT_BOUNDS = Bounds()


@dataclass(frozen=True)
class AssetUniverse:
    """Immutable per-review-date market snapshot."""

    ids: tuple
    alpha: np.ndarray
    beta: np.ndarray
    sector: tuple
    mcapq: np.ndarray
    bench: np.ndarray
    omega: np.ndarray
    date: str = ""

    def __post_init__(self):
        ids = tuple(str(s) for s in self.ids)
        n = len(ids)
        if len(set(ids)) != n:
            raise ValidationError(f"duplicate asset ids on {self.date!r}")
        alpha = np.asarray(self.alpha, dtype=float).ravel()
        beta = np.asarray(self.beta, dtype=float).ravel()
        sector = tuple(str(s) for s in self.sector)
        mcapq = np.asarray(self.mcapq, dtype=int).ravel()
        bench = np.asarray(self.bench, dtype=float).ravel()
        omega = np.asarray(self.omega, dtype=float)
        for name, arr in (("alpha", alpha), ("beta", beta), ("bench", bench), ("mcapq", mcapq)):
            if arr.shape[0] != n:
                raise ValidationError(f"{name} has length {arr.shape[0]}, expected {n}")
        if len(sector) != n:
            raise ValidationError(f"sector has length {len(sector)}, expected {n}")
        if omega.shape != (n, n):
            raise ValidationError(f"omega has shape {omega.shape}, expected ({n}, {n})")
        if np.any((mcapq < 1) | (mcapq > 5)):
            bad = int(np.flatnonzero((mcapq < 1) | (mcapq > 5))[0])
            raise ValidationError(f"mcap quintile out of 1..5 for asset {ids[bad]}")
        if np.any(bench < -1e-12):
            bad = int(np.flatnonzero(bench < -1e-12)[0])
            raise ValidationError(f"negative benchmark weight for asset {ids[bad]}")
        if abs(float(bench.sum()) - 1.0) > BENCH_SUM_TOL:
            raise ValidationError(
                f"benchmark weights sum to {bench.sum():.8f} on {self.date!r}")
        asym = np.abs(omega - omega.T)
        if asym.size and np.max(asym) > OMEGA_SYM_TOL:
            i, j = np.unravel_index(int(np.argmax(asym)), asym.shape)
            raise ValidationError(
                f"covariance asymmetric at ({ids[i]}, {ids[j]}): |a_ij - a_ji| = {asym[i, j]:.3e}")
        omega = 0.5 * (omega + omega.T)
        if n and np.linalg.eigvalsh(omega)[0] < -OMEGA_PSD_TOL:
            raise ValidationError(
                f"covariance not PSD on {self.date!r}: min eigenvalue "
                f"{np.linalg.eigvalsh(omega)[0]:.3e}")
        for name, val in (("ids", ids), ("alpha", alpha), ("beta", beta),
                          ("sector", sector), ("mcapq", mcapq), ("bench", bench),
                          ("omega", omega)):
            object.__setattr__(self, name, val)

    @property
    def n(self) -> int:
        return len(self.ids)

    @property
    def index_of(self) -> Mapping[str, int]:
        cached = self.__dict__.get("_index_of")
        if cached is None:
            cached = {s: i for i, s in enumerate(self.ids)}
            object.__setattr__(self, "_index_of", cached)
        return cached

    @property
    def sector_ids(self) -> tuple:
        return tuple(sorted(set(self.sector)))

    def sector_members(self, sector_id: str) -> np.ndarray:
        return np.flatnonzero(np.array([s == sector_id for s in self.sector]))

    def mcapq_members(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.mcapq == k)

    def sector_of(self, i: int) -> str:
        return self.sector[i]

    def mcapq_of(self, i: int) -> int:
        return int(self.mcapq[i])


@dataclass(frozen=True)
class PortfolioVec:
    """Full-universe weight vector on the simplex."""

    w: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.w, dtype=float).ravel()
        if np.any(w < -1e-9):
            raise ValidationError(f"negative weight {w.min():.3e}")
        if abs(float(w.sum()) - 1.0) > 1e-6:
            raise ValidationError(f"weights sum to {w.sum():.10f}, expected 1")
        object.__setattr__(self, "w", w)

    def deviation(self, bench: np.ndarray) -> np.ndarray:
        return self.w - np.asarray(bench, dtype=float).ravel()


def _weights_of(w) -> np.ndarray:
    if isinstance(w, PortfolioVec):
        return w.w
    return np.asarray(w, dtype=float).ravel()


def active_share(w, bench) -> float:
    """1 - sum_i min(w_i, bench_i): zero when the portfolio equals the benchmark."""
    wv = _weights_of(w)
    bv = np.asarray(bench, dtype=float).ravel()
    if wv.shape != bv.shape:
        raise ValueError(f"length mismatch: {wv.shape[0]} vs {bv.shape[0]}")
    return float(1.0 - np.minimum(wv, bv).sum())


def total_abs_deviation(w, bench) -> float:
    """L1 distance to the benchmark; equals twice the active share on the simplex."""
    wv = _weights_of(w)
    bv = np.asarray(bench, dtype=float).ravel()
    if wv.shape != bv.shape:
        raise ValueError(f"length mismatch: {wv.shape[0]} vs {bv.shape[0]}")
    return float(np.abs(wv - bv).sum())


@dataclass(frozen=True)
class RowTag:
    """Semantic label of a constraint row: kind plus an optional key.

    kind is one of NonNeg, Budget, DevUB, DevLB, SectorUB, SectorLB,
    McapUB, McapLB, BetaUB, BetaLB. The key is the asset index for
    per-asset rows, the sector id or quintile for group rows, None for
    Budget/Beta.
    """

    kind: str
    key: object = None


@dataclass
class MasterProblem:
    """Restricted master QP with the bookkeeping to map back to the full universe.

    QP variables are candidate deviations d_i (i in C, in ascending universe
    order); candidate weights are w_i = d_i + bench_i.
    """

    qp: QuadraticProgram
    universe: AssetUniverse
    candidates: np.ndarray          # ascending asset indices, one per variable
    col_of: dict                    # asset index -> variable column
    row_map: list                   # RowTag per A_ineq row
    eq_row_map: list                # RowTag per A_eq row
    fixed_d: np.ndarray             # full-universe vector, -bench outside C, 0 on C
    lam: float
    bounds: Bounds

    def full_deviation(self, x: np.ndarray) -> np.ndarray:
        d = self.fixed_d.copy()
        d[self.candidates] = np.asarray(x, dtype=float).ravel()
        return d

    def full_weights(self, x: np.ndarray) -> np.ndarray:
        return self.full_deviation(x) + self.universe.bench

    def objective_full(self, d: np.ndarray, lam: float | None = None) -> float:
        lam = self.lam if lam is None else lam
        u = self.universe
        return float(d @ u.omega @ d - lam * (u.alpha @ d))


def build_master(u: AssetUniverse, C: Iterable[int], lam: float,
                 bounds: Bounds = DEFAULT_BOUNDS) -> MasterProblem:
    """Assemble the basic-model QP restricted to candidate set C.

    Raises InfeasibleByConstruction, before any solve, when the fixed
    deviations of excluded assets already violate a constraint row (an
    excluded asset with benchmark weight above the deviation bound, or a
    group row whose fixed offset exceeds its band with no candidate left
    to offset it).
    """
    cand = np.array(sorted({int(i) for i in C}), dtype=int)
    if cand.size == 0:
        raise ValueError("candidate set is empty")
    if cand[0] < 0 or cand[-1] >= u.n:
        raise ValueError("candidate index out of range")
    k = cand.size
    mask = np.zeros(u.n, dtype=bool)
    mask[cand] = True
    fixed = np.flatnonzero(~mask)

    over = fixed[u.bench[fixed] > bounds.dev + 1e-12]
    if over.size:
        names = ", ".join(u.ids[i] for i in over[:5])
        raise InfeasibleByConstruction(
            f"excluded asset(s) with benchmark weight above the {bounds.dev} "
            f"deviation bound: {names}",
            row_kind="Dev", row_key=int(over[0]))

    d_fixed = np.zeros(u.n)
    d_fixed[fixed] = -u.bench[fixed]

    omega_cc = u.omega[np.ix_(cand, cand)]
    cross = u.omega[np.ix_(cand, fixed)] @ d_fixed[fixed] if fixed.size else np.zeros(k)
    c_lin = 2.0 * cross - lam * u.alpha[cand]
    constant = float(d_fixed[fixed] @ u.omega[np.ix_(fixed, fixed)] @ d_fixed[fixed]
                     - lam * (u.alpha[fixed] @ d_fixed[fixed])) if fixed.size else 0.0

    rows: list[np.ndarray] = []
    rhs: list[float] = []
    tags: list[RowTag] = []

    def add_row(coefs: np.ndarray, bound: float, tag: RowTag) -> None:
        rows.append(coefs)
        rhs.append(bound)
        tags.append(tag)

    eye = np.eye(k)
    for j, ai in enumerate(cand):
        add_row(-eye[j], float(u.bench[ai]), RowTag("NonNeg", int(ai)))
    for j, ai in enumerate(cand):
        add_row(eye[j], bounds.dev, RowTag("DevUB", int(ai)))
        add_row(-eye[j], bounds.dev, RowTag("DevLB", int(ai)))

    def group_rows(kind: str, key, members: np.ndarray, weights: np.ndarray | None = None):
        coefs = np.zeros(k)
        in_c = members[mask[members]]
        out_c = members[~mask[members]]
        if weights is None:
            for i in in_c:
                coefs[np.searchsorted(cand, i)] = 1.0
            offset = float(u.bench[out_c].sum())
        else:
            for i in in_c:
                coefs[np.searchsorted(cand, i)] = weights[i]
            offset = float((u.bench[out_c] * weights[out_c]).sum())
        bound = {"Sector": bounds.sector, "Mcap": bounds.mcapq, "Beta": bounds.beta}[kind]
        add_row(coefs, bound + offset, RowTag(kind + "UB", key))
        add_row(-coefs, bound - offset, RowTag(kind + "LB", key))

    for sec in u.sector_ids:
        group_rows("Sector", sec, u.sector_members(sec))
    for q in range(1, 6):
        group_rows("Mcap", q, u.mcapq_members(q))
    group_rows("Beta", None, np.arange(u.n), weights=u.beta)

    A_ineq = np.array(rows)
    b_ineq = np.array(rhs)
    dead = np.all(np.abs(A_ineq) < 1e-15, axis=1) & (b_ineq < -1e-12)
    if np.any(dead):
        bad = tags[int(np.flatnonzero(dead)[0])]
        raise InfeasibleByConstruction(
            f"fixed benchmark mass alone violates row {bad.kind}({bad.key}); "
            f"candidate set cannot offset it",
            row_kind=bad.kind, row_key=bad.key)

    A_eq = np.ones((1, k))
    b_eq = np.array([1.0 - float(u.bench[cand].sum())])

    qp = QuadraticProgram(Q=omega_cc, c=c_lin, A_ineq=A_ineq, b_ineq=b_ineq,
                          A_eq=A_eq, b_eq=b_eq, constant=constant, check_psd=False)
    return MasterProblem(qp=qp, universe=u, candidates=cand,
                         col_of={int(a): j for j, a in enumerate(cand)},
                         row_map=tags, eq_row_map=[RowTag("Budget", None)],
                         fixed_d=d_fixed, lam=float(lam), bounds=bounds)
