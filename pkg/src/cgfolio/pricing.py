"""Marginal-effect pricing of out-of-candidate assets and candidate set upkeep.

The direct effect of forcing a tiny investment in an outside asset is the
objective gradient in that direction plus a turnover credit for assets that
were already held. The indirect effect prices the constraint columns the new
variable would occupy, using the shadow values of the solved master (the
derivative of the optimal value with respect to each right-hand side, i.e.
the negated Lagrange multipliers of the qp module's sign convention). Their
difference, delta = m - k, is the first-order change of the master optimum
per unit of forced investment; the perturbed-resolve oracle in
:mod:`cgfolio.oracle` measures the same quantity by brute force.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .errors import MissingDuals
from .model import AssetUniverse, MasterProblem
from .qp import QpSolution, SolverStatus

__all__ = [
    "CandidateState",
    "MarginalRecord",
    "MarginalReport",
    "marginal_direct_effect",
    "indirect_effect",
    "marginal_effects",
    "enforce_active_share_budget",
    "refill_candidates",
    "drop_candidates",
]

HOLDING_INDICATOR_MIN = 1e-5   # previous investment counting as "held"
TURNOVER_CREDIT = 1e-3         # per-lambda turnover term in the direct effect


@dataclass(frozen=True)
class CandidateState:
    """Candidate bookkeeping for one review period."""

    C: tuple
    removed: frozenset
    w_pre: np.ndarray
    lam: float
    lambda_bar: float = 5.0
    rng_seed: int = 0

    def __post_init__(self):
        C = tuple(sorted(int(i) for i in self.C))
        removed = frozenset(int(i) for i in self.removed)
        w_pre = np.asarray(self.w_pre, dtype=float).ravel()
        n = w_pre.shape[0]
        if set(C) & removed:
            raise ValueError("candidate and removed sets overlap")
        if set(C) | removed != set(range(n)):
            raise ValueError("candidate and removed sets must partition the universe")
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "removed", removed)
        object.__setattr__(self, "w_pre", w_pre)

    @property
    def n(self) -> int:
        return self.w_pre.shape[0]

    def with_candidates(self, C) -> "CandidateState":
        C = tuple(sorted(int(i) for i in C))
        removed = frozenset(range(self.n)) - set(C)
        return replace(self, C=C, removed=removed)


@dataclass(frozen=True)
class MarginalRecord:
    asset: str
    index: int
    m: float
    k: float
    delta: float


@dataclass(frozen=True)
class MarginalReport:
    records: tuple

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)


def marginal_direct_effect(u: AssetUniverse, d_full: np.ndarray, lam: float,
                           w_pre_i: float, i: int) -> float:
    """2 d'Omega_(.,i) - lam*alpha_i - 2*lam*1e-3 * [w_pre_i >= 1e-5]."""
    d_full = np.asarray(d_full, dtype=float).ravel()
    if d_full.shape[0] != u.n:
        raise ValueError(f"d has length {d_full.shape[0]}, expected {u.n}")
    held = 1.0 if w_pre_i >= HOLDING_INDICATOR_MIN else 0.0
    return float(2.0 * (d_full @ u.omega[:, i]) - lam * u.alpha[i]
                 - 2.0 * lam * TURNOVER_CREDIT * held)


def _shadow_aggregates(mp: MasterProblem, sol: QpSolution):
    """Shadow-value sums per row family, keyed for O(1) per-asset pricing."""
    shadow = -sol.s_ineq
    budget = -float(sol.s_eq[0])
    sector_net: dict = {}
    mcap_net: dict = {}
    beta_net = 0.0
    for r, tag in enumerate(mp.row_map):
        if tag.kind == "SectorUB":
            sector_net[tag.key] = sector_net.get(tag.key, 0.0) + shadow[r]
        elif tag.kind == "SectorLB":
            sector_net[tag.key] = sector_net.get(tag.key, 0.0) - shadow[r]
        elif tag.kind == "McapUB":
            mcap_net[tag.key] = mcap_net.get(tag.key, 0.0) + shadow[r]
        elif tag.kind == "McapLB":
            mcap_net[tag.key] = mcap_net.get(tag.key, 0.0) - shadow[r]
        elif tag.kind == "BetaUB":
            beta_net += shadow[r]
        elif tag.kind == "BetaLB":
            beta_net -= shadow[r]
    return budget, sector_net, mcap_net, beta_net


def indirect_effect(mp: MasterProblem, sol: QpSolution, u: AssetUniverse, i: int) -> float:
    """Price the constraint column asset i would occupy, via shadow values.

    The column covers the budget row (coefficient 1), the asset's sector and
    quintile rows (+-1) and the beta rows (+-beta_i). The asset's own
    non-negativity and deviation rows are excluded: they do not exist yet in
    the master it would join.
    """
    if sol.status is not SolverStatus.OPTIMAL:
        raise MissingDuals(f"master solve status is {sol.status}, duals unusable")
    budget, sector_net, mcap_net, beta_net = _shadow_aggregates(mp, sol)
    i = int(i)
    return float(budget
                 + sector_net.get(u.sector_of(i), 0.0)
                 + mcap_net.get(u.mcapq_of(i), 0.0)
                 + beta_net * u.beta[i])


def marginal_effects(mp: MasterProblem, sol: QpSolution, u: AssetUniverse,
                     state: CandidateState, n_threads: int = 1) -> MarginalReport:
    """Delta = m - k for every asset outside state.C, sorted most negative first.

    Assets in mp's candidate set that state has since dropped are treated as
    divested: their deviation reverts to minus the benchmark weight before the
    direct effect is evaluated. Ties on delta break lexicographically by id.
    """
    if sol.status is not SolverStatus.OPTIMAL:
        raise MissingDuals(f"master solve status is {sol.status}, duals unusable")
    outside = np.array([i for i in range(u.n) if i not in set(state.C)], dtype=int)
    if outside.size == 0:
        return MarginalReport(records=())

    d_full = mp.full_deviation(sol.x)
    dropped = [i for i in mp.candidates if i not in set(state.C)]
    if dropped:
        d_full[dropped] = -u.bench[dropped]

    omega_d = u.omega @ d_full  # one shared matvec keeps chunking bit-stable
    budget, sector_net, mcap_net, beta_net = _shadow_aggregates(mp, sol)
    sector_term = np.array([sector_net.get(u.sector_of(i), 0.0) for i in outside])
    mcap_term = np.array([mcap_net.get(u.mcapq_of(i), 0.0) for i in outside])
    lam = state.lam

    m_vals = np.empty(outside.size)
    k_vals = np.empty(outside.size)

    def price_chunk(lo: int, hi: int) -> None:
        idx = outside[lo:hi]
        held = (state.w_pre[idx] >= HOLDING_INDICATOR_MIN).astype(float)
        m_vals[lo:hi] = (2.0 * omega_d[idx] - lam * u.alpha[idx]
                         - 2.0 * lam * TURNOVER_CREDIT * held)
        k_vals[lo:hi] = (budget + sector_term[lo:hi] + mcap_term[lo:hi]
                         + beta_net * u.beta[idx])

    if n_threads > 1 and outside.size > 1:
        chunk = -(-outside.size // n_threads)
        spans = [(lo, min(lo + chunk, outside.size))
                 for lo in range(0, outside.size, chunk)]
        with ThreadPoolExecutor(max_workers=n_threads) as pool:
            list(pool.map(lambda s: price_chunk(*s), spans))
    else:
        price_chunk(0, outside.size)

    records = [MarginalRecord(asset=u.ids[i], index=int(i), m=float(m_vals[j]),
                              k=float(k_vals[j]), delta=float(m_vals[j] - k_vals[j]))
               for j, i in enumerate(outside)]
    records.sort(key=lambda r: (r.delta, r.asset))
    return MarginalReport(records=tuple(records))


def enforce_active_share_budget(state: CandidateState, u: AssetUniverse,
                                rng: np.random.Generator, budget: float = 0.4,
                                protected: frozenset = frozenset()) -> CandidateState:
    """Randomly deselect candidates until their benchmark mass is within budget.

    Keeping the candidate benchmark mass at or below ``budget`` guarantees the
    total-absolute-deviation floor 2*(1 - budget) for every feasible master
    solution. Assets in ``protected`` are never deselected; if only protected
    candidates remain above budget the loop stops (callers see the mass).
    """
    C = list(state.C)
    mass = float(u.bench[C].sum())
    while mass > budget:
        removable = [i for i in C if i not in protected]
        if not removable:
            break
        pick = removable[int(rng.integers(len(removable)))]
        C.remove(pick)
        mass -= float(u.bench[pick])
    return state.with_candidates(C)


def drop_candidates(state: CandidateState, w_full: np.ndarray, threshold: float = 1e-5,
                    protected: frozenset = frozenset()) -> CandidateState:
    """Remove the lowest-weight candidate plus every candidate below threshold."""
    C = list(state.C)
    if not C:
        return state
    w = np.asarray(w_full, dtype=float)
    droppable = [i for i in C if i not in protected]
    keep = set(C)
    if droppable:
        argmin = min(droppable, key=lambda i: (w[i], i))  # index breaks weight ties
        keep.discard(argmin)
    for i in droppable:
        if w[i] < threshold:
            keep.discard(i)
    if not keep:
        keep = {max(droppable, key=lambda i: (w[i], -i))}
    return state.with_candidates(keep)


def refill_candidates(state: CandidateState, report: MarginalReport, card_target: int,
                      *, u: AssetUniverse | None = None, as_budget: float | None = None,
                      prev_removed: frozenset | None = None,
                      rng: np.random.Generator | None = None) -> CandidateState:
    """Top the candidate set back up to card_target with best-delta assets.

    Entries whose benchmark weight would push the candidate benchmark mass
    above ``as_budget`` are skipped. If the refilled state reproduces
    ``prev_removed`` exactly (a stall), the selection is redone at random.
    """
    if len(state.C) > card_target:
        raise ValueError(f"|C|={len(state.C)} already exceeds target {card_target}")
    need = card_target - len(state.C)
    if need == 0:
        return state

    in_c = set(state.C)
    mass = float(u.bench[list(state.C)].sum()) if (u is not None and state.C) else 0.0

    def admissible(i: int, mass_now: float) -> bool:
        if i in in_c:
            return False
        if as_budget is not None and u is not None:
            return mass_now + float(u.bench[i]) <= as_budget + 1e-12
        return True

    chosen: list[int] = []
    for rec in report:
        if len(chosen) == need:
            break
        if admissible(rec.index, mass):
            chosen.append(rec.index)
            in_c.add(rec.index)
            if u is not None:
                mass += float(u.bench[rec.index])

    new_state = state.with_candidates(set(state.C) | set(chosen))

    if prev_removed is not None and new_state.removed == prev_removed and rng is not None:
        pool = [rec.index for rec in report if rec.index not in set(state.C)]
        mass = float(u.bench[list(state.C)].sum()) if (u is not None and state.C) else 0.0
        in_c = set(state.C)
        chosen = []
        while pool and len(chosen) < need:
            pick = pool.pop(int(rng.integers(len(pool))))
            if admissible(pick, mass):
                chosen.append(pick)
                in_c.add(pick)
                if u is not None:
                    mass += float(u.bench[pick])
        new_state = state.with_candidates(set(state.C) | set(chosen))
    return new_state
