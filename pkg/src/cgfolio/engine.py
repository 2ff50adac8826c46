"""One review period of the column-generation loop.

Each iteration enforces the candidate benchmark-mass budget, solves the
restricted master, steers the risk parameter against the tracking-error
band, scores in-band solutions with the fixed scoring parameter plus a
turnover penalty, and churns the candidate set (drop lowest weight and
sub-threshold holdings, refill by best marginal effect, random refill on a
stall) until the wall clock or the iteration cap runs out.
"""

from __future__ import annotations

import enum
import json
import logging
import time
from dataclasses import dataclass, replace

import numpy as np

from .errors import InfeasibleByConstruction
from .model import AssetUniverse, Bounds, DEFAULT_BOUNDS, PortfolioVec, build_master
from .pricing import (
    CandidateState,
    drop_candidates,
    enforce_active_share_budget,
    marginal_effects,
    refill_candidates,
)
from .qp import SolverStatus, solve_qp

__all__ = ["EngineConfig", "PeriodResult", "PeriodStatus", "AcceptedRecord",
           "adjust_lambda", "score_solution", "run_period"]

logger = logging.getLogger(__name__)

LAMBDA_CLAMP = (1e-6, 1e6)
MAX_CONSECUTIVE_INFEASIBLE = 25


class PeriodStatus(enum.Enum):
    OK = "Ok"
    TIME_LIMIT_NO_FEASIBLE_TE = "TimeLimitNoFeasibleTe"
    MASTER_INFEASIBLE = "MasterInfeasible"

    def __str__(self) -> str:  # pragma: no cover - cosmetic
        return self.value


@dataclass(frozen=True)
class EngineConfig:
    time_limit_s: float = 170.0
    lambda0: float = 5.0
    lambda_bar: float = 5.0
    te_min: float = 0.05
    te_max: float = 0.1
    card_target: int = 70
    card_min: int = 50
    drop_threshold: float = 1e-5
    turnover_eps: float | None = None   # defaults to 1e-3 * lambda_bar
    as_budget: float = 0.4
    seed: int = 0
    # deterministic stop: wall-clock loops cannot reproduce bit-identical
    # runs, so ledger-producing callers bound iterations instead
    max_iterations: int | None = None
    score_challenger_vs_benchmark: bool = False
    pricing_threads: int = 1
    qp_tol: float = 1e-8
    qp_max_iter: int = 200
    bounds: Bounds = DEFAULT_BOUNDS

    def __post_init__(self):
        if not (0 < self.te_min < self.te_max):
            raise ValueError("need 0 < te_min < te_max")
        if self.card_min > self.card_target:
            raise ValueError("card_min must not exceed card_target")
        for name in ("time_limit_s", "lambda0", "lambda_bar", "drop_threshold",
                     "as_budget", "qp_tol"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.turnover_eps is None:
            object.__setattr__(self, "turnover_eps", 1e-3 * self.lambda_bar)


@dataclass(frozen=True)
class AcceptedRecord:
    iteration: int
    score: float
    te: float
    total_abs_dev: float
    n_active: int


@dataclass
class PeriodResult:
    w_best: np.ndarray | None
    d_best: np.ndarray | None
    score_best: float
    te_best: float
    objective_best: float
    lambda_final: float
    iterations: int
    lambda_trace: tuple
    status: PeriodStatus
    accepted: tuple = ()
    candidates_final: tuple = ()
    n_infeasible: int = 0

    def summary(self) -> dict:
        return {
            "status": str(self.status),
            "iterations": self.iterations,
            "score_best": self.score_best,
            "te_best": self.te_best,
            "objective_best": self.objective_best,
            "lambda_final": self.lambda_final,
            "n_active": int(np.sum(self.w_best > 1e-12)) if self.w_best is not None else 0,
            "n_infeasible": self.n_infeasible,
        }


def adjust_lambda(lam: float, te: float, cfg: EngineConfig) -> float:
    """Scale the risk parameter by 0.9 below the band, by 1.1 above it."""
    if lam <= 0:
        raise ValueError("lambda must be positive")
    if te < cfg.te_min:
        return 0.9 * lam
    if te > cfg.te_max:
        return 1.1 * lam
    return lam


def score_solution(w, u: AssetUniverse, w_pre: np.ndarray, cfg: EngineConfig) -> float:
    """Objective at the fixed scoring risk parameter plus the turnover penalty.

    Uses lambda_bar rather than the adjusted lambda so scores are comparable
    across iterations with different risk parameters.
    """
    wv = w.w if isinstance(w, PortfolioVec) else np.asarray(w, dtype=float).ravel()
    d = wv - u.bench
    base = float(d @ u.omega @ d - cfg.lambda_bar * (u.alpha @ d))
    turn = float(np.abs(wv - np.asarray(w_pre, dtype=float)).sum())
    return base + cfg.turnover_eps * turn


def _initial_candidates(u: AssetUniverse, w_pre: np.ndarray, cfg: EngineConfig,
                        pinned: frozenset, rng: np.random.Generator) -> tuple:
    """Previous holdings plus pinned assets, padded to the candidate target.

    On the first period (no prior holdings) the set is built from scratch
    with group-coverage minima and a benchmark mass within the active-share
    budget, so the first master is feasible by construction.
    """
    target = min(cfg.card_target, u.n)
    support = set(np.flatnonzero(w_pre > cfg.drop_threshold).tolist())
    if not support:
        return tuple(sorted(_covering_reshuffle(u, cfg, pinned, rng)))
    C = support | set(pinned)
    if len(C) > target:
        extras = sorted(C - pinned, key=lambda i: (u.bench[i], i))
        while len(C) > target and extras:
            C.discard(extras.pop(0))
    if len(C) < target:
        # prior holdings that left the market are replaced at random, staying
        # within the candidate mass budget
        mass = float(u.bench[sorted(C)].sum())
        pool = np.array(sorted(set(range(u.n)) - C), dtype=int)
        for i in rng.choice(pool, size=pool.size, replace=False) if pool.size else []:
            if len(C) >= target:
                break
            if mass + float(u.bench[int(i)]) <= cfg.as_budget:
                C.add(int(i))
                mass += float(u.bench[int(i)])
    return tuple(sorted(C))


def _coverage_groups(u: AssetUniverse, bounds: Bounds) -> list:
    groups = []
    for q in range(1, 6):
        members = u.mcapq_members(q)
        if members.size:
            groups.append((members, bounds.mcapq))
    for sec in u.sector_ids:
        groups.append((u.sector_members(sec), bounds.sector))
    return groups


def _group_ok(u: AssetUniverse, members: np.ndarray, bound: float, C: set,
              dev: float, margin: float) -> bool:
    """Fixed mass left outside a group must be offsettable by its candidates."""
    outside_mass = float(sum(u.bench[int(i)] for i in members if int(i) not in C))
    inside = sum(1 for i in members if int(i) in C)
    return outside_mass <= bound + dev * inside - margin


def _budget_reachable(u: AssetUniverse, C: set, bounds: Bounds, margin: float) -> bool:
    """Candidate capacity must reach the full budget.

    Each candidate adds at most the deviation bound, and each quintile or
    sector additionally caps its candidates' joint overweight at its band
    plus the group's fixed outside mass.
    """
    need = 1.0 - float(u.bench[sorted(C)].sum())
    partitions = (
        [(u.mcapq_members(q), bounds.mcapq) for q in range(1, 6)],
        [(u.sector_members(s), bounds.sector) for s in u.sector_ids],
    )
    for partition in partitions:
        cap = 0.0
        for members, bound in partition:
            if members.size == 0:
                continue
            inside = sum(1 for i in members if int(i) in C)
            outside_mass = float(sum(u.bench[int(i)] for i in members
                                     if int(i) not in C))
            cap += min(bounds.dev * inside, bound + outside_mass)
        if cap < need + margin:
            return False
    return True


def _shake(state: CandidateState, u: AssetUniverse, cfg: EngineConfig,
           pinned: frozenset, rng: np.random.Generator) -> CandidateState:
    """Swap one random non-pinned candidate for a random admissible outsider,
    keeping every group's coverage and the budget reachability intact."""
    dev = cfg.bounds.dev
    margin = 0.2 * dev
    groups = _coverage_groups(u, cfg.bounds)
    C = set(state.C)

    def coverage_ok() -> bool:
        if not _budget_reachable(u, C, cfg.bounds, margin):
            return False
        return all(_group_ok(u, m, b, C, dev, margin) for m, b in groups)

    swappable = sorted(C - pinned)
    if not swappable:
        return state
    rng.shuffle(swappable)
    for out in swappable:
        mass = float(u.bench[sorted(C)].sum()) - float(u.bench[out])
        pool = [i for i in sorted(set(range(u.n)) - C)
                if mass + float(u.bench[i]) <= cfg.as_budget + 1e-12]
        if not pool:
            continue
        incoming = pool[int(rng.integers(len(pool)))]
        C.discard(out)
        C.add(incoming)
        if coverage_ok():
            return state.with_candidates(C)
        C.discard(incoming)
        C.add(out)
    return state


def _repair_candidates(state: CandidateState, last_feasible: tuple | None,
                       u: AssetUniverse, cfg: EngineConfig, pinned: frozenset,
                       rng: np.random.Generator, starved: tuple | None = None,
                       fail_streak: int = 1) -> CandidateState:
    """Escape an infeasible master.

    First attempts: when the violated row is known (``starved`` = (kind,
    key)), swap random members of the starved group in for random non-pinned
    candidates outside it; without a tag, restore the last feasible set with
    one random swap. After repeated failures, rebuild the candidate set from
    scratch with group-proportional coverage.
    """
    n = u.n
    C = set(state.C)

    if fail_streak >= 3:
        return state.with_candidates(_covering_reshuffle(u, cfg, pinned, rng))

    if starved is not None:
        kind, key = starved
        if kind in ("Sector", "SectorUB", "SectorLB"):
            members = u.sector_members(key)
        elif kind in ("Mcap", "McapUB", "McapLB"):
            members = u.mcapq_members(int(key))
        else:
            members = np.array([int(key)]) if key is not None else np.zeros(0, dtype=int)
        missing = [int(i) for i in members if int(i) not in C]
        removable = sorted(C - pinned - set(int(i) for i in members))
        swaps = min(3, len(missing), len(removable))
        if swaps > 0:
            add = rng.choice(np.array(missing), size=swaps, replace=False)
            out = rng.choice(np.array(removable), size=swaps, replace=False)
            C |= set(int(i) for i in add)
            C -= set(int(i) for i in out)
            return state.with_candidates(C)

    if last_feasible:
        C = set(last_feasible)
        swappable = sorted(C - pinned)
        outside = sorted(set(range(n)) - C)
        if swappable and outside:
            C.discard(swappable[int(rng.integers(len(swappable)))])
            C.add(outside[int(rng.integers(len(outside)))])
        return state.with_candidates(C)
    return state.with_candidates(_covering_reshuffle(u, cfg, pinned, rng))


def _covering_reshuffle(u: AssetUniverse, cfg: EngineConfig, pinned: frozenset,
                        rng: np.random.Generator) -> set:
    """Random candidate set with enough capacity in every heavy group.

    Each quintile or sector whose outside benchmark mass could breach its
    band gets at least ceil(excess / dev) members, since one candidate can
    offset at most the deviation bound. Remaining slots are filled at
    random; heavy picks are then swapped for lighter names (never below a
    group's minimum count) until the candidate mass fits the active-share
    budget, so the budget enforcement at the next loop top stays a no-op.
    """
    target = min(cfg.card_target, u.n)
    dev = cfg.bounds.dev
    margin = 0.2 * dev
    groups = _coverage_groups(u, cfg.bounds)
    C = set(int(i) for i in pinned)

    # moving a member inside relieves its own fixed mass and adds capacity,
    # so heaviest-first satisfies each group with the fewest slots
    for members, bound in groups:
        ranked = sorted((int(i) for i in members), key=lambda i: (-u.bench[i], i))
        for i in ranked:
            if _group_ok(u, members, bound, C, dev, margin):
                break
            C.add(i)

    # budget reachability: total candidate weight capacity must cover 1,
    # with each quintile's and sector's band capping its joint overweight
    all_ranked = sorted(range(u.n), key=lambda i: (-u.bench[i], i))
    for i in all_ranked:
        if _budget_reachable(u, C, cfg.bounds, margin):
            break
        C.add(int(i))

    # pad toward the target, but never past the mass budget: a short candidate
    # set stays feasible and the budget-aware refill grows it afterwards
    mass = float(u.bench[sorted(C)].sum())
    if len(C) < target:
        pool = np.array(sorted(set(range(u.n)) - C), dtype=int)
        if pool.size:
            weights = 1.0 / (u.bench[pool] + 1e-6)
            order = rng.choice(pool, size=pool.size, replace=False,
                               p=weights / weights.sum())
            for i in order:
                if len(C) >= target:
                    break
                if mass + float(u.bench[int(i)]) <= cfg.as_budget:
                    C.add(int(i))
                    mass += float(u.bench[int(i)])

    # swap heavy picks for lighter outside names while every group and the
    # budget reachability stay satisfied, until the mass fits the budget
    def all_ok() -> bool:
        if not _budget_reachable(u, C, cfg.bounds, margin):
            return False
        return all(_group_ok(u, m, b, C, dev, margin) for m, b in groups)

    mass = float(u.bench[sorted(C)].sum())
    for heavy in sorted(C, key=lambda i: (-u.bench[i], i)):
        if mass <= cfg.as_budget:
            break
        if heavy in pinned:
            continue
        light = [int(i) for i in range(u.n) if int(i) not in C
                 and u.bench[int(i)] < u.bench[heavy]]
        if not light:
            continue
        pick = min(light, key=lambda i: (u.bench[i], i))
        C.discard(heavy)
        C.add(pick)
        if all_ok():
            mass += float(u.bench[pick] - u.bench[heavy])
        else:
            C.discard(pick)
            C.add(heavy)
    return C


def run_period(u: AssetUniverse, prev_w, cfg: EngineConfig,
               log_stream=None) -> PeriodResult:
    """Run the column-generation loop for one review period.

    ``prev_w`` carries the drifted previous weights over the current
    universe (zeros / None on the first period): its support seeds the
    candidate set and its values feed the turnover penalty.
    """
    if isinstance(prev_w, PortfolioVec):
        w_pre = prev_w.w
    elif prev_w is None:
        w_pre = np.zeros(u.n)
    else:
        w_pre = np.asarray(prev_w, dtype=float).ravel()
    if w_pre.shape[0] != u.n:
        raise ValueError(f"prev_w has length {w_pre.shape[0]}, expected {u.n}")

    rng = np.random.default_rng(cfg.seed)
    pinned = frozenset(int(i) for i in np.flatnonzero(u.bench > cfg.bounds.dev + 1e-12))
    if len(pinned) > cfg.card_target:
        logger.warning("%d assets exceed the deviation bound but only %d candidate "
                       "slots exist; no feasible master can satisfy the cardinality "
                       "target", len(pinned), cfg.card_target)
        return PeriodResult(w_best=None, d_best=None, score_best=np.nan, te_best=np.nan,
                            objective_best=np.nan, lambda_final=cfg.lambda0, iterations=0,
                            lambda_trace=(), status=PeriodStatus.MASTER_INFEASIBLE)

    C0 = _initial_candidates(u, w_pre, cfg, pinned, rng)
    state = CandidateState(C=C0, removed=frozenset(range(u.n)) - set(C0),
                           w_pre=w_pre, lam=cfg.lambda0, lambda_bar=cfg.lambda_bar,
                           rng_seed=cfg.seed)

    best: dict | None = None
    last: dict | None = None
    trace: list = []
    accepted: list = []
    visited: set = set()
    n_infeasible = 0
    fail_streak = 0
    last_feasible: tuple | None = None
    it = 0
    t0 = time.monotonic()

    def emit(entry: dict) -> None:
        if log_stream is not None:
            log_stream.write(json.dumps(entry, sort_keys=True) + "\n")

    while True:
        if it > 0:
            if time.monotonic() - t0 > cfg.time_limit_s:
                break
            if cfg.max_iterations is not None and it >= cfg.max_iterations:
                break
        it += 1

        state = enforce_active_share_budget(state, u, rng, cfg.as_budget, protected=pinned)
        sol = None
        mp = None
        starved = None
        try:
            mp = build_master(u, state.C, state.lam, cfg.bounds)
            sol = solve_qp(mp.qp, tol=cfg.qp_tol, max_iter=cfg.qp_max_iter)
        except InfeasibleByConstruction as exc:
            logger.debug("iteration %d infeasible by construction: %s", it, exc)
            if exc.row_kind is not None:
                starved = (exc.row_kind, exc.row_key)

        if sol is None or sol.status is not SolverStatus.OPTIMAL:
            n_infeasible += 1
            fail_streak += 1
            emit({"iteration": it, "lambda": state.lam, "te": None, "objective": None,
                  "score": None, "n_candidates": len(state.C),
                  "wall_time_s": time.monotonic() - t0, "event": "infeasible"})
            if fail_streak >= MAX_CONSECUTIVE_INFEASIBLE:
                break
            state = _repair_candidates(state, last_feasible, u, cfg, pinned, rng,
                                       starved, fail_streak)
            continue

        fail_streak = 0
        last_feasible = state.C
        visited.add(frozenset(state.C))
        d = mp.full_deviation(sol.x)
        w = np.maximum(mp.full_weights(sol.x), 0.0)
        te = float(np.sqrt(max(d @ u.omega @ d, 0.0)))
        score = score_solution(w, u, w_pre, cfg)
        obj_bar = mp.objective_full(d, lam=cfg.lambda_bar)
        last = {"w": w, "d": d, "te": te, "score": score, "obj": obj_bar, "it": it}
        trace.append((it, state.lam, te))
        emit({"iteration": it, "lambda": state.lam, "te": te, "objective": sol.objective,
              "score": score, "n_candidates": len(state.C),
              "wall_time_s": time.monotonic() - t0})

        if te < cfg.te_min or te > cfg.te_max:
            new_lam = float(np.clip(adjust_lambda(state.lam, te, cfg), *LAMBDA_CLAMP))
            state = replace(state, lam=new_lam)
            continue

        if _accepts(best, w, score, u, w_pre, cfg):
            tad = float(np.abs(d).sum())
            best = dict(last)
            accepted.append(AcceptedRecord(iteration=it, score=score, te=te,
                                           total_abs_dev=tad,
                                           n_active=int(np.sum(w > cfg.drop_threshold))))

        old_removed = state.removed
        state = drop_candidates(state, w, cfg.drop_threshold, protected=pinned)
        report = marginal_effects(mp, sol, u, state, n_threads=cfg.pricing_threads)
        target = min(cfg.card_target, u.n)
        if len(state.C) <= target:
            state = refill_candidates(state, report, target, u=u,
                                      as_budget=cfg.as_budget,
                                      prev_removed=old_removed, rng=rng)
        if frozenset(state.C) in visited:
            # argmin-only drops can orbit one sticky candidate on small
            # instances; a seeded random swap restores exploration
            state = _shake(state, u, cfg, pinned, rng)

    if best is not None:
        status = PeriodStatus.OK
        chosen = best
    elif last is not None:
        status = PeriodStatus.TIME_LIMIT_NO_FEASIBLE_TE
        chosen = last
    else:
        status = PeriodStatus.MASTER_INFEASIBLE
        chosen = None

    if chosen is not None:
        n_active = int(np.sum(chosen["w"] > cfg.drop_threshold))
        if n_active < cfg.card_min:
            logger.warning("period solution holds %d assets, below the cardinality "
                           "floor %d", n_active, cfg.card_min)
        return PeriodResult(
            w_best=chosen["w"], d_best=chosen["d"], score_best=chosen["score"],
            te_best=chosen["te"], objective_best=chosen["obj"],
            lambda_final=state.lam, iterations=it, lambda_trace=tuple(trace),
            status=status, accepted=tuple(accepted), candidates_final=state.C,
            n_infeasible=n_infeasible)
    return PeriodResult(w_best=None, d_best=None, score_best=np.nan, te_best=np.nan,
                        objective_best=np.nan, lambda_final=state.lam, iterations=it,
                        lambda_trace=tuple(trace), status=status,
                        candidates_final=state.C, n_infeasible=n_infeasible)


def _accepts(best: dict | None, w: np.ndarray, score: float, u: AssetUniverse,
             w_pre: np.ndarray, cfg: EngineConfig) -> bool:
    if best is None:
        return True
    if not cfg.score_challenger_vs_benchmark:
        return score < best["score"]
    # asymmetric variant: the challenger's turnover is charged against the
    # benchmark while the incumbent keeps the drifted-weights charge
    d = w - u.bench
    challenger = (float(d @ u.omega @ d - cfg.lambda_bar * (u.alpha @ d))
                  + cfg.turnover_eps * float(np.abs(d).sum()))
    return challenger < best["score"]
