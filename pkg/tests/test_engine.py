import io
import json
import time

import numpy as np
import pytest

from cgfolio.engine import (
    EngineConfig,
    PeriodStatus,
    adjust_lambda,
    run_period,
    score_solution,
)
from cgfolio.model import AssetUniverse, build_master
from cgfolio.qp import SolverStatus, solve_qp
from universes import inband_universe, make_universe


def small_cfg(**kw):
    base = dict(time_limit_s=170.0, max_iterations=8, card_target=70, seed=0)
    base.update(kw)
    return EngineConfig(**base)


# ---------------------------------------------------------------------------
# adjust_lambda / score_solution
# ---------------------------------------------------------------------------

def test_adjust_lambda_band_rules():
    cfg = EngineConfig()
    assert adjust_lambda(5.0, 0.03, cfg) == pytest.approx(4.5)
    assert adjust_lambda(5.0, 0.12, cfg) == pytest.approx(5.5)
    assert adjust_lambda(5.0, 0.07, cfg) == 5.0


def test_adjust_lambda_rejects_nonpositive():
    with pytest.raises(ValueError):
        adjust_lambda(0.0, 0.07, EngineConfig())


def test_score_zero_for_benchmark_holding():
    u = make_universe(5, seed=1)
    cfg = EngineConfig()
    assert score_solution(u.bench, u, u.bench, cfg) == pytest.approx(0.0, abs=1e-15)


def test_score_turnover_term_only():
    u = make_universe(5, seed=2)
    cfg = EngineConfig()
    w = u.bench.copy()           # d = 0 kills the objective part
    w_pre = u.bench.copy()
    w_pre[0] += 0.2
    w_pre[1] -= 0.2              # turnover = 0.4
    assert score_solution(w, u, w_pre, cfg) == pytest.approx(1e-3 * 5.0 * 0.4)


def test_score_equals_master_objective_plus_penalty():
    bench = np.array([0.30, 0.28, 0.26, 0.12, 0.04])
    u = make_universe(5, seed=3, bench=bench)
    lam = 5.0
    mp = build_master(u, [0, 1, 2, 3], lam)
    sol = solve_qp(mp.qp)
    assert sol.status is SolverStatus.OPTIMAL
    w = mp.full_weights(sol.x)
    w_pre = np.zeros(5)
    cfg = EngineConfig(lambda0=lam, lambda_bar=lam)
    expected = sol.objective + cfg.turnover_eps * np.abs(w - w_pre).sum()
    assert score_solution(w, u, w_pre, cfg) == pytest.approx(expected, rel=1e-9)


# ---------------------------------------------------------------------------
# run_period
# ---------------------------------------------------------------------------

def test_run_period_finds_in_band_solution():
    u = inband_universe(60, seed=4)
    res = run_period(u, None, small_cfg(card_target=30, card_min=10))
    assert res.status is PeriodStatus.OK
    assert 0.05 <= res.te_best <= 0.1
    assert int(np.sum(res.w_best > 1e-5)) <= 30
    assert res.w_best.sum() == pytest.approx(1.0, abs=1e-6)
    assert np.all(res.w_best >= -1e-9)


def test_run_period_zero_time_limit_single_iteration():
    u = inband_universe(50, seed=5)
    res = run_period(u, None, small_cfg(time_limit_s=0.0, max_iterations=None,
                                        card_target=25, card_min=5))
    assert res.iterations == 1


def test_run_period_deterministic_for_fixed_seed():
    u = inband_universe(80, seed=6)
    cfg = small_cfg(card_target=35, card_min=10, max_iterations=6, seed=11)
    r1 = run_period(u, None, cfg)
    r2 = run_period(u, None, cfg)
    assert r1.status == r2.status
    assert np.array_equal(r1.w_best, r2.w_best)
    assert r1.lambda_trace == r2.lambda_trace
    assert r1.score_best == r2.score_best
    assert r1.accepted == r2.accepted


def test_run_period_deterministic_across_pricing_threads():
    u = inband_universe(80, seed=7)
    r1 = run_period(u, None, small_cfg(card_target=35, card_min=10, max_iterations=6,
                                       seed=3, pricing_threads=1))
    r4 = run_period(u, None, small_cfg(card_target=35, card_min=10, max_iterations=6,
                                       seed=3, pricing_threads=4))
    assert np.array_equal(r1.w_best, r4.w_best)
    assert r1.lambda_trace == r4.lambda_trace


def test_lambda_trace_moves_by_exact_factors():
    # low-vol universe sits below the band, so lambda shrinks by 0.9 steps
    u = inband_universe(60, seed=8, idio_vol=0.18, factor_vol=0.04)
    res = run_period(u, None, small_cfg(card_target=30, card_min=5, max_iterations=10))
    assert res.status is PeriodStatus.TIME_LIMIT_NO_FEASIBLE_TE
    lams = [lam for _, lam, _ in res.lambda_trace]
    assert len(lams) >= 3
    for prev, cur in zip(lams, lams[1:]):
        ratio = cur / prev
        assert min(abs(ratio - r) for r in (0.9, 1.0, 1.1)) < 1e-12


def test_accepted_scores_non_increasing():
    u = inband_universe(70, seed=9)
    res = run_period(u, None, small_cfg(card_target=30, card_min=5, max_iterations=12))
    scores = [a.score for a in res.accepted]
    assert scores, "expected at least one accepted solution"
    assert all(b < a for a, b in zip(scores, scores[1:]))
    assert res.score_best == scores[-1]


def test_master_infeasible_when_pinned_exceed_cardinality():
    # every asset carries 1/6 benchmark weight, far above the 0.05 bound
    u = AssetUniverse(ids=tuple("ABCDEF"), alpha=np.zeros(6), beta=np.ones(6),
                      sector=("S",) * 6, mcapq=(3,) * 6, bench=np.full(6, 1 / 6),
                      omega=np.eye(6) * 0.01)
    res = run_period(u, None, small_cfg(card_target=3, card_min=1))
    assert res.status is PeriodStatus.MASTER_INFEASIBLE
    assert res.w_best is None


def test_wall_clock_budget_respected():
    u = inband_universe(150, seed=10)
    cfg = small_cfg(card_target=60, card_min=10, max_iterations=None, time_limit_s=0.5)
    t0 = time.monotonic()
    res = run_period(u, None, cfg)
    elapsed = time.monotonic() - t0
    assert elapsed < 0.5 + 2.0  # budget plus one master solve and slack
    assert res.iterations >= 1


def test_iteration_log_is_json_lines():
    u = inband_universe(50, seed=12)
    stream = io.StringIO()
    res = run_period(u, None, small_cfg(card_target=25, card_min=5, max_iterations=4),
                     log_stream=stream)
    lines = [ln for ln in stream.getvalue().splitlines() if ln]
    assert len(lines) >= res.iterations
    for ln in lines:
        entry = json.loads(ln)
        assert {"iteration", "lambda", "te", "objective", "score",
                "n_candidates", "wall_time_s"} <= set(entry)


def test_previous_weights_seed_candidates():
    u = inband_universe(60, seed=13)
    cfg = small_cfg(card_target=30, card_min=5, max_iterations=4, seed=2)
    first = run_period(u, None, cfg)
    assert first.status is PeriodStatus.OK
    res = run_period(u, first.w_best, cfg)
    assert res.status is PeriodStatus.OK
    # a warm start from held names keeps turnover limited
    assert np.abs(res.w_best - first.w_best).sum() < 2.0


def test_config_validation():
    with pytest.raises(ValueError):
        EngineConfig(te_min=0.1, te_max=0.05)
    with pytest.raises(ValueError):
        EngineConfig(card_min=80, card_target=70)
    cfg = EngineConfig(lambda_bar=4.0)
    assert cfg.turnover_eps == pytest.approx(4e-3)
