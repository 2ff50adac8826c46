"""Multi-period backtest: roll the engine across review dates, drift weights
by realized returns, and compute turnover-adjusted performance metrics.

Conventions: each ledger row holds the weights chosen at a review date and
the return those weights earned over the following four weeks. Turnover is
charged at a flat rate per unit of L1 rebalancing against the drifted
previous weights; the first period is treated as a full buy-in from cash.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from .engine import EngineConfig, PeriodStatus, run_period
from .errors import AlignmentError, CgfolioError, DegeneratePortfolio
from .model import AssetUniverse

__all__ = [
    "BacktestConfig",
    "BacktestLedger",
    "PeriodRecord",
    "MetricSet",
    "PerformanceReport",
    "turnover",
    "pre_rebalance_weights",
    "run_backtest",
    "performance_metrics",
]

logger = logging.getLogger(__name__)

PLOT_CSV_COLUMNS = ("date", "gross_return", "net_return", "benchmark_return",
                    "turnover_cost")


@dataclass(frozen=True)
class BacktestConfig:
    engine: EngineConfig = field(default_factory=EngineConfig)
    turnover_cost_rate: float = 0.005
    periods_per_year: int = 13
    seed: int = 0

    def __post_init__(self):
        if self.turnover_cost_rate < 0:
            raise ValueError("turnover_cost_rate must be non-negative")
        if self.periods_per_year < 1:
            raise ValueError("periods_per_year must be positive")


def turnover(w, w_pre) -> float:
    """L1 distance between new weights and the drifted previous weights."""
    wv = np.asarray(w, dtype=float).ravel()
    pv = np.asarray(w_pre, dtype=float).ravel()
    if wv.shape != pv.shape:
        raise ValueError(f"length mismatch: {wv.shape[0]} vs {pv.shape[0]}")
    return float(np.abs(wv - pv).sum())


def pre_rebalance_weights(w_prev, r_prev) -> np.ndarray:
    """Drift weights by realized returns and renormalize to the simplex."""
    wv = np.asarray(w_prev, dtype=float).ravel()
    rv = np.asarray(r_prev, dtype=float).ravel()
    if wv.shape != rv.shape:
        raise ValueError(f"length mismatch: {wv.shape[0]} vs {rv.shape[0]}")
    grown = wv * (1.0 + rv)
    den = float(grown.sum())
    if den <= 0.0:
        raise DegeneratePortfolio(f"portfolio value collapsed: denominator {den:.3e}")
    return grown / den


@dataclass
class PeriodRecord:
    date: str
    weights: dict                  # id -> weight, nonzero entries only
    weights_pre: dict
    asset_returns: dict            # id -> realized 4-week return for the period
    gross_return: float
    benchmark_return: float
    turnover: float
    turnover_cost: float
    net_return: float
    te_ex_ante: float
    engine_status: str
    iterations: int
    score: float
    lambda_final: float
    n_active: int


@dataclass
class BacktestLedger:
    periods: list
    config: dict

    @property
    def dates(self) -> list:
        return [p.date for p in self.periods]

    def series(self, name: str) -> np.ndarray:
        return np.array([getattr(p, name) for p in self.periods], dtype=float)

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "periods": [dataclasses.asdict(p) for p in self.periods],
        }

    def to_json(self) -> str:
        return json.dumps(_jsonify(self.to_dict()), sort_keys=True,
                          separators=(",", ":"))

    def write_json(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_json())
            fh.write("\n")

    def write_plot_csv(self, path) -> None:
        """Per-period CSV with the series the report figures are drawn from."""
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(PLOT_CSV_COLUMNS)
            for p in self.periods:
                writer.writerow([p.date, repr(p.gross_return), repr(p.net_return),
                                 repr(p.benchmark_return), repr(p.turnover_cost)])

    def write_csv(self, path) -> None:
        """Full per-period ledger scalars."""
        cols = ("date", "gross_return", "net_return", "benchmark_return",
                "turnover", "turnover_cost", "te_ex_ante", "engine_status",
                "iterations", "score", "lambda_final", "n_active")
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(cols)
            for p in self.periods:
                writer.writerow([getattr(p, c) if isinstance(getattr(p, c), str)
                                 else repr(getattr(p, c)) if isinstance(getattr(p, c), float)
                                 else getattr(p, c) for c in cols])


@dataclass(frozen=True)
class MetricSet:
    cumulative_return: float
    annualized_return: float
    annualized_excess_return: float
    annualized_tracking_error: float
    sharpe_ratio: float
    information_ratio: float


@dataclass(frozen=True)
class PerformanceReport:
    gross: MetricSet
    net: MetricSet
    benchmark: MetricSet
    n_periods: int
    periods_per_year: int

    def to_dict(self) -> dict:
        return {
            "n_periods": self.n_periods,
            "periods_per_year": self.periods_per_year,
            "gross": dataclasses.asdict(self.gross),
            "net": dataclasses.asdict(self.net),
            "benchmark": dataclasses.asdict(self.benchmark),
        }

    def to_json(self) -> str:
        return json.dumps(_jsonify(self.to_dict()), sort_keys=True, indent=2)


def _jsonify(obj):
    """NaN/inf -> None so the serialization stays strict JSON."""
    if isinstance(obj, dict):
        return {k: _jsonify(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonify(v) for v in obj]
    if isinstance(obj, np.floating):
        obj = float(obj)
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def _cumulative(returns: np.ndarray) -> float:
    return float(np.prod(1.0 + returns) - 1.0)


def _annualized(cumulative: float, T: int, ppy: int) -> float:
    if T == 0:
        return float("nan")
    return float((1.0 + cumulative) ** (ppy / T) - 1.0)


def _stdev(x: np.ndarray) -> float:
    if x.size < 2:
        return float("nan")
    return float(np.std(x, ddof=1))


def _ratio(num: float, den: float) -> float:
    if not math.isfinite(den) or den == 0.0:
        return float("nan")
    return num / den


def _metric_set(returns: np.ndarray, bench: np.ndarray, ppy: int) -> MetricSet:
    T = returns.size
    cum = _cumulative(returns)
    ann = _annualized(cum, T, ppy)
    bench_ann = _annualized(_cumulative(bench), T, ppy)
    diff = returns - bench
    te = _stdev(diff) * math.sqrt(ppy)
    return MetricSet(
        cumulative_return=cum,
        annualized_return=ann,
        annualized_excess_return=ann - bench_ann,
        annualized_tracking_error=te,
        sharpe_ratio=_ratio(float(np.mean(returns)), _stdev(returns)),
        information_ratio=_ratio(float(np.mean(diff)), _stdev(diff)),
    )


def performance_metrics(ledger: BacktestLedger, periods_per_year: int = 13) -> PerformanceReport:
    """Cumulative/annualized returns, tracking error, Sharpe and information
    ratios, computed gross and net of turnover costs.

    Ratios with zero dispersion come back as NaN (serialized to null), never
    as an exception.
    """
    if not ledger.periods:
        raise ValueError("ledger has no periods")
    gross = ledger.series("gross_return")
    net = ledger.series("net_return")
    bench = ledger.series("benchmark_return")
    return PerformanceReport(
        gross=_metric_set(gross, bench, periods_per_year),
        net=_metric_set(net, bench, periods_per_year),
        benchmark=MetricSet(
            cumulative_return=_cumulative(bench),
            annualized_return=_annualized(_cumulative(bench), bench.size, periods_per_year),
            annualized_excess_return=0.0,
            annualized_tracking_error=0.0,
            sharpe_ratio=_ratio(float(np.mean(bench)), _stdev(bench)),
            information_ratio=float("nan"),
        ),
        n_periods=gross.size,
        periods_per_year=periods_per_year,
    )


def _sparse(ids: Sequence[str], w: np.ndarray, floor: float = 1e-12) -> dict:
    return {ids[i]: float(w[i]) for i in np.flatnonzero(np.abs(w) > floor)}


def run_backtest(universes: Sequence[AssetUniverse],
                 returns: Sequence[Mapping[str, float]],
                 cfg: BacktestConfig = BacktestConfig()) -> tuple:
    """Roll the engine over aligned (universe, forward-return) pairs.

    ``returns[k]`` maps asset id to the return earned over the four weeks
    after review date k, i.e. the payoff of the weights chosen at date k.
    Returns (BacktestLedger, PerformanceReport).
    """
    if len(universes) != len(returns):
        raise AlignmentError(
            f"{len(universes)} universes vs {len(returns)} return periods")
    if not universes:
        raise AlignmentError("empty backtest")

    records: list[PeriodRecord] = []
    prev_u: AssetUniverse | None = None
    prev_w: np.ndarray | None = None

    for k, (u, fwd) in enumerate(zip(universes, returns)):
        if k == 0:
            w_pre = np.zeros(u.n)
        else:
            r_prev = np.array([returns[k - 1].get(s, 0.0) for s in prev_u.ids])
            drifted = pre_rebalance_weights(prev_w, r_prev)
            w_pre = np.zeros(u.n)
            for j, s in enumerate(prev_u.ids):
                i = u.index_of.get(s)
                if i is None:
                    logger.info("asset %s left the market at %s; weight %.6f "
                                "re-deployed", s, u.date, drifted[j])
                else:
                    w_pre[i] = drifted[j]

        engine_cfg = replace(cfg.engine, seed=int(cfg.engine.seed + 100003 * (k + 1)))
        res = run_period(u, w_pre, engine_cfg)
        if res.status is PeriodStatus.MASTER_INFEASIBLE or res.w_best is None:
            raise CgfolioError(f"master infeasible at review date {u.date}")
        w = res.w_best

        missing = [s for s in np.array(u.ids)[np.flatnonzero(w > 1e-9)]
                   if s not in fwd]
        if missing:
            logger.warning("no forward return for held asset(s) %s at %s; "
                           "treated as zero", ", ".join(missing[:5]), u.date)
        r_vec = np.array([fwd.get(s, 0.0) for s in u.ids])
        gross = float(w @ r_vec)
        bench_ret = float(u.bench @ r_vec)
        turn = turnover(w, w_pre)
        cost = cfg.turnover_cost_rate * turn
        records.append(PeriodRecord(
            date=u.date, weights=_sparse(u.ids, w), weights_pre=_sparse(u.ids, w_pre),
            asset_returns={s: float(fwd.get(s, 0.0)) for s in u.ids},
            gross_return=gross, benchmark_return=bench_ret, turnover=turn,
            turnover_cost=cost, net_return=gross - cost, te_ex_ante=res.te_best,
            engine_status=str(res.status), iterations=res.iterations,
            score=res.score_best, lambda_final=res.lambda_final,
            n_active=int(np.sum(w > cfg.engine.drop_threshold))))
        prev_u, prev_w = u, w

    config_echo = _jsonify({
        "engine": dataclasses.asdict(cfg.engine),
        "turnover_cost_rate": cfg.turnover_cost_rate,
        "periods_per_year": cfg.periods_per_year,
        "seed": cfg.seed,
    })
    ledger = BacktestLedger(periods=records, config=config_echo)
    return ledger, performance_metrics(ledger, cfg.periods_per_year)
