"""Column-generation heuristic for cardinality-constrained, benchmark-relative
mean-variance portfolios, with a dense QP interior-point core, an exact
small-instance oracle, and a turnover-aware multi-period backtester."""

from .backtest import (BacktestConfig, BacktestLedger, PerformanceReport,
                       performance_metrics, pre_rebalance_weights, run_backtest,
                       turnover)
from .data import (MarketData, SyntheticSpec, generate_synthetic, parse_universe,
                   synthesize_market)
from .engine import EngineConfig, PeriodResult, PeriodStatus, adjust_lambda, \
    run_period, score_solution
from .model import (AssetUniverse, Bounds, MasterProblem, PortfolioVec,
                    active_share, build_master, total_abs_deviation)
from .oracle import ExactResult, enumerate_exact, perturbed_resolve
from .pricing import (CandidateState, MarginalReport, enforce_active_share_budget,
                      indirect_effect, marginal_direct_effect, marginal_effects,
                      refill_candidates)
from .qp import (KktResiduals, QpSolution, QuadraticProgram, SolverStatus,
                 kkt_residuals, solve_qp)

__version__ = "0.1.0"

__all__ = [
    "AssetUniverse", "BacktestConfig", "BacktestLedger", "Bounds",
    "CandidateState", "EngineConfig", "ExactResult", "KktResiduals",
    "MarginalReport", "MarketData", "MasterProblem", "PerformanceReport",
    "PeriodResult", "PeriodStatus", "PortfolioVec", "QpSolution",
    "QuadraticProgram", "SolverStatus", "SyntheticSpec", "active_share",
    "adjust_lambda", "build_master", "enforce_active_share_budget",
    "enumerate_exact", "generate_synthetic", "indirect_effect", "kkt_residuals",
    "marginal_direct_effect", "marginal_effects", "parse_universe",
    "performance_metrics", "perturbed_resolve", "pre_rebalance_weights",
    "refill_candidates", "run_backtest", "run_period", "score_solution",
    "solve_qp", "synthesize_market", "total_abs_deviation", "turnover",
]
