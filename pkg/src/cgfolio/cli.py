"""Command-line interface.

Exit codes: 0 ok, 2 validation error, 3 infeasible, 4 time limit hit with no
in-band solution.
"""

from __future__ import annotations

import csv
import json
import logging
import subprocess
import sys
from pathlib import Path

import click
import numpy as np

from .backtest import BacktestConfig, run_backtest
from .data import SyntheticSpec, generate_synthetic, parse_universe
from .engine import EngineConfig, PeriodStatus, run_period
from .errors import CgfolioError, InfeasibleByConstruction, TooLarge, ValidationError
from .model import total_abs_deviation
from .oracle import enumerate_exact
from .qp import SolverStatus, solve_qp

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_INFEASIBLE = 3
EXIT_NO_FEASIBLE_TE = 4


def _parse_te_band(value: str) -> tuple:
    try:
        lo, hi = value.split(":")
        return float(lo), float(hi)
    except ValueError:
        raise click.BadParameter("expected LO:HI, e.g. 0.05:0.1")


def _load_market(data_dir: str):
    try:
        return parse_universe(data_dir)
    except CgfolioError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_VALIDATION)


@click.group()
@click.option("--verbose", is_flag=True, help="Log at INFO level.")
def main(verbose):
    """Cardinality-constrained benchmark-relative portfolio toolkit."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")


@main.command()
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--n-assets", default=200, show_default=True)
@click.option("--n-sectors", default=10, show_default=True)
@click.option("--n-factors", default=4, show_default=True)
@click.option("--n-periods", default=12, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--bench-concentration", default=8.0, show_default=True)
def gen(out_dir, n_assets, n_sectors, n_factors, n_periods, seed, bench_concentration):
    """Write a reproducible synthetic dataset."""
    try:
        spec = SyntheticSpec(n_assets=n_assets, n_sectors=n_sectors,
                             n_factors=n_factors, n_periods=n_periods, seed=seed,
                             bench_concentration=bench_concentration)
    except ValidationError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_VALIDATION)
    out = generate_synthetic(spec, out_dir)
    click.echo(f"wrote {n_periods} review dates for {n_assets} assets to {out}")


@main.command()
@click.option("--data-dir", required=True, type=click.Path(exists=True))
@click.option("--date", default=None, help="Review date (ISO); first date if omitted.")
@click.option("--time-limit", default=170.0, show_default=True)
@click.option("--lambda0", default=5.0, show_default=True)
@click.option("--te-band", default="0.05:0.1", show_default=True,
              help="Tracking-error band LO:HI.")
@click.option("--card", default=70, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--max-iters", default=None, type=int,
              help="Deterministic iteration cap (reproducible runs).")
@click.option("--log-file", default=None, type=click.Path(),
              help="Write per-iteration JSON lines here.")
def solve(data_dir, date, time_limit, lambda0, te_band, card, seed, max_iters, log_file):
    """Optimize one review period and print the result summary."""
    market = _load_market(data_dir)
    dates = [u.date for u in market.universes]
    if date is None:
        date = dates[0]
    if date not in dates:
        click.echo(f"error: no universe for {date}; have {dates[0]}..{dates[-1]}", err=True)
        sys.exit(EXIT_VALIDATION)
    u = market.universes[dates.index(date)]
    te_min, te_max = _parse_te_band(te_band)
    cfg = EngineConfig(time_limit_s=time_limit, lambda0=lambda0, te_min=te_min,
                       te_max=te_max, card_target=card,
                       card_min=min(50, card), seed=seed, max_iterations=max_iters)
    stream = open(log_file, "w") if log_file else None
    try:
        res = run_period(u, None, cfg, log_stream=stream)
    finally:
        if stream:
            stream.close()
    out = res.summary()
    out["date"] = date
    if res.w_best is not None:
        out["total_abs_deviation"] = total_abs_deviation(res.w_best, u.bench)
        out["weights"] = {u.ids[i]: float(res.w_best[i])
                          for i in np.flatnonzero(res.w_best > 1e-9)}
    click.echo(json.dumps(out, sort_keys=True, indent=2))
    if res.status is PeriodStatus.MASTER_INFEASIBLE:
        sys.exit(EXIT_INFEASIBLE)
    if res.status is PeriodStatus.TIME_LIMIT_NO_FEASIBLE_TE:
        sys.exit(EXIT_NO_FEASIBLE_TE)


@main.command()
@click.option("--data-dir", required=True, type=click.Path(exists=True))
@click.option("--turnover-cost", default=0.005, show_default=True)
@click.option("--net/--gross", "net", default=True,
              help="Which return series leads the printed summary.")
@click.option("--out", "out_path", default="report.json", show_default=True,
              type=click.Path())
@click.option("--out-dir", default=None, type=click.Path(),
              help="Directory for ledger CSV/JSON and figures "
                   "[default: alongside --out].")
@click.option("--time-limit", default=170.0, show_default=True)
@click.option("--max-iters", default=40, show_default=True,
              help="Deterministic iteration cap per period.")
@click.option("--card", default=70, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--figures/--no-figures", default=True, show_default=True)
def backtest(data_dir, turnover_cost, net, out_path, out_dir, time_limit, max_iters,
             card, seed, figures):
    """Run the multi-period backtest and write report, ledger, and figures."""
    market = _load_market(data_dir)
    engine = EngineConfig(time_limit_s=time_limit, max_iterations=max_iters,
                          card_target=card, card_min=min(50, card), seed=seed)
    cfg = BacktestConfig(engine=engine, turnover_cost_rate=turnover_cost, seed=seed)
    try:
        ledger, report = run_backtest(market.universes, market.fwd_returns, cfg)
    except CgfolioError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_INFEASIBLE)

    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_text(report.to_json() + "\n")
    dest = Path(out_dir) if out_dir else out_path.parent
    dest.mkdir(parents=True, exist_ok=True)
    ledger.write_json(dest / "ledger.json")
    ledger.write_csv(dest / "ledger.csv")
    ledger.write_plot_csv(dest / "periods.csv")
    written = [str(out_path), str(dest / "ledger.json"), str(dest / "ledger.csv"),
               str(dest / "periods.csv")]
    if figures:
        from .plots import render_backtest_figures

        written += [str(p) for p in render_backtest_figures(ledger, dest)]

    lead = report.net if net else report.gross
    label = "net" if net else "gross"
    click.echo(json.dumps({
        "series": label,
        "periods": report.n_periods,
        "cumulative_return": lead.cumulative_return,
        "annualized_return": lead.annualized_return,
        "annualized_excess_return": lead.annualized_excess_return,
        "annualized_tracking_error": lead.annualized_tracking_error,
        "benchmark_cumulative_return": report.benchmark.cumulative_return,
        "written": written,
    }, sort_keys=True, indent=2))


@main.command()
@click.option("--data-dir", required=True, type=click.Path(exists=True))
@click.option("--date", default=None, help="Review date (ISO); first date if omitted.")
@click.option("--k-min", default=3, show_default=True)
@click.option("--k-max", default=5, show_default=True)
@click.option("--lam", "--lambda", "lam", default=5.0, show_default=True)
@click.option("--max-n", default=12, show_default=True,
              help="Refuse universes larger than this.")
@click.option("--out", "out_path", default="subsets.csv", show_default=True,
              type=click.Path())
def oracle(data_dir, date, k_min, k_max, lam, max_n, out_path):
    """Exhaustively enumerate candidate subsets and write the objective table."""
    market = _load_market(data_dir)
    dates = [u.date for u in market.universes]
    if date is None:
        date = dates[0]
    if date not in dates:
        click.echo(f"error: no universe for {date}", err=True)
        sys.exit(EXIT_VALIDATION)
    u = market.universes[dates.index(date)]
    if u.n > max_n:
        click.echo(f"error: universe has {u.n} assets, above --max-n {max_n}", err=True)
        sys.exit(EXIT_VALIDATION)
    try:
        res = enumerate_exact(u, k_min, k_max, lam, keep_table=True)
    except (TooLarge, ValueError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_VALIDATION)
    with open(out_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["subset", "objective", "status"])
        for rec in res.per_subset_objectives:
            ids = ";".join(u.ids[i] for i in rec.subset)
            writer.writerow([ids, "" if rec.objective is None else repr(rec.objective),
                             rec.status])
    if not np.isfinite(res.best_objective):
        click.echo("no feasible subset in the requested band", err=True)
        sys.exit(EXIT_INFEASIBLE)
    click.echo(json.dumps({
        "date": date,
        "evaluated_subsets": res.evaluated_subsets,
        "solved_subsets": res.solved_subsets,
        "best_objective": res.best_objective,
        "best_subset": [u.ids[i] for i in res.best_subset],
        "table": str(out_path),
    }, sort_keys=True, indent=2))


@main.command()
@click.option("--quick/--full", default=False,
              help="--quick runs the built-in smoke checks only; --full (default) "
                   "runs the pytest acceptance suite when available.")
def check(quick):
    """Verify core invariants; with a repo checkout, run the acceptance suite."""
    if not quick:
        tests_dir = Path("tests")
        if (tests_dir / "test_acceptance.py").exists():
            proc = subprocess.run([sys.executable, "-m", "pytest",
                                   str(tests_dir / "test_acceptance.py"), "-v"])
            sys.exit(proc.returncode)
        click.echo("no tests/test_acceptance.py here; running built-in checks")
    failures = _builtin_checks()
    sys.exit(0 if failures == 0 else 1)


def _builtin_checks() -> int:
    from .data import synthesize_market
    from .model import active_share, build_master
    from .oracle import perturbed_resolve
    from .pricing import CandidateState, marginal_effects

    failures = 0

    def report(name: str, ok: bool, detail: str = "") -> None:
        nonlocal failures
        failures += 0 if ok else 1
        click.echo(f"[{'PASS' if ok else 'FAIL'}] {name}{': ' + detail if detail else ''}")

    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(1000):
        w = rng.dirichlet(np.ones(50))
        b = rng.dirichlet(np.ones(50))
        worst = max(worst, abs(total_abs_deviation(w, b) - 2 * active_share(w, b)))
    report("L1-deviation equals twice active share", worst <= 1e-12, f"max gap {worst:.2e}")

    market = synthesize_market(SyntheticSpec(n_assets=40, n_periods=1, seed=1))
    u = market.universes[0]
    bad = 0
    for trial in range(20):
        size = int(rng.integers(10, 31))
        C = sorted(rng.choice(u.n, size=size, replace=False).tolist())
        try:
            sol = solve_qp(build_master(u, C, 5.0).qp)
        except InfeasibleByConstruction:
            continue
        if sol.status is SolverStatus.OPTIMAL and not sol.kkt.within(1e-6):
            bad += 1
    report("random masters solve with certified KKT residuals", bad == 0)

    from .model import AssetUniverse

    rng8 = np.random.default_rng(3)
    B8 = rng8.normal(size=(8, 2)) * 0.06
    u8 = AssetUniverse(
        ids=tuple(f"A{i}" for i in range(8)),
        alpha=rng8.normal(0.01, 0.008, 8),
        beta=1.0 + rng8.normal(0, 0.1, 8),
        sector=("S0", "S0", "S1", "S1", "S0", "S1", "S0", "S1"),
        mcapq=(1, 1, 2, 3, 5, 4, 5, 3),
        bench=np.array([0.28, 0.26, 0.22, 0.08, 0.04, 0.04, 0.04, 0.04]),
        omega=B8 @ B8.T + np.diag((0.12 * (0.8 + rng8.uniform(size=8))) ** 2))
    C = list(range(5))
    mp = build_master(u8, C, 5.0)
    sol = solve_qp(mp.qp, tol=1e-11, max_iter=400)
    state = CandidateState(C=tuple(C), removed=frozenset(range(5, 8)),
                           w_pre=np.zeros(8), lam=5.0)
    ok = sol.status is SolverStatus.OPTIMAL
    detail = ""
    if ok:
        rep = marginal_effects(mp, sol, u8, state)
        errs = []
        for rec in rep:
            truth = perturbed_resolve(mp, u8, rec.index, eps=1e-5, tol=1e-11,
                                      max_iter=400) / 1e-5
            errs.append(abs(truth - rec.delta) / max(abs(rec.delta), 1e-4))
        ok = max(errs) <= 0.1
        detail = f"max rel err {max(errs):.3f}"
    report("dual pricing matches perturbed re-solve", ok, detail)

    m1 = synthesize_market(SyntheticSpec(n_assets=60, n_periods=2, seed=4))
    cfgs = BacktestConfig(engine=EngineConfig(time_limit_s=1e9, max_iterations=5,
                                              card_target=25, card_min=5, seed=9))
    l1, _ = run_backtest(m1.universes, m1.fwd_returns, cfgs)
    l2, _ = run_backtest(m1.universes, m1.fwd_returns, cfgs)
    report("backtest ledger is byte-identical across reruns", l1.to_json() == l2.to_json())
    return failures


if __name__ == "__main__":
    main()
