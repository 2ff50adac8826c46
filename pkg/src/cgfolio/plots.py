"""Report figures rendered from a backtest ledger.

All figures are written as PNG files next to the delimited output. The
Agg backend keeps rendering headless-safe.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

__all__ = ["render_backtest_figures"]

FIGSIZE = (9.0, 4.5)


def _date_axis(ax, dates):
    step = max(1, len(dates) // 12)
    ax.set_xticks(range(0, len(dates), step))
    ax.set_xticklabels([dates[i] for i in range(0, len(dates), step)],
                       rotation=45, ha="right", fontsize=8)


def render_backtest_figures(ledger, out_dir) -> list:
    """Write the three report figures; returns the created paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    dates = ledger.dates
    x = range(len(dates))
    net = ledger.series("net_return")
    bench = ledger.series("benchmark_return")
    costs = ledger.series("turnover_cost")
    paths = []

    fig, ax = plt.subplots(figsize=FIGSIZE)
    ax.bar(x, costs, color="#9467bd", width=0.8)
    ax.set_ylabel("turnover cost per period")
    ax.set_title("Turnover costs per review period")
    _date_axis(ax, dates)
    ax.grid(True, axis="y", alpha=0.3)
    fig.tight_layout()
    p = out / "turnover_costs.png"
    fig.savefig(p, dpi=120)
    plt.close(fig)
    paths.append(p)

    fig, ax = plt.subplots(figsize=(5.0, 4.5))
    ax.boxplot([net, bench], tick_labels=["portfolio (net)", "benchmark"])
    ax.set_ylabel("4-week return")
    ax.set_title("Distribution of turnover-adjusted returns")
    ax.grid(True, axis="y", alpha=0.3)
    fig.tight_layout()
    p = out / "returns_boxplot.png"
    fig.savefig(p, dpi=120)
    plt.close(fig)
    paths.append(p)

    fig, ax = plt.subplots(figsize=FIGSIZE)
    ax.plot(x, net, marker="o", ms=3, lw=1.2, label="portfolio (net)")
    ax.plot(x, bench, marker="s", ms=3, lw=1.2, label="benchmark")
    ax.axhline(0.0, color="black", lw=0.6)
    ax.set_ylabel("4-week return")
    ax.set_title("Turnover-adjusted returns per review period")
    _date_axis(ax, dates)
    ax.legend()
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    p = out / "returns_timeseries.png"
    fig.savefig(p, dpi=120)
    plt.close(fig)
    paths.append(p)
    return paths
