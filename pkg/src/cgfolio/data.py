"""Dataset generation, file formats, and ingestion.

On-disk layout of a dataset directory:

* ``universe_YYYYMMDD.csv`` per review date with header
  ``sedol,name,sector,beta,alpha,bench_weight,mcap_quintile``;
* ``cov_YYYYMMDD.csv`` dense covariance, first row and first column carry
  the SEDOLs;
* ``returns.csv`` long format ``date,sedol,fourweek_return`` where the
  entry at a date is the payoff of the investment made at the previous
  review date (so the first return date trails the first universe date).

Floats are written with ``repr`` so a generate/parse round trip reproduces
the in-memory values exactly.
"""

from __future__ import annotations

import csv
import datetime as dt
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import AlignmentError, SchemaError, ValidationError
from .model import AssetUniverse

__all__ = ["UniverseFileRow", "SyntheticSpec", "MarketData",
           "generate_synthetic", "synthesize_market", "parse_universe"]

logger = logging.getLogger(__name__)

UNIVERSE_HEADER = ["sedol", "name", "sector", "beta", "alpha", "bench_weight",
                   "mcap_quintile"]
RETURNS_HEADER = ["date", "sedol", "fourweek_return"]
UNIVERSE_FILE_RE = re.compile(r"^universe_(\d{8})\.csv$")

# volatility scales for the synthetic factor model, per 4-week period;
# calibrated so the engine's default tracking-error band is reachable
IDIO_VOL = 0.35
FACTOR_VOL = 0.08
ALPHA_SCALE = 0.015
ALPHA_PERSISTENCE = 0.7
PERIOD_DAYS = 28


@dataclass(frozen=True)
class UniverseFileRow:
    sedol: str
    name: str
    sector: str
    beta: float
    alpha: float
    bench_weight: float
    mcap_quintile: int

    def __post_init__(self):
        if not 1 <= self.mcap_quintile <= 5:
            raise ValidationError(
                f"asset {self.sedol}: mcap_quintile {self.mcap_quintile} not in 1..5")
        if self.bench_weight < 0:
            raise ValidationError(
                f"asset {self.sedol}: negative bench_weight {self.bench_weight}")


@dataclass(frozen=True)
class SyntheticSpec:
    n_assets: int
    n_sectors: int = 10
    n_factors: int = 4
    n_periods: int = 12
    seed: int = 0
    bench_concentration: float = 8.0

    def __post_init__(self):
        if self.n_assets < 1 or self.n_sectors < 1 or self.n_periods < 1:
            raise ValidationError("n_assets, n_sectors, n_periods must be positive")
        if not 0 <= self.n_factors <= self.n_assets:
            raise ValidationError("need 0 <= n_factors <= n_assets")
        if self.bench_concentration <= 0:
            raise ValidationError("bench_concentration must be positive")


@dataclass
class MarketData:
    """Aligned (universe, forward-return) series.

    ``fwd_returns[k]`` maps asset id to the return earned over the period
    after review date k.
    """

    universes: list
    fwd_returns: list
    dates: list = field(default_factory=list)

    def __post_init__(self):
        if not self.dates:
            self.dates = [u.date for u in self.universes]
        if len(self.universes) != len(self.fwd_returns):
            raise AlignmentError("universes and forward returns differ in length")


def synthesize_market(spec: SyntheticSpec, start: str = "2010-01-06") -> MarketData:
    """Draw a reproducible synthetic market series in memory.

    The covariance is a factor model B B' + D with the first factor loading
    proportional to beta, so it is PSD with slack min(D). Benchmark weights
    come from a Dirichlet draw with the spec's concentration; quintile 1
    holds the largest weights. Realized returns are alpha plus correlated
    factor noise.
    """
    n = spec.n_assets
    rng = np.random.default_rng(spec.seed)
    bench = rng.dirichlet(np.full(n, spec.bench_concentration))
    beta = 1.0 + rng.normal(0.0, 0.25, n)
    if spec.n_factors:
        B = np.empty((n, spec.n_factors))
        B[:, 0] = beta * FACTOR_VOL
        if spec.n_factors > 1:
            B[:, 1:] = rng.normal(size=(n, spec.n_factors - 1)) * FACTOR_VOL * 0.6
    else:
        B = np.zeros((n, 0))
    d_idio = (IDIO_VOL * (0.6 + 0.8 * rng.uniform(size=n))) ** 2
    omega = B @ B.T + np.diag(d_idio)
    chol = np.linalg.cholesky(omega)

    ids = tuple(f"SYN{i:04d}" for i in range(n))
    sector = tuple(f"SEC{i % spec.n_sectors:02d}" for i in range(n))
    mcapq = np.clip((np.argsort(np.argsort(-bench)) * 5 // n) + 1, 1, 5)

    d0 = dt.date.fromisoformat(start)
    alpha = rng.normal(0.0, ALPHA_SCALE, n)
    universes, fwd_returns = [], []
    for k in range(spec.n_periods):
        date = (d0 + dt.timedelta(days=PERIOD_DAYS * k)).isoformat()
        universes.append(AssetUniverse(ids=ids, alpha=alpha, beta=beta, sector=sector,
                                       mcapq=mcapq, bench=bench, omega=omega, date=date))
        realized = np.maximum(alpha + chol @ rng.normal(size=n), -0.95)
        fwd_returns.append({ids[i]: float(realized[i]) for i in range(n)})
        alpha = ALPHA_PERSISTENCE * alpha + rng.normal(0.0, ALPHA_SCALE * 0.5, n)
    return MarketData(universes=universes, fwd_returns=fwd_returns)


def generate_synthetic(spec: SyntheticSpec, out_dir, start: str = "2010-01-06") -> Path:
    """Write a synthetic dataset to disk; same draw as :func:`synthesize_market`."""
    market = synthesize_market(spec, start=start)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    for u in market.universes:
        stamp = u.date.replace("-", "")
        with open(out / f"universe_{stamp}.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(UNIVERSE_HEADER)
            for i, sid in enumerate(u.ids):
                writer.writerow([sid, f"Synthetic Asset {i}", u.sector[i],
                                 repr(float(u.beta[i])), repr(float(u.alpha[i])),
                                 repr(float(u.bench[i])), int(u.mcapq[i])])
        with open(out / f"cov_{stamp}.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["sedol"] + list(u.ids))
            for i, sid in enumerate(u.ids):
                writer.writerow([sid] + [repr(float(v)) for v in u.omega[i]])

    d_last = dt.date.fromisoformat(market.universes[-1].date)
    with open(out / "returns.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(RETURNS_HEADER)
        for k, u in enumerate(market.universes):
            if k + 1 < len(market.universes):
                pay_date = market.universes[k + 1].date
            else:
                pay_date = (d_last + dt.timedelta(days=PERIOD_DAYS)).isoformat()
            fwd = market.fwd_returns[k]
            for sid in u.ids:
                writer.writerow([pay_date, sid, repr(fwd[sid])])
    return out


def _read_universe_file(path: Path, date: str) -> tuple:
    rows: list[UniverseFileRow] = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != UNIVERSE_HEADER:
            raise SchemaError(f"{path.name}: header {header} != {UNIVERSE_HEADER}")
        for lineno, raw in enumerate(reader, start=2):
            if not raw:
                continue
            if len(raw) != len(UNIVERSE_HEADER):
                raise SchemaError(f"{path.name}:{lineno}: expected "
                                  f"{len(UNIVERSE_HEADER)} fields, got {len(raw)}")
            try:
                rows.append(UniverseFileRow(
                    sedol=raw[0], name=raw[1], sector=raw[2],
                    beta=float(raw[3]), alpha=float(raw[4]),
                    bench_weight=float(raw[5]), mcap_quintile=int(raw[6])))
            except ValueError as exc:
                raise SchemaError(f"{path.name}:{lineno}: {exc}") from exc
            except ValidationError as exc:
                raise ValidationError(f"{path.name}:{lineno}: {exc}") from exc
    if not rows:
        raise SchemaError(f"{path.name}: no asset rows")
    return rows


def _read_cov_file(path: Path, ids: tuple) -> np.ndarray:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or len(header) < 2:
            raise SchemaError(f"{path.name}: missing header row")
        if tuple(header[1:]) != ids:
            raise AlignmentError(f"{path.name}: covariance columns do not match "
                                 f"the universe sedols")
        n = len(ids)
        omega = np.empty((n, n))
        for i, raw in enumerate(reader):
            if i >= n:
                raise SchemaError(f"{path.name}: more rows than sedols")
            if raw[0] != ids[i]:
                raise AlignmentError(f"{path.name}: row {i + 2} sedol {raw[0]} != {ids[i]}")
            try:
                omega[i] = [float(v) for v in raw[1:]]
            except ValueError as exc:
                raise SchemaError(f"{path.name}: row {i + 2}: {exc}") from exc
        if i + 1 != n:
            raise SchemaError(f"{path.name}: {i + 1} rows for {n} sedols")
    asym = np.abs(omega - omega.T)
    if asym.size and np.max(asym) > 1e-6:
        a, b = np.unravel_index(int(np.argmax(asym)), asym.shape)
        raise ValidationError(f"{path.name}: asymmetric entry ({ids[a]}, {ids[b]}): "
                              f"|a_ij - a_ji| = {asym[a, b]:.3e}")
    return omega


def parse_universe(dir_path) -> MarketData:
    """Load and validate a dataset directory into an aligned market series.

    Returns entries dated after a review date carry that date's forward
    return (the lagged-payoff convention). A trailing universe date without
    a later return date is dropped, with a log line; nothing is repaired
    silently.
    """
    root = Path(dir_path)
    if not root.is_dir():
        raise SchemaError(f"{root} is not a directory")

    stamps = []
    for p in sorted(root.iterdir()):
        m = UNIVERSE_FILE_RE.match(p.name)
        if m:
            stamps.append(m.group(1))
    if not stamps:
        raise SchemaError(f"no universe_YYYYMMDD.csv files in {root}")

    universes = []
    for stamp in stamps:
        date = f"{stamp[:4]}-{stamp[4:6]}-{stamp[6:]}"
        rows = _read_universe_file(root / f"universe_{stamp}.csv", date)
        ids = tuple(r.sedol for r in rows)
        cov_path = root / f"cov_{stamp}.csv"
        if not cov_path.exists():
            raise AlignmentError(f"missing covariance file {cov_path.name}")
        omega = _read_cov_file(cov_path, ids)
        try:
            universes.append(AssetUniverse(
                ids=ids,
                alpha=np.array([r.alpha for r in rows]),
                beta=np.array([r.beta for r in rows]),
                sector=tuple(r.sector for r in rows),
                mcapq=np.array([r.mcap_quintile for r in rows]),
                bench=np.array([r.bench_weight for r in rows]),
                omega=omega,
                date=date))
        except ValidationError as exc:
            raise ValidationError(f"universe_{stamp}.csv: {exc}") from exc

    ret_path = root / "returns.csv"
    if not ret_path.exists():
        raise SchemaError("missing returns.csv")
    by_date: dict[str, dict] = {}
    with open(ret_path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != RETURNS_HEADER:
            raise SchemaError(f"returns.csv: header {header} != {RETURNS_HEADER}")
        for lineno, raw in enumerate(reader, start=2):
            if not raw:
                continue
            if len(raw) != 3:
                raise SchemaError(f"returns.csv:{lineno}: expected 3 fields")
            try:
                date = dt.date.fromisoformat(raw[0]).isoformat()
                by_date.setdefault(date, {})[raw[1]] = float(raw[2])
            except ValueError as exc:
                raise SchemaError(f"returns.csv:{lineno}: {exc}") from exc

    ret_dates = sorted(by_date)
    aligned_universes, fwd_returns = [], []
    for u in universes:
        nxt = next((d for d in ret_dates if d > u.date), None)
        if nxt is None:
            logger.info("universe date %s has no later return date; dropped from "
                        "the backtest series", u.date)
            continue
        aligned_universes.append(u)
        fwd_returns.append(by_date[nxt])
    for d in ret_dates:
        if d <= universes[0].date:
            logger.info("return date %s precedes the first universe date; it "
                        "rewards a pre-sample investment and is unused", d)
    if not aligned_universes:
        raise AlignmentError("no universe date has a later return date")
    return MarketData(universes=aligned_universes, fwd_returns=fwd_returns)
