"""Hand-rolled synthetic universes for tests (independent of cgfolio.data)."""

from __future__ import annotations

import numpy as np

from cgfolio.model import AssetUniverse


def factor_omega(rng: np.random.Generator, n: int, n_factors: int,
                 factor_vol: float = 0.05, idio_vol: float = 0.15) -> np.ndarray:
    B = rng.normal(size=(n, n_factors)) * factor_vol if n_factors else np.zeros((n, 0))
    d = (idio_vol * (0.5 + rng.uniform(size=n))) ** 2
    return B @ B.T + np.diag(d)


def make_universe(n: int, seed: int, *, bench: np.ndarray | None = None,
                  n_sectors: int = 1, n_factors: int = 2,
                  alpha_scale: float = 0.01, idio_vol: float = 0.15,
                  factor_vol: float = 0.05, date: str = "2020-01-01") -> AssetUniverse:
    rng = np.random.default_rng(seed)
    if bench is None:
        raw = rng.uniform(0.5, 1.5, size=n)
        bench = raw / raw.sum()
    bench = np.asarray(bench, dtype=float)
    sectors = tuple(f"SEC{i % n_sectors:02d}" for i in range(n))
    mcapq = (np.argsort(np.argsort(-bench)) * 5 // n) + 1
    return AssetUniverse(
        ids=tuple(f"SYN{i:04d}" for i in range(n)),
        alpha=rng.normal(0.0, alpha_scale, size=n),
        beta=1.0 + rng.normal(0.0, 0.15, size=n),
        sector=sectors,
        mcapq=np.clip(mcapq, 1, 5),
        bench=bench,
        omega=factor_omega(rng, n, n_factors, factor_vol, idio_vol),
        date=date,
    )


def random_simplex(rng: np.random.Generator, n: int) -> np.ndarray:
    w = rng.dirichlet(np.ones(n))
    return w


def market_series(n: int, T: int, seed: int, *, start="2020-01-01", **universe_kw):
    """Constant-id universe series with drifting alpha and consistent returns.

    Returns (universes, fwd_returns): fwd_returns[k][id] is the return earned
    over the four weeks after review date k.
    """
    import datetime as dt

    base = inband_universe(n, seed, **universe_kw)
    rng = np.random.default_rng(seed + 777)
    chol = np.linalg.cholesky(base.omega + 1e-12 * np.eye(n))
    d0 = dt.date.fromisoformat(start)
    universes, fwd_returns = [], []
    alpha = base.alpha.copy()
    for k in range(T):
        date = (d0 + dt.timedelta(days=28 * k)).isoformat()
        universes.append(AssetUniverse(
            ids=base.ids, alpha=alpha, beta=base.beta, sector=base.sector,
            mcapq=base.mcapq, bench=base.bench, omega=base.omega, date=date))
        r = alpha + chol @ rng.normal(size=n)
        r = np.maximum(r, -0.95)
        fwd_returns.append({base.ids[i]: float(r[i]) for i in range(n)})
        alpha = 0.7 * alpha + rng.normal(0, 0.005, n)
    return universes, fwd_returns


def inband_universe(n: int, seed: int, *, idio_vol: float = 0.35,
                    factor_vol: float = 0.08, alpha_scale: float = 0.015,
                    n_sectors: int = 10, n_factors: int = 4,
                    concentration: float = 8.0) -> AssetUniverse:
    """Universe calibrated so the first master solve at lambda=5 lands in
    the [0.05, 0.1] tracking-error band."""
    rng = np.random.default_rng(seed)
    bench = rng.dirichlet(np.full(n, concentration))
    beta = 1.0 + rng.normal(0, 0.25, n)
    B = np.empty((n, n_factors))
    B[:, 0] = beta * factor_vol
    if n_factors > 1:
        B[:, 1:] = rng.normal(size=(n, n_factors - 1)) * factor_vol * 0.6
    D = (idio_vol * (0.6 + 0.8 * rng.uniform(size=n))) ** 2
    omega = B @ B.T + np.diag(D)
    mcapq = (np.argsort(np.argsort(-bench)) * 5 // n) + 1
    return AssetUniverse(
        ids=tuple(f"A{i:04d}" for i in range(n)),
        alpha=rng.normal(0, alpha_scale, n),
        beta=beta,
        sector=tuple(f"S{i % n_sectors}" for i in range(n)),
        mcapq=np.clip(mcapq, 1, 5),
        bench=bench,
        omega=omega,
    )
