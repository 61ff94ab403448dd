"""Market inputs: synthetic markets, CSV price panels and moment estimation."""

import csv
import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    NonMonotoneDates,
    NonPositivePrice,
    NotPositiveDefinite,
    ParseError,
    TooFewRows,
    WindowTooShort,
)
from .objectives import MarketModel

__all__ = [
    "PricePanel",
    "ReturnPanel",
    "generate_market",
    "simulate_returns",
    "simulate_prices",
    "load_prices_csv",
    "write_prices_csv",
    "to_returns",
    "estimate_moments",
    "DEFAULT_SHRINK",
]

DEFAULT_SHRINK = 1e-4
MU_RANGE = (-0.001, 0.003)


@dataclass(frozen=True, eq=False)
class PricePanel:
    dates: tuple
    prices: np.ndarray
    tickers: tuple

    def __post_init__(self):
        prices = np.atleast_2d(np.array(self.prices, dtype=float))
        if prices.shape != (len(self.dates), len(self.tickers)):
            raise ValueError(
                f"price matrix {prices.shape} does not match {len(self.dates)} dates x {len(self.tickers)} tickers"
            )
        if not (prices > 0).all():
            t, j = np.argwhere(~(prices > 0))[0]
            raise NonPositivePrice(f"price {prices[t, j]!r} for {self.tickers[j]} on {self.dates[t]}")
        prices.setflags(write=False)
        object.__setattr__(self, "dates", tuple(self.dates))
        object.__setattr__(self, "tickers", tuple(self.tickers))
        object.__setattr__(self, "prices", prices)

    @property
    def n(self):
        return len(self.tickers)


@dataclass(frozen=True, eq=False)
class ReturnPanel:
    returns: np.ndarray
    tickers: tuple = ()

    def __post_init__(self):
        r = np.atleast_2d(np.array(self.returns, dtype=float))
        if not (r > -1).all():
            raise ValueError("simple returns must exceed -1")
        r.setflags(write=False)
        object.__setattr__(self, "returns", r)
        if not self.tickers:
            object.__setattr__(self, "tickers", tuple(f"A{i + 1}" for i in range(r.shape[1])))

    @property
    def t(self):
        return self.returns.shape[0]

    @property
    def n(self):
        return self.returns.shape[1]


def generate_market(n_assets: int, n_mu: int = 1, n_sigma: int = 1, seed: int = 0) -> MarketModel:
    """Random market: ``mu ~ U[-0.001, 0.003]`` and ``Sigma = G G'/N + 1e-4 I``."""
    if n_assets < 1:
        raise ValueError("need at least one asset")
    if n_mu < 0 or n_sigma < 1:
        raise ValueError("need n_mu >= 0 and n_sigma >= 1")
    rng = np.random.default_rng(seed)
    mus = [rng.uniform(*MU_RANGE, size=n_assets) for _ in range(n_mu)]
    sigmas = []
    for _ in range(n_sigma):
        g = rng.standard_normal((n_assets, n_assets))
        s = g @ g.T / n_assets + 1e-4 * np.eye(n_assets)
        sigmas.append(0.5 * (s + s.T))
    return MarketModel(tuple(mus), tuple(sigmas))


def simulate_returns(mu, sigma, n_rows: int, seed: int = 0, vol_scale: float = 1.0) -> ReturnPanel:
    """Gaussian returns with mean ``mu`` and covariance ``vol_scale**2 * sigma``.

    Draws at or below -1 are redrawn so the panel stays a valid simple-return series.
    """
    mu = np.asarray(mu, dtype=float)
    cov = vol_scale ** 2 * np.asarray(sigma, dtype=float)
    rng = np.random.default_rng(seed)
    chol = np.linalg.cholesky(cov)
    out = mu + rng.standard_normal((n_rows, mu.size)) @ chol.T
    bad = (out <= -1).any(axis=1)
    while bad.any():
        out[bad] = mu + rng.standard_normal((int(bad.sum()), mu.size)) @ chol.T
        bad = (out <= -1).any(axis=1)
    return ReturnPanel(out)


def simulate_prices(n_assets: int, n_days: int, seed: int = 0, vol_scale: float = 0.01,
                    start: float = 100.0) -> PricePanel:
    """Price panel compounding simulated returns of a random market."""
    market = generate_market(n_assets, 1, 1, seed)
    rets = simulate_returns(market.mus[0], market.sigmas[0], n_days - 1, seed + 1, vol_scale)
    growth = np.vstack([np.ones(n_assets), np.cumprod(1.0 + rets.returns, axis=0)])
    dates = tuple(f"d{t + 1:05d}" for t in range(n_days))
    tickers = tuple(f"A{i + 1}" for i in range(n_assets))
    return PricePanel(dates, start * growth, tickers)


def load_prices_csv(path) -> PricePanel:
    """Read ``date,TICKER1,...`` rows; rows and columns in error messages are 1-based."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ParseError("empty file: header row missing", 1, 1)
    header = [h.strip() for h in rows[0]]
    if len(header) < 2:
        raise ParseError("header needs a date column and at least one ticker", 1, len(header) + 1)
    tickers = header[1:]
    dates, prices = [], []
    for r, row in enumerate(rows[1:], start=2):
        if not row or all(not cell.strip() for cell in row):
            continue
        if len(row) != len(header):
            raise ParseError(f"expected {len(header)} cells, found {len(row)}", r, min(len(row), len(header)) + 1)
        vals = []
        for col, cell in enumerate(row[1:], start=2):
            try:
                v = float(cell)
            except ValueError:
                raise ParseError(f"non-numeric price {cell!r}", r, col) from None
            if not math.isfinite(v):
                raise ParseError(f"non-finite price {cell!r}", r, col)
            if v <= 0:
                raise NonPositivePrice(f"price {v!r} at row {r}, column {col}")
            vals.append(v)
        dates.append(row[0].strip())
        prices.append(vals)
    if len(set(dates)) != len(dates):
        raise NonMonotoneDates("duplicate date labels")
    if dates != sorted(dates):
        raise NonMonotoneDates("dates are not strictly increasing")
    if not prices:
        return PricePanel((), np.zeros((0, len(tickers))), tuple(tickers))
    return PricePanel(tuple(dates), np.array(prices), tuple(tickers))


def write_prices_csv(panel: PricePanel, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["date", *panel.tickers])
        for d, row in zip(panel.dates, panel.prices):
            writer.writerow([d, *(repr(float(v)) for v in row)])


def to_returns(panel: PricePanel) -> ReturnPanel:
    """Simple returns ``p_t / p_{t-1} - 1``."""
    if panel.prices.shape[0] < 2:
        raise TooFewRows("need at least two price rows")
    p = panel.prices
    return ReturnPanel(p[1:] / p[:-1] - 1.0, panel.tickers)


def estimate_moments(returns: ReturnPanel, windows=None, shrink: float = DEFAULT_SHRINK) -> MarketModel:
    """Sample mean and ``(n-1)`` covariance per window, shrunk towards ``trace/N * I``.

    Parameters
    ----------
    windows : list of (start, stop) row ranges, optional
        Python slice semantics; the default is a single window with every row.
    shrink : float
        Ridge weight relative to the average variance.

    Raises
    ------
    WindowTooShort
        A window with fewer than two rows.
    NotPositiveDefinite
        A shrunk covariance that is still singular.
    """
    if shrink < 0:
        raise ValueError("shrink must be nonnegative")
    r = returns.returns
    if windows is None:
        windows = [(0, r.shape[0])]
    mus, sigmas = [], []
    for start, stop in windows:
        block = r[slice(start, stop)]
        if block.shape[0] < 2:
            raise WindowTooShort(f"window {start}:{stop} has {block.shape[0]} rows")
        mu = block.mean(axis=0)
        s = np.atleast_2d(np.cov(block, rowvar=False, ddof=1))
        s = s + shrink * (np.trace(s) / s.shape[0]) * np.eye(s.shape[0])
        s = 0.5 * (s + s.T)
        mus.append(mu)
        sigmas.append(s)
    try:
        return MarketModel(tuple(mus), tuple(sigmas))
    except NotPositiveDefinite as exc:
        raise NotPositiveDefinite(f"{exc}; increase shrink") from None
