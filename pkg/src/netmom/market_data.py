"""Price ingestion, return/EWM statistics and synthetic market generation.

Panels are pandas DataFrames indexed by a business-day calendar with one
column per ticker; missing observations are NaN. All functions are pure:
inputs are never mutated.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

__all__ = [
    "AssetClass",
    "AssetMeta",
    "DataError",
    "EwmSpec",
    "PricePanel",
    "ReturnPanel",
    "SynthConfig",
    "daily_returns",
    "ewm_mean",
    "ewm_std",
    "load_prices",
    "load_universe",
    "synth_market",
]

TRADING_DAYS_PER_YEAR = 252


class DataError(ValueError):
    """Raised when input data violates the documented schemas."""


class AssetClass(str, enum.Enum):
    COMM = "COMM"
    EQ = "EQ"
    FI = "FI"
    FX = "FX"


@dataclass(frozen=True)
class AssetMeta:
    """Static description of one asset in the universe."""

    ticker: str
    asset_class: AssetClass
    description: str
    first_date: pd.Timestamp
    last_date: pd.Timestamp

    def __post_init__(self):
        if self.first_date > self.last_date:
            raise DataError(
                f"{self.ticker}: first_date {self.first_date.date()} after "
                f"last_date {self.last_date.date()}"
            )


@dataclass(frozen=True)
class PricePanel:
    """Calendar-aligned daily adjusted prices for a universe of assets.

    ``prices`` is indexed by the union business calendar of all asset spans
    and has one float column per ticker (NaN marks missing days).
    """

    assets: tuple[AssetMeta, ...]
    prices: pd.DataFrame

    @property
    def calendar(self) -> pd.DatetimeIndex:
        return self.prices.index

    @property
    def tickers(self) -> list[str]:
        return list(self.prices.columns)

    @property
    def classes(self) -> dict[str, str]:
        return {a.ticker: a.asset_class.value for a in self.assets}

    def validate(self) -> None:
        bad = (self.prices <= 0).to_numpy()
        if bad.any():
            i, j = np.argwhere(bad)[0]
            raise DataError(
                f"non-positive price for {self.prices.columns[j]} on "
                f"{self.prices.index[i].date()}"
            )
        if not self.prices.index.is_monotonic_increasing or self.prices.index.has_duplicates:
            raise DataError("calendar must be strictly increasing without duplicates")


@dataclass(frozen=True)
class ReturnPanel:
    """Simple daily returns aligned to the source PricePanel."""

    returns: pd.DataFrame

    @property
    def calendar(self) -> pd.DatetimeIndex:
        return self.returns.index


class EwmMode(str, enum.Enum):
    SPAN = "span"
    HALF_LIFE = "half_life"
    SCALE = "scale"


@dataclass(frozen=True)
class EwmSpec:
    """Smoothing specification for exponentially weighted statistics.

    ``span`` N gives alpha = 2/(N+1); ``scale`` J gives alpha = 1/J;
    ``half_life`` HL gives alpha = 1 - 2**(-1/HL).
    """

    mode: EwmMode
    parameter: float

    def __post_init__(self):
        if self.parameter <= 0:
            raise ValueError(f"EWM parameter must be positive, got {self.parameter}")

    @property
    def alpha(self) -> float:
        mode = EwmMode(self.mode)
        if mode is EwmMode.SPAN:
            return 2.0 / (self.parameter + 1.0)
        if mode is EwmMode.SCALE:
            return 1.0 / self.parameter
        return 1.0 - 2.0 ** (-1.0 / self.parameter)

    @staticmethod
    def span(n: float) -> "EwmSpec":
        return EwmSpec(EwmMode.SPAN, n)

    @staticmethod
    def half_life(hl: float) -> "EwmSpec":
        return EwmSpec(EwmMode.HALF_LIFE, hl)

    @staticmethod
    def scale(j: float) -> "EwmSpec":
        return EwmSpec(EwmMode.SCALE, j)


def load_universe(meta_path: str | Path) -> list[AssetMeta]:
    """Parse the universe CSV (ticker,class,description,first_date,last_date).

    Rejects duplicate tickers and unknown class tokens.
    """
    meta_path = Path(meta_path)
    if not meta_path.exists():
        raise DataError(f"universe file not found: {meta_path}")
    df = pd.read_csv(meta_path, dtype=str)
    expected = ["ticker", "class", "description", "first_date", "last_date"]
    if list(df.columns) != expected:
        raise DataError(f"universe header must be {','.join(expected)}")
    assets: list[AssetMeta] = []
    seen: set[str] = set()
    for row in df.itertuples(index=False):
        ticker = str(row.ticker).strip()
        if ticker in seen:
            raise DataError(f"duplicate ticker in universe: {ticker}")
        seen.add(ticker)
        cls = getattr(row, "_1")  # 'class' is a keyword, pandas mangles it
        try:
            asset_class = AssetClass(str(cls).strip())
        except ValueError:
            raise DataError(f"{ticker}: unknown asset class {cls!r}") from None
        try:
            first = pd.Timestamp(row.first_date)
            last = pd.Timestamp(row.last_date)
        except (ValueError, TypeError):
            raise DataError(f"{ticker}: unparseable date in universe row") from None
        assets.append(AssetMeta(ticker, asset_class, str(row.description), first, last))
    return assets


def load_prices(price_dir: str | Path, universe: list[AssetMeta]) -> PricePanel:
    """Load per-ticker price CSVs and align them on the union calendar.

    Each file is ``<ticker>.csv`` with header ``date,price``. Dates absent
    for an asset stay NaN; no forward-filling happens at ingestion.
    """
    price_dir = Path(price_dir)
    series: dict[str, pd.Series] = {}
    for meta in universe:
        path = price_dir / f"{meta.ticker}.csv"
        if not path.exists():
            raise DataError(f"price file missing for ticker {meta.ticker}: {path}")
        df = pd.read_csv(path)
        if list(df.columns) != ["date", "price"]:
            raise DataError(f"{meta.ticker}: price header must be date,price")
        try:
            idx = pd.DatetimeIndex(pd.to_datetime(df["date"], format="ISO8601"))
        except (ValueError, TypeError):
            raise DataError(f"{meta.ticker}: unparseable date in price file") from None
        prices = pd.to_numeric(df["price"], errors="coerce")
        if prices.isna().any():
            bad = idx[prices.isna()][0]
            raise DataError(f"{meta.ticker}: unparseable price on {bad.date()}")
        if (prices <= 0).any():
            bad = idx[(prices <= 0).to_numpy()][0]
            raise DataError(f"{meta.ticker}: non-positive price on {bad.date()}")
        s = pd.Series(prices.to_numpy(float), index=idx)
        if s.index.has_duplicates:
            raise DataError(f"{meta.ticker}: duplicate dates in price file")
        series[meta.ticker] = s.sort_index()
    calendar = pd.DatetimeIndex(sorted(set().union(*(s.index for s in series.values()))))
    frame = pd.DataFrame(
        {m.ticker: series[m.ticker].reindex(calendar) for m in universe}, index=calendar
    )
    panel = PricePanel(assets=tuple(universe), prices=frame)
    panel.validate()
    return panel


def daily_returns(panel: PricePanel) -> ReturnPanel:
    """Simple daily returns p_t/p_{t-1} - 1 on consecutive present dates.

    Returns are never computed across gaps: a missing price voids the
    return on both adjacent days.
    """
    r = panel.prices / panel.prices.shift(1) - 1.0
    return ReturnPanel(returns=r)


def _as_series(series) -> pd.Series:
    s = pd.Series(series, dtype=float) if not isinstance(series, pd.Series) else series.astype(float)
    if len(s) == 0:
        raise ValueError("empty series")
    return s


def ewm_mean(series, spec: EwmSpec) -> pd.Series:
    """Exponentially weighted mean with expanding, normalized weights.

    Weight of the observation tau steps back is (1-alpha)**tau; all
    available history enters the weighted average.
    """
    s = _as_series(series)
    return s.ewm(alpha=spec.alpha, adjust=True, ignore_na=False).mean()


def ewm_std(series, spec: EwmSpec) -> pd.Series:
    """Exponentially weighted standard deviation, same weights as ewm_mean.

    sigma_t = sqrt(sum w*(x-mu_t)^2 / sum w); positions with fewer than two
    observations so far are NaN.
    """
    s = _as_series(series)
    var = s.ewm(alpha=spec.alpha, adjust=True, ignore_na=False).var(bias=True)
    enough = s.notna().cumsum() >= 2
    return np.sqrt(var).where(enough)


@dataclass(frozen=True)
class SynthConfig:
    """Block-factor synthetic market: AR(1) factor per block plus noise."""

    blocks: int = 3
    assets_per_block: int = 4
    days: int = 2000
    rho: float = 0.3
    lam: float = 1.0
    idio_vol: float = 0.01
    start: str = "1990-01-02"

    def __post_init__(self):
        if not 0 <= self.rho < 1:
            raise ValueError(f"rho must lie in [0, 1), got {self.rho}")
        if self.lam < 0:
            raise ValueError(f"lambda must be non-negative, got {self.lam}")
        if self.idio_vol <= 0:
            raise ValueError(f"idio_vol must be positive, got {self.idio_vol}")
        if min(self.blocks, self.assets_per_block, self.days) < 1:
            raise ValueError("blocks, assets_per_block and days must be >= 1")


_SYNTH_CLASS_CYCLE = ["COMM", "EQ", "FI", "FX"]


def synth_market(config: SynthConfig, seed: int) -> tuple[PricePanel, dict[str, int]]:
    """Generate a seeded block-structured market and its ground-truth labels.

    Per block k an AR(1) factor f_t = rho*f_{t-1} + eta_t with stationary
    std idio_vol; asset returns are lam*f + eps with eps ~ N(0, idio_vol^2).
    Prices compound from 100. Uses numpy's PCG64 generator, so identical
    seeds give bit-identical panels.
    """
    cfg = config
    rng = np.random.default_rng(seed)
    n_assets = cfg.blocks * cfg.assets_per_block
    calendar = pd.bdate_range(cfg.start, periods=cfg.days)

    innov_std = cfg.idio_vol * math.sqrt(1.0 - cfg.rho**2)
    factors = np.empty((cfg.days, cfg.blocks))
    factors[0] = rng.normal(0.0, cfg.idio_vol, size=cfg.blocks)
    shocks = rng.normal(0.0, innov_std, size=(cfg.days - 1, cfg.blocks))
    for t in range(1, cfg.days):
        factors[t] = cfg.rho * factors[t - 1] + shocks[t - 1]

    eps = rng.normal(0.0, cfg.idio_vol, size=(cfg.days, n_assets))
    block_of = np.repeat(np.arange(cfg.blocks), cfg.assets_per_block)
    rets = cfg.lam * factors[:, block_of] + eps
    # keep prices strictly positive even under extreme parameter choices
    rets = np.maximum(rets, -0.95)
    prices = 100.0 * np.cumprod(1.0 + rets, axis=0)

    tickers = [f"B{k}A{j}" for k in range(cfg.blocks) for j in range(cfg.assets_per_block)]
    frame = pd.DataFrame(prices, index=calendar, columns=tickers)
    assets = tuple(
        AssetMeta(
            ticker=t,
            asset_class=AssetClass(_SYNTH_CLASS_CYCLE[block_of[i] % 4]),
            description=f"synthetic block {block_of[i]}",
            first_date=calendar[0],
            last_date=calendar[-1],
        )
        for i, t in enumerate(tickers)
    )
    labels = {t: int(block_of[i]) for i, t in enumerate(tickers)}
    return PricePanel(assets=assets, prices=frame), labels


def write_market_csvs(panel: PricePanel, labels: dict[str, int] | None, out_dir: str | Path) -> None:
    """Dump a panel as universe.csv + prices/<ticker>.csv (+ blocks.csv)."""
    out_dir = Path(out_dir)
    (out_dir / "prices").mkdir(parents=True, exist_ok=True)
    rows = []
    for a in panel.assets:
        col = panel.prices[a.ticker].dropna()
        rows.append(
            {
                "ticker": a.ticker,
                "class": a.asset_class.value,
                "description": a.description,
                "first_date": col.index[0].date().isoformat(),
                "last_date": col.index[-1].date().isoformat(),
            }
        )
        out = col.rename("price").rename_axis("date")
        out.to_csv(out_dir / "prices" / f"{a.ticker}.csv", float_format="%.12g", date_format="%Y-%m-%d")
    pd.DataFrame(rows).to_csv(out_dir / "universe.csv", index=False)
    if labels is not None:
        pd.DataFrame(
            {"ticker": list(labels), "block": [labels[t] for t in labels]}
        ).to_csv(out_dir / "blocks.csv", index=False)
