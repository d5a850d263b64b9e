"""Momentum feature construction.

Eight features per asset per day: volatility-scaled returns over 1, 21, 63,
126 and 252 days, and three normalized MACD indicators with (short, long)
scales (8,24), (16,48) and (32,96). Each raw feature series is winsorized
before assembly into the per-day feature matrix.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import pandas as pd

from netmom.market_data import EwmSpec, PricePanel, daily_returns, ewm_mean, ewm_std

__all__ = [
    "FEATURE_COLUMNS",
    "MACD_SCALES",
    "VOL_SCALED_DELTAS",
    "FeaturePanel",
    "StackedFeatureMatrix",
    "WinsorSpec",
    "build_feature_panel",
    "daily_vol",
    "macd_feature",
    "stack_lookback",
    "vol_scaled_return",
    "winsorize",
]

VOL_SCALED_DELTAS = (1, 21, 63, 126, 252)
MACD_SCALES = ((8, 24), (16, 48), (32, 96))

# Fixed column order; downstream regression coefficients depend on it.
FEATURE_COLUMNS = (
    "vs_ret_1",
    "vs_ret_21",
    "vs_ret_63",
    "vs_ret_126",
    "vs_ret_252",
    "macd_8_24",
    "macd_16_48",
    "macd_32_96",
)

VOL_SPAN = 60
MACD_PRICE_STD_WINDOW = 63
MACD_NORM_STD_WINDOW = 252


@dataclass(frozen=True)
class WinsorSpec:
    """Winsorization band: mean +/- multiplier * std, EWM at given half-life."""

    multiplier: float = 5.0
    half_life: float = 252.0

    def __post_init__(self):
        if self.multiplier <= 0 or self.half_life <= 0:
            raise ValueError("winsor multiplier and half_life must be positive")


def daily_vol(returns: pd.Series | pd.DataFrame, span: int = VOL_SPAN):
    """Daily EWM standard deviation of returns (the sigma_t of the features)."""
    spec = EwmSpec.span(span)
    if isinstance(returns, pd.DataFrame):
        return returns.apply(lambda col: ewm_std(col, spec))
    return ewm_std(returns, spec)


def vol_scaled_return(prices: pd.Series, sigma_daily: pd.Series, delta: int) -> pd.Series:
    """(p_t/p_{t-delta} - 1) / (sigma_t * sqrt(delta)); NaN on zero sigma."""
    if delta not in VOL_SCALED_DELTAS:
        raise ValueError(f"delta must be one of {VOL_SCALED_DELTAS}, got {delta}")
    window_ret = prices / prices.shift(delta) - 1.0
    denom = sigma_daily * math.sqrt(delta)
    return window_ret / denom.where(denom > 0)


def macd_feature(prices: pd.Series, short: int, long: int) -> pd.Series:
    """Normalized MACD y_t for one (short, long) scale pair.

    The crossover m(t, S) - m(t, L) of exponential moving averages with
    alpha = 1/J is divided by the 63-day rolling std of prices, and that
    ratio by its own 252-day rolling std. Zero denominators yield NaN.
    """
    if (short, long) not in MACD_SCALES:
        raise ValueError(f"(short, long) must be one of {MACD_SCALES}, got {(short, long)}")
    m_short = prices.ewm(alpha=1.0 / short, adjust=False, ignore_na=False).mean()
    m_long = prices.ewm(alpha=1.0 / long, adjust=False, ignore_na=False).mean()
    macd = (m_short - m_long).where(prices.notna())
    price_std = prices.rolling(MACD_PRICE_STD_WINDOW).std()
    macd_norm = macd / price_std.where(price_std > 0)
    norm_std = macd_norm.rolling(MACD_NORM_STD_WINDOW).std()
    return macd_norm / norm_std.where(norm_std > 0)


def winsorize(raw: pd.Series, spec: WinsorSpec | None = None) -> pd.Series:
    """Clip a feature series to its EWM mean +/- multiplier * EWM std.

    Bands use expanding normalized weights at the spec's half-life and
    include the current observation. Where the band is undefined (fewer
    than two observations) values pass through unclipped.
    """
    spec = spec or WinsorSpec()
    ewm = EwmSpec.half_life(spec.half_life)
    mu = ewm_mean(raw, ewm)
    sigma = ewm_std(raw, ewm)
    lo = mu - spec.multiplier * sigma
    hi = mu + spec.multiplier * sigma
    # NaN comparisons are False, so undefined bands leave values untouched
    out = raw.where(~(raw < lo), lo)
    out = out.where(~(out > hi), hi)
    return out


@dataclass(frozen=True)
class FeaturePanel:
    """All eight feature series for every asset, aligned on one calendar.

    ``frames`` maps each FEATURE_COLUMNS name to a date x ticker DataFrame.
    """

    frames: dict[str, pd.DataFrame]

    @property
    def calendar(self) -> pd.DatetimeIndex:
        return self.frames[FEATURE_COLUMNS[0]].index

    @property
    def tickers(self) -> list[str]:
        return list(self.frames[FEATURE_COLUMNS[0]].columns)

    def matrix_at(self, date, tickers: list[str] | None = None) -> tuple[np.ndarray, list[str]]:
        """The N_t x 8 feature matrix at one date.

        Rows are restricted to assets whose eight features are all present
        (the availability rule); ticker order is the panel's fixed order.
        """
        tickers = self.tickers if tickers is None else tickers
        block = np.column_stack(
            [self.frames[name].loc[date, tickers].to_numpy(float) for name in FEATURE_COLUMNS]
        )
        keep = ~np.isnan(block).any(axis=1)
        return block[keep], [t for t, k in zip(tickers, keep) if k]

    def row(self, date, ticker) -> np.ndarray:
        return np.array([self.frames[name].at[date, ticker] for name in FEATURE_COLUMNS])

    def to_long(self) -> pd.DataFrame:
        """Long-format dump: date, ticker, then the eight feature columns."""
        cols = {name: self.frames[name].stack(future_stack=True) for name in FEATURE_COLUMNS}
        out = pd.DataFrame(cols)
        out.index.names = ["date", "ticker"]
        return out.reset_index()


def build_feature_panel(
    panel: PricePanel,
    winsor: WinsorSpec | None = WinsorSpec(),
    vol_span: int = VOL_SPAN,
) -> FeaturePanel:
    """Compute the eight winsorized momentum features for every asset.

    Pass ``winsor=None`` to skip winsorization (used by oracles/tests).
    """
    rets = daily_returns(panel).returns
    sigma = daily_vol(rets, span=vol_span)
    frames: dict[str, dict[str, pd.Series]] = {name: {} for name in FEATURE_COLUMNS}
    for ticker in panel.tickers:
        p = panel.prices[ticker]
        s = sigma[ticker]
        raw: dict[str, pd.Series] = {}
        for delta in VOL_SCALED_DELTAS:
            raw[f"vs_ret_{delta}"] = vol_scaled_return(p, s, delta)
        for short, long in MACD_SCALES:
            raw[f"macd_{short}_{long}"] = macd_feature(p, short, long)
        for name in FEATURE_COLUMNS:
            series = raw[name]
            frames[name][ticker] = winsorize(series, winsor) if winsor else series
    built = {
        name: pd.DataFrame(frames[name], index=panel.calendar, columns=panel.tickers)
        for name in FEATURE_COLUMNS
    }
    return FeaturePanel(frames=built)


@dataclass(frozen=True)
class StackedFeatureMatrix:
    """Features stacked over a lookback window: one row per retained asset.

    ``matrix`` has shape N x (8 * lookback); columns iterate dates within
    the window (oldest first), eight features per date.
    """

    date: pd.Timestamp
    lookback: int
    tickers: tuple[str, ...]
    matrix: np.ndarray

    @property
    def is_empty(self) -> bool:
        return len(self.tickers) == 0


STACK_LOOKBACKS = (252, 504, 756, 1008, 1260)


def stack_lookback(
    features: FeaturePanel,
    date,
    delta: int,
    max_missing_frac: float = 0.10,
) -> StackedFeatureMatrix:
    """Stack the feature matrices over the trailing ``delta`` trading days.

    Assets with a missing-entry fraction >= max_missing_frac over the
    8*delta window cells are dropped; survivors are forward-filled per
    feature within the window, then any leading gaps are zero-filled.
    """
    if delta not in STACK_LOOKBACKS:
        raise ValueError(f"lookback must be one of {STACK_LOOKBACKS}, got {delta}")
    if not 0 <= max_missing_frac < 1:
        raise ValueError(f"max_missing_frac must lie in [0, 1), got {max_missing_frac}")
    calendar = features.calendar
    pos = calendar.get_loc(pd.Timestamp(date))
    if pos + 1 < delta:
        return StackedFeatureMatrix(pd.Timestamp(date), delta, (), np.empty((0, 8 * delta)))
    window = calendar[pos + 1 - delta : pos + 1]

    tickers = features.tickers
    # cube: dates x tickers x 8 features
    cube = np.stack(
        [features.frames[name].loc[window].to_numpy(float) for name in FEATURE_COLUMNS],
        axis=2,
    )
    missing_frac = np.isnan(cube).mean(axis=(0, 2))
    keep = missing_frac < max_missing_frac
    kept = [t for t, k in zip(tickers, keep) if k]
    if not kept:
        return StackedFeatureMatrix(pd.Timestamp(date), delta, (), np.empty((0, 8 * delta)))
    sub = cube[:, keep, :]
    sub = _ffill_along_time(sub)
    sub = np.nan_to_num(sub, nan=0.0)
    # rows per asset: dates (oldest first) x features, flattened
    matrix = sub.transpose(1, 0, 2).reshape(len(kept), delta * 8)
    return StackedFeatureMatrix(pd.Timestamp(date), delta, tuple(kept), matrix)


def _ffill_along_time(cube: np.ndarray) -> np.ndarray:
    """Forward-fill NaNs along axis 0 of a (time, asset, feature) cube.

    Positions before the first observation stay NaN.
    """
    mask = np.isnan(cube)
    idx = np.where(mask, 0, np.arange(cube.shape[0])[:, None, None])
    np.maximum.accumulate(idx, axis=0, out=idx)
    return np.take_along_axis(cube, idx, axis=0)
