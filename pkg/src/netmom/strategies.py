"""Trading signal construction.

Signals are date x ticker position frames. Model-free rules (Long Only,
MACD) read features or prices directly; model-based rules (LinReg, GMOM,
RegCombo) take the sign of a pooled linear trend prediction. Network
momentum propagates each asset's features to its neighbours through the
normalized graph before the regression step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import pandas as pd

from netmom.features import FEATURE_COLUMNS, FeaturePanel
from netmom.graph_learning import GraphSnapshot

__all__ = [
    "PropagatedFeatures",
    "RegressionModel",
    "SignalSeries",
    "coefficient_report",
    "fit_ols",
    "phi",
    "propagate",
    "signals_gmom",
    "signals_linreg",
    "signals_long_only",
    "signals_macd",
    "signals_regcombo",
    "signals_signcombo",
]

T_CRITICAL_5PCT = 1.96  # two-sided 5% under the normal approximation

NETWORK_FEATURE_COLUMNS = tuple(f"net_{name}" for name in FEATURE_COLUMNS)
COMBO_FEATURE_COLUMNS = FEATURE_COLUMNS + NETWORK_FEATURE_COLUMNS


@dataclass(frozen=True)
class PropagatedFeatures:
    """Network momentum features: neighbour-weighted averages of U_t rows.

    ``frames`` maps each NETWORK_FEATURE_COLUMNS name to a date x ticker
    DataFrame; values exist for graph nodes only.
    """

    frames: dict[str, pd.DataFrame]

    def matrix_at(self, date, tickers) -> np.ndarray:
        return np.column_stack(
            [self.frames[name].loc[date, tickers].to_numpy(float) for name in NETWORK_FEATURE_COLUMNS]
        )


@dataclass(frozen=True)
class SignalSeries:
    """Per-day, per-asset positions for one strategy."""

    strategy: str
    positions: pd.DataFrame

    def aligned(self, other: "SignalSeries") -> tuple[pd.DataFrame, pd.DataFrame]:
        a, b = self.positions.align(other.positions, join="outer")
        return a, b


def _propagate_matrix(graph: GraphSnapshot, features: FeaturePanel, date) -> np.ndarray:
    """Adjacency times the day's feature matrix over the graph node set."""
    tickers = list(graph.tickers)
    u = np.column_stack(
        [features.frames[name].loc[date, tickers].to_numpy(float) for name in FEATURE_COLUMNS]
    )
    u_filled = np.where(np.isnan(u).any(axis=1)[:, None], 0.0, u)
    return graph.adjacency @ u_filled


def propagate(graph: GraphSnapshot, features: FeaturePanel, date) -> dict[str, np.ndarray]:
    """One day of network momentum: u~_i = sum_j A~_ij u_j.

    Assets lacking a complete feature row at ``date`` are dropped from the
    sums (their rows contribute nothing) but still receive propagated
    values. The zero diagonal guarantees no self-information flows.
    Returns {ticker: 8-vector} over the graph's node set.
    """
    tilde = _propagate_matrix(graph, features, date)
    return {t: tilde[i] for i, t in enumerate(graph.tickers)}


def propagate_series(graphs: dict, features: FeaturePanel, dates) -> PropagatedFeatures:
    """Propagate features through the per-date graphs over a date range."""
    calendar = pd.DatetimeIndex(dates)
    tickers = features.tickers
    pos = {t: i for i, t in enumerate(tickers)}
    buf = np.full((8, len(calendar), len(tickers)), np.nan)
    for di, date in enumerate(calendar):
        graph = graphs.get(date)
        if graph is None:
            continue
        tilde = _propagate_matrix(graph, features, date)
        idx = [pos[t] for t in graph.tickers]
        buf[:, di, idx] = tilde.T
    frames = {
        name: pd.DataFrame(buf[j], index=calendar, columns=tickers)
        for j, name in enumerate(NETWORK_FEATURE_COLUMNS)
    }
    return PropagatedFeatures(frames=frames)


@dataclass(frozen=True)
class RegressionModel:
    """Pooled OLS trend model on standardized features.

    Coefficients, standard errors and t-statistics are reported on the
    standardized feature scale; predictions standardize raw inputs with the
    training means/stds first.
    """

    feature_names: tuple[str, ...]
    coef: np.ndarray
    intercept: float
    feature_means: np.ndarray
    feature_stds: np.ndarray
    std_errors: np.ndarray
    intercept_se: float
    n_samples: int
    label: str = ""

    @property
    def t_stats(self) -> np.ndarray:
        return self.coef / self.std_errors

    @property
    def significant(self) -> np.ndarray:
        return np.abs(self.t_stats) > T_CRITICAL_5PCT

    def predict(self, x_raw: np.ndarray) -> np.ndarray:
        x = np.asarray(x_raw, dtype=float)
        xs = (x - self.feature_means) / self.feature_stds
        return xs @ self.coef + self.intercept


class CollinearityError(np.linalg.LinAlgError):
    """Raised when the design matrix is numerically singular."""


def fit_ols(
    x: np.ndarray,
    y: np.ndarray,
    feature_names: tuple[str, ...],
    label: str = "",
    cond_limit: float = 1e10,
) -> RegressionModel:
    """Closed-form least squares with intercept on standardized features.

    Standard errors use the classical homoskedastic estimate
    s^2 (X'X)^{-1} with s^2 = RSS / (n - p - 1). Rows containing NaN must
    be dropped by the caller; a near-singular design raises
    CollinearityError naming the offending columns.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n, p = x.shape
    if p != len(feature_names):
        raise ValueError("feature_names length does not match design width")
    if n < p + 2:
        raise ValueError(f"need at least {p + 2} samples to fit {p} features, got {n}")
    if np.isnan(x).any() or np.isnan(y).any():
        raise ValueError("design matrix and target must not contain NaN")

    means = x.mean(axis=0)
    stds = x.std(axis=0, ddof=0)
    degenerate = [feature_names[j] for j in np.flatnonzero(stds <= 0)]
    if degenerate:
        raise CollinearityError(f"constant feature columns cannot be standardized: {degenerate}")
    xs = (x - means) / stds

    design = np.column_stack([np.ones(n), xs])
    u, s, vt = np.linalg.svd(design, full_matrices=False)
    cond = s[0] / s[-1] if s[-1] > 0 else np.inf
    if cond > cond_limit:
        v_small = vt[-1, 1:]  # drop the intercept coordinate
        suspects = [feature_names[j] for j in np.flatnonzero(np.abs(v_small) > 0.3)]
        raise CollinearityError(
            f"design matrix is numerically singular (condition number {cond:.3g}); "
            f"suspect collinear columns: {suspects or list(feature_names)}"
        )
    beta_full = vt.T @ ((u.T @ y) / s)
    resid = y - design @ beta_full
    dof = n - p - 1
    s2 = float(resid @ resid) / dof
    cov = s2 * (vt.T * (1.0 / s**2)) @ vt
    se_full = np.sqrt(np.diag(cov))

    return RegressionModel(
        feature_names=tuple(feature_names),
        coef=beta_full[1:],
        intercept=float(beta_full[0]),
        feature_means=means,
        feature_stds=stds,
        std_errors=se_full[1:],
        intercept_se=float(se_full[0]),
        n_samples=n,
        label=label,
    )


def _sign_frame(pred: pd.DataFrame, strategy: str) -> SignalSeries:
    signs = np.sign(pred)
    return SignalSeries(strategy=strategy, positions=signs)


def _predict_frame(
    model: RegressionModel, frames: dict[str, pd.DataFrame], names: tuple[str, ...], dates, tickers
) -> pd.DataFrame:
    """Model predictions as a date x ticker frame; NaN where a feature is missing."""
    calendar = pd.DatetimeIndex(dates)
    stack = np.stack([frames[n].loc[calendar, tickers].to_numpy(float) for n in names], axis=2)
    complete = ~np.isnan(stack).any(axis=2)
    flat = stack.reshape(-1, len(names))
    preds = np.full(flat.shape[0], np.nan)
    ok = complete.reshape(-1)
    if ok.any():
        preds[ok] = model.predict(flat[ok])
    return pd.DataFrame(preds.reshape(len(calendar), len(tickers)), index=calendar, columns=tickers)


def signals_gmom(model: RegressionModel, propagated: PropagatedFeatures, dates, tickers) -> SignalSeries:
    """Network momentum positions: sign of the pooled prediction (sign(0) = 0)."""
    pred = _predict_frame(model, propagated.frames, NETWORK_FEATURE_COLUMNS, dates, tickers)
    return _sign_frame(pred, "GMOM")


def signals_linreg(model: RegressionModel, features: FeaturePanel, dates, tickers) -> SignalSeries:
    """Individual momentum positions: sign of the prediction on own features."""
    pred = _predict_frame(model, features.frames, FEATURE_COLUMNS, dates, tickers)
    return _sign_frame(pred, "LinReg")


def signals_regcombo(
    model16: RegressionModel, features: FeaturePanel, propagated: PropagatedFeatures, dates, tickers
) -> SignalSeries:
    """Positions from the 16-feature regression (individual + network)."""
    frames = {**features.frames, **propagated.frames}
    pred = _predict_frame(model16, frames, COMBO_FEATURE_COLUMNS, dates, tickers)
    return _sign_frame(pred, "RegCombo")


def signals_signcombo(a: SignalSeries, b: SignalSeries) -> SignalSeries:
    """Elementwise mean of two sign signals (half LinReg, half GMOM)."""
    pa, pb = a.aligned(b)
    return SignalSeries(strategy="SignCombo", positions=0.5 * pa + 0.5 * pb)


PHI_NORMALIZER = 0.89


def phi(y):
    """Position scaling y * exp(-y^2/4) / 0.89; odd, maximal at y = sqrt(2)."""
    y = np.asarray(y, dtype=float)
    return y * np.exp(-(y**2) / 4.0) / PHI_NORMALIZER


def signals_macd(features: FeaturePanel, dates=None, tickers=None) -> SignalSeries:
    """Model-free MACD positions: mean of phi over the three y indicators.

    All three indicators must be present; otherwise the signal is missing.
    """
    macd_names = [n for n in FEATURE_COLUMNS if n.startswith("macd_")]
    dates = features.calendar if dates is None else pd.DatetimeIndex(dates)
    tickers = features.tickers if tickers is None else list(tickers)
    acc = None
    for name in macd_names:
        term = phi(features.frames[name].loc[dates, tickers])
        acc = term if acc is None else acc + term
    return SignalSeries(strategy="MACD", positions=acc / len(macd_names))


def signals_long_only(prices: pd.DataFrame, dates=None, tickers=None) -> SignalSeries:
    """Constant long position wherever the asset trades (price present)."""
    dates = prices.index if dates is None else pd.DatetimeIndex(dates)
    tickers = list(prices.columns) if tickers is None else list(tickers)
    block = prices.loc[dates, tickers]
    positions = pd.DataFrame(
        np.where(block.notna(), 1.0, np.nan), index=dates, columns=tickers
    )
    return SignalSeries(strategy="LongOnly", positions=positions)


def coefficient_report(models: list[RegressionModel]) -> pd.DataFrame:
    """Tidy per-period coefficient table with significance markers.

    One row per (model label, feature): coefficient, standard error,
    t-statistic, significance at p < 0.05 and the coefficient sign.
    """
    rows = []
    for model in models:
        for j, name in enumerate(model.feature_names):
            rows.append(
                {
                    "period": model.label,
                    "feature": name,
                    "coef": model.coef[j],
                    "std_error": model.std_errors[j],
                    "t_stat": model.t_stats[j],
                    "significant": bool(model.significant[j]),
                    "sign": int(np.sign(model.coef[j])),
                }
            )
    columns = ["period", "feature", "coef", "std_error", "t_stat", "significant", "sign"]
    return pd.DataFrame(rows, columns=columns)


def coefficient_table_wide(report: pd.DataFrame) -> pd.DataFrame:
    """Period-by-feature table with cells like '0.038* (0.003)'."""
    if report.empty:
        return pd.DataFrame()

    def cell(row):
        star = "*" if row.significant else ""
        return f"{row.coef:.3f}{star} ({row.std_error:.3f})"

    body = report.assign(cell=[cell(r) for r in report.itertuples()])
    wide = body.pivot(index="period", columns="feature", values="cell")
    order = [f for f in body["feature"].drop_duplicates()]
    return wide[order]
