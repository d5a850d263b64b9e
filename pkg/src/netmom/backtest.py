"""Walk-forward backtest engine.

Implements the expanding-window retraining protocol, the volatility-scaled
long/short portfolio rule, portfolio-level volatility targeting, the
performance metric set, turnover and linear cost adjustment, and the
diversification statistics. Signals at date t are built strictly from data
dated <= t and applied to the t -> t+1 return.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
import pandas as pd

from netmom.features import (
    FEATURE_COLUMNS,
    STACK_LOOKBACKS,
    FeaturePanel,
    build_feature_panel,
    daily_vol,
)
from netmom.graph_learning import (
    DEFAULT_MAX_ITER,
    DEFAULT_SPARSIFY_EPS,
    DEFAULT_TOL,
    HP_GRID_VALUES,
    GraphHyperParams,
    GraphLearningError,
    grid_search,
    learn_graph_pipeline,
)
from netmom.market_data import DataError, EwmSpec, PricePanel, daily_returns, ewm_std
from netmom.strategies import (
    COMBO_FEATURE_COLUMNS,
    NETWORK_FEATURE_COLUMNS,
    CollinearityError,
    PropagatedFeatures,
    RegressionModel,
    SignalSeries,
    fit_ols,
    propagate_series,
    signals_gmom,
    signals_linreg,
    signals_long_only,
    signals_macd,
    signals_regcombo,
    signals_signcombo,
)

__all__ = [
    "BacktestConfig",
    "CostModel",
    "PerfReport",
    "PortfolioReturns",
    "TurnoverAnalysis",
    "WalkForwardResult",
    "WalkForwardSplit",
    "cost_adjusted_returns",
    "generate_splits",
    "perf_metrics",
    "permute_future_returns",
    "portfolio_returns",
    "return_correlation",
    "run_walk_forward",
    "scale_to_target_vol",
    "sign_agreement",
    "turnover",
]

logger = logging.getLogger(__name__)

ANNUALIZATION = 252
DEFAULT_VOL_TARGET = 0.15
DEFAULT_COST_GRID = (0.0, 0.5, 1.0, 2.0, 3.0, 4.0, 5.0)

MODEL_FREE = ("LongOnly", "MACD")
BASE_STRATEGIES = ("LongOnly", "MACD", "LinReg", "GMOM", "RegCombo", "SignCombo")


@dataclass(frozen=True)
class WalkForwardSplit:
    """One expanding-window split: train (with validation tail) and test."""

    train: pd.DatetimeIndex
    validation: pd.DatetimeIndex
    test: pd.DatetimeIndex

    @property
    def label(self) -> str:
        return f"{self.train[0].year}-{self.train[-1].year}"


def generate_splits(
    calendar: pd.DatetimeIndex,
    train_years: int = 10,
    test_years: int = 5,
    validation_frac: float = 0.10,
) -> list[WalkForwardSplit]:
    """Expanding-window splits in whole calendar years.

    The first test block starts train_years after the calendar's first
    year; training always starts at the first year. The final test block is
    truncated at the calendar end. Validation is the last
    ceil(validation_frac * len(train)) trading days of each train span.
    """
    if len(calendar) == 0:
        raise DataError("empty calendar")
    years = calendar.year
    first_year, last_year = int(years[0]), int(years[-1])
    splits: list[WalkForwardSplit] = []
    test_start = first_year + train_years
    while test_start <= last_year:
        test_end = min(test_start + test_years - 1, last_year)
        train = calendar[(years >= first_year) & (years < test_start)]
        test = calendar[(years >= test_start) & (years <= test_end)]
        if len(train) == 0 or len(test) == 0:
            break
        n_val = math.ceil(validation_frac * len(train))
        splits.append(
            WalkForwardSplit(train=train, validation=train[-n_val:], test=test)
        )
        test_start += test_years
    if not splits:
        raise DataError(
            f"calendar {first_year}-{last_year} too short for "
            f"{train_years}y train / {test_years}y test splits"
        )
    return splits


@dataclass(frozen=True)
class PortfolioReturns:
    """Daily portfolio return series with its scaling tag."""

    strategy: str
    scaling: str  # raw | vol_scaled
    returns: pd.Series


@dataclass(frozen=True)
class CostModel:
    """Linear transaction cost in basis points of turnover."""

    cost_bps: float

    def __post_init__(self):
        if self.cost_bps < 0:
            raise ValueError(f"cost must be non-negative, got {self.cost_bps}")

    @property
    def cost(self) -> float:
        return self.cost_bps * 1e-4


def _aligned_inputs(signals: SignalSeries, returns: pd.DataFrame, sigma_ann: pd.DataFrame):
    x = signals.positions
    dates, tickers = x.index, x.columns
    r_next = returns.shift(-1).reindex(index=dates, columns=tickers)
    sig = sigma_ann.reindex(index=dates, columns=tickers)
    return x, r_next, sig


def portfolio_returns(
    signals: SignalSeries,
    returns: pd.DataFrame,
    sigma_ann: pd.DataFrame,
    vol_target: float = DEFAULT_VOL_TARGET,
) -> PortfolioReturns:
    """Long/short portfolio rule: mean over assets of x * (tgt/sigma) * r.

    The position at t applies to the t -> t+1 return; the series is indexed
    by signal date. Assets missing a signal, next-day return or volatility
    at t drop out of that day's average; zero-volatility assets are
    excluded with a logged count. Days with no tradable asset are omitted.
    """
    x, r_next, sig = _aligned_inputs(signals, returns, sigma_ann)
    zero_vol = (sig == 0) & x.notna() & r_next.notna()
    if zero_vol.to_numpy().any():
        logger.info(
            "%s: excluded %d asset-days with zero volatility",
            signals.strategy,
            int(zero_vol.to_numpy().sum()),
        )
    valid = x.notna() & r_next.notna() & sig.notna() & (sig > 0)
    contrib = (x * (vol_target / sig) * r_next).where(valid)
    n_t = valid.sum(axis=1)
    port = contrib.sum(axis=1).where(n_t > 0) / n_t.where(n_t > 0)
    return PortfolioReturns(signals.strategy, "raw", port.dropna())


def scale_to_target_vol(
    port: PortfolioReturns,
    vol_target: float = DEFAULT_VOL_TARGET,
    span: int = 60,
    min_history: int = 60,
) -> PortfolioReturns:
    """Second volatility-scaling layer at the portfolio level.

    Each daily return is multiplied by vol_target over the annualized EWM
    std of the portfolio's own returns through that day; the series starts
    once min_history days have accrued. Zero-vol days are omitted.
    """
    r = port.returns
    if len(r) <= min_history:
        raise ValueError(f"need more than {min_history} days to scale, got {len(r)}")
    sigma_ann = ewm_std(r, EwmSpec.span(span)) * math.sqrt(ANNUALIZATION)
    mult = vol_target / sigma_ann.where(sigma_ann > 0)
    scaled = (r * mult).iloc[min_history:].dropna()
    return PortfolioReturns(port.strategy, "vol_scaled", scaled)


@dataclass(frozen=True)
class PerfReport:
    """Annualized performance and risk metrics for one return series."""

    ann_return: float
    ann_vol: float
    sharpe: float | None
    downside_dev: float
    mdd: float
    mdd_duration: float
    sortino: float | None
    calmar: float | None
    hit_rate: float
    avg_profit_over_avg_loss: float | None
    n_days: int
    notes: tuple[str, ...] = ()

    def as_dict(self) -> dict:
        return {
            "ann_return": self.ann_return,
            "ann_vol": self.ann_vol,
            "sharpe": self.sharpe,
            "downside_dev": self.downside_dev,
            "mdd": self.mdd,
            "mdd_duration": self.mdd_duration,
            "sortino": self.sortino,
            "calmar": self.calmar,
            "hit_rate": self.hit_rate,
            "avg_profit_over_avg_loss": self.avg_profit_over_avg_loss,
            "n_days": self.n_days,
            "notes": list(self.notes),
        }


def _max_drawdown(equity: np.ndarray) -> tuple[float, int, int, int]:
    """MDD plus (peak, trough, recovery) indices on the equity curve."""
    running_max = np.maximum.accumulate(equity)
    drawdown = 1.0 - equity / running_max
    trough = int(np.argmax(drawdown))
    mdd = float(drawdown[trough])
    if mdd == 0.0:
        return 0.0, 0, 0, 0
    peak = int(np.argmax(equity[: trough + 1]))
    after = np.flatnonzero(equity[trough:] >= equity[peak])
    recovery = trough + int(after[0]) if len(after) else len(equity) - 1
    return mdd, peak, trough, recovery


def perf_metrics(port: PortfolioReturns, mdd_duration_mode: str = "underwater") -> PerfReport:
    """The ten-metric report; daily stats annualized with 252 days/year.

    mdd_duration_mode "underwater" measures the maximum-drawdown episode
    from its peak to recovery (or series end); "peak_to_trough" stops at
    the trough.
    """
    if mdd_duration_mode not in ("underwater", "peak_to_trough"):
        raise ValueError("mdd_duration_mode must be 'underwater' or 'peak_to_trough'")
    r = port.returns.to_numpy(float)
    if len(r) == 0:
        raise ValueError("empty return series")
    notes: list[str] = []
    ann_return = float(r.mean() * ANNUALIZATION)
    ann_vol = float(r.std(ddof=1) * math.sqrt(ANNUALIZATION)) if len(r) > 1 else 0.0
    downside = float(math.sqrt(ANNUALIZATION) * np.sqrt(np.mean(np.minimum(r, 0.0) ** 2)))

    equity = np.concatenate([[1.0], np.cumprod(1.0 + r)])
    mdd, peak, trough, recovery = _max_drawdown(equity)
    horizon = trough if mdd_duration_mode == "peak_to_trough" else recovery
    mdd_duration = float(horizon - peak) / len(r) if mdd > 0 else 0.0

    if ann_vol > 0:
        sharpe = ann_return / ann_vol
    else:
        sharpe = None
        notes.append("sharpe undefined: zero volatility")
    sortino = ann_return / downside if downside > 0 else None
    if sortino is None:
        notes.append("sortino undefined: zero downside deviation")
    calmar = ann_return / mdd if mdd > 0 else None
    if calmar is None:
        notes.append("calmar undefined: zero drawdown")
    hit_rate = float((r > 0).mean())
    gains, losses = r[r > 0], r[r < 0]
    if len(gains) and len(losses):
        avg_pl = float(gains.mean() / abs(losses.mean()))
    else:
        avg_pl = None
        notes.append("avg P/L undefined: one-sided returns")
    return PerfReport(
        ann_return=ann_return,
        ann_vol=ann_vol,
        sharpe=sharpe,
        downside_dev=downside,
        mdd=mdd,
        mdd_duration=mdd_duration,
        sortino=sortino,
        calmar=calmar,
        hit_rate=hit_rate,
        avg_profit_over_avg_loss=avg_pl,
        n_days=len(r),
        notes=tuple(notes),
    )


@dataclass(frozen=True)
class TurnoverAnalysis:
    """Per-asset turnover panel plus its daily and overall averages."""

    panel: pd.DataFrame
    daily_avg: pd.Series
    avg: float


def _scaled_positions(x: pd.DataFrame, sig: pd.DataFrame) -> pd.DataFrame:
    tradable = x.notna() & sig.notna() & (sig > 0)
    return (x / sig).where(tradable, 0.0)


def turnover(
    signals: SignalSeries,
    sigma_ann: pd.DataFrame,
    vol_target: float = DEFAULT_VOL_TARGET,
) -> TurnoverAnalysis:
    """zeta_{i,t} = vol_target * |x_t/sigma_t - x_{t-1}/sigma_{t-1}|.

    Untradable asset-days (no signal or no volatility) carry a flat
    effective position, so entering and leaving the universe is charged;
    the first day establishes the position from flat. The daily average
    covers assets active on the day or the day before.
    """
    x = signals.positions
    sig = sigma_ann.reindex(index=x.index, columns=x.columns)
    pos = _scaled_positions(x, sig)
    prev = pos.shift(1).fillna(0.0)
    zeta = vol_target * (pos - prev).abs()
    active = x.notna() | x.shift(1).notna()
    daily = zeta.where(active).mean(axis=1)
    return TurnoverAnalysis(panel=zeta, daily_avg=daily, avg=float(daily.mean()))


def cost_adjusted_returns(
    signals: SignalSeries,
    returns: pd.DataFrame,
    sigma_ann: pd.DataFrame,
    cost: CostModel,
    vol_target: float = DEFAULT_VOL_TARGET,
) -> PortfolioReturns:
    """Portfolio returns with per-asset linear turnover costs inside the mean."""
    x, r_next, sig = _aligned_inputs(signals, returns, sigma_ann)
    valid = x.notna() & r_next.notna() & sig.notna() & (sig > 0)
    zeta = turnover(signals, sigma_ann, vol_target).panel
    contrib = (x * (vol_target / sig) * r_next - cost.cost * zeta).where(valid)
    n_t = valid.sum(axis=1)
    port = contrib.sum(axis=1).where(n_t > 0) / n_t.where(n_t > 0)
    return PortfolioReturns(signals.strategy, f"raw_cost_{cost.cost_bps}bps", port.dropna())


def return_correlation(a: PortfolioReturns, b: PortfolioReturns, min_overlap: int = 30) -> float:
    """Pearson correlation of two return series on their date intersection."""
    joined = pd.concat([a.returns, b.returns], axis=1, join="inner").dropna()
    if len(joined) < min_overlap:
        raise ValueError(f"need at least {min_overlap} overlapping days, got {len(joined)}")
    return float(np.corrcoef(joined.iloc[:, 0], joined.iloc[:, 1])[0, 1])


def sign_agreement(a: SignalSeries, b: SignalSeries) -> float:
    """Fraction of (date, ticker) cells where both nonzero signs coincide."""
    pa, pb = a.aligned(b)
    mask = pa.notna() & pb.notna() & (pa != 0) & (pb != 0)
    total = int(mask.to_numpy().sum())
    if total == 0:
        raise ValueError("no overlapping cells with both signs nonzero")
    same = (np.sign(pa) == np.sign(pb)) & mask
    return float(same.to_numpy().sum() / total)


def permute_future_returns(panel: PricePanel, cutoff, seed: int = 0) -> PricePanel:
    """Look-ahead probe: shuffle the time order of all post-cutoff returns.

    Prices up to and including the cutoff date are unchanged; afterwards the
    daily return rows are permuted with a seeded RNG and prices recompounded.
    Requires a gap-free panel after the cutoff.
    """
    cutoff = pd.Timestamp(cutoff)
    prices = panel.prices
    future = prices.index > cutoff
    if not future.any():
        return panel
    if prices.loc[future].isna().to_numpy().any() or prices.loc[[cutoff]].isna().to_numpy().any():
        raise ValueError("probe requires a gap-free panel after the cutoff")
    rets = (prices / prices.shift(1) - 1.0).loc[future].to_numpy()
    rng = np.random.default_rng(seed)
    shuffled = rets[rng.permutation(len(rets))]
    base = prices.loc[cutoff].to_numpy()
    rebuilt = base * np.cumprod(1.0 + shuffled, axis=0)
    new_prices = prices.copy()
    new_prices.loc[future] = rebuilt
    return PricePanel(assets=panel.assets, prices=new_prices)


# ---------------------------------------------------------------------------
# walk-forward orchestration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BacktestConfig:
    """Protocol constants for a walk-forward run (paper defaults)."""

    strategies: tuple[str, ...] = BASE_STRATEGIES
    ablations: tuple[str, ...] = ()  # "intra", "inter", "class:<CLS>"
    lookbacks: tuple[int, ...] = STACK_LOOKBACKS
    max_missing_frac: float = 0.10
    alpha_grid: tuple[float, ...] = HP_GRID_VALUES
    beta_grid: tuple[float, ...] = HP_GRID_VALUES
    graph_stride: int = 1
    grid_search_stride: int = 21
    vol_target: float = DEFAULT_VOL_TARGET
    vol_span: int = 60
    train_years: int = 10
    test_years: int = 5
    validation_frac: float = 0.10
    cost_bps: tuple[float, ...] = DEFAULT_COST_GRID
    solver_tol: float = DEFAULT_TOL
    solver_max_iter: int = DEFAULT_MAX_ITER
    solver_failure_budget: int = 0
    sparsify_rel_eps: float = DEFAULT_SPARSIFY_EPS
    spectral_clusters: int = 4
    mdd_duration_mode: str = "underwater"
    scale_distances: bool = False
    seed: int = 0

    def hyper_grid(self) -> list[GraphHyperParams]:
        return [GraphHyperParams(a, b) for a in self.alpha_grid for b in self.beta_grid]


@dataclass
class WalkForwardResult:
    """Everything a reporting layer needs from one walk-forward run."""

    splits: list[WalkForwardSplit]
    signals: dict[str, SignalSeries]
    raw_returns: dict[str, PortfolioReturns]
    scaled_returns: dict[str, PortfolioReturns]
    perf: dict[str, dict[str, PerfReport]]
    turnover: dict[str, TurnoverAnalysis]
    cost_curve: pd.DataFrame
    models: dict[str, list[RegressionModel]]
    hyperparams: list[dict]
    graphs: dict
    solver_failures: int = 0


class SolverBudgetError(RuntimeError):
    """Raised when more graph solves fail than the configured budget."""


def _pooled_samples(
    frames: dict[str, pd.DataFrame],
    names: tuple[str, ...],
    dates: pd.DatetimeIndex,
    target: pd.DataFrame,
    tickers: list[str],
) -> tuple[np.ndarray, np.ndarray]:
    """Stack complete (features, target) rows across dates and assets."""
    if len(dates) == 0:
        return np.empty((0, len(names))), np.empty(0)
    cube = np.stack([frames[n].reindex(index=dates, columns=tickers).to_numpy(float) for n in names], axis=2)
    tgt = target.reindex(index=dates, columns=tickers).to_numpy(float)
    ok = ~np.isnan(cube).any(axis=2) & ~np.isnan(tgt)
    return cube[ok], tgt[ok]


def _fit_or_none(x, y, names, label) -> RegressionModel | None:
    if len(y) < len(names) + 2:
        return None
    try:
        return fit_ols(x, y, names, label=label)
    except CollinearityError:
        return None


def _needed_strategies(cfg: BacktestConfig) -> set[str]:
    needed = set(cfg.strategies)
    for ab in cfg.ablations:
        if ab == "intra":
            needed.add("GMOM-Intra")
        elif ab == "inter":
            needed.add("GMOM-Inter")
        elif ab.startswith("class:"):
            needed.add(f"M-{ab.split(':', 1)[1]}")
        else:
            raise ValueError(f"unknown ablation {ab!r}")
    if "SignCombo" in needed:
        needed |= {"LinReg", "GMOM"}
    if {"GMOM-Intra", "GMOM-Inter"} & needed or any(s.startswith("M-") for s in needed):
        needed.add("GMOM")
    return needed


def run_walk_forward(panel: PricePanel, cfg: BacktestConfig) -> WalkForwardResult:
    """Run the full expanding-window protocol on one price panel.

    Per split: select graph hyperparameters on the validation tail, refit
    graphs and pooled regressions on the training span, then emit signals
    over the unseen test span. Test signals concatenate across splits into
    the out-of-sample record, which feeds the metric/turnover/cost passes.
    """
    from netmom.graph_analysis import apply_mask  # local import to avoid a cycle

    panel.validate()
    rets = daily_returns(panel).returns
    sigma_d = daily_vol(rets, span=cfg.vol_span)
    sigma_ann = sigma_d * math.sqrt(ANNUALIZATION)
    features = build_feature_panel(panel)
    target = rets.shift(-1) / sigma_d.where(sigma_d > 0)
    calendar = panel.calendar
    tickers = panel.tickers
    classes = panel.classes

    splits = generate_splits(calendar, cfg.train_years, cfg.test_years, cfg.validation_frac)
    needed = _needed_strategies(cfg)
    graph_strategies = {"GMOM", "RegCombo", "GMOM-Intra", "GMOM-Inter"} | {
        s for s in needed if s.startswith("M-")
    }
    need_graphs = bool(needed & graph_strategies)

    test_frames: dict[str, list[pd.DataFrame]] = {s: [] for s in needed}
    models: dict[str, list[RegressionModel]] = {}
    hyperparams: list[dict] = []
    graphs_out: dict = {}
    failures = 0

    grid = cfg.hyper_grid()
    for split in splits:
        train, val, test = split.train, split.validation, split.test
        # training targets may not read past the train span
        fit_dates = train[:-1]

        hp = None
        stores = {}
        if need_graphs:
            if len(grid) == 1:
                hp = grid[0]
            else:
                hp = _grid_search_gmom(
                    cfg, grid, features, target, rets, sigma_ann, val, tickers
                )
            hyperparams.append({"period": split.label, "alpha": hp.alpha, "beta": hp.beta})
            train_store = learn_graph_pipeline(
                train,
                features,
                lookbacks=cfg.lookbacks,
                hp=hp,
                stride=cfg.graph_stride,
                max_missing_frac=cfg.max_missing_frac,
                tol=cfg.solver_tol,
                max_iter=cfg.solver_max_iter,
                scale_distances=cfg.scale_distances,
                on_empty="skip",
            )
            test_store = learn_graph_pipeline(
                test,
                features,
                lookbacks=cfg.lookbacks,
                hp=hp,
                stride=cfg.graph_stride,
                max_missing_frac=cfg.max_missing_frac,
                tol=cfg.solver_tol,
                max_iter=cfg.solver_max_iter,
                scale_distances=cfg.scale_distances,
                on_empty="skip",
            )
            failures += train_store.failure_count() + test_store.failure_count()
            stores["plain"] = (train_store.normalized, test_store.normalized)
            for anchor in test_store.reports:
                graphs_out[anchor] = test_store.normalized[anchor]
            mask_modes = [
                m for m in ("intra", "inter") if f"GMOM-{m.capitalize()}" in needed
            ]
            for mode in mask_modes:
                masked_train = {
                    d: apply_mask(g, f"{mode}_only", classes)
                    for d, g in train_store.ensembles.items()
                }
                masked_test = {
                    d: apply_mask(g, f"{mode}_only", classes)
                    for d, g in test_store.ensembles.items()
                }
                stores[mode] = (masked_train, masked_test)

        split_signals: dict[str, pd.DataFrame] = {}
        if "LongOnly" in needed:
            split_signals["LongOnly"] = signals_long_only(panel.prices, test, tickers).positions
        if "MACD" in needed:
            split_signals["MACD"] = signals_macd(features, test, tickers).positions
        if "LinReg" in needed:
            x, y = _pooled_samples(features.frames, FEATURE_COLUMNS, fit_dates, target, tickers)
            model = _fit_or_none(x, y, FEATURE_COLUMNS, split.label)
            if model is None:
                raise DataError(f"split {split.label}: not enough samples to fit LinReg")
            models.setdefault("LinReg", []).append(model)
            split_signals["LinReg"] = signals_linreg(model, features, test, tickers).positions

        gmom_variants = {"GMOM": "plain", "GMOM-Intra": "intra", "GMOM-Inter": "inter"}
        prop_test_plain: PropagatedFeatures | None = None
        for name, key in gmom_variants.items():
            if name not in needed or key not in stores:
                continue
            tr_graphs, te_graphs = stores[key]
            prop_train = propagate_series(tr_graphs, features, train)
            prop_test = propagate_series(te_graphs, features, test)
            if key == "plain":
                prop_test_plain = prop_test
            x, y = _pooled_samples(
                prop_train.frames, NETWORK_FEATURE_COLUMNS, fit_dates, target, tickers
            )
            model = _fit_or_none(x, y, NETWORK_FEATURE_COLUMNS, split.label)
            if model is None:
                raise DataError(f"split {split.label}: not enough samples to fit {name}")
            models.setdefault(name, []).append(model)
            sig = signals_gmom(model, prop_test, test, tickers)
            split_signals[name] = sig.positions
            if key == "plain":
                prop_train_plain = prop_train

        if "RegCombo" in needed:
            combo_frames = {**features.frames, **prop_train_plain.frames}
            x, y = _pooled_samples(combo_frames, COMBO_FEATURE_COLUMNS, fit_dates, target, tickers)
            model16 = _fit_or_none(x, y, COMBO_FEATURE_COLUMNS, split.label)
            if model16 is None:
                raise DataError(f"split {split.label}: not enough samples to fit RegCombo")
            models.setdefault("RegCombo", []).append(model16)
            split_signals["RegCombo"] = signals_regcombo(
                model16, features, prop_test_plain, test, tickers
            ).positions

        for name in needed:
            if name.startswith("M-"):
                cls = name[2:]
                members = [t for t in tickers if classes.get(t) == cls]
                if not members:
                    raise DataError(f"no tickers of class {cls} for ablation {name}")
                restricted = split_signals["GMOM"].copy()
                restricted.loc[:, [t for t in tickers if t not in members]] = np.nan
                split_signals[name] = restricted

        if "SignCombo" in needed:
            combo = signals_signcombo(
                SignalSeries("LinReg", split_signals["LinReg"]),
                SignalSeries("GMOM", split_signals["GMOM"]),
            )
            split_signals["SignCombo"] = combo.positions

        for name in needed:
            if name in split_signals:
                test_frames[name].append(split_signals[name])

    if failures > cfg.solver_failure_budget:
        raise SolverBudgetError(
            f"{failures} graph solves failed to converge "
            f"(budget {cfg.solver_failure_budget})"
        )

    signals = {
        name: SignalSeries(strategy=name, positions=pd.concat(frames_list).sort_index())
        for name, frames_list in test_frames.items()
        if frames_list
    }

    raw_returns: dict[str, PortfolioReturns] = {}
    scaled_returns: dict[str, PortfolioReturns] = {}
    perf: dict[str, dict[str, PerfReport]] = {}
    turnovers: dict[str, TurnoverAnalysis] = {}
    cost_rows = []
    for name, sig in sorted(signals.items()):
        raw = portfolio_returns(sig, rets, sigma_ann, cfg.vol_target)
        raw_returns[name] = raw
        perf[name] = {"raw": perf_metrics(raw, cfg.mdd_duration_mode)}
        try:
            scaled = scale_to_target_vol(raw, cfg.vol_target)
            scaled_returns[name] = scaled
            perf[name]["vol_scaled"] = perf_metrics(scaled, cfg.mdd_duration_mode)
        except ValueError:
            logger.warning("%s: test span too short for portfolio vol scaling", name)
        turnovers[name] = turnover(sig, sigma_ann, cfg.vol_target)
        for c in cfg.cost_bps:
            adj = cost_adjusted_returns(sig, rets, sigma_ann, CostModel(c), cfg.vol_target)
            rep = perf_metrics(adj, cfg.mdd_duration_mode)
            cost_rows.append({"strategy": name, "cost_bps": c, "sharpe": rep.sharpe})

    return WalkForwardResult(
        splits=splits,
        signals=signals,
        raw_returns=raw_returns,
        scaled_returns=scaled_returns,
        perf=perf,
        turnover=turnovers,
        cost_curve=pd.DataFrame(cost_rows, columns=["strategy", "cost_bps", "sharpe"]),
        models=models,
        hyperparams=hyperparams,
        graphs=graphs_out,
        solver_failures=failures,
    )


def _grid_search_gmom(
    cfg: BacktestConfig,
    grid: list[GraphHyperParams],
    features: FeaturePanel,
    target: pd.DataFrame,
    rets: pd.DataFrame,
    sigma_ann: pd.DataFrame,
    val: pd.DatetimeIndex,
    tickers: list[str],
) -> GraphHyperParams:
    """Score each grid point by raw-signal GMOM Sharpe on the validation tail."""
    if len(val) < 2:
        raise DataError("validation window too short for hyperparameter search")
    fit_dates = val[:-1]  # last validation day's target would read past train

    def score(hp: GraphHyperParams) -> float:
        try:
            store = learn_graph_pipeline(
                val,
                features,
                lookbacks=cfg.lookbacks,
                hp=hp,
                stride=cfg.grid_search_stride,
                max_missing_frac=cfg.max_missing_frac,
                tol=cfg.solver_tol,
                max_iter=cfg.solver_max_iter,
                scale_distances=cfg.scale_distances,
                on_empty="skip",
            )
        except GraphLearningError:
            return -np.inf
        if not store.normalized:
            return -np.inf
        prop = propagate_series(store.normalized, features, val)
        x, y = _pooled_samples(prop.frames, NETWORK_FEATURE_COLUMNS, fit_dates, target, tickers)
        model = _fit_or_none(x, y, NETWORK_FEATURE_COLUMNS, "grid")
        if model is None:
            return -np.inf
        sig = signals_gmom(model, prop, fit_dates, tickers)
        if not (sig.positions.fillna(0.0) != 0).to_numpy().any():
            return -np.inf
        port = portfolio_returns(sig, rets, sigma_ann, cfg.vol_target).returns
        if len(port) < 2 or port.std(ddof=1) == 0:
            return -np.inf
        return float(port.mean() / port.std(ddof=1) * math.sqrt(ANNUALIZATION))

    return grid_search(score, grid)
