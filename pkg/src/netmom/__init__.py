"""Network momentum toolkit.

Learns sparse asset-similarity graphs from momentum features, propagates
momentum across the learned network, and backtests long/short volatility-
targeted strategies in a walk-forward protocol.
"""

__version__ = "0.1.0"

from netmom.market_data import (
    AssetMeta,
    EwmSpec,
    PricePanel,
    SynthConfig,
    daily_returns,
    ewm_mean,
    ewm_std,
    load_prices,
    load_universe,
    synth_market,
)
from netmom.features import (
    FEATURE_COLUMNS,
    FeaturePanel,
    StackedFeatureMatrix,
    WinsorSpec,
    build_feature_panel,
    macd_feature,
    stack_lookback,
    vol_scaled_return,
    winsorize,
)
from netmom.graph_learning import (
    GraphHyperParams,
    GraphSnapshot,
    PairwiseDistances,
    SolverReport,
    ensemble_graphs,
    grid_search,
    learn_graph,
    learn_graph_pipeline,
    normalize_graph,
    pairwise_sq_distances,
    sparsify,
)
from netmom.strategies import (
    RegressionModel,
    SignalSeries,
    coefficient_report,
    fit_ols,
    propagate,
    signals_gmom,
    signals_linreg,
    signals_long_only,
    signals_macd,
    signals_regcombo,
    signals_signcombo,
)
from netmom.backtest import (
    PerfReport,
    PortfolioReturns,
    WalkForwardSplit,
    cost_adjusted_returns,
    generate_splits,
    perf_metrics,
    portfolio_returns,
    return_correlation,
    scale_to_target_vol,
    sign_agreement,
    turnover,
)
from netmom.graph_analysis import (
    EdgeMask,
    TopologyStats,
    apply_mask,
    avg_degree,
    clustering_coeff,
    community_ratio,
    edge_sparsity,
    jaccard_index,
    spectral_clustering,
    topology_series,
)
