"""Sparse similarity-graph estimation from stacked momentum features.

The estimation problem, stated on the upper-triangular edge-weight vector w
(z holds squared feature distances per edge, d the induced node degrees):

    minimize  F(w) = z'w - alpha * sum_i log d_i(w) + 2 * beta * ||w||^2
    s.t.      w >= 0

which is the adjacency-matrix program
    min tr(V'(D - A)V) - alpha * 1'log(A1) + beta * ||A||_F^2
restricted to symmetric non-negative A with zero diagonal. The solver is
projected gradient descent with Barzilai-Borwein steps and Armijo
backtracking; the returned certificate is the KKT residual

    max_e { |g_e|        if w_e > tol
          { max(0, -g_e)  otherwise,   g_e = z_e - alpha*(1/d_i + 1/d_j) + 4*beta*w_e.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy.spatial.distance import pdist

from netmom.features import STACK_LOOKBACKS, FeaturePanel, StackedFeatureMatrix, stack_lookback

__all__ = [
    "GraphHyperParams",
    "GraphLearningError",
    "GraphSnapshot",
    "PairwiseDistances",
    "SolverReport",
    "ensemble_graphs",
    "grid_search",
    "learn_graph",
    "learn_graph_pipeline",
    "normalize_graph",
    "pairwise_sq_distances",
    "sparsify",
]

DEFAULT_TOL = 1e-6
DEFAULT_MAX_ITER = 50_000
DEFAULT_SPARSIFY_EPS = 1e-4

# Hyperparameter grid used for validation search.
HP_GRID_VALUES = (0.0001, 0.0005, 0.001, 0.005, 0.01, 0.05, 0.1, 0.5, 1.0, 5.0, 10.0)


class GraphLearningError(RuntimeError):
    """Raised when graph estimation cannot proceed (empty inputs etc.)."""


@dataclass(frozen=True)
class GraphHyperParams:
    alpha: float
    beta: float

    def __post_init__(self):
        if self.alpha <= 0 or self.beta <= 0:
            raise ValueError(f"alpha and beta must be positive, got {self.alpha}, {self.beta}")


@dataclass(frozen=True)
class PairwiseDistances:
    """Squared Euclidean distances between feature rows, condensed upper-tri order."""

    tickers: tuple[str, ...]
    z: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.tickers)


@dataclass(frozen=True)
class SolverReport:
    iterations: int
    objective: float
    kkt_residual: float
    wall_time: float
    converged: bool


@dataclass(frozen=True)
class GraphSnapshot:
    """Dated symmetric non-negative adjacency over a ticker node set."""

    date: pd.Timestamp
    tickers: tuple[str, ...]
    adjacency: np.ndarray
    kind: str  # raw | ensemble | normalized
    provenance: dict = field(default_factory=dict, compare=False)

    @property
    def n_nodes(self) -> int:
        return len(self.tickers)

    def degrees(self) -> np.ndarray:
        return self.adjacency.sum(axis=1)

    def validate(self) -> None:
        a = self.adjacency
        if a.shape != (self.n_nodes, self.n_nodes):
            raise ValueError("adjacency shape does not match node set")
        if not np.allclose(a, a.T):
            raise ValueError("adjacency must be symmetric")
        if (a < 0).any():
            raise ValueError("adjacency must be non-negative")
        if np.abs(np.diag(a)).max(initial=0.0) > 0:
            raise ValueError("adjacency must have a zero diagonal")


def pairwise_sq_distances(stacked: StackedFeatureMatrix) -> PairwiseDistances:
    """z_e = ||v_i - v_j||^2 for every unordered node pair of V's rows."""
    if stacked.matrix.shape[0] < 2:
        raise GraphLearningError("need at least two nodes for pairwise distances")
    if np.isnan(stacked.matrix).any():
        raise GraphLearningError("stacked feature matrix contains missing entries")
    z = pdist(stacked.matrix, metric="sqeuclidean")
    return PairwiseDistances(tickers=stacked.tickers, z=z)


def _edge_index(n: int) -> tuple[np.ndarray, np.ndarray]:
    return np.triu_indices(n, k=1)


def _degrees(w: np.ndarray, iu: np.ndarray, ju: np.ndarray, n: int) -> np.ndarray:
    return np.bincount(iu, weights=w, minlength=n) + np.bincount(ju, weights=w, minlength=n)


def _objective(w, d, z, alpha, beta) -> float:
    if d.min() <= 1e-12:
        return np.inf
    return float(z @ w - alpha * np.log(d).sum() + 2.0 * beta * (w @ w))


def _gradient(w, d, z, alpha, beta, iu, ju) -> np.ndarray:
    inv = 1.0 / d
    return z - alpha * (inv[iu] + inv[ju]) + 4.0 * beta * w


def _kkt_residual(w: np.ndarray, g: np.ndarray, tol: float) -> float:
    active = w > tol
    res = 0.0
    if active.any():
        res = float(np.abs(g[active]).max())
    if (~active).any():
        res = max(res, float(np.maximum(0.0, -g[~active]).max()))
    return res


def uniform_start(n: int, hp: GraphHyperParams) -> float:
    """Analytic solution for z = 0: every edge at sqrt(alpha / (2 beta (n-1)))."""
    return float(np.sqrt(hp.alpha / (2.0 * hp.beta * (n - 1))))


def learn_graph(
    z: PairwiseDistances,
    hp: GraphHyperParams,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    init_w: np.ndarray | None = None,
    date=None,
) -> tuple[GraphSnapshot, SolverReport]:
    """Solve the edge-weight program to the requested KKT tolerance.

    Returns the learned raw graph and a SolverReport; if max_iter is hit
    with residual above tol the report carries converged=False and the
    caller decides what to do with the partial solution.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    n = z.n_nodes
    if n < 2:
        raise GraphLearningError("need at least two nodes to learn a graph")
    zv = np.asarray(z.z, dtype=float)
    iu, ju = _edge_index(n)
    alpha, beta = hp.alpha, hp.beta

    w = np.full(zv.shape, uniform_start(n, hp)) if init_w is None else np.maximum(init_w.astype(float), 0.0)
    d = _degrees(w, iu, ju, n)
    if d.min() <= 1e-12:
        w = np.full(zv.shape, uniform_start(n, hp))
        d = _degrees(w, iu, ju, n)
    f = _objective(w, d, zv, alpha, beta)
    g = _gradient(w, d, zv, alpha, beta, iu, ju)

    t0 = time.perf_counter()
    step = 1.0 / (4.0 * beta + 2.0 * alpha / d.min() ** 2)  # inverse local curvature bound
    residual = _kkt_residual(w, g, tol)
    it = 0
    while residual > tol and it < max_iter:
        it += 1
        s = step
        w_new = np.maximum(w - s * g, 0.0)
        d_new = _degrees(w_new, iu, ju, n)
        f_new = _objective(w_new, d_new, zv, alpha, beta)
        # Armijo backtracking along the projection arc; infeasible degree
        # (d <= 1e-12) gives f = inf and therefore also shrinks the step.
        while f_new > f + 1e-4 * (g @ (w_new - w)) and s > 1e-18:
            s *= 0.5
            w_new = np.maximum(w - s * g, 0.0)
            d_new = _degrees(w_new, iu, ju, n)
            f_new = _objective(w_new, d_new, zv, alpha, beta)
        g_new = _gradient(w_new, d_new, zv, alpha, beta, iu, ju)
        # Barzilai-Borwein step for the next iterate, clipped for safety
        dw = w_new - w
        dg = g_new - g
        denom = dw @ dg
        if denom > 0:
            step = min(max((dw @ dw) / denom, 1e-14), 1e14)
        else:
            step = s * 2.0
        w, d, f, g = w_new, d_new, f_new, g_new
        residual = _kkt_residual(w, g, tol)
    wall = time.perf_counter() - t0

    adjacency = np.zeros((n, n))
    adjacency[iu, ju] = w
    adjacency += adjacency.T
    snapshot = GraphSnapshot(
        date=pd.Timestamp(date) if date is not None else pd.Timestamp(0),
        tickers=z.tickers,
        adjacency=adjacency,
        kind="raw",
        provenance={"alpha": alpha, "beta": beta, "tol": tol},
    )
    report = SolverReport(
        iterations=it,
        objective=f,
        kkt_residual=residual,
        wall_time=wall,
        converged=residual <= tol,
    )
    return snapshot, report


def ensemble_graphs(graphs: list[GraphSnapshot]) -> GraphSnapshot:
    """Average adjacency matrices over the union node set.

    Each input is embedded into union indexing with zero rows/columns for
    its absent nodes before the elementwise mean.
    """
    if not graphs:
        raise GraphLearningError("cannot ensemble an empty list of graphs")
    union: list[str] = []
    seen: set[str] = set()
    for g in graphs:
        for t in g.tickers:
            if t not in seen:
                seen.add(t)
                union.append(t)
    pos = {t: i for i, t in enumerate(union)}
    n = len(union)
    acc = np.zeros((n, n))
    for g in graphs:
        idx = np.array([pos[t] for t in g.tickers])
        acc[np.ix_(idx, idx)] += g.adjacency
    acc /= len(graphs)
    return GraphSnapshot(
        date=graphs[0].date,
        tickers=tuple(union),
        adjacency=acc,
        kind="ensemble",
        provenance={"n_graphs": len(graphs), "windows": [g.provenance.get("lookback") for g in graphs]},
    )


def normalize_graph(graph: GraphSnapshot) -> GraphSnapshot:
    """Symmetric degree normalization D^{-1/2} A D^{-1/2}.

    Isolated nodes (zero ensemble degree) keep all-zero rows and columns.
    """
    d = graph.degrees()
    scale = np.zeros_like(d)
    np.divide(1.0, np.sqrt(d), out=scale, where=d > 0)
    normalized = graph.adjacency * scale[:, None] * scale[None, :]
    return GraphSnapshot(
        date=graph.date,
        tickers=graph.tickers,
        adjacency=normalized,
        kind="normalized",
        provenance=dict(graph.provenance),
    )


def sparsify(graph: GraphSnapshot, rel_eps: float = DEFAULT_SPARSIFY_EPS) -> GraphSnapshot:
    """Zero out weights below rel_eps times the maximum weight."""
    if rel_eps < 0:
        raise ValueError("rel_eps must be non-negative")
    a = graph.adjacency.copy()
    top = a.max(initial=0.0)
    if rel_eps > 0 and top > 0:
        a[a < rel_eps * top] = 0.0
    return GraphSnapshot(
        date=graph.date,
        tickers=graph.tickers,
        adjacency=a,
        kind=graph.kind,
        provenance=dict(graph.provenance),
    )


def learn_graph_pipeline(
    dates,
    features: FeaturePanel,
    lookbacks=STACK_LOOKBACKS,
    hp: GraphHyperParams = GraphHyperParams(1.0, 0.5),
    stride: int = 1,
    max_missing_frac: float = 0.10,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    scale_distances: bool = False,
    on_empty: str = "raise",
) -> "GraphStore":
    """Learn, ensemble and normalize graphs over a date range.

    Graphs are recomputed on every ``stride``-th date of ``dates`` and held
    constant until the next recomputation. Windows with an empty node set
    are skipped; a date where every window is empty raises (on_empty =
    "raise") or is left graph-free (on_empty = "skip").
    """
    if stride < 1:
        raise ValueError("stride must be >= 1")
    if on_empty not in ("raise", "skip"):
        raise ValueError("on_empty must be 'raise' or 'skip'")
    dates = pd.DatetimeIndex(dates)
    anchors = dates[::stride]
    normalized: dict[pd.Timestamp, GraphSnapshot] = {}
    ensembles: dict[pd.Timestamp, GraphSnapshot] = {}
    reports: dict[pd.Timestamp, list[SolverReport]] = {}
    warm: dict[int, tuple[tuple[str, ...], np.ndarray]] = {}
    anchor_result: dict[pd.Timestamp, tuple[GraphSnapshot, GraphSnapshot] | None] = {}
    for anchor in anchors:
        raw: list[GraphSnapshot] = []
        anchor_reports: list[SolverReport] = []
        for delta in lookbacks:
            stacked = stack_lookback(features, anchor, delta, max_missing_frac)
            if stacked.is_empty:
                continue
            z = pairwise_sq_distances(stacked)
            if scale_distances and z.z.mean() > 0:
                z = PairwiseDistances(z.tickers, z.z / z.z.mean())
            init = None
            prev = warm.get(delta)
            if prev is not None and prev[0] == z.tickers:
                init = prev[1]
            g, rep = learn_graph(z, hp, tol=tol, max_iter=max_iter, init_w=init, date=anchor)
            g = GraphSnapshot(
                date=g.date,
                tickers=g.tickers,
                adjacency=g.adjacency,
                kind="raw",
                provenance={**g.provenance, "lookback": delta},
            )
            iu, ju = _edge_index(g.n_nodes)
            warm[delta] = (g.tickers, g.adjacency[iu, ju])
            raw.append(g)
            anchor_reports.append(rep)
        if not raw:
            if on_empty == "raise":
                raise GraphLearningError(f"no lookback window has nodes at {pd.Timestamp(anchor).date()}")
            anchor_result[anchor] = None
            continue
        ens = ensemble_graphs(raw)
        anchor_result[anchor] = (ens, normalize_graph(ens))
        reports[anchor] = anchor_reports
    # hold each anchor's graph constant until the next anchor
    current: tuple[GraphSnapshot, GraphSnapshot] | None = None
    for date in dates:
        if date in anchor_result:
            current = anchor_result[date]
        if current is not None:
            ensembles[date] = current[0]
            normalized[date] = current[1]
    return GraphStore(normalized=normalized, ensembles=ensembles, reports=reports)


@dataclass(frozen=True)
class GraphStore:
    """Output of learn_graph_pipeline: per-date graphs plus solver reports."""

    normalized: dict
    ensembles: dict
    reports: dict

    def failure_count(self) -> int:
        return sum(1 for reps in self.reports.values() for r in reps if not r.converged)


def grid_search(
    score_fn,
    grid: list[GraphHyperParams],
    return_scores: bool = False,
):
    """Pick the grid point with the highest score.

    ``score_fn(hp)`` returns a float or -inf for degenerate candidates.
    Ties break toward larger alpha, then larger beta. With return_scores a
    (best, DataFrame) pair is returned for inspection.
    """
    if not grid:
        raise ValueError("empty hyperparameter grid")
    rows = []
    best: GraphHyperParams | None = None
    best_key: tuple[float, float, float] | None = None
    for hp in grid:
        score = float(score_fn(hp))
        if np.isnan(score):
            score = -np.inf
        rows.append({"alpha": hp.alpha, "beta": hp.beta, "score": score})
        key = (score, hp.alpha, hp.beta)
        if best_key is None or key > best_key:
            best, best_key = hp, key
    if best is None or best_key[0] == -np.inf:
        raise GraphLearningError("every hyperparameter grid point failed to produce a score")
    if return_scores:
        return best, pd.DataFrame(rows)
    return best
