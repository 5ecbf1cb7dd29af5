"""Centrality statistics of benign nodes versus their neighborhood label mix."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.sparse.csgraph import shortest_path
from scipy.stats import rankdata

from .errors import ConfigError
from .graph import BENIGN, FRAUD, MultiRelationGraph, RelationAdjacency

BFS_CHUNK = 256


def _select(graph: MultiRelationGraph, relation: str | None) -> RelationAdjacency:
    if relation is None or relation == "union":
        return graph.union_adjacency()
    return graph.relation(relation)


def closeness_centrality(graph: MultiRelationGraph, relation: str | None = "union") -> np.ndarray:
    """(reachable - 1) / sum of BFS distances to reachable nodes; isolated nodes get 0."""
    adj = _select(graph, relation).to_scipy()
    n = graph.num_nodes
    out = np.zeros(n)
    for start in range(0, n, BFS_CHUNK):
        idx = np.arange(start, min(start + BFS_CHUNK, n))
        dist = shortest_path(adj, directed=False, unweighted=True, indices=idx)
        finite = np.isfinite(dist)
        reach = finite.sum(axis=1) - 1
        total = np.where(finite, dist, 0.0).sum(axis=1)
        out[idx] = np.divide(reach, total, out=np.zeros(len(idx)), where=total > 0)
    return out


def degree_centrality(graph: MultiRelationGraph, relation: str | None = "union") -> np.ndarray:
    n = graph.num_nodes
    if n < 2:
        raise ConfigError("degree centrality needs at least two nodes")
    return _select(graph, relation).degree / (n - 1)


@dataclass
class CentralityProfile:
    centrality: np.ndarray
    bin_edges: np.ndarray
    counts: np.ndarray
    mean_fraud_neighbors: np.ndarray
    mean_benign_neighbors: np.ndarray

    def rows(self) -> list[tuple[float, float, int, float, float]]:
        return [(float(self.bin_edges[k]), float(self.bin_edges[k + 1]), int(self.counts[k]),
                 float(self.mean_fraud_neighbors[k]), float(self.mean_benign_neighbors[k]))
                for k in range(len(self.counts))]

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["bin_lo", "bin_hi", "count_benign_nodes", "mean_fraud_neighbors", "mean_benign_neighbors"])
            for row in self.rows():
                w.writerow(row)


def neighbor_composition_histogram(graph: MultiRelationGraph, centrality: np.ndarray, num_bins: int = 10,
                                   relation: str | None = "union") -> CentralityProfile:
    """Bin labeled-benign nodes by centrality (equal width); average their fraud/benign neighbor counts.

    Empty bins report NaN means.
    """
    benign = np.flatnonzero(graph.labels == BENIGN)
    if len(benign) == 0:
        raise ConfigError("no labeled benign nodes to profile")
    if num_bins < 1:
        raise ConfigError("num_bins must be >= 1")
    adj = _select(graph, relation)
    rows, cols = adj.edge_list()
    n = graph.num_nodes
    fraud_nb = np.bincount(rows, weights=(graph.labels[cols] == FRAUD).astype(float), minlength=n)
    benign_nb = np.bincount(rows, weights=(graph.labels[cols] == BENIGN).astype(float), minlength=n)

    c = np.asarray(centrality, dtype=np.float64)[benign]
    lo, hi = float(c.min()), float(c.max())
    if hi == lo:
        hi = lo + 1.0 if lo == 0 else lo * (1 + 1e-9) + 1e-12
    edges = np.linspace(lo, hi, num_bins + 1)
    which = np.clip(np.searchsorted(edges, c, side="right") - 1, 0, num_bins - 1)
    counts = np.bincount(which, minlength=num_bins)
    with np.errstate(invalid="ignore", divide="ignore"):
        mf = np.bincount(which, weights=fraud_nb[benign], minlength=num_bins) / counts
        mb = np.bincount(which, weights=benign_nb[benign], minlength=num_bins) / counts
    return CentralityProfile(np.asarray(centrality, dtype=np.float64), edges, counts, mf, mb)


def spearman(x, y) -> float:
    """Pearson correlation of average ranks."""
    rx = rankdata(np.asarray(x, dtype=np.float64))
    ry = rankdata(np.asarray(y, dtype=np.float64))
    rx -= rx.mean()
    ry -= ry.mean()
    denom = np.sqrt((rx * rx).sum() * (ry * ry).sum())
    return float((rx * ry).sum() / denom) if denom > 0 else 0.0


def bin_trend(profile: CentralityProfile) -> float:
    """Spearman correlation between bin index and mean fraud-neighbor count over occupied bins."""
    occupied = np.flatnonzero(profile.counts > 0)
    return spearman(occupied, profile.mean_fraud_neighbors[occupied])
