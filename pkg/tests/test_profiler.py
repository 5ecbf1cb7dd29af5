from collections import deque

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mimbfd.errors import ConfigError
from mimbfd.graph import MultiRelationGraph, RelationAdjacency
from mimbfd.profiler import (bin_trend, closeness_centrality, degree_centrality, neighbor_composition_histogram,
                             spearman)

from conftest import random_graph


def _bfs_closeness(adj: RelationAdjacency) -> np.ndarray:
    n = adj.num_nodes
    out = np.zeros(n)
    for s in range(n):
        dist = {s: 0}
        q = deque([s])
        while q:
            u = q.popleft()
            for v in adj.neighbors(u).tolist():
                if v not in dist:
                    dist[v] = dist[u] + 1
                    q.append(v)
        total = sum(dist.values())
        out[s] = (len(dist) - 1) / total if total else 0.0
    return out


def _graph(adj, labels):
    return MultiRelationGraph(np.zeros((adj.num_nodes, 1)), (adj,), np.asarray(labels), ("r",))


def test_star_closeness():
    adj = RelationAdjacency.from_edges([0, 0, 0], [1, 2, 3], 4)
    cc = closeness_centrality(_graph(adj, [0, 0, 0, 1]))
    assert cc[0] == 1.0
    assert cc[1] == pytest.approx(3 / 5)


def test_isolated_node_has_zero_closeness():
    adj = RelationAdjacency.from_edges([0], [1], 3)
    assert closeness_centrality(_graph(adj, [0, 1, 0]))[2] == 0.0


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_closeness_matches_bfs(seed):
    g = random_graph(30, 2, np.random.default_rng(seed), p_edge=0.06)
    np.testing.assert_allclose(closeness_centrality(g), _bfs_closeness(g.union_adjacency()), rtol=1e-12)
    np.testing.assert_allclose(closeness_centrality(g, "r0"), _bfs_closeness(g.relations[0]), rtol=1e-12)


def test_degree_centrality():
    adj = RelationAdjacency.from_edges([0, 0, 0], [1, 2, 3], 4)
    np.testing.assert_allclose(degree_centrality(_graph(adj, [0, 0, 0, 1])), [1, 1 / 3, 1 / 3, 1 / 3])


def test_histogram_counts_benign_only_and_neighbor_mix():
    # benign 0 touches fraud 3 and benign 1; benign 1,2 touch only benign 0 / nothing fraud
    adj = RelationAdjacency.from_edges([0, 0, 0], [1, 2, 3], 4)
    g = _graph(adj, [0, 0, 0, 1])
    prof = neighbor_composition_histogram(g, np.array([1.0, 0.0, 0.0, 5.0]), num_bins=2)
    np.testing.assert_array_equal(prof.counts, [2, 1])
    np.testing.assert_allclose(prof.mean_fraud_neighbors, [0.0, 1.0])
    np.testing.assert_allclose(prof.mean_benign_neighbors, [1.0, 2.0])
    assert prof.counts.sum() == 3


def test_empty_bins_are_nan():
    adj = RelationAdjacency.from_edges([0], [1], 3)
    prof = neighbor_composition_histogram(_graph(adj, [0, 1, 0]), np.array([0.0, 0.5, 1.0]), num_bins=3)
    assert prof.counts[1] == 0
    assert np.isnan(prof.mean_fraud_neighbors[1])


def test_histogram_errors():
    adj = RelationAdjacency.from_edges([0], [1], 2)
    with pytest.raises(ConfigError):
        neighbor_composition_histogram(_graph(adj, [1, 1]), np.zeros(2))
    with pytest.raises(ConfigError):
        neighbor_composition_histogram(_graph(adj, [0, 1]), np.zeros(2), num_bins=0)


def test_csv_layout(tmp_path, rng):
    g = random_graph(40, 1, rng)
    prof = neighbor_composition_histogram(g, closeness_centrality(g), 5)
    prof.write_csv(tmp_path / "p.csv")
    lines = (tmp_path / "p.csv").read_text().splitlines()
    assert lines[0] == "bin_lo,bin_hi,count_benign_nodes,mean_fraud_neighbors,mean_benign_neighbors"
    assert len(lines) == 6


def test_spearman_examples():
    assert spearman([1, 2, 3, 4], [10, 20, 30, 40]) == pytest.approx(1.0)
    assert spearman([1, 2, 3, 4], [4, 3, 2, 1]) == pytest.approx(-1.0)
    assert spearman([1, 1, 1], [1, 2, 3]) == 0.0


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-100, 100), min_size=3, max_size=30), st.integers(0, 100))
def test_spearman_matches_scipy(xs, seed):
    from scipy.stats import spearmanr
    ys = np.random.default_rng(seed).standard_normal(len(xs))
    ref = spearmanr(xs, ys).statistic
    got = spearman(xs, ys)
    assert got == pytest.approx(0.0 if np.isnan(ref) else ref, abs=1e-12)


def test_bin_trend_skips_empty_bins():
    adj = RelationAdjacency.from_edges([0, 2], [3, 4], 5)
    g = _graph(adj, [0, 0, 0, 1, 0])
    prof = neighbor_composition_histogram(g, np.array([0.0, 0.5, 1.0, 0.0, 0.7]), num_bins=4)
    assert not np.isnan(bin_trend(prof))
