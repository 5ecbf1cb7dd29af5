import numpy as np
import pytest

from mimbfd import autodiff as ad
from mimbfd.errors import ShapeError
from mimbfd.gpr import compute_influence
from mimbfd.graph import TEST, TRAIN, VAL, MultiRelationGraph, RelationAdjacency, SplitAssignment, \
    stratified_split
from mimbfd.tmr import (NeighborPartition, TmrLayerParams, aggregate_class, beta_gate, build_operators,
                        fuse_unlabeled, partition_neighbors, tmr_forward)

from conftest import check_grads, random_graph


def _setup(seed, n=25, d_in=3, d_out=4, relations=2):
    rng = np.random.default_rng(seed)
    g = random_graph(n, relations, rng, p_edge=0.2, feature_dim=d_in)
    split = stratified_split(g, (0.5, 0.2, 0.3), seed)
    scores = compute_influence(g, split)
    part = partition_neighbors(g, split)
    params = TmrLayerParams.init(d_in, d_out, rng)
    return rng, g, split, scores, part, params


def test_partition_example():
    # node 0 has neighbors 1 (benign, train), 2 (fraud, train), 3 (unlabeled)
    adj = RelationAdjacency.from_edges([0, 0, 0], [1, 2, 3], 4)
    g = MultiRelationGraph(np.zeros((4, 1)), (adj,), np.array([0, 0, 1, -1]), ("r",))
    p = partition_neighbors(g, SplitAssignment(np.array([TRAIN, TRAIN, TRAIN, 3]))).relations[0]
    assert list(p.benign.neighbors(0)) == [1]
    assert list(p.fraud.neighbors(0)) == [2]
    assert list(p.unlabeled.neighbors(0)) == [3]


def test_val_labeled_neighbor_counts_as_unlabeled():
    adj = RelationAdjacency.from_edges([0, 0], [1, 2], 3)
    g = MultiRelationGraph(np.zeros((3, 1)), (adj,), np.array([0, 1, 0]), ("r",))
    p = partition_neighbors(g, SplitAssignment(np.array([TRAIN, VAL, TEST]))).relations[0]
    assert list(p.unlabeled.neighbors(0)) == [1, 2]
    assert p.fraud.nnz == 0


def test_partition_covers_neighbors_exactly(rng):
    g = random_graph(40, 2, rng)
    part = partition_neighbors(g, stratified_split(g, seed=2))
    for adj, rp in zip(g.relations, part.relations):
        for i in range(g.num_nodes):
            pieces = [set(rp.part(k).neighbors(i).tolist()) for k in range(3)]
            assert set().union(*pieces) == set(adj.neighbors(i).tolist())
            assert sum(len(s) for s in pieces) == len(adj.neighbors(i))


def test_isolated_node_has_empty_partitions(tiny_graph):
    split = SplitAssignment(np.array([TRAIN, TRAIN, TRAIN, TRAIN, 3]))
    for rp in partition_neighbors(tiny_graph, split).relations:
        assert all(len(rp.part(k).neighbors(4)) == 0 for k in range(3))


def _star(k):
    return RelationAdjacency.from_edges([0] * k, list(range(1, k + 1)), k + 1)


def test_aggregate_single_neighbor_ignores_weight():
    H = ad.Tensor(np.array([[0.0, 0.0], [3.0, -1.0]]))
    out = aggregate_class(H, _star(1), np.array([0.5, 1e-9]))
    np.testing.assert_allclose(out.data[0], [3.0, -1.0])


def test_aggregate_equal_weights_is_mean():
    H = ad.Tensor(np.array([[0.0, 0.0], [1.0, 2.0], [3.0, 6.0]]))
    out = aggregate_class(H, _star(2), np.array([0.1, 0.3, 0.3]))
    np.testing.assert_allclose(out.data[0], [2.0, 4.0])


def test_aggregate_weighted_example():
    H = ad.Tensor(np.array([[9.0, 9.0], [1.0, 0.0], [0.0, 1.0]]))
    out = aggregate_class(H, _star(2), np.array([0.2, 0.2, 0.6]))
    np.testing.assert_allclose(out.data[0], [0.25, 0.75])


def test_aggregate_empty_row_is_zero():
    H = ad.Tensor(np.ones((3, 2)))
    out = aggregate_class(H, RelationAdjacency.from_edges([1], [2], 3), np.full(3, 1 / 3))
    np.testing.assert_array_equal(out.data[0], [0.0, 0.0])


def test_aggregate_survives_underflowing_weights():
    # softmax weights far below the float range still give a proper weighted mean
    H = ad.Tensor(np.array([[0.0], [2.0], [4.0]]))
    out = aggregate_class(H, _star(2), np.array([1.0, 1e-320, 3e-320]))
    assert np.isfinite(out.data[0, 0]) and 2.0 <= out.data[0, 0] <= 4.0


def test_beta_gate_zero_params_is_half():
    p = TmrLayerParams.init(3, 2, np.random.default_rng(0))
    p.W_beta.data[...] = 0
    np.testing.assert_array_equal(beta_gate(ad.Tensor(np.ones((4, 3))), p).data, 0.5)
    p.b_beta.data[...] = 1e3
    np.testing.assert_allclose(beta_gate(ad.Tensor(np.ones((4, 3))), p).data, 1.0)


def test_beta_gate_open_interval(rng):
    p = TmrLayerParams.init(3, 2, rng)
    b = beta_gate(ad.Tensor(rng.standard_normal((50, 3))), p).data
    assert np.all((b > 0) & (b < 1))


def test_fuse_examples():
    v = ad.Tensor(np.array([[1.0, -2.0]]))
    w = ad.Tensor(np.array([[4.0, 5.0]]))
    np.testing.assert_array_equal(fuse_unlabeled(v, w, ad.Tensor(np.ones((1, 2)))).data, w.data)
    np.testing.assert_array_equal(fuse_unlabeled(v, -v, ad.Tensor(np.full((1, 2), 0.5))).data, [[0.0, 0.0]])
    beta = ad.Tensor(np.array([[0.3, 0.9]]))
    np.testing.assert_allclose(fuse_unlabeled(v, v, beta).data, v.data)


def test_isolated_node_output_uses_self_only():
    rng, g, split, scores, part, params = _setup(0, relations=1)
    iso = RelationAdjacency.from_edges([1], [2], g.num_nodes)
    g1 = MultiRelationGraph(g.features, (iso,), g.labels, ("r",))
    part1 = partition_neighbors(g1, split)
    scores1 = compute_influence(g1, split)
    H = ad.Tensor(g.features)
    out = tmr_forward(H, scores1, part1, params).data[0]
    x = g.features[:1]
    self_rep = x @ params.W_self.data + params.b_self.data
    self_rep = np.where(self_rep > 0, self_rep, 0.01 * self_rep)
    z = np.concatenate([self_rep, np.zeros((1, 3 * params.d_in))], axis=1)
    expected = z @ params.W_fuse.data + params.b_fuse.data
    expected = np.where(expected > 0, expected, 0.01 * expected)
    np.testing.assert_allclose(out, expected[0], rtol=1e-12)


def test_duplicate_relation_equals_single():
    rng, g, split, scores, part, params = _setup(1, relations=1)
    H = ad.Tensor(g.features)
    one = tmr_forward(H, scores, part, params).data
    g2 = MultiRelationGraph(g.features, g.relations * 2, g.labels, ("a", "b"))
    two = tmr_forward(H, compute_influence(g2, split), partition_neighbors(g2, split), params).data
    np.testing.assert_allclose(one, two, rtol=1e-12, atol=1e-14)


@pytest.mark.parametrize("normalization", ["partition", "neighborhood"])
def test_permutation_equivariance(normalization):
    rng, g, split, scores, part, params = _setup(2)
    perm = rng.permutation(g.num_nodes)
    ops = build_operators(scores, part, normalization)
    out = tmr_forward(ad.Tensor(g.features), None, None, params, operators=ops).data
    gp, sp_ = g.permute(perm), split.permute(perm)
    ops_p = build_operators(compute_influence(gp, sp_), partition_neighbors(gp, sp_), normalization)
    out_p = tmr_forward(ad.Tensor(gp.features), None, None, params, operators=ops_p).data
    np.testing.assert_allclose(out_p[perm], out, rtol=1e-10, atol=1e-12)


def test_locality():
    rng, g, split, scores, part, params = _setup(3)
    union = g.union_adjacency()
    i = int(np.argmax(union.degree))
    outside = [j for j in range(g.num_nodes) if j != i and j not in set(union.neighbors(i).tolist())]
    H = g.features.copy()
    base = tmr_forward(ad.Tensor(H), scores, part, params).data[i].copy()
    H[outside] += rng.standard_normal((len(outside), H.shape[1])) * 10
    after = tmr_forward(ad.Tensor(H), scores, part, params).data[i]
    assert base.tobytes() == after.tobytes()


def test_two_layers_reach_two_hops_only():
    rng, g, split, scores, part, params = _setup(4)
    second = TmrLayerParams.init(params.d_out, 2, rng)
    union = g.union_adjacency()
    i = 0
    hop1 = set(union.neighbors(i).tolist())
    hop2 = set().union(*[set(union.neighbors(j).tolist()) for j in hop1]) if hop1 else set()
    far = [j for j in range(g.num_nodes) if j not in hop1 | hop2 | {i}]
    H = g.features.copy()

    def run(x):
        h = tmr_forward(ad.Tensor(x), scores, part, params)
        return tmr_forward(h, scores, part, second).data[i].copy()

    base = run(H)
    H[far] += 5.0
    assert base.tobytes() == run(H).tobytes()


@pytest.mark.parametrize("seed", range(4))
def test_gradients_match_finite_differences(seed):
    rng, g, split, scores, part, params = _setup(seed, n=14, d_in=3, d_out=2)
    ops = build_operators(scores, part)
    H = ad.parameter(rng.standard_normal((g.num_nodes, 3)))
    proj = rng.standard_normal((g.num_nodes, 2))

    def loss():
        out = tmr_forward(H, None, None, params, operators=ops)
        return ad.sum_all(ad.mul(out, ad.Tensor(proj)))

    assert check_grads(loss, [H, *params.parameters()]) < 1e-4


def test_width_mismatch_raises():
    rng, g, split, scores, part, params = _setup(5)
    with pytest.raises(ShapeError):
        tmr_forward(ad.Tensor(np.ones((g.num_nodes, 7))), scores, part, params)


def test_partition_type():
    rng, g, split, scores, part, params = _setup(6)
    assert isinstance(part, NeighborPartition)
    assert part.num_nodes == g.num_nodes
