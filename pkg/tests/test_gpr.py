import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mimbfd.errors import ConfigError, NumericError
from mimbfd.gpr import (GprConfig, compute_gpr, compute_influence, dense_gpr_oracle, normalize_scores,
                        teleport_vector)
from mimbfd.graph import (FRAUD, TEST, TRAIN, VAL, MultiRelationGraph, RelationAdjacency, SplitAssignment,
                          row_normalize, stratified_split)

from conftest import random_graph


def _split(tags):
    return SplitAssignment(np.asarray(tags))


def _path3():
    return RelationAdjacency.from_edges([0, 1], [1, 2], 3)


def test_teleport_uniform_over_train_class():
    n = 10
    labels = np.array([1, 1, 1, 1, 0, 0, 1, -1, -1, 0])
    tags = np.array([TRAIN] * 4 + [TRAIN, VAL, TEST, 3, 3, TRAIN])
    g = MultiRelationGraph(np.zeros((n, 1)), (RelationAdjacency.from_edges([0], [1], n),), labels, ("r",))
    v = teleport_vector(g, _split(tags), FRAUD)
    np.testing.assert_array_equal(v, [0.25] * 4 + [0] * 6)
    v0 = teleport_vector(g, _split(np.where(np.arange(n) == 4, TRAIN, VAL)), 0)
    np.testing.assert_array_equal(v0, np.eye(n)[4])


def test_teleport_empty_class():
    g = MultiRelationGraph(np.zeros((2, 1)), (RelationAdjacency.from_edges([0], [1], 2),), np.array([0, 1]),
                           ("r",))
    with pytest.raises(ConfigError):
        teleport_vector(g, _split([TRAIN, VAL]), FRAUD)


def test_alpha_one_returns_teleport():
    tele = np.array([[1.0, 0], [0, 0.5], [0, 0.5]])
    res = compute_gpr(row_normalize(_path3()), tele, 1.0)
    np.testing.assert_array_equal(res.G, tele)


def test_path_matches_hand_solve():
    # A' for the path 0-1-2 written out by hand (degrees 1, 2, 1)
    a = np.array([[0, 0.5, 0], [1, 0, 1], [0, 0.5, 0]])
    expected = np.linalg.solve(np.eye(3) - 0.85 * a, 0.15 * np.array([1.0, 0, 0]))
    res = compute_gpr(row_normalize(_path3()), np.array([1.0, 0, 0]), 0.15)
    np.testing.assert_allclose(res.G[:, 0], expected, atol=1e-8)
    np.testing.assert_allclose(dense_gpr_oracle(_path3(), np.array([[1.0], [0], [0]]), 0.15)[:, 0], expected,
                               atol=1e-12)


def test_unreachable_component_scores_zero():
    adj = RelationAdjacency.from_edges([0, 2], [1, 3], 4)
    res = compute_gpr(row_normalize(adj), np.array([1.0, 0, 0, 0]), 0.15)
    assert np.all(res.G[2:, 0] == 0)


def test_empty_graph_keeps_only_restart_mass():
    # A' = 0: every node is dangling, so g = alpha * I
    adj = RelationAdjacency.from_edges([], [], 3)
    tele = np.array([[0.5, 0], [0.5, 0], [0, 1.0]])
    np.testing.assert_allclose(dense_gpr_oracle(adj, tele, 0.3), 0.3 * tele)
    np.testing.assert_allclose(compute_gpr(row_normalize(adj), tele, 0.3).G, 0.3 * tele)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10**6), st.sampled_from([0.1, 0.15, 0.5]))
def test_matches_dense_oracle(seed, alpha):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(5, 120))
    g = random_graph(n, 1, rng, p_edge=float(rng.uniform(0.01, 0.2)))
    split = stratified_split(g, (0.6, 0.2, 0.2), seed)
    tele = np.column_stack([teleport_vector(g, split, c) for c in (0, 1)])
    cfg = GprConfig(alpha=alpha)
    res = compute_gpr(row_normalize(g.relations[0]), tele, alpha, cfg)
    oracle = dense_gpr_oracle(g.relations[0], tele, alpha)
    assert np.abs(res.G - oracle).max() < 10 * cfg.tol
    assert np.all(res.G >= 0)
    # stopping rule implies the fixed-point residual is below tol
    a = row_normalize(g.relations[0]).matrix
    resid = np.abs(res.G - ((1 - alpha) * (a @ res.G) + alpha * tele)).max()
    assert resid < cfg.tol
    # residual trace never increases
    assert all(b <= a_ * (1 + 1e-12) for a_, b in zip(res.residuals, res.residuals[1:]))


def test_mass_conserved_without_dangling(rng):
    n = 60
    # ring plus random chords: no isolated nodes
    src = list(range(n)) + list(rng.integers(0, n, 40))
    dst = [(i + 1) % n for i in range(n)] + list(rng.integers(0, n, 40))
    adj = RelationAdjacency.from_edges(src, dst, n)
    tele = np.zeros((n, 2))
    tele[:5, 0] = 0.2
    tele[10:14, 1] = 0.25
    res = compute_gpr(row_normalize(adj), tele, 0.15)
    np.testing.assert_allclose(res.G.sum(axis=0), [1.0, 1.0], atol=1e-9)


def test_nonconvergence_is_numeric_error():
    with pytest.raises(NumericError, match="residual"):
        compute_gpr(row_normalize(_path3()), np.array([1.0, 0, 0]), 0.15, GprConfig(alpha=0.15, max_iters=3))


def test_config_validation():
    with pytest.raises(ConfigError):
        GprConfig(alpha=0.0)
    with pytest.raises(ConfigError):
        GprConfig(tol=0)
    with pytest.raises(ConfigError):
        GprConfig(score_scale="x")
    cfg = GprConfig(alpha=(0.1, 0.5))
    assert cfg.alpha_for(1) == 0.5


def test_default_iteration_cap():
    # 10 * ceil(ln 1e-10 / ln 0.85) = 10 * 142
    assert GprConfig().iteration_cap(0.15) == 1420


def test_softmax_examples():
    np.testing.assert_allclose(normalize_scores(np.full((4, 2), 0.3)), 0.25)
    np.testing.assert_allclose(normalize_scores(np.array([[0.0], [np.log(2)]]))[:, 0], [1 / 3, 2 / 3])


@given(st.lists(st.floats(-20, 20), min_size=2, max_size=30))
def test_softmax_sums_to_one_and_keeps_order(vals):
    G = np.array(vals)[:, None]
    p = normalize_scores(G)[:, 0]
    assert p.sum() == pytest.approx(1.0)
    i, j = np.argmax(G[:, 0]), np.argmin(G[:, 0])
    assert p[i] >= p[j]
    order = np.argsort(G[:, 0], kind="stable")
    assert np.all(np.diff(p[order]) >= -1e-15)


def test_permutation_equivariance(rng):
    g = random_graph(40, 2, rng)
    split = stratified_split(g, seed=0)
    perm = rng.permutation(40)
    a = compute_influence(g, split)
    b = compute_influence(g.permute(perm), split.permute(perm))
    for ra, rb in zip(a.permute(perm).relations, b.relations):
        np.testing.assert_allclose(ra.G, rb.G, atol=1e-12)


def test_independent_of_features_and_heldout_labels(rng):
    g = random_graph(50, 2, rng)
    split = stratified_split(g, seed=1)
    base = compute_influence(g, split)
    labels = g.labels.copy()
    held = split.mask(VAL) | split.mask(TEST)
    labels[held] = 1 - labels[held]
    mutated = MultiRelationGraph(rng.standard_normal(g.features.shape), g.relations, labels, g.relation_names)
    other = compute_influence(mutated, split)
    for ra, rb in zip(base.relations, other.relations):
        assert ra.G.tobytes() == rb.G.tobytes()
