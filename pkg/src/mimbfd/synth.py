"""Synthetic imbalanced multi-relation graphs with planted camouflage."""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, MimbfdError
from .graph import BENIGN, FRAUD, TEST, TRAIN, MultiRelationGraph, RelationAdjacency, save_graph, \
    stratified_split
from .metrics import auc

DEGREE_DISPERSION = 0.5  # sigma of the log-normal node propensities


class GenerationError(MimbfdError, ValueError):
    pass


@dataclass(frozen=True)
class SynthSpec:
    n: int = 2000
    fraud_fraction: float = 0.1
    num_relations: int = 2
    mean_degree: float = 10.0
    homophily_benign: float = 0.95
    homophily_fraud: float = 0.55
    camouflage_rate: float = 0.3
    low_cc_bias: float = 1.0
    feature_dim: int = 16
    class_mean_separation: float = 1.5
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.fraud_fraction < 0.5:
            raise ConfigError("fraud_fraction must lie in (0, 0.5)")
        if self.n * self.fraud_fraction < 2:
            raise ConfigError("need at least two fraud nodes (n * fraud_fraction >= 2)")
        for name in ("homophily_benign", "homophily_fraud", "camouflage_rate"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1]")
        if self.low_cc_bias < 0 or self.class_mean_separation < 0:
            raise ConfigError("low_cc_bias and class_mean_separation must be >= 0")
        if self.num_relations < 1 or self.feature_dim < 1 or self.mean_degree <= 0:
            raise ConfigError("num_relations, feature_dim and mean_degree must be positive")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def block_edge_counts(spec: SynthSpec, n_fraud: int) -> tuple[int, int, int]:
    """(benign-benign, fraud-fraud, cross) edge counts per relation.

    Solves 2E_ff / (2E_ff + E_x) = h_fraud, 2E_bb / (2E_bb + E_x) = h_benign,
    E_bb + E_ff + E_x = n * mean_degree / 2.
    """
    n_benign = spec.n - n_fraud
    total = int(round(spec.n * spec.mean_degree / 2))
    hb, hf = spec.homophily_benign, spec.homophily_fraud
    if hb == 1.0 and hf == 1.0:
        e_ff = int(round(total * n_fraud / spec.n))
        counts = (total - e_ff, e_ff, 0)
    elif hb == 1.0 or hf == 1.0:
        raise GenerationError("homophily of exactly 1 for one class forces it for the other")
    else:
        a = hf / (2 * (1 - hf))
        b = hb / (2 * (1 - hb))
        x = total / (1 + a + b)
        e_ff = int(round(a * x))
        e_bb = int(round(b * x))
        counts = (e_bb, e_ff, total - e_bb - e_ff)
    e_bb, e_ff, e_x = counts
    if e_bb > n_benign * (n_benign - 1) // 4 or e_ff > n_fraud * (n_fraud - 1) // 4 \
            or e_x > n_benign * n_fraud // 2:
        raise GenerationError(
            f"infeasible degree/homophily combination: blocks (bb={e_bb}, ff={e_ff}, cross={e_x}) "
            f"too dense for {n_benign} benign / {n_fraud} fraud nodes")
    return counts


def _sample_edges(rng, count, left, right, p_left, p_right, existing: set, same_block: bool):
    """Draw ``count`` new undirected edges between ``left`` and ``right`` node sets."""
    out = []
    attempts = 0
    while len(out) < count:
        attempts += 1
        if attempts > 200:
            raise GenerationError(f"could not place {count} distinct edges")
        need = count - len(out)
        batch = max(64, 2 * need)
        a = left[rng.choice(len(left), size=batch, p=p_left)]
        b = right[rng.choice(len(right), size=batch, p=p_right)]
        for i, j in zip(a.tolist(), b.tolist()):
            if i == j:
                continue
            key = (i, j) if i < j else (j, i)
            if key in existing:
                continue
            existing.add(key)
            out.append(key)
            if len(out) == count:
                break
    return out


def generate(spec: SynthSpec) -> MultiRelationGraph:
    """Degree-corrected block wiring per relation plus a two-component Gaussian feature mixture."""
    rng = np.random.default_rng(spec.seed)
    n = spec.n
    n_fraud = int(round(n * spec.fraud_fraction))
    labels = np.zeros(n, dtype=np.int64)
    fraud = np.sort(rng.choice(n, size=n_fraud, replace=False))
    labels[fraud] = FRAUD
    benign = np.flatnonzero(labels == BENIGN)

    direction = rng.standard_normal(spec.feature_dim)
    direction /= np.linalg.norm(direction)
    features = rng.standard_normal((n, spec.feature_dim))
    n_camo = int(round(spec.camouflage_rate * n_fraud))
    camouflaged = rng.choice(fraud, size=n_camo, replace=False)
    honest = np.setdiff1d(fraud, camouflaged)
    features[honest] += spec.class_mean_separation * direction

    e_bb, e_ff, e_x = block_edge_counts(spec, n_fraud)
    relations = []
    for _ in range(spec.num_relations):
        theta = rng.lognormal(0.0, DEGREE_DISPERSION, size=n)
        pb = theta[benign] / theta[benign].sum()
        pf = theta[fraud] / theta[fraud].sum()
        existing: set = set()
        edges = _sample_edges(rng, e_bb, benign, benign, pb, pb, existing, True)
        edges += _sample_edges(rng, e_ff, fraud, fraud, pf, pf, existing, True)
        deg = np.zeros(n)
        if edges:
            arr = np.array(edges)
            np.add.at(deg, arr[:, 0], 1)
            np.add.at(deg, arr[:, 1], 1)
        attract = theta[benign] * (1.0 + deg[benign]) ** (-spec.low_cc_bias)
        edges += _sample_edges(rng, e_x, fraud, benign, pf, attract / attract.sum(), existing, False)
        arr = np.array(edges, dtype=np.int64).reshape(-1, 2)
        relations.append(RelationAdjacency.from_edges(arr[:, 0], arr[:, 1], n))
    names = tuple(f"r{i + 1}" for i in range(spec.num_relations))
    return MultiRelationGraph(features, tuple(relations), labels, names)


def write_synthetic(spec: SynthSpec, out_dir: str | Path) -> MultiRelationGraph:
    graph = generate(spec)
    save_graph(graph, out_dir)
    (Path(out_dir) / "synth_spec.json").write_text(json.dumps(spec.to_dict(), indent=2, sort_keys=True) + "\n")
    return graph


def measured_homophily(graph: MultiRelationGraph) -> dict[str, float]:
    """Fraction of each class's edge endpoints that land on the same class, over all relations."""
    same = {BENIGN: 0, FRAUD: 0}
    total = {BENIGN: 0, FRAUD: 0}
    for adj in graph.relations:
        rows, cols = adj.edge_list()
        for c in (BENIGN, FRAUD):
            m = graph.labels[rows] == c
            total[c] += int(m.sum())
            same[c] += int(np.sum(graph.labels[cols[m]] == c))
    return {"benign": same[BENIGN] / max(total[BENIGN], 1), "fraud": same[FRAUD] / max(total[FRAUD], 1)}


def feature_oracle_auc(graph: MultiRelationGraph, seed: int = 0) -> float:
    """Test AUC of logistic regression on raw features (4:2:4 stratified split)."""
    from sklearn.linear_model import LogisticRegression

    split = stratified_split(graph, (0.4, 0.2, 0.4), seed)
    tr, te = split.indices(TRAIN), split.indices(TEST)
    clf = LogisticRegression(max_iter=1000).fit(graph.features[tr], graph.labels[tr])
    return auc(clf.decision_function(graph.features[te]), graph.labels[te])


def calibrate(spec: SynthSpec) -> dict:
    graph = generate(spec)
    labeled = graph.labels >= 0
    return {
        "requested_fraud_fraction": spec.fraud_fraction,
        "realized_fraud_fraction": float(np.mean(graph.labels[labeled] == FRAUD)),
        "requested_mean_degree": spec.mean_degree,
        "realized_mean_degree": [float(adj.nnz / graph.num_nodes) for adj in graph.relations],
        "homophily": measured_homophily(graph),
        "feature_oracle_auc": feature_oracle_auc(graph, spec.seed),
        "num_relations": graph.num_relations,
    }
