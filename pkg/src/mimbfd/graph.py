"""Multi-relation graph model, TSV ingestion, normalization, splits, resampling."""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .errors import ConfigError, GraphFormatError, GraphLoadError

BENIGN, FRAUD, UNKNOWN = 0, 1, -1

TRAIN, VAL, TEST, UNLABELED = 0, 1, 2, 3
TAG_NAMES = {TRAIN: "train", VAL: "val", TEST: "test", UNLABELED: "unlabeled"}
TAG_CODES = {v: k for k, v in TAG_NAMES.items()}


@dataclass(frozen=True, eq=False)
class RelationAdjacency:
    """Unweighted CSR adjacency of one relation."""

    indptr: np.ndarray
    indices: np.ndarray

    def __post_init__(self):
        indptr = np.asarray(self.indptr, dtype=np.int64)
        indices = np.asarray(self.indices, dtype=np.int64)
        if indptr.ndim != 1 or len(indptr) == 0 or indptr[0] != 0:
            raise GraphFormatError("indptr must be 1-D and start at 0")
        if np.any(np.diff(indptr) < 0) or indptr[-1] != len(indices):
            raise GraphFormatError("indptr must be nondecreasing and end at nnz")
        n = len(indptr) - 1
        if len(indices) and (indices.min() < 0 or indices.max() >= n):
            raise IndexError("column index out of range")
        if len(indices) > 1:
            within_row = np.ones(len(indices) - 1, dtype=bool)
            starts = indptr[1:-1]
            within_row[starts[(starts > 0) & (starts < len(indices))] - 1] = False
            if np.any(np.diff(indices)[within_row] <= 0):
                raise GraphFormatError("column indices must be sorted and unique within each row")
        object.__setattr__(self, "indptr", indptr)
        object.__setattr__(self, "indices", indices)

    @classmethod
    def from_edges(cls, src, dst, num_nodes: int, symmetrize: bool = True) -> RelationAdjacency:
        """Build from an edge list, dropping self-loops and duplicates."""
        src = np.asarray(src, dtype=np.int64)
        dst = np.asarray(dst, dtype=np.int64)
        keep = src != dst
        src, dst = src[keep], dst[keep]
        if symmetrize:
            src, dst = np.concatenate([src, dst]), np.concatenate([dst, src])
        keys = np.unique(src * num_nodes + dst)
        rows, cols = keys // num_nodes, keys % num_nodes
        indptr = np.zeros(num_nodes + 1, dtype=np.int64)
        np.cumsum(np.bincount(rows, minlength=num_nodes), out=indptr[1:])
        return cls(indptr, cols)

    @property
    def num_nodes(self) -> int:
        return len(self.indptr) - 1

    @property
    def nnz(self) -> int:
        return len(self.indices)

    @property
    def degree(self) -> np.ndarray:
        return np.diff(self.indptr)

    def neighbors(self, i: int) -> np.ndarray:
        return self.indices[self.indptr[i]:self.indptr[i + 1]]

    def to_scipy(self) -> sp.csr_matrix:
        n = self.num_nodes
        return sp.csr_matrix((np.ones(self.nnz), self.indices, self.indptr), shape=(n, n))

    def edge_list(self) -> tuple[np.ndarray, np.ndarray]:
        rows = np.repeat(np.arange(self.num_nodes), self.degree)
        return rows, self.indices.copy()

    def permute(self, perm: np.ndarray) -> RelationAdjacency:
        """Relabel node ``i`` as ``perm[i]``."""
        rows, cols = self.edge_list()
        return RelationAdjacency.from_edges(perm[rows], perm[cols], self.num_nodes, symmetrize=False)

    def __eq__(self, other) -> bool:
        return (isinstance(other, RelationAdjacency) and np.array_equal(self.indptr, other.indptr)
                and np.array_equal(self.indices, other.indices))


@dataclass(frozen=True, eq=False)
class MultiRelationGraph:
    features: np.ndarray
    relations: tuple[RelationAdjacency, ...]
    labels: np.ndarray
    relation_names: tuple[str, ...]

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "relations", tuple(self.relations))
        object.__setattr__(self, "relation_names", tuple(self.relation_names))
        n = feats.shape[0]
        if feats.ndim != 2:
            raise GraphFormatError("features must be an n x d matrix")
        if not np.all(np.isfinite(feats)):
            raise GraphFormatError("features contain NaN or Inf")
        if labels.shape != (n,):
            raise GraphFormatError(f"labels length {labels.shape} != num_nodes {n}")
        if not np.all(np.isin(labels, (BENIGN, FRAUD, UNKNOWN))):
            raise GraphFormatError("labels must be in {0, 1, -1}")
        if not self.relations:
            raise GraphFormatError("graph needs at least one relation")
        if len(self.relation_names) != len(self.relations):
            raise GraphFormatError("one name per relation required")
        for name, adj in zip(self.relation_names, self.relations):
            if adj.num_nodes != n:
                raise GraphFormatError(f"relation {name!r} has {adj.num_nodes} nodes, expected {n}")

    @property
    def num_nodes(self) -> int:
        return self.features.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    @property
    def num_relations(self) -> int:
        return len(self.relations)

    def labeled_mask(self) -> np.ndarray:
        return self.labels != UNKNOWN

    def relation(self, name: str) -> RelationAdjacency:
        try:
            return self.relations[self.relation_names.index(name)]
        except ValueError:
            raise ConfigError(f"unknown relation {name!r}; have {list(self.relation_names)}") from None

    def union_adjacency(self) -> RelationAdjacency:
        pairs = [adj.edge_list() for adj in self.relations]
        src = np.concatenate([p[0] for p in pairs])
        dst = np.concatenate([p[1] for p in pairs])
        return RelationAdjacency.from_edges(src, dst, self.num_nodes, symmetrize=False)

    def with_labels(self, labels: np.ndarray) -> MultiRelationGraph:
        return replace(self, labels=np.asarray(labels, dtype=np.int64).copy())

    def permute(self, perm: np.ndarray) -> MultiRelationGraph:
        """Relabel node ``i`` as ``perm[i]``."""
        perm = np.asarray(perm, dtype=np.int64)
        inv = np.argsort(perm)
        return MultiRelationGraph(
            features=self.features[inv],
            relations=tuple(a.permute(perm) for a in self.relations),
            labels=self.labels[inv],
            relation_names=self.relation_names,
        )

    def __eq__(self, other) -> bool:
        return (isinstance(other, MultiRelationGraph)
                and self.relation_names == other.relation_names
                and np.array_equal(self.features, other.features)
                and np.array_equal(self.labels, other.labels)
                and all(a == b for a, b in zip(self.relations, other.relations)))


# ------------------------------------------------------------------ file I/O

def load_graph(dir_path: str | os.PathLike) -> MultiRelationGraph:
    """Read ``nodes.tsv``, ``edges_<relation>.tsv`` and optional ``graph_meta.json``."""
    root = Path(dir_path)
    nodes_path = root / "nodes.tsv"
    if not nodes_path.is_file():
        raise GraphLoadError(f"missing file: {nodes_path}")

    labels: list[int] = []
    rows: list[list[float]] = []
    width = None
    with open(nodes_path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise GraphFormatError(f"{nodes_path}:{lineno}: expected 3 tab-separated fields")
            try:
                node_id, label = int(parts[0]), int(parts[1])
                feats = [float(x) for x in parts[2].split(",")] if parts[2] else []
            except ValueError as exc:
                raise GraphFormatError(f"{nodes_path}:{lineno}: {exc}") from None
            if node_id != len(labels):
                raise GraphFormatError(f"{nodes_path}:{lineno}: node id {node_id}, expected {len(labels)}")
            if width is None:
                width = len(feats)
            elif len(feats) != width:
                raise GraphFormatError(
                    f"{nodes_path}:{lineno}: ragged feature row ({len(feats)} values, expected {width})")
            labels.append(label)
            rows.append(feats)
    n = len(labels)
    features = np.array(rows, dtype=np.float64).reshape(n, width or 0)

    meta_path = root / "graph_meta.json"
    meta = json.loads(meta_path.read_text()) if meta_path.is_file() else None
    if meta is not None:
        names = list(meta["relations"])
        if meta.get("num_nodes", n) != n:
            raise GraphFormatError(f"{meta_path}: num_nodes {meta['num_nodes']} but nodes.tsv has {n}")
        if meta.get("feature_dim", features.shape[1]) != features.shape[1]:
            raise GraphFormatError(f"{meta_path}: feature_dim disagrees with nodes.tsv")
    else:
        names = sorted(p.name[len("edges_"):-len(".tsv")] for p in root.glob("edges_*.tsv"))
        if not names:
            raise GraphLoadError(f"missing file: no edges_<relation>.tsv in {root}")

    relations = []
    for name in names:
        path = root / f"edges_{name}.tsv"
        if not path.is_file():
            raise GraphLoadError(f"missing file: {path}")
        relations.append(_read_edges(path, n))
    return MultiRelationGraph(features, tuple(relations), np.array(labels, dtype=np.int64), tuple(names))


def _read_edges(path: Path, n: int) -> RelationAdjacency:
    src, dst = [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            parts = line.split()
            if len(parts) != 2:
                raise GraphFormatError(f"{path}:{lineno}: expected '<src>\\t<dst>'")
            try:
                a, b = int(parts[0]), int(parts[1])
            except ValueError as exc:
                raise GraphFormatError(f"{path}:{lineno}: {exc}") from None
            if not (0 <= a < n and 0 <= b < n):
                raise IndexError(f"{path}:{lineno}: endpoint out of range for {n} nodes")
            src.append(a)
            dst.append(b)
    return RelationAdjacency.from_edges(src, dst, n)


def save_graph(graph: MultiRelationGraph, dir_path: str | os.PathLike) -> None:
    """Write the graph in the format ``load_graph`` reads; floats round-trip exactly."""
    root = Path(dir_path)
    root.mkdir(parents=True, exist_ok=True)
    with open(root / "nodes.tsv", "w") as fh:
        for i in range(graph.num_nodes):
            feats = ",".join(repr(float(x)) for x in graph.features[i])
            fh.write(f"{i}\t{int(graph.labels[i])}\t{feats}\n")
    for name, adj in zip(graph.relation_names, graph.relations):
        rows, cols = adj.edge_list()
        upper = rows < cols
        with open(root / f"edges_{name}.tsv", "w") as fh:
            fh.writelines(f"{a}\t{b}\n" for a, b in zip(rows[upper], cols[upper]))
    meta = {"num_nodes": graph.num_nodes, "feature_dim": graph.feature_dim,
            "relations": list(graph.relation_names)}
    (root / "graph_meta.json").write_text(json.dumps(meta, indent=2) + "\n")


# ------------------------------------------------------------ normalization

@dataclass(frozen=True, eq=False)
class TransitionMatrix:
    """Column-stochastic ``A D^-1``; columns of dangling nodes are zero."""

    matrix: sp.csr_matrix
    dangling: np.ndarray

    @property
    def num_nodes(self) -> int:
        return self.matrix.shape[0]


def row_normalize(adj: RelationAdjacency) -> TransitionMatrix:
    deg = adj.degree.astype(np.float64)
    inv = np.divide(1.0, deg, out=np.zeros_like(deg), where=deg > 0)
    a = adj.to_scipy()
    return TransitionMatrix(matrix=sp.csr_matrix(a @ sp.diags(inv)), dangling=np.flatnonzero(deg == 0))


# ------------------------------------------------------------------- splits

@dataclass(frozen=True, eq=False)
class SplitAssignment:
    tags: np.ndarray

    def indices(self, tag: int | str) -> np.ndarray:
        code = TAG_CODES[tag] if isinstance(tag, str) else tag
        return np.flatnonzero(self.tags == code)

    def mask(self, tag: int | str) -> np.ndarray:
        code = TAG_CODES[tag] if isinstance(tag, str) else tag
        return self.tags == code

    def train_labels(self, labels: np.ndarray) -> np.ndarray:
        """Labels visible to training: train-split labels, everything else unknown."""
        out = np.full(len(labels), UNKNOWN, dtype=np.int64)
        m = self.mask(TRAIN)
        out[m] = labels[m]
        return out

    def permute(self, perm: np.ndarray) -> SplitAssignment:
        return SplitAssignment(self.tags[np.argsort(perm)])


def _allocate(count: int, ratios: np.ndarray) -> np.ndarray:
    """Largest-remainder allocation of ``count`` items to ``ratios``."""
    raw = ratios * count
    base = np.floor(raw).astype(np.int64)
    short = count - base.sum()
    order = np.argsort(-(raw - base), kind="stable")
    base[order[:short]] += 1
    return base


def stratified_split(graph: MultiRelationGraph, ratios=(0.4, 0.2, 0.4), seed: int = 0) -> SplitAssignment:
    r = np.asarray(ratios, dtype=np.float64)
    if r.shape != (3,) or np.any(r < 0) or r.sum() <= 0:
        raise ConfigError(f"split ratios must be three non-negative numbers, got {ratios}")
    r = r / r.sum()
    tags = np.full(graph.num_nodes, UNLABELED, dtype=np.int64)
    rng = np.random.default_rng(seed)
    for cls in (BENIGN, FRAUD):
        members = np.flatnonzero(graph.labels == cls)
        if len(members) == 0:
            raise ConfigError(f"class {cls} has no labeled nodes; cannot stratify")
        members = rng.permutation(members)
        counts = _allocate(len(members), r)
        bounds = np.cumsum(counts)[:-1]
        for tag, chunk in zip((TRAIN, VAL, TEST), np.split(members, bounds)):
            tags[chunk] = tag
    return SplitAssignment(tags)


# --------------------------------------------------------------- resampling

@dataclass(frozen=True)
class ResampleSpec:
    rho: int
    seed: int = 0

    def __post_init__(self):
        if int(self.rho) != self.rho or self.rho < 1:
            raise ConfigError(f"rho must be a positive integer, got {self.rho}")


def resample_imbalance(graph: MultiRelationGraph, spec: ResampleSpec) -> MultiRelationGraph:
    """Mask labels so that labeled benign:fraud is exactly ``rho``:1.

    Keeps as many fraud labels as possible; removed labels become unknown, the
    topology and features are untouched.
    """
    benign = np.flatnonzero(graph.labels == BENIGN)
    fraud = np.flatnonzero(graph.labels == FRAUD)
    rho = int(spec.rho)
    keep_fraud = min(len(fraud), len(benign) // rho)
    if keep_fraud == 0:
        raise ConfigError(
            f"rho={rho} unrealizable with {len(benign)} benign / {len(fraud)} fraud labels; "
            f"achievable range is 1..{max(len(benign), 1) if len(fraud) else 0}")
    keep_benign = rho * keep_fraud
    rng = np.random.default_rng(spec.seed)
    labels = np.full(graph.num_nodes, UNKNOWN, dtype=np.int64)
    labels[np.sort(rng.permutation(benign)[:keep_benign])] = BENIGN
    labels[np.sort(rng.permutation(fraud)[:keep_fraud])] = FRAUD
    return graph.with_labels(labels)


def label_counts(labels: np.ndarray) -> dict[str, int]:
    return {"benign": int(np.sum(labels == BENIGN)), "fraud": int(np.sum(labels == FRAUD)),
            "unknown": int(np.sum(labels == UNKNOWN))}
