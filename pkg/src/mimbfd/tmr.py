"""Class-partitioned, influence-weighted message passing layer."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, ShapeError
from .gpr import InfluenceScores
from .graph import BENIGN, FRAUD, MultiRelationGraph, RelationAdjacency, SplitAssignment

LEAKY_SLOPE = 0.01


BE, FR, UN = 0, 1, 2
NORMALIZATIONS = ("partition", "neighborhood")


@dataclass(frozen=True, eq=False)
class RelationPartition:
    """A relation's adjacency with each stored edge tagged BE, FR or UN by the neighbor's train label."""

    adjacency: RelationAdjacency
    category: np.ndarray

    def part(self, which: int) -> RelationAdjacency:
        return _sub_adjacency(self.adjacency, self.category == which)

    @property
    def benign(self) -> RelationAdjacency:
        return self.part(BE)

    @property
    def fraud(self) -> RelationAdjacency:
        return self.part(FR)

    @property
    def unlabeled(self) -> RelationAdjacency:
        return self.part(UN)


@dataclass(frozen=True, eq=False)
class NeighborPartition:
    """Per relation, each node's neighbors split by their *train* label."""

    relations: tuple[RelationPartition, ...]

    @property
    def num_nodes(self) -> int:
        return self.relations[0].adjacency.num_nodes


def _sub_adjacency(adj: RelationAdjacency, keep: np.ndarray) -> RelationAdjacency:
    rows = np.repeat(np.arange(adj.num_nodes), adj.degree)
    counts = np.bincount(rows[keep], minlength=adj.num_nodes)
    indptr = np.zeros(adj.num_nodes + 1, dtype=np.int64)
    np.cumsum(counts, out=indptr[1:])
    return RelationAdjacency(indptr, adj.indices[keep])


def partition_neighbors(graph: MultiRelationGraph, split: SplitAssignment) -> NeighborPartition:
    visible = split.train_labels(graph.labels)
    parts = []
    for adj in graph.relations:
        lab = visible[adj.indices]
        category = np.full(adj.nnz, UN, dtype=np.int8)
        category[lab == BENIGN] = BE
        category[lab == FRAUD] = FR
        parts.append(RelationPartition(adj, category))
    return NeighborPartition(tuple(parts))


def _row_weights(adj: RelationAdjacency, log_weights: np.ndarray, keep: np.ndarray) -> np.ndarray:
    """exp(log w) over kept edges, shifted by the per-row max of kept edges; zero elsewhere."""
    n = adj.num_nodes
    rows = np.repeat(np.arange(n), adj.degree)
    lw = np.where(keep, np.asarray(log_weights, dtype=np.float64)[adj.indices], -np.inf)
    row_max = np.full(n, -np.inf)
    nonempty = np.flatnonzero(adj.degree > 0)
    if len(nonempty):
        row_max[nonempty] = np.maximum.reduceat(lw, adj.indptr[nonempty])
    shift = row_max[rows]
    dead = keep & ~np.isfinite(shift)
    w = np.zeros(adj.nnz)
    live = keep & ~dead
    w[live] = np.exp(lw[live] - shift[live])
    w[dead] = 1.0  # every kept weight underflowed or was zero: plain mean
    return w


def partition_operator(part: RelationAdjacency, log_weights: np.ndarray) -> sp.csr_matrix:
    """Row-normalized operator: row i averages part(i) with weights exp(log_weights).

    Weights are shifted by the per-row maximum so tiny softmax values never
    underflow to an all-zero row; rows whose weights are all zero fall back to
    a plain mean, empty rows stay zero.
    """
    n = part.num_nodes
    w = _row_weights(part, log_weights, np.ones(part.nnz, dtype=bool))
    rows = np.repeat(np.arange(n), part.degree)
    totals = np.bincount(rows, weights=w, minlength=n)
    vals = np.divide(w, totals[rows], out=np.zeros_like(w), where=totals[rows] > 0)
    return sp.csr_matrix((vals, part.indices, part.indptr), shape=(n, n))


def neighborhood_operator(rel: RelationPartition, which: int, log_weights: np.ndarray) -> sp.csr_matrix:
    """Weighted sum over part(i), divided by the weight of the whole neighborhood of i."""
    adj = rel.adjacency
    n = adj.num_nodes
    w = _row_weights(adj, log_weights, np.ones(adj.nnz, dtype=bool))
    rows = np.repeat(np.arange(n), adj.degree)
    totals = np.bincount(rows, weights=w, minlength=n)
    vals = np.divide(w, totals[rows], out=np.zeros_like(w), where=totals[rows] > 0)
    vals[rel.category != which] = 0.0
    m = sp.csr_matrix((vals, adj.indices, adj.indptr), shape=(n, n))
    m.eliminate_zeros()
    return m


def aggregate_class(H: Tensor, part: RelationAdjacency, p_col: np.ndarray) -> Tensor:
    """Row i = sum_{j in part(i)} p[j] H[j] / sum_{j in part(i)} p[j]; empty rows are zero."""
    p = np.asarray(p_col, dtype=np.float64)
    with np.errstate(divide="ignore"):
        log_p = np.log(p)
    return ad.spmm(partition_operator(part, log_p), H)


@dataclass(frozen=True, eq=False)
class RelationOperators:
    benign: sp.csr_matrix
    fraud: sp.csr_matrix
    unlabeled_benign: sp.csr_matrix
    unlabeled_fraud: sp.csr_matrix


def build_operators(scores: InfluenceScores, part: NeighborPartition,
                    normalization: str = "partition") -> tuple[RelationOperators, ...]:
    if len(scores.relations) != len(part.relations):
        raise ShapeError("scores and partition disagree on the number of relations")
    if normalization not in NORMALIZATIONS:
        raise ConfigError(f"normalization must be one of {NORMALIZATIONS}")
    ops = []
    for sc, rp in zip(scores.relations, part.relations):
        lp_be, lp_fr = sc.log_p[:, BENIGN], sc.log_p[:, FRAUD]
        if normalization == "partition":
            be, fr, un = rp.benign, rp.fraud, rp.unlabeled
            ops.append(RelationOperators(
                benign=partition_operator(be, lp_be),
                fraud=partition_operator(fr, lp_fr),
                unlabeled_benign=partition_operator(un, lp_be),
                unlabeled_fraud=partition_operator(un, lp_fr),
            ))
        else:
            ops.append(RelationOperators(
                benign=neighborhood_operator(rp, BE, lp_be),
                fraud=neighborhood_operator(rp, FR, lp_fr),
                unlabeled_benign=neighborhood_operator(rp, UN, lp_be),
                unlabeled_fraud=neighborhood_operator(rp, UN, lp_fr),
            ))
    return tuple(ops)


@dataclass(eq=False)
class TmrLayerParams:
    W_self: Tensor
    b_self: Tensor
    W_beta: Tensor
    b_beta: Tensor
    W_fuse: Tensor
    b_fuse: Tensor
    activation: str = "leaky_relu"

    @property
    def d_in(self) -> int:
        return self.W_self.shape[0]

    @property
    def d_out(self) -> int:
        return self.W_fuse.shape[1]

    def parameters(self) -> list[Tensor]:
        return [self.W_self, self.b_self, self.W_beta, self.b_beta, self.W_fuse, self.b_fuse]

    @classmethod
    def init(cls, d_in: int, d_out: int, rng: np.random.Generator, prefix: str = "") -> TmrLayerParams:
        return cls(
            W_self=ad.parameter(glorot(d_in, d_in, rng), f"{prefix}W_self"),
            b_self=ad.parameter(np.zeros((1, d_in)), f"{prefix}b_self"),
            W_beta=ad.parameter(glorot(d_in, d_in, rng), f"{prefix}W_beta"),
            b_beta=ad.parameter(np.zeros((1, d_in)), f"{prefix}b_beta"),
            W_fuse=ad.parameter(glorot(4 * d_in, d_out, rng), f"{prefix}W_fuse"),
            b_fuse=ad.parameter(np.zeros((1, d_out)), f"{prefix}b_fuse"),
        )


def glorot(fan_in: int, fan_out: int, rng: np.random.Generator) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def activate(x: Tensor, kind: str) -> Tensor:
    if kind == "leaky_relu":
        return ad.leaky_relu(x, LEAKY_SLOPE)
    if kind == "linear":
        return x
    raise ConfigError(f"unknown activation {kind!r}")


def linear(x: Tensor, W: Tensor, b: Tensor) -> Tensor:
    return ad.add_bias(ad.matmul(x, W), b)


def beta_gate(H: Tensor, params: TmrLayerParams) -> Tensor:
    """Per-dimension gate sigmoid(H W_beta + b_beta), strictly inside (0, 1)."""
    return ad.sigmoid(linear(H, params.W_beta, params.b_beta))


def fuse_unlabeled(h_un_be: Tensor, h_un_fr: Tensor, beta: Tensor) -> Tensor:
    """beta * h_un_fr + (1 - beta) * h_un_be."""
    return ad.add(h_un_be, ad.mul(beta, ad.sub(h_un_fr, h_un_be)))


def tmr_forward(H: Tensor, scores: InfluenceScores | None, part: NeighborPartition | None,
                params: TmrLayerParams, *, operators: tuple[RelationOperators, ...] | None = None,
                fixed_beta: float | None = None) -> Tensor:
    """One layer: self transform, three partition aggregates per relation, mean over relations.

    ``fixed_beta`` replaces the learned gate by a constant.
    """
    if operators is None:
        operators = build_operators(scores, part)
    if H.shape[1] != params.d_in:
        raise ShapeError(f"tmr_forward: input width {H.shape[1]} != layer d_in {params.d_in}")
    if operators[0].benign.shape[0] != H.shape[0]:
        raise ShapeError(f"tmr_forward: {H.shape[0]} rows but graph has {operators[0].benign.shape[0]} nodes")

    self_rep = activate(linear(H, params.W_self, params.b_self), params.activation)
    if fixed_beta is None:
        beta = beta_gate(H, params)
    else:
        beta = Tensor(np.full(H.shape, float(fixed_beta)))
    blocks = []
    for op in operators:
        h_be = ad.spmm(op.benign, H)
        h_fr = ad.spmm(op.fraud, H)
        h_un = fuse_unlabeled(ad.spmm(op.unlabeled_benign, H), ad.spmm(op.unlabeled_fraud, H), beta)
        blocks.append(ad.concat_cols([self_rep, h_be, h_fr, h_un]))
    z = blocks[0] if len(blocks) == 1 else ad.mean_stack(blocks)
    return activate(linear(z, params.W_fuse, params.b_fuse), params.activation)
