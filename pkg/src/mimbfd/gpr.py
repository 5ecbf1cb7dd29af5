"""Per-class Group PageRank influence scores and their softmax-normalized weights."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, NumericError
from .graph import BENIGN, FRAUD, TRAIN, MultiRelationGraph, RelationAdjacency, SplitAssignment, \
    TransitionMatrix, row_normalize


@dataclass(frozen=True)
class GprConfig:
    """Restart probability (scalar or one per relation), stopping tolerance, iteration cap.

    ``score_scale`` multiplies G before the softmax; ``"n"`` means the node count.
    """

    alpha: float | tuple[float, ...] = 0.15
    tol: float = 1e-10
    max_iters: int | None = None
    score_scale: float | str = 1.0

    def __post_init__(self):
        alphas = self.alpha if isinstance(self.alpha, (tuple, list)) else (self.alpha,)
        if isinstance(self.alpha, list):
            object.__setattr__(self, "alpha", tuple(self.alpha))
        for a in alphas:
            if not 0.0 < a <= 1.0:
                raise ConfigError(f"alpha must lie in (0, 1], got {a}")
        if self.tol <= 0:
            raise ConfigError(f"tol must be positive, got {self.tol}")
        if self.max_iters is not None and self.max_iters < 1:
            raise ConfigError("max_iters must be >= 1")
        if isinstance(self.score_scale, str) and self.score_scale != "n":
            raise ConfigError("score_scale must be a number or 'n'")

    def alpha_for(self, relation: int) -> float:
        if isinstance(self.alpha, tuple):
            if len(self.alpha) == 1:
                return float(self.alpha[0])
            return float(self.alpha[relation])
        return float(self.alpha)

    def iteration_cap(self, alpha: float) -> int:
        if self.max_iters is not None:
            return self.max_iters
        if alpha >= 1.0:
            return 1
        return 10 * math.ceil(math.log(self.tol) / math.log(1.0 - alpha))

    def scale_for(self, n: int) -> float:
        return float(n) if self.score_scale == "n" else float(self.score_scale)


@dataclass(frozen=True, eq=False)
class GprResult:
    G: np.ndarray
    iterations: int
    residuals: list[float] = field(default_factory=list)


@dataclass(frozen=True, eq=False)
class RelationScores:
    G: np.ndarray
    p: np.ndarray
    log_p: np.ndarray
    converged_iters: int


@dataclass(frozen=True, eq=False)
class InfluenceScores:
    relations: tuple[RelationScores, ...]

    def permute(self, perm: np.ndarray) -> InfluenceScores:
        inv = np.argsort(perm)
        return InfluenceScores(tuple(
            RelationScores(r.G[inv], r.p[inv], r.log_p[inv], r.converged_iters) for r in self.relations))


def teleport_vector(graph: MultiRelationGraph, split: SplitAssignment, class_id: int) -> np.ndarray:
    """Uniform restart distribution over train-labeled nodes of ``class_id``."""
    members = np.flatnonzero((graph.labels == class_id) & split.mask(TRAIN))
    if len(members) == 0:
        raise ConfigError(f"no train-labeled nodes of class {class_id}")
    vec = np.zeros(graph.num_nodes)
    vec[members] = 1.0 / len(members)
    return vec


def compute_gpr(transition: TransitionMatrix, teleports: np.ndarray, alpha: float,
                cfg: GprConfig | None = None) -> GprResult:
    """Power iteration for g = (1 - alpha) A' g + alpha I, one column per class.

    Stops once the 1-norm change of every column drops below ``cfg.tol``; that
    change bounds the sup-norm residual and contracts by (1 - alpha) per step.
    """
    cfg = cfg or GprConfig(alpha=alpha)
    teleports = np.asarray(teleports, dtype=np.float64)
    if teleports.ndim == 1:
        teleports = teleports[:, None]
    a = transition.matrix
    restart = alpha * teleports
    g = restart.copy()
    cap = cfg.iteration_cap(alpha)
    residuals: list[float] = []
    for it in range(1, cap + 1):
        nxt = (1.0 - alpha) * (a @ g) + restart
        res = float(np.abs(nxt - g).sum(axis=0).max())
        residuals.append(res)
        g = nxt
        if res < cfg.tol:
            return GprResult(g, it, residuals)
    raise NumericError(f"GPR did not converge in {cap} iterations (residual {residuals[-1]:.3e})")


def dense_gpr_oracle(adjacency: RelationAdjacency, teleports: np.ndarray, alpha: float) -> np.ndarray:
    """Direct solve of (E - (1 - alpha) A') g = alpha I; reference for small graphs."""
    n = adjacency.num_nodes
    assert n <= 200, "dense oracle is for n <= 200"
    a = row_normalize(adjacency).matrix.toarray()
    system = np.eye(n) - (1.0 - alpha) * a
    return np.linalg.solve(system, alpha * np.asarray(teleports, dtype=np.float64))


def normalize_scores(G: np.ndarray, scale: float = 1.0) -> np.ndarray:
    """Column-wise softmax over all nodes."""
    return np.exp(log_normalize_scores(G, scale))


def log_normalize_scores(G: np.ndarray, scale: float = 1.0) -> np.ndarray:
    z = scale * np.asarray(G, dtype=np.float64)
    z = z - z.max(axis=0, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=0, keepdims=True))


def compute_influence(graph: MultiRelationGraph, split: SplitAssignment,
                      cfg: GprConfig | None = None) -> InfluenceScores:
    """G and p for every relation, from train labels only."""
    cfg = cfg or GprConfig()
    tele = np.column_stack([teleport_vector(graph, split, c) for c in (BENIGN, FRAUD)])
    scale = cfg.scale_for(graph.num_nodes)
    out = []
    for r, adj in enumerate(graph.relations):
        alpha = cfg.alpha_for(r)
        res = compute_gpr(row_normalize(adj), tele, alpha, cfg)
        log_p = log_normalize_scores(res.G, scale)
        out.append(RelationScores(res.G, np.exp(log_p), log_p, res.iterations))
    return InfluenceScores(tuple(out))


def uniform_scores(num_nodes: int, num_relations: int) -> InfluenceScores:
    """Flat weights p = 1/n, used to switch off reachability weighting."""
    G = np.full((num_nodes, 2), 1.0 / num_nodes)
    log_p = np.full((num_nodes, 2), -math.log(num_nodes))
    return InfluenceScores(tuple(RelationScores(G, np.exp(log_p), log_p, 0) for _ in range(num_relations)))


def scores_table(scores: RelationScores) -> list[tuple[int, float, float, float, float]]:
    return [(i, *map(float, scores.G[i]), *map(float, scores.p[i])) for i in range(scores.G.shape[0])]
