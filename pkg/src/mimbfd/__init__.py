"""Dual-view fraud detection on multi-relation graphs.

Class-partitioned message passing weighted by group PageRank reachability,
plus a sample-reweighting decorrelation penalty on the final representations.
"""
from .config import ExperimentConfig, LcdConfig
from .errors import ConfigError, MimbfdError, NumericError
from .gpr import GprConfig, compute_gpr, compute_influence, dense_gpr_oracle
from .graph import MultiRelationGraph, RelationAdjacency, load_graph, resample_imbalance, save_graph, \
    stratified_split
from .synth import SynthSpec, generate
from .trainer import EvalReport, evaluate, train

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "EvalReport", "ExperimentConfig", "GprConfig", "LcdConfig", "MimbfdError",
    "MultiRelationGraph", "NumericError", "RelationAdjacency", "SynthSpec", "compute_gpr",
    "compute_influence", "dense_gpr_oracle", "evaluate", "generate", "load_graph", "resample_imbalance",
    "save_graph", "stratified_split", "train",
]
