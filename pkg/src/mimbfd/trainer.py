"""Model assembly, loss, full-batch training with early stopping, evaluation."""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from . import autodiff as ad
from .autodiff import Tensor
from .config import ExperimentConfig
from .errors import ConfigError, GraphFormatError, NumericError, ShapeError
from .gpr import InfluenceScores, compute_influence, uniform_scores
from .graph import TEST, TRAIN, VAL, MultiRelationGraph, SplitAssignment, TAG_CODES, stratified_split
from .lcd import LcdState, lcd_loss
from .metrics import auc, confusion, macro_f1, macro_recall, recall
from .tmr import NeighborPartition, RelationOperators, TmrLayerParams, build_operators, glorot, linear, \
    partition_neighbors, tmr_forward, activate

CHECKPOINT_MAGIC = b"MFD1"
CHECKPOINT_VERSION = 1


@dataclass
class EvalReport:
    auc: float
    recall: float
    f1: float
    recall_macro: float
    confusion: dict[str, int]
    num_nodes: int
    trace: list[tuple[int, float, float]] = field(default_factory=list)
    epochs_run: int = 0
    best_epoch: int = 0
    best_val_auc: float = float("nan")

    def to_dict(self) -> dict:
        return {
            "auc": self.auc, "recall": self.recall, "f1": self.f1, "recall_macro": self.recall_macro,
            "confusion": self.confusion, "num_nodes": self.num_nodes, "epochs_run": self.epochs_run,
            "best_epoch": self.best_epoch, "best_val_auc": self.best_val_auc,
        }


# ---------------------------------------------------------------- models

class TmrModel:
    """Stacked TMR layers, a linear two-class head, and the decorrelation weights."""

    def __init__(self, layers: list[TmrLayerParams], W_cls: Tensor, b_cls: Tensor,
                 scores: InfluenceScores, partition: NeighborPartition, split: SplitAssignment,
                 lcd: LcdState | None = None, fixed_beta: float | None = None,
                 normalization: str = "partition"):
        if not layers:
            raise ConfigError("a TMR model needs at least one layer")
        for a, b in zip(layers, layers[1:]):
            if a.d_out != b.d_in:
                raise ShapeError(f"layer widths do not chain: {a.d_out} -> {b.d_in}")
        if W_cls.shape != (layers[-1].d_out, 2):
            raise ShapeError(f"classifier weight {W_cls.shape} vs last width {layers[-1].d_out}")
        self.layers = layers
        self.W_cls = W_cls
        self.b_cls = b_cls
        self.scores = scores
        self.partition = partition
        self.split = split
        self.lcd = lcd
        self.fixed_beta = fixed_beta
        self.operators: tuple[RelationOperators, ...] = build_operators(scores, partition, normalization)

    @classmethod
    def build(cls, graph: MultiRelationGraph, split: SplitAssignment, config: ExperimentConfig,
              rng: np.random.Generator) -> TmrModel:
        if config.tmr:
            scores = compute_influence(graph, split, config.gpr_config())
            fixed_beta = None
        else:
            scores = uniform_scores(graph.num_nodes, graph.num_relations)
            fixed_beta = 0.5
        dims = (graph.feature_dim, *config.hidden_dims)
        layers = [TmrLayerParams.init(a, b, rng, prefix=f"layer{i}.") for i, (a, b) in enumerate(zip(dims, dims[1:]))]
        W_cls = ad.parameter(glorot(dims[-1], 2, rng), "cls.W")
        b_cls = ad.parameter(np.zeros((1, 2)), "cls.b")
        lcd = None
        if config.lcd.enabled:
            lcd = LcdState.create(len(split.indices(TRAIN)), dims[-1], config.lcd.lambda1, config.lcd.lambda2,
                                  config.lcd.gamma_trainable, config.lcd.variant)
        return cls(layers, W_cls, b_cls, scores, partition_neighbors(graph, split), split, lcd, fixed_beta,
                   config.aggregation)

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        out = []
        for i, layer in enumerate(self.layers):
            for name in ("W_self", "b_self", "W_beta", "b_beta", "W_fuse", "b_fuse"):
                out.append((f"layer{i}.{name}", getattr(layer, name)))
        out += [("cls.W", self.W_cls), ("cls.b", self.b_cls)]
        if self.lcd is not None:
            out.append(("lcd.u", self.lcd.u))
            if self.lcd.gamma_trainable:
                out.append(("lcd.gamma", self.lcd.gamma_raw))
        return out

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def forward(self, X: Tensor) -> tuple[Tensor, Tensor]:
        H = X
        for layer in self.layers:
            H = tmr_forward(H, None, None, layer, operators=self.operators, fixed_beta=self.fixed_beta)
        return linear(H, self.W_cls, self.b_cls), H


class GcnModel:
    """Two mean-aggregation graph convolutions on the relation-union graph."""

    def __init__(self, weights: list[tuple[Tensor, Tensor]], W_cls: Tensor, b_cls: Tensor,
                 propagation: sp.csr_matrix, split: SplitAssignment):
        self.weights = weights
        self.W_cls = W_cls
        self.b_cls = b_cls
        self.propagation = propagation
        self.split = split
        self.lcd = None

    @classmethod
    def build(cls, graph: MultiRelationGraph, split: SplitAssignment, config: ExperimentConfig,
              rng: np.random.Generator) -> GcnModel:
        adj = graph.union_adjacency().to_scipy() + sp.identity(graph.num_nodes, format="csr")
        deg = np.asarray(adj.sum(axis=1)).ravel()
        prop = sp.csr_matrix(sp.diags(1.0 / deg) @ adj)
        dims = (graph.feature_dim, *config.hidden_dims)
        weights = [(ad.parameter(glorot(a, b, rng), f"gcn{i}.W"), ad.parameter(np.zeros((1, b)), f"gcn{i}.b"))
                   for i, (a, b) in enumerate(zip(dims, dims[1:]))]
        W_cls = ad.parameter(glorot(dims[-1], 2, rng), "cls.W")
        b_cls = ad.parameter(np.zeros((1, 2)), "cls.b")
        return cls(weights, W_cls, b_cls, prop, split)

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        out = []
        for i, (W, b) in enumerate(self.weights):
            out += [(f"gcn{i}.W", W), (f"gcn{i}.b", b)]
        return out + [("cls.W", self.W_cls), ("cls.b", self.b_cls)]

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def forward(self, X: Tensor) -> tuple[Tensor, Tensor]:
        H = X
        for W, b in self.weights:
            H = activate(linear(ad.spmm(self.propagation, H), W, b), "leaky_relu")
        return linear(H, self.W_cls, self.b_cls), H


def build_model(graph: MultiRelationGraph, split: SplitAssignment, config: ExperimentConfig):
    rng = np.random.default_rng(config.seed)
    if config.model == "gcn":
        return GcnModel.build(graph, split, config, rng)
    return TmrModel.build(graph, split, config, rng)


def forward_model(model, graph: MultiRelationGraph, H0: np.ndarray | None = None) -> tuple[Tensor, Tensor]:
    """Logits (n x 2) and last hidden representation."""
    X = Tensor(graph.features if H0 is None else H0)
    return model.forward(X)


# ------------------------------------------------------------------ loss

def cross_entropy(logits: Tensor, labels, index) -> Tensor:
    idx = np.asarray(index, dtype=np.int64)
    if len(idx) == 0:
        raise ConfigError("cross-entropy needs at least one training node")
    logp = ad.log_softmax(ad.gather_rows(logits, idx))
    return ad.scale(ad.sum_all(ad.pick(logp, np.asarray(labels)[idx])), -1.0 / len(idx))


def total_loss(logits: Tensor, labels, train_index, H_last: Tensor, lcd: LcdState | None,
               eta: float) -> Tensor:
    """Mean cross-entropy over train nodes + eta * LCD on their last hidden rows."""
    ce = cross_entropy(logits, labels, train_index)
    if eta == 0 or lcd is None:
        return ce
    H_train = ad.gather_rows(H_last, np.asarray(train_index, dtype=np.int64))
    return ad.add(ce, ad.scale(lcd_loss(H_train, lcd), eta))


# -------------------------------------------------------------- training

def fraud_scores(logits: np.ndarray) -> np.ndarray:
    return logits[:, 1] - logits[:, 0]


def _report(logits: np.ndarray, labels: np.ndarray, index: np.ndarray) -> EvalReport:
    y = labels[index]
    pred = np.argmax(logits[index], axis=1)
    return EvalReport(
        auc=auc(fraud_scores(logits[index]), y),
        recall=recall(pred, y),
        f1=macro_f1(pred, y),
        recall_macro=macro_recall(pred, y),
        confusion=confusion(pred, y),
        num_nodes=int(len(index)),
    )


def train(graph: MultiRelationGraph, config: ExperimentConfig, split: SplitAssignment | None = None):
    """Full-batch Adam with early stopping on validation AUC.

    Returns the model restored to its best-validation parameters and the test
    report (with the per-epoch trace attached).
    """
    if split is None:
        split = stratified_split(graph, config.split, config.seed)
    model = build_model(graph, split, config)
    train_idx, val_idx = split.indices(TRAIN), split.indices(VAL)
    labels = graph.labels
    params = model.parameters()
    opt = ad.Adam(params, lr=config.lr)
    X = Tensor(graph.features)
    eta = config.eta if getattr(model, "lcd", None) is not None else 0.0

    trace: list[tuple[int, float, float]] = []
    best_auc, best_epoch, best_state = -np.inf, 0, None
    epoch = 0
    for epoch in range(1, config.epochs + 1):
        opt.zero_grad()
        logits, H_last = model.forward(X)
        loss = total_loss(logits, labels, train_idx, H_last, model.lcd, eta)
        loss_value = loss.item()
        if not np.isfinite(loss_value):
            raise NumericError(f"loss became {loss_value} at epoch {epoch}")
        val_auc = auc(fraud_scores(logits.data[val_idx]), labels[val_idx])
        trace.append((epoch, loss_value, val_auc))
        if val_auc > best_auc:
            best_auc, best_epoch = val_auc, epoch
            best_state = [p.data.copy() for p in params]
        elif epoch - best_epoch >= config.patience:
            break
        ad.backward(loss)
        opt.step()

    for p, saved in zip(params, best_state):
        p.data[...] = saved
    report = evaluate(model, graph, "test")
    report.trace = trace
    report.epochs_run = epoch
    report.best_epoch = best_epoch
    report.best_val_auc = float(best_auc)
    return model, report


def evaluate(model, graph: MultiRelationGraph, split_tag: str | int = "test") -> EvalReport:
    code = TAG_CODES[split_tag] if isinstance(split_tag, str) else split_tag
    if code not in (TRAIN, VAL, TEST):
        raise ConfigError(f"cannot evaluate on split {split_tag!r}")
    logits, _ = forward_model(model, graph)
    return _report(logits.data, graph.labels, model.split.indices(code))


def gcn_baseline(graph: MultiRelationGraph, config: ExperimentConfig,
                 split: SplitAssignment | None = None) -> EvalReport:
    _, report = train(graph, config.replace(model="gcn"), split)
    return report


# ------------------------------------------------------------- artifacts

def write_report(path: str | Path, report: EvalReport, config: ExperimentConfig, extra: dict | None = None) -> None:
    data = report.to_dict()
    data["seed"] = config.seed
    data["config_hash"] = config.config_hash()
    if extra:
        data.update(extra)
    Path(path).write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


def write_trace(path: str | Path, trace) -> None:
    with open(path, "w") as fh:
        fh.write("epoch\ttrain_loss\tval_auc\n")
        for epoch, loss, val_auc in trace:
            fh.write(f"{epoch}\t{loss!r}\t{val_auc!r}\n")


def write_embeddings(path: str | Path, model, graph: MultiRelationGraph) -> None:
    _, H = forward_model(model, graph)
    with open(path, "w") as fh:
        cols = "\t".join(f"h_{k + 1}" for k in range(H.shape[1]))
        fh.write(f"node_id\tlabel\t{cols}\n")
        for i, row in enumerate(H.data):
            fh.write(f"{i}\t{int(graph.labels[i])}\t" + "\t".join(repr(float(x)) for x in row) + "\n")


def save_checkpoint(path: str | Path, model) -> None:
    """``MFD1`` | u32 version | u32 count | per block: u32 name len, name, u64 rows, u64 cols, f64 data (LE)."""
    named = model.named_parameters()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(named)))
        for name, t in named:
            raw = name.encode()
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<QQ", *t.shape))
            fh.write(np.ascontiguousarray(t.data, dtype="<f8").tobytes())


def read_checkpoint(path: str | Path) -> dict[str, np.ndarray]:
    blob = Path(path).read_bytes()
    if blob[:4] != CHECKPOINT_MAGIC:
        raise GraphFormatError(f"{path}: not a model checkpoint (bad magic)")
    version, count = struct.unpack_from("<II", blob, 4)
    if version != CHECKPOINT_VERSION:
        raise GraphFormatError(f"{path}: unsupported checkpoint version {version}")
    pos = 12
    out = {}
    for _ in range(count):
        (length,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        name = blob[pos:pos + length].decode()
        pos += length
        rows, cols = struct.unpack_from("<QQ", blob, pos)
        pos += 16
        size = rows * cols * 8
        out[name] = np.frombuffer(blob[pos:pos + size], dtype="<f8").reshape(rows, cols).astype(np.float64)
        pos += size
    return out


def load_checkpoint(path: str | Path, model) -> None:
    blocks = read_checkpoint(path)
    for name, t in model.named_parameters():
        if name not in blocks:
            raise GraphFormatError(f"{path}: missing parameter block {name!r}")
        if blocks[name].shape != t.shape:
            raise ShapeError(f"{path}: block {name!r} has shape {blocks[name].shape}, model expects {t.shape}")
        t.data[...] = blocks[name]
