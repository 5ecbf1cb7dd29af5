"""Command-line entry point: ``mimbfd <subcommand> [flags] --out DIR``.

Exit codes: 0 success, 1 configuration/input error (including unknown flags),
2 numeric failure.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from .config import ExperimentConfig, config_hash, load_config_file
from .errors import MimbfdError, NumericError
from .gpr import compute_influence, scores_table
from .graph import ResampleSpec, label_counts, load_graph, resample_imbalance, stratified_split
from .profiler import bin_trend, closeness_centrality, degree_centrality, neighbor_composition_histogram
from .synth import SynthSpec, calibrate, generate, write_synthetic
from .trainer import build_model, evaluate, load_checkpoint, save_checkpoint, train, write_embeddings, \
    write_report, write_trace

DEFAULT_ETA_GRID = (0.1, 0.3, 0.5, 0.7, 1.0)
DEFAULT_RHOS = (5, 10, 20)
SEED_ENV = "MIMBFD_SEED"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def _floats(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _ints(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _score_scale(text: str):
    return text if text == "n" else float(text)


# flag dest -> config key
EXPERIMENT_FLAGS = {
    "eta": "eta", "lr": "lr", "epochs": "epochs", "patience": "patience", "alpha": "alpha",
    "hidden": "hidden_dims", "aggregation": "aggregation", "score_scale": "score_scale",
    "split": "split", "lambda1": "lcd.lambda1", "lambda2": "lcd.lambda2", "lcd_variant": "lcd.variant",
    "model": "model", "label": "label",
}
SYNTH_FLAGS = ("n", "fraud_fraction", "num_relations", "mean_degree", "homophily_benign", "homophily_fraud",
               "camouflage_rate", "low_cc_bias", "feature_dim", "class_mean_separation")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file; flags override its values")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True, help="output directory")


def _graph_source(p: argparse.ArgumentParser) -> None:
    p.add_argument("--graph", help="graph directory (default: synthetic graph from the seed and synth settings)")
    for name in SYNTH_FLAGS:
        kind = int if name in ("n", "num_relations", "feature_dim") else float
        p.add_argument(f"--{name.replace('_', '-')}", dest=f"synth_{name}", type=kind)


def _experiment(p: argparse.ArgumentParser) -> None:
    p.add_argument("--eta", type=float)
    p.add_argument("--lr", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--hidden", type=_ints)
    p.add_argument("--aggregation", choices=("partition", "neighborhood"))
    p.add_argument("--score-scale", type=_score_scale)
    p.add_argument("--split", type=_floats)
    p.add_argument("--lambda1", type=float)
    p.add_argument("--lambda2", type=float)
    p.add_argument("--lcd-variant", choices=("sq_outside", "sq_inside"))
    p.add_argument("--model", choices=("mimbfd", "gcn"))
    p.add_argument("--label")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mimbfd", description="Fraud detection on multi-relation graphs.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic graph")
    _common(p)
    for name in SYNTH_FLAGS:
        kind = int if name in ("n", "num_relations", "feature_dim") else float
        p.add_argument(f"--{name.replace('_', '-')}", dest=f"synth_{name}", type=kind)
    p.add_argument("--calibrate", action="store_true", help="also write calibration.json")

    p = sub.add_parser("gpr", help="group PageRank scores per relation")
    _common(p)
    _graph_source(p)
    p.add_argument("--alpha", type=float)
    p.add_argument("--score-scale", type=_score_scale)
    p.add_argument("--split", type=_floats)

    p = sub.add_parser("profile", help="benign-node centrality vs neighbor label mix")
    _common(p)
    _graph_source(p)
    p.add_argument("--metric", choices=("cc", "dc"), default="cc")
    p.add_argument("--bins", type=int, default=10)
    p.add_argument("--relation", default="union")

    p = sub.add_parser("train", help="train and evaluate one model")
    _common(p)
    _graph_source(p)
    _experiment(p)

    p = sub.add_parser("eval", help="evaluate a trained run directory")
    _common(p)
    _graph_source(p)
    p.add_argument("--run", required=True, help="output directory of a previous train run")
    p.add_argument("--on", choices=("train", "val", "test"), default="test")

    p = sub.add_parser("sweep-eta", help="train once per eta value")
    _common(p)
    _graph_source(p)
    _experiment(p)
    p.add_argument("grid", nargs="?", type=_floats, default=DEFAULT_ETA_GRID)

    p = sub.add_parser("case-study", help="resample to benign:fraud = rho:1, compare with GCN")
    _common(p)
    _graph_source(p)
    _experiment(p)
    p.add_argument("--rho", type=_ints, default=DEFAULT_RHOS)
    p.add_argument("--seeds", type=_ints)

    p = sub.add_parser("ablate", help="train with one component removed")
    _common(p)
    _graph_source(p)
    _experiment(p)
    p.add_argument("--without", choices=("lcd", "tmr"), required=True)
    return parser


# --------------------------------------------------------------- resolution

def _file_config(args) -> dict:
    return load_config_file(args.config) if args.config else {}


def resolve_seed(args, file_cfg: dict) -> int:
    if args.seed is not None:
        return args.seed
    if "seed" in file_cfg:
        return int(file_cfg["seed"])
    env = os.environ.get(SEED_ENV)
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise UsageError(f"{SEED_ENV} must be an integer, got {env!r}")
    return 0


def resolve_config(args, file_cfg: dict) -> ExperimentConfig:
    base = {k: v for k, v in file_cfg.items() if k != "synth"}
    base["seed"] = resolve_seed(args, file_cfg)
    cfg = ExperimentConfig.from_dict(base)
    changes = {}
    for dest, key in EXPERIMENT_FLAGS.items():
        value = getattr(args, dest, None)
        if value is not None:
            changes[key] = value
    if getattr(args, "graph", None):
        changes["graph_dir"] = args.graph
    changes["out_dir"] = args.out
    return cfg.replace(**changes)


def resolve_synth(args, file_cfg: dict, seed: int) -> SynthSpec:
    fields = dict(file_cfg.get("synth", {}))
    for name in SYNTH_FLAGS:
        value = getattr(args, f"synth_{name}", None)
        if value is not None:
            fields[name] = value
    fields["seed"] = seed
    try:
        return SynthSpec(**fields)
    except TypeError as exc:
        raise UsageError(f"bad synth settings: {exc}")


def _load(args, file_cfg: dict, seed: int):
    if getattr(args, "graph", None):
        return load_graph(args.graph)
    return generate(resolve_synth(args, file_cfg, seed))


def _graph_source_record(args, file_cfg: dict, seed: int):
    """What the run trained on: a directory path or the synthetic spec."""
    if getattr(args, "graph", None):
        return args.graph
    return {"synth": resolve_synth(args, file_cfg, seed).to_dict()}


def write_manifest(out: Path, command: list[str], config: dict, seed: int, artifacts: list[str],
                   started: float, graph_source=None) -> Path:
    manifest = {
        "graph": graph_source,
        "command": command,
        "config": config,
        "seed": seed,
        "config_hash": config_hash(config),
        "artifacts": sorted(artifacts),
        "wall_time_s": time.perf_counter() - started,
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def _train_run(graph, cfg: ExperimentConfig, out: Path, split=None, extra: dict | None = None) -> tuple[object, dict]:
    out.mkdir(parents=True, exist_ok=True)
    model, report = train(graph, cfg, split)
    write_report(out / "report.json", report, cfg, extra)
    write_trace(out / "trace.tsv", report.trace)
    write_embeddings(out / "embeddings.tsv", model, graph)
    save_checkpoint(out / "checkpoint.bin", model)
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
    return model, report


RUN_ARTIFACTS = ["report.json", "trace.tsv", "embeddings.tsv", "checkpoint.bin", "config.json"]


# --------------------------------------------------------------- commands

def cmd_synth(args, argv, started):
    file_cfg = _file_config(args)
    seed = resolve_seed(args, file_cfg)
    spec = resolve_synth(args, file_cfg, seed)
    out = Path(args.out)
    graph = write_synthetic(spec, out)
    artifacts = ["nodes.tsv", "graph_meta.json", "synth_spec.json"] + [f"edges_{r}.tsv" for r in graph.relation_names]
    if args.calibrate:
        (out / "calibration.json").write_text(json.dumps(calibrate(spec), indent=2, sort_keys=True) + "\n")
        artifacts.append("calibration.json")
    write_manifest(out, argv, spec.to_dict(), seed, artifacts, started)


def cmd_gpr(args, argv, started):
    file_cfg = _file_config(args)
    cfg = resolve_config(args, file_cfg)
    graph = _load(args, file_cfg, cfg.seed)
    split = stratified_split(graph, cfg.split, cfg.seed)
    scores = compute_influence(graph, split, cfg.gpr_config())
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    artifacts = []
    for name, rel in zip(graph.relation_names, scores.relations):
        fname = f"gpr_{name}.tsv"
        with open(out / fname, "w") as fh:
            fh.write("node_id\tg_benign\tg_fraud\tp_benign\tp_fraud\n")
            for row in scores_table(rel):
                fh.write(f"{row[0]}\t" + "\t".join(repr(x) for x in row[1:]) + "\n")
        artifacts.append(fname)
    write_manifest(out, argv, cfg.to_dict(), cfg.seed, artifacts, started,
                   _graph_source_record(args, file_cfg, cfg.seed))


def cmd_profile(args, argv, started):
    file_cfg = _file_config(args)
    seed = resolve_seed(args, file_cfg)
    graph = _load(args, file_cfg, seed)
    relation = None if args.relation == "union" else args.relation
    if relation is not None and relation not in graph.relation_names:
        raise UsageError(f"unknown relation {relation!r}; have {list(graph.relation_names)} or 'union'")
    metric = closeness_centrality if args.metric == "cc" else degree_centrality
    profile = neighbor_composition_histogram(graph, metric(graph, relation), args.bins, relation)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    profile.write_csv(out / "profile.csv")
    summary = {"metric": args.metric, "bins": args.bins, "relation": args.relation,
               "spearman_bin_vs_fraud_neighbors": bin_trend(profile)}
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    config = {"metric": args.metric, "bins": args.bins, "relation": args.relation, "graph": args.graph,
              "seed": seed}
    write_manifest(out, argv, config, seed, ["profile.csv", "summary.json"], started,
                   _graph_source_record(args, file_cfg, seed))


def cmd_train(args, argv, started):
    file_cfg = _file_config(args)
    cfg = resolve_config(args, file_cfg)
    graph = _load(args, file_cfg, cfg.seed)
    out = Path(args.out)
    _train_run(graph, cfg, out)
    write_manifest(out, argv, cfg.to_dict(), cfg.seed, RUN_ARTIFACTS, started,
                   _graph_source_record(args, file_cfg, cfg.seed))


def cmd_eval(args, argv, started):
    run = Path(args.run)
    try:
        cfg = ExperimentConfig.from_dict(load_config_file(str(run / "config.json")))
    except FileNotFoundError:
        raise UsageError(f"{run}: no config.json; is this a train output directory?")
    file_cfg = _file_config(args)
    graph = load_graph(args.graph) if args.graph else (
        load_graph(cfg.graph_dir) if cfg.graph_dir else generate(resolve_synth(args, file_cfg, cfg.seed)))
    split = stratified_split(graph, cfg.split, cfg.seed)
    model = build_model(graph, split, cfg)
    load_checkpoint(run / "checkpoint.bin", model)
    report = evaluate(model, graph, args.on)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_report(out / "report.json", report, cfg, {"split": args.on})
    write_manifest(out, argv, cfg.to_dict(), cfg.seed, ["report.json"], started)


def cmd_sweep_eta(args, argv, started):
    file_cfg = _file_config(args)
    base = resolve_config(args, file_cfg)
    graph = _load(args, file_cfg, base.seed)
    root = Path(args.out)
    for eta in args.grid:
        t0 = time.perf_counter()
        out = root / f"eta_{eta:g}"
        cfg = base.replace(eta=eta, out_dir=str(out))
        _train_run(graph, cfg, out)
        write_manifest(out, argv, cfg.to_dict(), cfg.seed, RUN_ARTIFACTS, t0,
                       _graph_source_record(args, file_cfg, base.seed))


def cmd_case_study(args, argv, started):
    file_cfg = _file_config(args)
    base = resolve_config(args, file_cfg)
    seeds = args.seeds or (base.seed,)
    root = Path(args.out)
    graphs = {seed: _load(args, file_cfg, seed) for seed in seeds}
    for rho in args.rho:
        t0 = time.perf_counter()
        out = root / f"rho_{rho}"
        runs = []
        for seed in seeds:
            resampled = resample_imbalance(graphs[seed], ResampleSpec(rho=rho, seed=seed))
            counts = label_counts(resampled.labels)
            row = {"seed": seed, "labeled_benign": counts["benign"], "labeled_fraud": counts["fraud"]}
            for model in ("mimbfd", "gcn"):
                cfg = base.replace(seed=seed, model=model, out_dir=str(out / f"{model}_seed{seed}"))
                _, report = _train_run(resampled, cfg, out / f"{model}_seed{seed}", extra={"rho": rho})
                row[model] = report.to_dict()
            runs.append(row)
        summary = {
            "rho": rho,
            "seeds": list(seeds),
            "labeled_ratio": [r["labeled_benign"] / r["labeled_fraud"] for r in runs],
            "mimbfd_recall_mean": float(np.mean([r["mimbfd"]["recall"] for r in runs])),
            "gcn_recall_mean": float(np.mean([r["gcn"]["recall"] for r in runs])),
            "mimbfd_auc_mean": float(np.mean([r["mimbfd"]["auc"] for r in runs])),
            "gcn_auc_mean": float(np.mean([r["gcn"]["auc"] for r in runs])),
            "runs": runs,
            "config_hash": base.config_hash(),
        }
        (out / "report.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
        artifacts = ["report.json"] + [f"{m}_seed{s}/{a}" for s in seeds for m in ("mimbfd", "gcn")
                                       for a in RUN_ARTIFACTS]
        write_manifest(out, argv, {**base.to_dict(), "rho": rho, "seeds": list(seeds)}, base.seed, artifacts, t0,
                       [_graph_source_record(args, file_cfg, s) for s in seeds])


def ablation_config(cfg: ExperimentConfig, without: str) -> ExperimentConfig:
    """w/o LCD: eta = 0. w/o TMR: uniform propagation weights and beta frozen at 0.5."""
    if without == "lcd":
        return cfg.replace(eta=0.0, label=cfg.label or "without-lcd")
    return cfg.replace(tmr=False, label=cfg.label or "without-tmr")


def cmd_ablate(args, argv, started):
    file_cfg = _file_config(args)
    cfg = ablation_config(resolve_config(args, file_cfg), args.without)
    graph = _load(args, file_cfg, cfg.seed)
    out = Path(args.out)
    _train_run(graph, cfg, out)
    write_manifest(out, argv, cfg.to_dict(), cfg.seed, RUN_ARTIFACTS, started,
                   _graph_source_record(args, file_cfg, cfg.seed))


COMMANDS = {
    "synth": cmd_synth, "gpr": cmd_gpr, "profile": cmd_profile, "train": cmd_train, "eval": cmd_eval,
    "sweep-eta": cmd_sweep_eta, "case-study": cmd_case_study, "ablate": cmd_ablate,
}


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    started = time.perf_counter()
    try:
        args = build_parser().parse_args(argv)
        COMMANDS[args.command](args, argv, started)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 2
    except (MimbfdError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
