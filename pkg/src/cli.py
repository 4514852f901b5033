"""
Command-line entry: pretrain, finetune, transfer, eval, grad-check,
gen-synth, relgraph and hop-sweep.

Metrics go to stdout as ``key=value`` lines (and to ``--out``); logs go to
stderr. Exit status is 0 on success and category-specific otherwise.
"""

import argparse
import logging
import sys
from dataclasses import fields
from pathlib import Path
from typing import Dict, List, Optional

import pandas as pd

from src.exceptions import (AlignmentError, CheckpointError, ConfigError, DatasetFormatError,
                            GradientCheckError, NonFiniteError)
from src.models.models import (ABLATIONS, BREAKDOWNS, CANDIDATE_POOLS, DIRECTIONS, DTYPES, REL_AGGREGATIONS, Metrics,
                               RunRecord, SynthSpec, TrainConfig)
from src.utils.config_loader import build_config
from src.utils.logging_setup import configure_logging

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_USAGE = 2
EXIT_DATASET = 3
EXIT_CHECKPOINT = 4
EXIT_NUMERICAL = 5

# command-line flag destination -> TrainConfig field
FLAG_FIELDS = {
    "dim": "dim", "rel_layers": "rel_layers", "ent_layers": "ent_layers", "anchor_hop": "anchor_hop",
    "lr": "lr", "batch_size": "batch_size", "epochs": "max_epochs", "patience": "patience",
    "seed": "rng_seed", "ablation": "ablation", "negatives": "negative_sample_size",
    "direction": "direction", "candidates": "eval_candidates", "weight_decay": "weight_decay",
    "dtype": "dtype", "threads": "num_threads", "valid_cap": "valid_candidate_cap",
    "rel_aggregation": "rel_aggregation", "relgraph_include_inverses": "relgraph_include_inverses",
}


class UsageError(AlignmentError):
    category = "usage"


def parse_bool(text: str) -> bool:
    value = text.strip().lower()
    if value in ("true", "1", "yes", "on"):
        return True
    if value in ("false", "0", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected true or false, got {text!r}")


def exit_code(error: Exception) -> int:
    if isinstance(error, (ConfigError, UsageError)):
        return EXIT_USAGE
    if isinstance(error, DatasetFormatError):
        return EXIT_DATASET
    if isinstance(error, CheckpointError):
        return EXIT_CHECKPOINT
    if isinstance(error, (NonFiniteError, GradientCheckError)):
        return EXIT_NUMERICAL
    return EXIT_ERROR


def add_train_flags(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("training configuration")
    group.add_argument("--config", help="TOML file with TrainConfig keys")
    group.add_argument("--dim", type=int, help="hidden dimension (default 32)")
    group.add_argument("--layers", type=int, help="RelGNN and EntGNN depth (default 6)")
    group.add_argument("--rel-layers", type=int, dest="rel_layers")
    group.add_argument("--ent-layers", type=int, dest="ent_layers")
    group.add_argument("--rel-aggregation", choices=REL_AGGREGATIONS, dest="rel_aggregation",
                       help="RelGNN pooling over incoming relation edges (default mean)")
    group.add_argument("--relgraph-include-inverses", type=parse_bool, dest="relgraph_include_inverses",
                       metavar="{true,false}", help="add inverse edges to the relation graph (default true)")
    group.add_argument("--anchor-hop", type=int, dest="anchor_hop", help="anchor hop k (default 2)")
    group.add_argument("--lr", type=float, help="learning rate (default 5e-4)")
    group.add_argument("--batch-size", type=int, dest="batch_size", help="default 64")
    group.add_argument("--epochs", type=int, help="maximum epochs (default 200)")
    group.add_argument("--patience", type=int, help="early-stopping patience (default 10)")
    group.add_argument("--weight-decay", type=float, dest="weight_decay")
    group.add_argument("--seed", type=int, help="rng seed")
    group.add_argument("--ablation", choices=ABLATIONS)
    group.add_argument("--negatives", type=int, help="sampled negatives per pair, 0 = full softmax")
    group.add_argument("--direction", choices=DIRECTIONS)
    group.add_argument("--candidates", choices=CANDIDATE_POOLS)
    group.add_argument("--dtype", choices=DTYPES)
    group.add_argument("--threads", type=int, help="torch intra-op threads, 0 = default")
    group.add_argument("--valid-cap", type=int, dest="valid_cap", help="validation pool cap (default 1000)")


def add_common_flags(parser: argparse.ArgumentParser) -> None:
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument("-v", "--verbose", action="store_true")
    verbosity.add_argument("-q", "--quiet", action="store_true")
    parser.add_argument("--out", help="also write metrics to this file")
    parser.add_argument("--no-registry", action="store_true", dest="no_registry",
                        help="do not record the run in the registry database")
    parser.add_argument("--notes", default="", help="free-text note stored with the run")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="align", description="Structure-only entity alignment")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("pretrain", help="train a model on one alignment task")
    p.add_argument("--task", required=True, help="dataset directory (OpenEA layout)")
    p.add_argument("--split-seed", type=int, default=0, dest="split_seed")
    p.add_argument("--save", help="checkpoint path")
    p.add_argument("--report", help="write a PDF report to this path")
    add_train_flags(p)
    add_common_flags(p)

    p = sub.add_parser("finetune", help="continue training a checkpoint on a task")
    p.add_argument("--model", required=True)
    p.add_argument("--task", required=True)
    p.add_argument("--split-seed", type=int, default=0, dest="split_seed")
    p.add_argument("--save", help="checkpoint path")
    p.add_argument("--report")
    add_train_flags(p)
    add_common_flags(p)

    for name, text in (("transfer", "frozen zero-shot evaluation on an unseen task"),
                       ("eval", "evaluate a checkpoint on a task split")):
        p = sub.add_parser(name, help=text)
        p.add_argument("--model", required=True)
        p.add_argument("--task", required=True)
        p.add_argument("--split-seed", type=int, default=0, dest="split_seed")
        p.add_argument("--direction", choices=DIRECTIONS)
        p.add_argument("--candidates", choices=CANDIDATE_POOLS)
        p.add_argument("--anchor-hop", type=int, dest="anchor_hop")
        p.add_argument("--config", help="TOML file; only evaluation settings are applied to the loaded model")
        p.add_argument("--report")
        if name == "eval":
            p.add_argument("--split", choices=("test", "valid"), default="test")
            p.add_argument("--breakdown", choices=BREAKDOWNS, help="also report metrics per bucket of this statistic")
            p.add_argument("--bucket-edges", type=int, nargs="+", dest="bucket_edges",
                           help="bucket lower bounds (default 0 1 2 4 8 ...)")
        add_common_flags(p)

    p = sub.add_parser("grad-check", help="compare analytic and finite-difference gradients")
    p.add_argument("--task", help="dataset directory; default is the bundled tiny task")
    p.add_argument("--epsilon", type=float, default=1e-4)
    p.add_argument("--tolerance", type=float, default=1e-3)
    p.add_argument("--report")
    add_train_flags(p)
    add_common_flags(p)

    p = sub.add_parser("gen-synth", help="write a synthetic KG pair")
    p.add_argument("--out-dir", required=True, dest="out_dir")
    p.add_argument("--entities", type=int, default=SynthSpec.num_entities)
    p.add_argument("--relations", type=int, default=SynthSpec.num_relations)
    p.add_argument("--avg-degree", type=float, default=SynthSpec.avg_degree, dest="avg_degree")
    p.add_argument("--drop-g1", type=float, default=0.0, dest="drop_g1")
    p.add_argument("--drop-g2", type=float, default=0.0, dest="drop_g2")
    p.add_argument("--no-renaming", action="store_true", dest="no_renaming")
    p.add_argument("--seed-fraction", type=float, default=SynthSpec.seed_fraction, dest="seed_fraction")
    p.add_argument("--seed", type=int, default=0)
    add_common_flags(p)

    p = sub.add_parser("relgraph", help="write the merged relation graph of a task as an edge list")
    p.add_argument("--task", required=True)
    p.add_argument("--split-seed", type=int, default=0, dest="split_seed")
    p.add_argument("--edges", required=True, help="edge-list output path")
    p.add_argument("--ablation", choices=ABLATIONS, default="none")
    p.add_argument("--relgraph-include-inverses", type=parse_bool, default=True, dest="relgraph_include_inverses",
                   metavar="{true,false}")
    add_common_flags(p)

    p = sub.add_parser("hop-sweep", help="metrics for a range of anchor hops")
    p.add_argument("--task", required=True)
    p.add_argument("--split-seed", type=int, default=0, dest="split_seed")
    p.add_argument("--k", type=int, nargs="+", default=[1, 2, 3, 4, 5], dest="k_values")
    p.add_argument("--mode", choices=("train", "transfer"), default="train")
    p.add_argument("--model", help="checkpoint for transfer sweeps")
    p.add_argument("--report")
    add_train_flags(p)
    add_common_flags(p)
    return parser


def config_from_args(args: argparse.Namespace, base: Optional[TrainConfig] = None) -> TrainConfig:
    if getattr(args, "layers", None) is not None and (getattr(args, "rel_layers", None) is not None
                                                      or getattr(args, "ent_layers", None) is not None):
        raise UsageError("--layers conflicts with --rel-layers/--ent-layers")
    overrides: Dict[str, object] = {}
    for flag, name in FLAG_FIELDS.items():
        value = getattr(args, flag, None)
        if value is not None:
            overrides[name] = value
    if getattr(args, "layers", None) is not None:
        overrides["rel_layers"] = overrides["ent_layers"] = args.layers
    return build_config(getattr(args, "config", None), overrides, base)


def echo_config(config: TrainConfig) -> None:
    for f in fields(config):
        print(f"config.{f.name}={getattr(config, f.name)}")


def emit(text: str, out: Optional[str]) -> None:
    print(text)
    if out:
        path = Path(out)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text + "\n", encoding="utf-8")


def record(args, config: TrainConfig, metrics: dict, checkpoint: str = "", sweep: Optional[pd.DataFrame] = None):
    """Store the run and optionally render a report; failures only warn"""
    run = RunRecord(command=args.command, task_path=str(getattr(args, "task", "") or ""),
                    ablation=config.ablation, anchor_hop=config.anchor_hop, config=config.to_dict(),
                    metrics=metrics, checkpoint_path=checkpoint, notes=args.notes)
    if not args.no_registry:
        try:
            from src.database.managers import RunManager, SweepManager
            RunManager.record_run(run)
            if sweep is not None:
                SweepManager.record_sweep(run.run_id, sweep)
            logger.info("recorded run %s", run.run_id)
        except Exception as e:
            logger.warning("could not record run in the registry: %s", e)
    if getattr(args, "report", None):
        try:
            from src.utils.pdf_generator import MetricsReportGenerator
            MetricsReportGenerator().generate_report(run, sweep, args.report)
            logger.info("wrote report %s", args.report)
        except Exception as e:
            logger.warning("could not write report: %s", e)
    return run


def _load_task(args):
    from src.data.loader import load_task_directory
    if not Path(args.task).is_dir():
        raise DatasetFormatError("task directory not found", args.task)
    return load_task_directory(args.task, args.split_seed)


def _default_checkpoint(args) -> str:
    return args.save or str(Path("data/checkpoints") / f"{args.command}_{Path(args.task).name}.ckpt")


def cmd_pretrain(args) -> int:
    from src.data.checkpoint import save_checkpoint
    from src.training.evaluation import evaluate
    from src.training.trainer import train

    config = config_from_args(args)
    echo_config(config)
    task = _load_task(args)
    result = train(task, config, progress=not args.quiet)
    path = save_checkpoint(result.model, _default_checkpoint(args),
                           {"best_epoch": result.best_epoch, "task": str(args.task)})
    metrics = evaluate(result.model, task, task.test_pairs, config.direction, config.eval_candidates)
    emit(metrics.to_key_value() + f"\nbest_epoch={result.best_epoch}\ncheckpoint={path}", args.out)
    record(args, config, metrics.to_dict(), str(path))
    return EXIT_OK


def cmd_finetune(args) -> int:
    from src.data.checkpoint import load_checkpoint, save_checkpoint
    from src.training.evaluation import evaluate
    from src.training.trainer import finetune

    model = load_checkpoint(args.model)
    config = config_from_args(args, base=model.config)
    echo_config(config)
    task = _load_task(args)
    result = finetune(model, task, config, progress=not args.quiet)
    path = save_checkpoint(result.model, _default_checkpoint(args),
                           {"best_epoch": result.best_epoch, "finetuned_from": str(args.model)})
    metrics = evaluate(result.model, task, task.test_pairs, config.direction, config.eval_candidates)
    emit(metrics.to_key_value() + f"\nbest_epoch={result.best_epoch}\ncheckpoint={path}", args.out)
    record(args, config, metrics.to_dict(), str(path))
    return EXIT_OK


def _eval_settings(args, model):
    """Apply --config and flags to a loaded model's evaluation settings"""
    if args.config:
        from src.training.trainer import ARCHITECTURE_FIELDS
        settings = build_config(args.config, base=model.config)
        changed = [name for name in ARCHITECTURE_FIELDS if getattr(settings, name) != getattr(model.config, name)]
        if changed:
            raise ConfigError(f"{args.config} changes {', '.join(changed)} of the loaded model")
        model.config = settings
    if args.anchor_hop is not None and args.anchor_hop < 1:
        raise ConfigError("--anchor-hop must be at least 1")
    direction = args.direction or model.config.direction
    candidates = args.candidates or model.config.eval_candidates
    hop = args.anchor_hop if args.anchor_hop is not None else model.config.anchor_hop
    return direction, candidates, hop


def cmd_transfer(args) -> int:
    from src.data.checkpoint import load_checkpoint
    from src.training.evaluation import transfer

    model = load_checkpoint(args.model)
    direction, candidates, hop = _eval_settings(args, model)
    task = _load_task(args)
    metrics = transfer(model, task, direction, candidates, k=hop, progress=not args.quiet)
    emit(metrics.to_key_value(), args.out)
    record(args, model.config, metrics.to_dict(), str(args.model))
    return EXIT_OK


def cmd_eval(args) -> int:
    from src.data.checkpoint import load_checkpoint
    from src.training.evaluation import evaluate, stratified_evaluation

    model = load_checkpoint(args.model)
    direction, candidates, hop = _eval_settings(args, model)
    task = _load_task(args)
    pairs = task.test_pairs if args.split == "test" else task.valid_pairs
    metrics = evaluate(model, task, pairs, direction, candidates, k=hop, progress=not args.quiet)
    text = metrics.to_key_value()
    if args.breakdown:
        frame = stratified_evaluation(model, task, pairs, args.breakdown, args.bucket_edges, direction, candidates,
                                      k=hop, progress=not args.quiet)
        text += "\n" + "\n".join(f"{args.breakdown}[{bucket}].{column}={value}"
                                 for bucket, row in frame.iterrows() for column, value in row.items())
    emit(text, args.out)
    record(args, model.config, metrics.to_dict(), str(args.model))
    return EXIT_OK


def cmd_grad_check(args) -> int:
    from src.training.gradcheck import canonical_tiny_task, gradient_check, tiny_config

    base = tiny_config()
    config = config_from_args(args, base=base)
    task = _load_task(args) if args.task else canonical_tiny_task()
    report = gradient_check(task, config, args.epsilon, args.tolerance)
    emit(report.to_key_value(), args.out)
    record(args, config, {"max_relative_error": report.max_error, "passed": report.passed,
                          "worst_group": report.worst_group})
    if not report.passed:
        raise GradientCheckError(f"gradient of {report.worst_group} off by {report.max_error:.3e}")
    return EXIT_OK


def cmd_gen_synth(args) -> int:
    from src.data.loader import dump_task
    from src.data.synthetic import generate_synthetic

    spec = SynthSpec(num_entities=args.entities, num_relations=args.relations, avg_degree=args.avg_degree,
                     edge_drop_rate_g1=args.drop_g1, edge_drop_rate_g2=args.drop_g2,
                     relation_renaming=not args.no_renaming, seed_fraction=args.seed_fraction,
                     rng_seed=args.seed)
    task = generate_synthetic(spec)
    root = dump_task(task, args.out_dir)
    emit("\n".join(f"{key}={value}" for key, value in task.summary().items()) + f"\npath={root}", args.out)
    return EXIT_OK


def cmd_relgraph(args) -> int:
    from src.kg.relgraph import relation_graph_for

    task = _load_task(args)
    graph = relation_graph_for(task, task.train_seeds, args.ablation, args.relgraph_include_inverses)
    path = graph.write_edge_list(args.edges)
    emit(f"relation_nodes={graph.num_rel_nodes}\nrelation_edges={graph.num_edges}\npath={path}", args.out)
    return EXIT_OK


def cmd_hop_sweep(args) -> int:
    from src.training.sweep import hop_sweep

    model = None
    base = None
    if args.mode == "transfer":
        if not args.model:
            raise UsageError("--mode transfer needs --model")
        from src.data.checkpoint import load_checkpoint
        model = load_checkpoint(args.model)
        base = model.config
    config = config_from_args(args, base=base)
    task = _load_task(args)
    frame = hop_sweep(task, config, args.k_values, args.mode, model, progress=not args.quiet)
    print(frame.to_string(float_format=lambda v: f"{v:.6f}"))
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        frame.to_csv(args.out)
    best = frame["mrr"].idxmax()
    record(args, config, {"best_k": int(best), "mrr": float(frame.loc[best, "mrr"])}, sweep=frame)
    return EXIT_OK


COMMANDS = {
    "pretrain": cmd_pretrain,
    "finetune": cmd_finetune,
    "transfer": cmd_transfer,
    "eval": cmd_eval,
    "grad-check": cmd_grad_check,
    "gen-synth": cmd_gen_synth,
    "relgraph": cmd_relgraph,
    "hop-sweep": cmd_hop_sweep,
}


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_USAGE
    configure_logging(-1 if args.quiet else 1 if args.verbose else 0)
    try:
        return COMMANDS[args.command](args)
    except AlignmentError as e:
        print(f"error [{e.category}]: {e}", file=sys.stderr)
        return exit_code(e)
    except KeyboardInterrupt:
        print("interrupted", file=sys.stderr)
        return EXIT_ERROR
