"""
Command line: dataset generation, training, evaluation, ablation and the
verification / inspection commands.

Every command writes under --out only, starting with a manifest.json that
is completed when the command ends. The exit code is 0 when the command's
own check holds, 1 when it fails, 2 on usage or input errors.
"""
import argparse
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from .ablation import direction_violations, export_csv, export_latex, export_records, print_summary, run_ablation
from .Adapter import SOFTMAX_AXES
from .Config import ModelConfig, TrainConfig, desk_train_config, resolve, worker_count, write_config_file
from .dataset_generator import (SPLITS, GeneratorConfig, build_vocabulary, flip_location, generate_dataset,
                                read_dataset, split_examples, text_only_bayes_accuracy, write_dataset,
                                write_generator_config)
from .diagnostics import bench_complexity, inspect_example, run_grad_check
from .Errors import ConfigurationError, ScenaFuseError
from .Metrics import LABELS, write_metric_records
from .Model import ScenaFuseModel
from .Trainer import evaluate, prepare_examples, train
from .Variants import get_variant, ordered_names, variant_of
from .Vocabulary import Vocabulary

logger = logging.getLogger(__name__)

DATASET_FILE = "dataset.jsonl"
VOCAB_FILE = "vocab.txt"
GENERATOR_FILE = "generator.cfg"
CHECKPOINT_FILE = "checkpoint.scnf"
MODEL_CONFIG_FILE = "model.cfg"
TRAIN_CONFIG_FILE = "train.cfg"
METRICS_FILE = "metrics.jsonl"
MANIFEST_FILE = "manifest.json"
LOG_FILE = "run.log"


@dataclass
class RunManifest:
    """
    What ran, with which configuration, and what it produced
    """
    command : str
    config : dict
    seed : int | None
    version : str = __version__
    started : str = ""
    finished : str | None = None
    exit_code : int | None = None
    outputs : list[str] = field(default_factory=list)

    def write(self, out : Path):
        path = out / MANIFEST_FILE
        partial = path.with_suffix(".json.partial")
        partial.write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        os.replace(partial, path)


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _configure_logging(level : str, out : Path):
    out.mkdir(parents=True, exist_ok=True)
    handlers = [logging.StreamHandler(sys.stderr), logging.FileHandler(out / LOG_FILE, mode="w", encoding="utf-8")]
    logging.basicConfig(level=getattr(logging, level.upper()), handlers=handlers, force=True,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")


# ---------------------------------------------------------------------------
# Shared loading
# ---------------------------------------------------------------------------

def _train_flags(args) -> dict:
    return {
        "seed": args.seed, "epochs": args.epochs, "learning_rate": args.lr, "batch_size": args.batch_size,
        "dropout": args.dropout, "grad_clip": args.grad_clip, "unsafe": True if args.unsafe else None,
        "softmax_axis": args.softmax_axis,
    }


def _resolve_run_config(args) -> tuple[ModelConfig, TrainConfig]:
    model_config, train_config = resolve([ModelConfig(), desk_train_config()], args.config, _train_flags(args))
    return model_config, train_config


def _load_data(data : Path, vocab_dir : Path | None = None):
    dataset = read_dataset(data / DATASET_FILE)
    vocab_path = (vocab_dir or data) / VOCAB_FILE
    vocab = Vocabulary.load(vocab_path) if vocab_path.exists() else build_vocabulary(dataset)
    return dataset, vocab


def _prepare_splits(dataset, vocab, model_config : ModelConfig) -> dict:
    return {split: prepare_examples(split_examples(dataset, split), vocab, model_config) for split in SPLITS}


def _checkpoint_config(checkpoint : Path) -> ModelConfig:
    path = checkpoint.parent / MODEL_CONFIG_FILE
    return resolve([ModelConfig()], path if path.exists() else None)[0]


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_gen_data(args, manifest : RunManifest) -> int:
    cfg = resolve([GeneratorConfig()], args.config, {"seed": args.seed})[0]
    manifest.config, manifest.seed = asdict(cfg), cfg.seed
    manifest.write(args.out)

    dataset = generate_dataset(cfg)
    write_dataset(args.out / DATASET_FILE, dataset)
    write_generator_config(args.out / GENERATOR_FILE, cfg)
    build_vocabulary(dataset).save(args.out / VOCAB_FILE)
    manifest.outputs += [DATASET_FILE, GENERATOR_FILE, VOCAB_FILE]

    for split in SPLITS:
        examples = split_examples(dataset, split)
        print(f"{split:<6} {len(examples):>6} examples, text-only ceiling {text_only_bayes_accuracy(examples):.4f}")
    return 0


def cmd_train(args, manifest : RunManifest) -> int:
    model_config, train_config = _resolve_run_config(args)
    variant = get_variant("w/o ISI" if args.text_only else args.variant)
    manifest.config = {"model": asdict(model_config), "train": asdict(train_config), "variant": variant.name}
    manifest.seed = train_config.seed
    manifest.write(args.out)

    dataset, vocab = _load_data(args.data or args.out)
    splits = _prepare_splits(dataset, vocab, model_config)
    model = ScenaFuseModel.initialize(model_config, variant.ablation, train_config.seed)
    workers = worker_count(args.threads)
    result = train(model, splits["train"], splits["dev"], train_config, workers)

    model.save(args.out / CHECKPOINT_FILE)
    write_config_file(args.out / MODEL_CONFIG_FILE, model_config)
    write_config_file(args.out / TRAIN_CONFIG_FILE, train_config)
    vocab.save(args.out / VOCAB_FILE)

    records = [e.dev.as_record(variant.name, "dev", e.epoch) for e in result.history if e.dev is not None]
    if splits["test"]:
        test = evaluate(model, splits["test"], workers)
        records.append(test.as_record(variant.name, "test", result.best_epoch))
        print(f"{variant.name}: test {test} (best epoch {result.best_epoch})")
    write_metric_records(args.out / METRICS_FILE, records)
    manifest.outputs += [CHECKPOINT_FILE, MODEL_CONFIG_FILE, TRAIN_CONFIG_FILE, VOCAB_FILE, METRICS_FILE]
    return 0


def cmd_eval(args, manifest : RunManifest) -> int:
    checkpoint = args.checkpoint or args.out / CHECKPOINT_FILE
    model_config = _checkpoint_config(checkpoint)
    manifest.config = {"model": asdict(model_config), "checkpoint": str(checkpoint), "split": args.split}
    manifest.write(args.out)

    dataset, vocab = _load_data(args.data or checkpoint.parent, checkpoint.parent)
    model = ScenaFuseModel.load(checkpoint, model_config)
    examples = prepare_examples(split_examples(dataset, args.split), vocab, model_config)
    metrics = evaluate(model, examples, worker_count(args.threads))
    print(f"{args.split}: {metrics}")
    print(f"confusion (rows gold {'/'.join(LABELS)}):\n{metrics.confusion}")
    output = f"eval_{args.split}.jsonl"
    write_metric_records(args.out / output, [metrics.as_record(variant_of(model.ablation), args.split, None)])
    manifest.outputs.append(output)
    return 0


def cmd_ablate(args, manifest : RunManifest) -> int:
    model_config, train_config = _resolve_run_config(args)
    variants = [get_variant(args.variant)] if args.only else None
    manifest.config = {"model": asdict(model_config), "train": asdict(train_config),
                       "variants": [args.variant] if args.only else ordered_names()}
    manifest.seed = train_config.seed
    manifest.write(args.out)

    dataset, vocab = _load_data(args.data or args.out)
    splits = _prepare_splits(dataset, vocab, model_config)
    rows = run_ablation(splits, model_config, train_config, variants, worker_count(args.threads))
    print_summary(rows)
    export_records(rows, args.out / "ablation.jsonl")
    export_csv(rows, args.out / "ablation.csv")
    export_latex(rows, args.out / "ablation.tex")
    manifest.outputs += ["ablation.jsonl", "ablation.csv", "ablation.tex"]

    violations = direction_violations(rows)
    if violations:
        print(f"ablations above the full model: {', '.join(violations)}")
        return 1
    return 0


def cmd_grad_check(args, manifest : RunManifest) -> int:
    seed = args.seed if args.seed is not None else 0
    ablation = get_variant(args.variant).ablation
    manifest.config, manifest.seed = {"variant": args.variant}, seed
    manifest.write(args.out)
    if not ablation.uses_adapter:
        logger.info("variant %s has no adapter; checking the encoder alone", args.variant)
    report = run_grad_check(ablation=ablation, seed=seed)
    print(report)
    return 0 if report.passed else 1


def cmd_inspect_attention(args, manifest : RunManifest) -> int:
    checkpoint = args.checkpoint or args.out / CHECKPOINT_FILE
    model_config = _checkpoint_config(checkpoint)
    manifest.config = {"checkpoint": str(checkpoint), "split": args.split, "index": args.index}
    manifest.write(args.out)

    dataset, vocab = _load_data(args.data or checkpoint.parent, checkpoint.parent)
    examples = split_examples(dataset, args.split)
    if not 0 <= args.index < len(examples):
        raise ConfigurationError(f"index {args.index} outside the {len(examples)} {args.split} examples")
    example = examples[args.index]
    model = ScenaFuseModel.load(checkpoint, model_config)

    report = {"split": args.split, "index": args.index, "premise": " ".join(example.premise),
              "hypothesis": " ".join(example.hypothesis), "label": example.label, "ambiguous": example.ambiguous,
              "observed": inspect_example(model, example.premise, example.hypothesis, example.scenario, vocab)}
    if example.scenario.location is not None:
        report["counterfactual"] = inspect_example(model, example.premise, example.hypothesis,
                                                   flip_location(example.scenario), vocab)
    (args.out / "attention.json").write_text(json.dumps(report) + "\n", encoding="utf-8")
    manifest.outputs.append("attention.json")

    print(f"{report['premise']} / {report['hypothesis']} (gold {LABELS[example.label]})")
    for key in ("observed", "counterfactual"):
        if key in report:
            r = report[key]
            print(f"  {key:<14} {str(r['scenario']['location']):<8} -> {LABELS[r['prediction']]} "
                  f"{[round(p, 3) for p in r['probabilities']]}")
    return 0


def cmd_bench_complexity(args, manifest : RunManifest) -> int:
    seed = args.seed if args.seed is not None else 0
    manifest.config, manifest.seed = {"repeats": args.repeats}, seed
    manifest.write(args.out)
    report = bench_complexity(repeats=args.repeats, seed=seed)
    print(report)
    return 0 if report.passed else 1


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "grad-check": cmd_grad_check,
    "inspect-attention": cmd_inspect_attention,
    "bench-complexity": cmd_bench_complexity,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="scenafuse", description="Scenario-guided NLI adapter experiments")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", type=Path, default=Path("out"), help="Directory for every artifact (default: out)")
    common.add_argument("--seed", type=int, help="Run seed")
    common.add_argument("--config", type=Path, help="Flat key=value configuration file")
    common.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    common.add_argument("--threads", type=int, help="Evaluation workers (default: $SCENAFUSE_THREADS or 1)")

    data = argparse.ArgumentParser(add_help=False)
    data.add_argument("--data", type=Path, help="Directory holding dataset.jsonl and vocab.txt")

    recipe = argparse.ArgumentParser(add_help=False)
    recipe.add_argument("--epochs", type=int)
    recipe.add_argument("--lr", type=float, help="Peak learning rate")
    recipe.add_argument("--batch-size", type=int)
    recipe.add_argument("--dropout", type=float)
    recipe.add_argument("--grad-clip", type=float)
    recipe.add_argument("--softmax-axis", choices=sorted(SOFTMAX_AXES))
    recipe.add_argument("--unsafe", action="store_true", help="Allow values outside the published grids")

    variant = argparse.ArgumentParser(add_help=False)
    variant.add_argument("--variant", default="full", choices=ordered_names(), help="Ablation variant")

    checkpoint = argparse.ArgumentParser(add_help=False)
    checkpoint.add_argument("--checkpoint", type=Path, help="Checkpoint file (default: <out>/checkpoint.scnf)")
    checkpoint.add_argument("--split", default="test", choices=SPLITS)

    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("gen-data", parents=[common], help="Generate the synthetic benchmark")
    train_parser = sub.add_parser("train", parents=[common, data, recipe, variant], help="Train one model")
    train_parser.add_argument("--text-only", action="store_true", help="Train without the adapter")
    sub.add_parser("eval", parents=[common, data, checkpoint], help="Evaluate a checkpoint")
    ablate = sub.add_parser("ablate", parents=[common, data, recipe, variant], help="Train and test every variant")
    ablate.add_argument("--only", action="store_true", help="Run only the variant given by --variant")
    sub.add_parser("grad-check", parents=[common, variant], help="Finite-difference gradient check")
    inspect = sub.add_parser("inspect-attention", parents=[common, data, checkpoint],
                             help="Dump attention weights of one example and its flipped scenario")
    inspect.add_argument("--index", type=int, default=0)
    bench = sub.add_parser("bench-complexity", parents=[common], help="Fit adapter time against width t")
    bench.add_argument("--repeats", type=int, default=15)
    return parser


def dispatch(argv : list[str] | None = None) -> int:
    """
    Run one command and return its exit code
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as stop:
        return int(stop.code or 0)

    _configure_logging(args.log_level, args.out)
    manifest = RunManifest(command=args.command, config=dict(), seed=args.seed, started=_now())
    try:
        code = COMMANDS[args.command](args, manifest)
    except ScenaFuseError as error:
        print(f"error: {error}", file=sys.stderr)
        logger.debug("command failed", exc_info=True)
        code = 2
    manifest.finished, manifest.exit_code = _now(), code
    manifest.write(args.out)
    return code


def main():
    sys.exit(dispatch())
