"""
MVQA command-line entry point

Subcommands: gen-data, train, eval, ablate, sweep, saliency, flops, gradcheck
Run: python main.py <command> --help

Exit codes: 0 success, 1 runtime error (any MvqaError), 2 usage error.
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

from core.config import (
    PRESETS,
    TrainConfig,
    build_generator_config,
    build_train_config,
    flatten_config,
    load_config_file,
    parse_key_values,
    settings,
)
from core.errors import MvqaError

# Configure logging FIRST
logging.basicConfig(
    level=getattr(logging, str(settings.LOG_LEVEL).upper(), logging.INFO),
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
)
logger = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# Configuration from flags
# ---------------------------------------------------------------------------

def _flag(name: str) -> str:
    return "--" + name.replace("_", "-")


def add_config_arguments(parser: argparse.ArgumentParser, seed_required: bool = False) -> None:
    parser.add_argument("--preset", choices=sorted(PRESETS), default="toy", help="configuration preset (default: toy)")
    parser.add_argument("--config", type=Path, help="key=value configuration file (dotted keys nest)")
    parser.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override any configuration key, e.g. --set model.d_model=16")
    parser.add_argument("--seed", type=int, required=seed_required, default=None, help="run seed")
    for name, field in TrainConfig.model_fields.items():
        if name in ("model", "seed"):
            continue
        if field.annotation is bool:
            parser.add_argument(_flag(name), dest=name, action=argparse.BooleanOptionalAction, default=None)
        else:
            parser.add_argument(_flag(name), dest=name, default=None, metavar=name.upper(),
                                help=f"default: {field.default}")


def config_from_args(args: argparse.Namespace) -> TrainConfig:
    file_overlay = load_config_file(args.config) if args.config else None
    set_overlay = parse_key_values(args.set, source="--set")
    flag_overlay: Dict[str, Any] = {
        name: getattr(args, name)
        for name in TrainConfig.model_fields
        if name != "model" and getattr(args, name, None) is not None
    }
    env_overlay = {"precision": settings.DEFAULT_PRECISION}
    return build_train_config(args.preset, env_overlay, file_overlay, set_overlay, flag_overlay)


def default_run_dir(config: TrainConfig, args: argparse.Namespace, kind: str) -> Path:
    if getattr(args, "out", None):
        return Path(args.out)
    return Path(settings.ARTIFACT_DIR) / kind / config.config_hash()


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_gen_data(args: argparse.Namespace) -> int:
    from ingestion.scene_generator import generate_dataset

    overlay = load_config_file(args.config) if args.config else {}
    overlay.update(parse_key_values(args.set, source="--set"))
    config = build_generator_config(overlay)
    summary = generate_dataset(config, args.seed, args.out)
    for split, count in summary.counts.items():
        print(f"{split}: {count} samples ({summary.open_counts[split]} open-ended)")
    print(f"vocab_size={summary.vocab_size}")
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    from core.orchestrator.engine import TrainingEngine
    from core.orchestrator.metrics import format_table
    from ingestion.dataset_loader import load_dataset

    config = config_from_args(args)
    run_dir = default_run_dir(config, args, "runs")
    dataset = load_dataset(args.data)
    result = TrainingEngine(config, dataset, run_dir=run_dir).train()

    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.conf").write_text("\n".join(flatten_config(config)) + "\n", encoding="utf-8")
    trace_lines = ["step\tl_cls\tl_vtc\tl_aux\ttotal"] + [
        f"{i}\t{b.l_cls:.8g}\t{b.l_vtc:.8g}\t{b.l_aux:.8g}\t{b.total:.8g}" for i, b in enumerate(result.loss_trace)
    ]
    (run_dir / "loss_trace.tsv").write_text("\n".join(trace_lines) + "\n", encoding="utf-8")

    rows = [("train", result.train_report)]
    if result.val_report is not None:
        rows.append(("val", result.val_report))
    print(format_table(rows, label_header="split"))
    print(f"best_epoch={result.best_epoch + 1}")
    print(f"checkpoint={result.checkpoint_path}")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    from core.checkpoint import load_checkpoint
    from core.orchestrator.engine import evaluate, write_generations, write_predictions
    from core.orchestrator.metrics import format_table
    from ingestion.dataset_loader import load_dataset

    loaded = load_checkpoint(args.checkpoint)
    dataset = load_dataset(args.data, splits=[args.split])
    result = evaluate(
        loaded.model, dataset.split(args.split), loaded.vocab, loaded.answers,
        generate=bool(args.out) and loaded.model.decoder is not None,
    )
    if args.out:
        write_predictions(Path(args.out) / "predictions.txt", result)
        if loaded.model.decoder is not None:
            write_generations(Path(args.out) / "generations.txt", result)
    print(format_table([(args.split, result.report)], label_header="split"))
    return 0


def cmd_ablate(args: argparse.Namespace) -> int:
    from core.orchestrator.ablation import format_ablation, run_ablation
    from ingestion.dataset_loader import load_dataset

    config = config_from_args(args)
    rows = run_ablation(config, load_dataset(args.data), run_dir=args.out)
    table = format_ablation(rows)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "ablation.txt").write_text(table + "\n", encoding="utf-8")
        (out / "ablation_configs.txt").write_text(
            "".join(f"{row.label}\t{row.config_hash}\t{row.num_parameters}\n" for row in rows), encoding="utf-8"
        )
    print(table)
    return 0


def cmd_sweep(args: argparse.Namespace) -> int:
    from core.orchestrator.ablation import format_sweep, run_sweep
    from ingestion.dataset_loader import load_dataset

    config = config_from_args(args)
    table = format_sweep(run_sweep(config, load_dataset(args.data)))
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        (Path(args.out) / "sweep.txt").write_text(table + "\n", encoding="utf-8")
    print(table)
    return 0


def cmd_saliency(args: argparse.Namespace) -> int:
    from core.checkpoint import load_checkpoint
    from core.saliency import GradCam, write_overlay
    from ingestion.dataset_loader import collate, load_dataset

    loaded = load_checkpoint(args.checkpoint)
    samples = load_dataset(args.data, splits=[args.split]).split(args.split)
    if not 0 <= args.index < len(samples):
        raise MvqaError(f"sample index {args.index} outside [0, {len(samples)})")
    sample = samples[args.index]
    batch = collate([sample], loaded.vocab, loaded.answers, loaded.config.model,
                    dtype=loaded.model.classifier.out.weight.dtype)
    cam = GradCam(loaded.model, loaded.config.model.patch_grid)
    saliency = cam.compute(batch.images, batch.question_ids, target_class=args.target)
    path = write_overlay(args.out, sample.image, saliency)
    print(f"question={sample.question}")
    print(f"target={loaded.answers.decode(saliency.target_class)}")
    print(f"predicted={loaded.answers.decode(saliency.predicted_class)}")
    print(f"degenerate={str(saliency.degenerate).lower()}")
    print(f"overlay={path}")
    return 0


def cmd_flops(args: argparse.Namespace) -> int:
    from core.efficiency import count_params_flops, reference_fusion_flops, reference_fusion_params
    from ingestion.scene_generator.generator import answer_inventory, build_vocabulary

    config = config_from_args(args)
    inventory = build_generator_config({})
    vocab_size = args.vocab_size or len(build_vocabulary(inventory))
    num_classes = args.num_classes or len(answer_inventory(inventory))
    report = count_params_flops(config, vocab_size, num_classes)
    for line in report.to_key_values():
        print(line)
    m = config.model
    query_len = m.num_queries if config.use_qqformer else m.num_patches
    for name, value in reference_fusion_flops(m, query_len, m.max_question_len).items():
        print(f"{name}={value}")
    print(f"reference.params={reference_fusion_params(m)}")
    return 0


def cmd_gradcheck(args: argparse.Namespace) -> int:
    from core.validation import GradientValidator

    validator = GradientValidator(tolerance=args.tolerance)
    seeds = range(args.seed_offset, args.seed_offset + args.seeds)
    report = validator.run(seeds, cases=args.cases or None)
    failed = False
    for name, result in report.items():
        status = "ok" if result["valid"] else "FAILED"
        print(f"{name}\t{result['max_relative_error']:.3e}\t{status}")
        for error in result["errors"][:5]:
            print(f"  {error}")
        failed = failed or not result["valid"]
    return 1 if failed else 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mvqa", description="Medical VQA fusion toolkit on synthetic scenes")
    commands = parser.add_subparsers(dest="command", required=True)

    gen = commands.add_parser("gen-data", help="generate the synthetic shapes dataset")
    gen.add_argument("--out", type=Path, required=True, help="dataset directory")
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--config", type=Path, help="generator key=value file")
    gen.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    gen.set_defaults(handler=cmd_gen_data)

    train = commands.add_parser("train", help="train one configuration")
    train.add_argument("--data", type=Path, required=True)
    train.add_argument("--out", type=Path, help="run directory (default: $MVQA_ARTIFACT_DIR/runs/<config hash>)")
    add_config_arguments(train, seed_required=True)
    train.set_defaults(handler=cmd_train)

    ev = commands.add_parser("eval", help="evaluate a checkpoint")
    ev.add_argument("--checkpoint", type=Path, required=True)
    ev.add_argument("--data", type=Path, required=True)
    ev.add_argument("--split", choices=["train", "val", "test"], default="test")
    ev.add_argument("--out", type=Path, help="directory for predictions.txt and generations.txt")
    ev.set_defaults(handler=cmd_eval)

    ablate = commands.add_parser("ablate", help="train the module ablation rows")
    ablate.add_argument("--data", type=Path, required=True)
    ablate.add_argument("--out", type=Path)
    add_config_arguments(ablate)
    ablate.set_defaults(handler=cmd_ablate)

    sweep = commands.add_parser("sweep", help="sweep the loss weights alpha and beta")
    sweep.add_argument("--data", type=Path, required=True)
    sweep.add_argument("--out", type=Path)
    add_config_arguments(sweep)
    sweep.set_defaults(handler=cmd_sweep)

    sal = commands.add_parser("saliency", help="Grad-CAM overlay for one sample")
    sal.add_argument("--checkpoint", type=Path, required=True)
    sal.add_argument("--data", type=Path, required=True)
    sal.add_argument("--split", choices=["train", "val", "test"], default="test")
    sal.add_argument("--index", type=int, default=0)
    sal.add_argument("--target", type=int, default=None, help="class id (default: the predicted class)")
    sal.add_argument("--out", type=Path, required=True, help="overlay .ppm path")
    sal.set_defaults(handler=cmd_saliency)

    flops = commands.add_parser("flops", help="analytic parameter, FLOP and memory counts")
    add_config_arguments(flops)
    flops.add_argument("--vocab-size", type=int, default=None)
    flops.add_argument("--num-classes", type=int, default=None)
    flops.set_defaults(handler=cmd_flops)

    grad = commands.add_parser("gradcheck", help="finite-difference gradient suite")
    grad.add_argument("--seeds", type=int, default=settings.GRADCHECK_SEEDS)
    grad.add_argument("--seed", "--seed-offset", dest="seed_offset", type=int, default=0, help="first seed of the run")
    grad.add_argument("--cases", nargs="*", default=None)
    grad.add_argument("--tolerance", type=float, default=1e-4)
    grad.set_defaults(handler=cmd_gradcheck)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return args.handler(args)
    except MvqaError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
