"""
Command-line entry point: python -m src.main <subcommand> [flags]

Exit codes: 0 success, 1 usage error, 2 data or configuration error,
3 internal error.
"""
import argparse
import asyncio
import hashlib
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import uvicorn

from .api import create_api
from .augmentation import Augmenter
from .balancing import MLSmoteBalancer
from .checkpoint import load_checkpoint, save_checkpoint
from .config import AugmentConfig, HeadKind, PipelineConfig, TrainingConfig, Variant
from .corpus import (Split, SyntheticCorpusSpec, TeamLabelRegistry, generate_synthetic_corpus,
                     load_dataset, save_dataset)
from .embeddings import (build_embedding_table, load_embedding_table, load_synonym_groups,
                         save_embedding_table)
from .evaluation import evaluate
from .experiments import run_experiments
from .pipeline import StageError, run_pipeline, write_report
from .tokenizer import Vocab, build_vocab
from .trainer import train
from .weak_supervision import WeakLabeler, load_lfs

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3
DEFAULT_REGISTRY = "data/registry.json"

logger = logging.getLogger(__name__)


def setup_logging(log_level: str, stream=None) -> None:
    """Configure logging; stdout stays free for command output unless a stream is given"""
    logging.basicConfig(
        level=getattr(logging, log_level.upper()),
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        handlers=[
            logging.StreamHandler(stream or sys.stderr)
        ],
        force=True,
    )


class CLIParser(argparse.ArgumentParser):
    """ArgumentParser that exits with the usage-error code"""

    def error(self, message: str) -> None:
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _registry(path: Optional[str]) -> TeamLabelRegistry:
    if path:
        return TeamLabelRegistry.from_file(path)
    if Path(DEFAULT_REGISTRY).exists():
        return TeamLabelRegistry.from_file(DEFAULT_REGISTRY)
    return TeamLabelRegistry.default()


def _lineage(command: str, settings: Dict[str, Any], registry: TeamLabelRegistry) -> Dict[str, Any]:
    encoded = json.dumps(settings, sort_keys=True, default=str).encode("utf-8")
    return {
        "command": command,
        "config_hash": hashlib.sha256(encoded).hexdigest()[:16],
        "registry_hash": registry.registry_hash(),
    }


def _settings(args: argparse.Namespace, exclude: Sequence[str] = ()) -> Dict[str, Any]:
    skip = {"func", "log_level", *exclude}
    return {k: v for k, v in vars(args).items() if k not in skip}


# Subcommands

def cmd_gen_corpus(args: argparse.Namespace) -> None:
    registry = _registry(args.registry)
    weights = None
    if args.skew != 1.0:
        # geometric weights so the most and least frequent labels differ by `skew`
        weights = [args.skew ** (-t / (registry.size - 1)) for t in range(registry.size)]
    spec = SyntheticCorpusSpec.default(args.size, args.seed, registry, label_weights=weights,
                                       split=Split(args.split), id_prefix=args.id_prefix)
    ds = generate_synthetic_corpus(spec, registry)
    save_dataset(ds, args.out, _lineage("gen-corpus", _settings(args, ["out"]), registry))
    logger.info(f"Wrote {len(ds)} defects to {args.out}")


def cmd_weak_label(args: argparse.Namespace) -> None:
    registry = _registry(args.registry)
    ds = load_dataset(args.input, registry)
    dev = load_dataset(args.dev, registry, Split.DEV)
    labeler = WeakLabeler(load_lfs(args.lfs, registry), args.vote_threshold, args.workers)
    labeler.fit(dev)
    weak, report = labeler.label(ds)
    save_dataset(weak, args.out, _lineage("weak-label", _settings(args, ["out", "report"]), registry))
    if args.report:
        write_report(report, Path(args.report))
    logger.info(f"Weak labeling statistics: {labeler.get_statistics()}")


def cmd_augment(args: argparse.Namespace) -> None:
    registry = _registry(args.registry)
    ds = load_dataset(args.input, registry)
    cfg = AugmentConfig(sample_fraction=args.fraction, copies_per_defect=args.copies,
                        perturb_rate=args.perturb, min_cosine=args.min_cos,
                        neighbor_k=args.neighbor_k, seed=args.seed)
    augmenter = Augmenter(cfg, load_embedding_table(args.embeddings), args.workers)
    augmented, report = augmenter.augment(ds)
    save_dataset(augmented, args.out, _lineage("augment", _settings(args, ["out", "report"]), registry))
    if args.report:
        write_report(report, Path(args.report))
    logger.info(f"Augmentation statistics: {augmenter.get_statistics()}")


def cmd_balance(args: argparse.Namespace) -> None:
    registry = _registry(args.registry)
    ds = load_dataset(args.input, registry)
    balancer = MLSmoteBalancer(args.k, args.seed)
    balanced, report = balancer.balance(ds)
    save_dataset(balanced, args.out, _lineage("balance", _settings(args, ["out", "report"]), registry))
    if args.report:
        write_report(report, Path(args.report))
    else:
        print(json.dumps(report, indent=2, sort_keys=True))
    logger.info(f"Balancing statistics: {balancer.get_statistics()}")


def cmd_build_vocab(args: argparse.Namespace) -> None:
    ds = load_dataset(args.input, _registry(args.registry))
    vocab = build_vocab(ds, args.min_freq, args.max_size, args.include_labels)
    vocab.save(args.out)
    logger.info(f"Wrote vocabulary of {len(vocab)} tokens to {args.out} (hash {vocab.vocab_hash()})")


def cmd_build_embeddings(args: argparse.Namespace) -> None:
    ds = load_dataset(args.input, _registry(args.registry))
    groups = load_synonym_groups(args.synonyms) if args.synonyms else []
    table = build_embedding_table(ds, groups, args.dim, args.seed)
    save_embedding_table(table, args.out)
    logger.info(f"Wrote {len(table)} embeddings to {args.out}")


def _training_config(args: argparse.Namespace) -> TrainingConfig:
    if args.hparams:
        hparams = TrainingConfig.from_dict(json.loads(Path(args.hparams).read_text(encoding="utf-8")))
    else:
        hparams = TrainingConfig.desk()
    overrides = {key: getattr(args, key) for key in ("epochs", "max_seq_length", "batch_size",
                                                     "learning_rate", "precision")
                 if getattr(args, key, None) is not None}
    return replace(hparams, **overrides)


def cmd_train(args: argparse.Namespace) -> None:
    registry = _registry(args.registry)
    train_ds = load_dataset(args.train, registry)
    dev_ds = load_dataset(args.dev, registry, Split.DEV)
    vocab = Vocab.from_file(args.vocab) if args.vocab else None
    result = train(train_ds, dev_ds, Variant(args.variant), HeadKind(args.head),
                   _training_config(args), args.seed, vocab, args.threshold)
    save_checkpoint(result.checkpoint, args.out)
    logger.info(f"Saved best epoch {result.best_epoch} to {args.out}")


def cmd_eval(args: argparse.Namespace) -> None:
    ckpt = load_checkpoint(args.ckpt)
    test_ds = load_dataset(args.test, ckpt.registry, Split.TEST)
    report = evaluate(ckpt, test_ds, args.threshold)
    payload = report.model_dump_json(indent=2)
    if args.out:
        Path(args.out).write_text(payload + "\n", encoding="utf-8")
    print(payload)


def _pipeline_config(args: argparse.Namespace) -> PipelineConfig:
    cfg = PipelineConfig.from_env(args.config)
    if getattr(args, "perturb", None) is not None:
        cfg.augmentation = replace(cfg.augmentation, perturb_rate=args.perturb)
    overrides = {key: getattr(args, key) for key in ("max_seq_length", "epochs")
                 if getattr(args, key, None) is not None}
    if overrides:
        cfg.training = replace(cfg.training, **overrides)
    return cfg


def cmd_pipeline(args: argparse.Namespace) -> None:
    result = run_pipeline(_pipeline_config(args), "pipeline")
    logger.info(f"Final training set: {result.final_path} ({result.n_final} defects)")


def cmd_experiment(args: argparse.Namespace) -> None:
    cfg = _pipeline_config(args)
    if not args.skip_pipeline:
        run_pipeline(cfg, "experiment")
    report = run_experiments(cfg, ablation=not args.no_ablation, workers=args.workers,
                             ckpt_dir=args.ckpt_dir)
    report.write(args.out_dir)
    print(report.to_text(), end="")
    for key, delta in sorted(report.directional.items()):
        print(f"accuracy delta {key}: {delta:+.4f}")
    if report.ablation_delta is not None:
        print(f"augmentation ablation delta: {report.ablation_delta:+.4f}")


async def run_api_server(app, host: str, port: int) -> None:
    """Run FastAPI server using uvicorn"""
    config = uvicorn.Config(
        app,
        host=host,
        port=port,
        log_level="info",
        access_log=True
    )
    server = uvicorn.Server(config)
    await server.serve()


def cmd_serve(args: argparse.Namespace) -> None:
    app = create_api(load_checkpoint(args.ckpt), args.threshold)
    logger.info(f"Starting triage API on {args.host}:{args.port}")
    asyncio.run(run_api_server(app, args.host, args.port))


def build_parser() -> CLIParser:
    parser = CLIParser(prog="defect-triage", description="Defect triage: data generation, training "
                                                         "and evaluation of multi-label team classifiers")
    parser.add_argument("--log-level", default=os.getenv("DEFTRI_LOG_LEVEL", "INFO"),
                        choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=CLIParser)
    variants = [v.value for v in Variant]
    heads = [h.value for h in HeadKind]

    p = sub.add_parser("gen-corpus", help="generate a synthetic labeled defect corpus")
    p.add_argument("--size", type=int, required=True, help="number of defects")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output JSONL path")
    p.add_argument("--registry", help="label registry JSON (default: data/registry.json)")
    p.add_argument("--split", choices=[s.value for s in Split], default="train")
    p.add_argument("--id-prefix", default="d", help="prefix of generated defect ids")
    p.add_argument("--skew", type=float, default=1.0,
                   help="ratio between the most and least frequent label's sampling weight")
    p.set_defaults(func=cmd_gen_corpus)

    p = sub.add_parser("weak-label", help="label defects with labeling functions")
    p.add_argument("--input", required=True)
    p.add_argument("--dev", required=True, help="gold-labeled dev set for LF weights")
    p.add_argument("--lfs", required=True, help="labeling function JSON file")
    p.add_argument("--out", required=True)
    p.add_argument("--report", help="stage report JSON path")
    p.add_argument("--vote-threshold", type=float, default=0.25, help="share of firing LF weight needed to assign a label")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--registry")
    p.set_defaults(func=cmd_weak_label)

    p = sub.add_parser("augment", help="append embedding-swap adversarial copies")
    p.add_argument("--input", required=True)
    p.add_argument("--embeddings", required=True, help="embedding table file")
    p.add_argument("--out", required=True)
    p.add_argument("--report", help="stage report JSON path (includes the swap audit)")
    p.add_argument("--fraction", type=float, default=0.30, help="share of defects sampled")
    p.add_argument("--copies", type=int, default=2, help="copies per sampled defect")
    p.add_argument("--perturb", type=float, default=0.10, help="share of words altered")
    p.add_argument("--min-cos", type=float, default=0.8, help="minimum cosine of a swap")
    p.add_argument("--neighbor-k", type=int, default=10, help="neighbors considered per word")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--registry")
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("balance", help="oversample minority labels with MLSMOTE")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--report", help="rebalancing report JSON path (default: stdout)")
    p.add_argument("--k", type=int, default=5, help="nearest neighbors")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--registry")
    p.set_defaults(func=cmd_balance)

    p = sub.add_parser("build-vocab", help="build a word vocabulary")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--min-freq", type=int, default=1)
    p.add_argument("--max-size", type=int, default=30000)
    p.add_argument("--include-labels", action="store_true", help="add label name tokens")
    p.add_argument("--registry")
    p.set_defaults(func=cmd_build_vocab)

    p = sub.add_parser("build-embeddings", help="build the desk-scale embedding table")
    p.add_argument("--input", required=True, help="corpus JSONL")
    p.add_argument("--out", required=True)
    p.add_argument("--synonyms", default="data/synonyms.json", help="synonym groups JSON")
    p.add_argument("--dim", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--registry")
    p.set_defaults(func=cmd_build_embeddings)

    p = sub.add_parser("train", help="train one classifier")
    p.add_argument("--train", required=True)
    p.add_argument("--dev", required=True)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--variant", choices=variants, default=Variant.FUSE_SEP.value)
    p.add_argument("--head", choices=heads, default=HeadKind.LINEAR.value)
    p.add_argument("--hparams", help="training config JSON (default: desk preset)")
    p.add_argument("--vocab", help="vocabulary JSON (default: built from --train)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threshold", type=float, default=0.55)
    p.add_argument("--epochs", type=int)
    p.add_argument("--max-seq-length", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--precision", choices=["float32", "float64"])
    p.add_argument("--registry")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint on a test set (JSON to stdout)")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--threshold", type=float, default=0.55)
    p.add_argument("--out", help="also write the metrics JSON here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("pipeline", help="run weak labeling, augmentation and balancing")
    p.add_argument("--config", help="pipeline config JSON")
    p.add_argument("--perturb", type=float)
    p.set_defaults(func=cmd_pipeline)

    p = sub.add_parser("experiment", help="run the six-cell experiment matrix")
    p.add_argument("--config", help="pipeline config JSON")
    p.add_argument("--out-dir", default="results")
    p.add_argument("--ckpt-dir", help="save every cell's checkpoint here")
    p.add_argument("--perturb", type=float, help="override the augmentation perturbation rate")
    p.add_argument("--max-seq-length", type=int, help="override the encoder input length")
    p.add_argument("--epochs", type=int)
    p.add_argument("--workers", type=int, default=1, help="cells trained in parallel processes")
    p.add_argument("--no-ablation", action="store_true", help="skip the augmentation ablation")
    p.add_argument("--skip-pipeline", action="store_true",
                   help="use existing pipeline artifacts instead of regenerating them")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("serve", help="serve a checkpoint over HTTP")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--host", default=os.getenv("API_HOST", "0.0.0.0"))
    p.add_argument("--port", type=int, default=int(os.getenv("API_PORT", "8000")))
    p.add_argument("--threshold", type=float, default=0.55)
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Application entry point; returns the process exit code"""
    args = build_parser().parse_args(argv)
    setup_logging(args.log_level)
    try:
        args.func(args)
    except StageError as e:
        logger.error(str(e))
        return EXIT_DATA if isinstance(e.cause, (ValueError, OSError)) else EXIT_INTERNAL
    except (ValueError, OSError) as e:
        logger.error(f"{type(e).__name__}: {e}")
        return EXIT_DATA
    except KeyboardInterrupt:
        logger.info("Received keyboard interrupt")
        return EXIT_INTERNAL
    except Exception as e:
        logger.error(f"Command failed with error: {e}", exc_info=True)
        return EXIT_INTERNAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
