import argparse
import json
import logging
import sys
import time
from pathlib import Path
from typing import Any, NoReturn, Optional, Sequence

from dotenv import load_dotenv

from calibrec.cli.run_config import RunConfig, resolve_config
from calibrec.data.interactions import kcore_filter, load_interactions
from calibrec.data.sequences import Dataset
from calibrec.data.splitting import leave_one_out_split
from calibrec.data.storage import preprocessing_summary, read_dataset, write_preprocessed
from calibrec.data.synthetic import generate_sequences, write_synthetic
from calibrec.evaluation.diagnostics import erase_experiment, kendall_tau_analysis
from calibrec.evaluation.ranking import evaluate
from calibrec.evaluation.slicing import sliced_metrics
from calibrec.exceptions.exceptions import CalibrecError, CheckpointError, InvalidConfigError
from calibrec.model.checkpoint import load_checkpoint, read_manifest
from calibrec.model.recommender import CalibratedRecommender
from calibrec.training.gradcheck import DEFAULT_TOLERANCE, gradient_check, gradient_check_fixture
from calibrec.training.trainer import torch_dtype, train

logger = logging.getLogger(__name__)

USAGE_EXIT_CODE = 1
OVERRIDE_PREFIX = "override_"
GRADCHECK_DEFAULTS = {"d": 4, "n": 4, "layers": 2, "heads": 2, "inner": 8, "dropout": 0.0}


class _Parser(argparse.ArgumentParser):
    """Reports usage errors with exit code 1 instead of argparse's 2."""

    def error(self, message: str) -> NoReturn:
        self.print_usage(sys.stderr)
        self.exit(USAGE_EXIT_CODE, f"{self.prog}: error: {message}\n")


def _add_config_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON file of RunConfig values")
    group = parser.add_argument_group("config overrides")
    for name in sorted(RunConfig.field_names()):
        group.add_argument(
            f"--{name.replace('_', '-')}",
            dest=f"{OVERRIDE_PREFIX}{name}",
            default=argparse.SUPPRESS,
            metavar="VALUE",
        )


def _raw_overrides(args: argparse.Namespace) -> dict[str, str]:
    return {
        key.removeprefix(OVERRIDE_PREFIX): value
        for key, value in vars(args).items()
        if key.startswith(OVERRIDE_PREFIX)
    }


def _finish_run(config: RunConfig, command: str, **context: Any) -> Path:
    run_dir = config.run_dir(command, **context)
    config.write_snapshot(run_dir)
    logger.info("Writing %s outputs to %s", command, run_dir)
    return run_dir


def _load_for_diagnostics(args: argparse.Namespace) -> tuple[RunConfig, CalibratedRecommender, Dataset]:
    """Config layered over the checkpoint's stored architecture, the model and the dataset."""
    checkpoint = Path(args.checkpoint)
    manifest = read_manifest(checkpoint)
    config = resolve_config(args.config, _raw_overrides(args), base=manifest["config"])

    model = load_checkpoint(checkpoint, config.model_config(), torch_dtype(config.precision))
    dataset = read_dataset(config.require_data_dir())
    if dataset.item_count != model.item_count:
        raise CheckpointError(
            checkpoint,
            f"The checkpoint scores {model.item_count} items but the dataset has {dataset.item_count}.",
        )
    model.eval()
    return config, model, dataset


def cmd_preprocess(args: argparse.Namespace) -> None:
    sequences, vocabulary = load_interactions(args.input, args.format)
    sequences, vocabulary = kcore_filter(sequences, vocabulary, args.min_count)
    splits = leave_one_out_split(sequences)
    summary = preprocessing_summary(sequences, vocabulary)
    write_preprocessed(args.output_dir, splits, vocabulary, summary)
    logger.info("Preprocessing summary: %s", summary)


def cmd_synth(args: argparse.Namespace) -> None:
    sequences = generate_sequences(
        args.pattern, args.n_items, args.n_users, args.length, args.noise_rate, args.seed
    )
    write_synthetic(args.output, sequences)


def cmd_train(args: argparse.Namespace) -> None:
    config = resolve_config(args.config, _raw_overrides(args))
    dataset = read_dataset(config.require_data_dir())
    run_dir = _finish_run(config, "train")
    logger.info("Seed %d", config.seed)

    checkpoint_dir = Path(config.checkpoint_dir) if config.checkpoint_dir else None
    result = train(dataset, config.model_config(), config.training_config(), run_dir, checkpoint_dir)

    report = evaluate(
        result.model,
        dataset.splits.test,
        ks=config.ks,
        batch_size=config.eval_batch_size,
        exclude_history=config.exclude_history,
        workers=config.workers,
    )
    report.extra["best_epoch"] = result.best_epoch
    report.write(run_dir, "test")
    logger.info("Best epoch %d, checkpoint %s", result.best_epoch, result.checkpoint)


def cmd_eval(args: argparse.Namespace) -> None:
    config, model, dataset = _load_for_diagnostics(args)
    run_dir = _finish_run(config, "eval", checkpoint=args.checkpoint, split=args.split)

    examples = getattr(dataset.splits, args.split)
    started = time.perf_counter()
    report = evaluate(
        model,
        examples,
        ks=config.ks,
        batch_size=config.eval_batch_size,
        exclude_history=config.exclude_history,
        workers=config.workers,
    )
    elapsed = time.perf_counter() - started
    report.extra["parameters"] = model.parameter_count()
    report.extra["sequences_per_second"] = report.count / elapsed if elapsed > 0 else float("inf")
    report.write(run_dir, args.split)
    logger.info("Recall %s NDCG %s", report.recall, report.ndcg)


def cmd_erase(args: argparse.Namespace) -> None:
    config, model, dataset = _load_for_diagnostics(args)
    run_dir = _finish_run(
        config, "erase", checkpoint=args.checkpoint, layer=args.layer, head=args.head,
        renormalize=not args.no_renormalize,
    )

    reports = erase_experiment(
        model,
        dataset.splits.test,
        layer=args.layer,
        head=args.head,
        ks=config.ks,
        batch_size=config.eval_batch_size,
        renormalize=not args.no_renormalize,
    )
    reports.original.write(run_dir, "original")
    reports.erased.write(run_dir, "erased")


def cmd_kendall(args: argparse.Namespace) -> None:
    config, model, dataset = _load_for_diagnostics(args)
    run_dir = _finish_run(config, "kendall", checkpoint=args.checkpoint)
    kendall_tau_analysis(model, dataset.splits.test, config.eval_batch_size).write(run_dir, "kendall")


def _edges(text: str) -> list[float]:
    try:
        return [float(part) for part in text.split(",")]
    except ValueError as error:
        raise argparse.ArgumentTypeError(f"invalid bucket edges {text!r}") from error


def cmd_slice(args: argparse.Namespace) -> None:
    config, model, dataset = _load_for_diagnostics(args)
    run_dir = _finish_run(config, "slice", checkpoint=args.checkpoint, mode=args.mode, edges=args.edges)

    try:
        report = sliced_metrics(model, dataset, args.mode, args.edges, config.ks, config.eval_batch_size)
    except ValueError as error:
        raise InvalidConfigError("slice", [("edges", str(error))]) from error
    report.write(run_dir, f"slice_{args.mode}")


def cmd_gradcheck(args: argparse.Namespace) -> None:
    config = resolve_config(args.config, _raw_overrides(args), base=GRADCHECK_DEFAULTS)
    if config.dropout != 0.0:
        raise InvalidConfigError(RunConfig.__name__, [("dropout", "must be 0 for gradient checks")])
    run_dir = _finish_run(config, "gradcheck", tolerance=args.tolerance)

    model, batch = gradient_check_fixture(config.seed, config.model_config())
    errors = gradient_check(model, batch, tolerance=args.tolerance)

    path = run_dir / "gradcheck.json"
    path.write_text(json.dumps({"tolerance": args.tolerance, "errors": errors}, indent=2) + "\n", encoding="utf-8")
    logger.info("All %d tensors within %.1e (worst %.3e)", len(errors), args.tolerance, max(errors.values()))


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="calibrec", description="Calibrated-attention sequential recommendation.")
    parser.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    commands = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    preprocess = commands.add_parser("preprocess", help="k-core filter and leave-one-out split")
    preprocess.add_argument("--input", required=True)
    preprocess.add_argument("--output-dir", required=True)
    preprocess.add_argument("--min-count", type=int, default=5)
    preprocess.add_argument("--format", default="auto", choices=["auto", "triplets", "grouped"])
    preprocess.set_defaults(handler=cmd_preprocess)

    synth = commands.add_parser("synth", help="write a synthetic interaction file")
    synth.add_argument("--pattern", required=True, choices=["cycle", "markov"])
    synth.add_argument("--n-items", type=int, required=True)
    synth.add_argument("--n-users", type=int, required=True)
    synth.add_argument("--length", type=int, default=20)
    synth.add_argument("--noise-rate", type=float, default=0.0)
    synth.add_argument("--seed", type=int, default=0)
    synth.add_argument("--output", required=True)
    synth.set_defaults(handler=cmd_synth)

    train_command = commands.add_parser("train", help="train and keep the best validation checkpoint")
    _add_config_arguments(train_command)
    train_command.set_defaults(handler=cmd_train)

    for name, handler, help_text in (
        ("eval", cmd_eval, "full-ranking Recall@K and NDCG@K"),
        ("erase", cmd_erase, "erase the largest attention weight"),
        ("kendall", cmd_kendall, "Kendall tau between attention and gradient importance"),
        ("slice", cmd_slice, "metrics by training length or target popularity"),
    ):
        command = commands.add_parser(name, help=help_text)
        command.add_argument("--checkpoint", required=True, help="checkpoint manifest (.json)")
        _add_config_arguments(command)
        command.set_defaults(handler=handler)

    commands.choices["eval"].add_argument("--split", default="test", choices=["valid", "test"])
    commands.choices["erase"].add_argument("--layer", type=int)
    commands.choices["erase"].add_argument("--head", type=int)
    commands.choices["erase"].add_argument("--no-renormalize", action="store_true")
    commands.choices["slice"].add_argument("--mode", required=True, choices=["length", "popularity"])
    commands.choices["slice"].add_argument("--edges", type=_edges, default=_edges("0,5,10,20,50,inf"))

    gradcheck = commands.add_parser("gradcheck", help="finite-difference check of every parameter tensor")
    gradcheck.add_argument("--tolerance", type=float, default=DEFAULT_TOLERANCE)
    _add_config_arguments(gradcheck)
    gradcheck.set_defaults(handler=cmd_gradcheck)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    load_dotenv()
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=args.log_level, format="%(asctime)s %(levelname)s %(name)s: %(message)s"
    )

    try:
        args.handler(args)
    except CalibrecError as error:
        logger.error("%s failed: %s", args.command, error)
        print(error, file=sys.stderr)
        return error.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
