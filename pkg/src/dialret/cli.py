"""Command-line entry point.

Exit status: 0 on success, 1 on usage errors, 2 on runtime errors.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import fields
from pathlib import Path
from typing import Sequence

from .config import RunConfig, load_config
from .data import ParseError, read_jsonl, split_of, write_jsonl
from .errors import ConfigError, InputError, StateError
from .evaluation import evaluate
from .experiments import (
    SWEEP_PARAMS,
    VARIANTS,
    Data,
    ablate,
    format_table,
    pretrain_backbone,
    run_pipeline,
    sweep,
    table_rows,
)
from .model import DialogRetriever
from .numerics import ContractError, NumericError, ShapeError
from .training import CheckpointError, MetricsLog, load_checkpoint, run_stage, save_checkpoint

log = logging.getLogger("dialret")

RUNTIME_ERRORS = (
    ConfigError, InputError, StateError, ParseError, CheckpointError, ContractError, NumericError, ShapeError, OSError,
)


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message: str):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value config file; flags below override it")
    p.add_argument("--log-level", default="WARNING", choices=("DEBUG", "INFO", "WARNING", "ERROR"))
    group = p.add_argument_group("config overrides")
    for f in fields(RunConfig):
        group.add_argument("--" + f.name.replace("_", "-"), dest="cfg_" + f.name, metavar=f.type.upper())


def _add_data(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", help="corpus JSONL (.gz accepted); generated from the config when omitted")


def _add_format(p: argparse.ArgumentParser) -> None:
    p.add_argument("--format", default="text", choices=("text", "csv"))


def build_parser() -> Parser:
    parser = Parser(prog="dialret", description="Prompt-tuned dual-encoder retrieval for multi-modal dialogs.")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=Parser)
    sub.required = True

    p = sub.add_parser("gen-data", help="write the synthetic corpus as JSONL")
    p.add_argument("--out", required=True)
    _add_common(p)

    p = sub.add_parser("pretrain-backbone", help="pretrain and freeze both encoders on caption pairs")
    p.add_argument("--out", required=True, help="checkpoint path")
    _add_common(p)

    p = sub.add_parser("train", help="run stage1, stage2, or the full pipeline")
    p.add_argument("--stage", default="all", choices=("stage1", "stage2", "all"))
    p.add_argument("--checkpoint", help="starting checkpoint (required for stage1/stage2)")
    p.add_argument("--out", help="checkpoint to write after training")
    p.add_argument("--metrics", help="metrics JSONL path")
    _add_data(p)
    _add_common(p)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", default="test", choices=("train", "dev", "test"))
    _add_data(p)
    _add_format(p)
    _add_common(p)

    p = sub.add_parser("sweep", help="train one run per value of a prompt setting")
    p.add_argument("--param", required=True, choices=SWEEP_PARAMS)
    p.add_argument("--values", required=True, type=_int_list, help="comma-separated, e.g. 16,32,64")
    _add_format(p)
    _add_common(p)

    p = sub.add_parser("ablate", help="train the full model and its ablations")
    p.add_argument("--seeds", type=_int_list, default=[0], help="comma-separated seeds")
    p.add_argument("--variants", default=",".join(VARIANTS), help="comma-separated subset of " + ", ".join(VARIANTS))
    p.add_argument("--random-init", action="store_true", help="also run stage2 without stage1")
    _add_format(p)
    _add_common(p)

    p = sub.add_parser("gradcheck", help="finite-difference check of the whole model on toy dimensions")
    p.add_argument("--tol", type=float, default=1e-3)
    p.add_argument("--h", type=float, default=1e-4)
    p.add_argument("--coords", type=int, default=6, help="coordinates sampled per tensor (0 = all)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--log-level", default="WARNING", choices=("DEBUG", "INFO", "WARNING", "ERROR"))
    return parser


def _config(args) -> RunConfig:
    overrides = {
        k[4:]: v for k, v in vars(args).items() if k.startswith("cfg_") and v is not None
    }
    return load_config(args.config, overrides)


def _data(args, cfg: RunConfig) -> Data:
    path = getattr(args, "data", None)
    if path is None:
        return Data.from_config(cfg)
    corpus = read_jsonl(path)
    if not corpus:
        raise InputError(f"{path}: empty corpus")
    generated = Data.from_config(cfg.replace(dialogs_per_topic=1))
    return Data(corpus, generated.pairs, split_of(corpus, "train"), split_of(corpus, "dev"), split_of(corpus, "test"))


def cmd_gen_data(args) -> int:
    cfg = _config(args)
    data = Data.from_config(cfg)
    write_jsonl(data.corpus, args.out)
    print(f"wrote {len(data.corpus)} dialogs to {args.out} "
          f"(train {len(data.train)}, dev {len(data.dev)}, test {len(data.test)})")
    return 0


def cmd_pretrain(args) -> int:
    cfg = _config(args)
    model = DialogRetriever(cfg.model_config(), seed=cfg.seed)
    pretrain_backbone(model, cfg, Data.from_config(cfg))
    save_checkpoint(model, args.out)
    print(f"backbone checkpoint written to {args.out}")
    return 0


def cmd_train(args) -> int:
    cfg = _config(args)
    metrics = MetricsLog(args.metrics)
    data = _data(args, cfg)
    if args.stage == "all":
        if args.checkpoint:
            raise ConfigError("--checkpoint is only used with --stage stage1 or stage2")
        result = run_pipeline(cfg, data, metrics=metrics, label="train")
        model, report = result.model, result.report
        print(f"test: {report}")
    else:
        if not args.checkpoint:
            raise StateError(f"{args.stage} needs --checkpoint from the previous stage")
        model = load_checkpoint(args.checkpoint)
        run_stage(args.stage, data.train, model, cfg.train_config(args.stage), data.dev, "dev", metrics)
        print(f"dev: {metrics.records[-1]}")
    if args.out:
        save_checkpoint(model, args.out)
        print(f"checkpoint written to {args.out}")
    return 0


def cmd_eval(args) -> int:
    cfg = _config(args)
    model = load_checkpoint(args.checkpoint)
    dialogs = split_of(_data(args, cfg).corpus, args.split)
    report, _ = evaluate(model, dialogs, cfg.pool_size, cfg.eval_seed, use_context=model.cpg is not None)
    rows = [(args.split, 100 * report.r1, 100 * report.r5, 100 * report.r10, report.sum_metric)]
    for key, (a, b, c, _) in {**report.per_response, **report.per_type}.items():
        rows.append((key, 100 * a, 100 * b, 100 * c, 100 * (a + b + c)))
    sys.stdout.write(format_table(rows, "queries", args.format))
    return 0


def cmd_sweep(args) -> int:
    cfg = _config(args)
    results = sweep(args.param, args.values, cfg)
    sys.stdout.write(format_table(table_rows(results), args.param, args.format))
    return 0


def cmd_ablate(args) -> int:
    cfg = _config(args)
    variants = [v.strip() for v in args.variants.split(",") if v.strip()]
    results = ablate(cfg, seeds=args.seeds, variants=variants, include_random_init=args.random_init)
    sys.stdout.write(format_table(table_rows(results), "variant", args.format))
    return 0


def cmd_gradcheck(args) -> int:
    from .diagnostics import gradient_suite

    result = gradient_suite(h=args.h, tol=args.tol, max_coords=args.coords or None, seed=args.seed)
    print(f"{result.report.summary()} ({result.n_params} tensors, {result.seconds:.1f}s)")
    return 0 if result.report.passed else 2


COMMANDS = {
    "gen-data": cmd_gen_data,
    "pretrain-backbone": cmd_pretrain,
    "train": cmd_train,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
    "ablate": cmd_ablate,
    "gradcheck": cmd_gradcheck,
}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(e, file=sys.stderr)
        return 1
    except SystemExit as e:  # --help
        return int(e.code or 0)
    logging.basicConfig(level=args.log_level, format="%(message)s")
    try:
        return COMMANDS[args.command](args)
    except RUNTIME_ERRORS as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
