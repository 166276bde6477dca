"""End-to-end runs, ablations, sweeps and their tables.

Ablation variants share the same pretrained backbone per seed: backbone
parameters do not depend on prompt, generator or projection settings, so the
backbone is trained once and copied into each variant.
"""

from __future__ import annotations

import csv
import io
import logging
import time
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .config import RunConfig
from .data import Dialog, generate_caption_pairs, generate_corpus, split_of
from .errors import ConfigError
from .evaluation import RecallReport, evaluate
from .model import DialogRetriever
from .training import MetricsLog, run_stage

log = logging.getLogger(__name__)

SWEEP_PARAMS = ("ctx_len", "dom_len", "prompt_layer")
VARIANTS = {
    "full": {},
    "-CPG": {"use_cpg": False},
    "-Domain": {"dom_len": 0},
    "-MoP": {"shared_mop": True},
}
_BACKBONE_KEYS = (
    "d_model", "n_layers", "n_heads", "ffn_mult", "max_seq", "vocab_size", "n_patches", "patch_dim",
    "proj_dim", "seed", "batch_size", "backbone_steps", "backbone_lr", "weight_decay", "caption_pairs",
)


@dataclass
class Data:
    corpus: list[Dialog]
    pairs: list
    train: list[Dialog]
    dev: list[Dialog]
    test: list[Dialog]

    @classmethod
    def from_config(cls, cfg: RunConfig) -> "Data":
        spec = cfg.corpus_spec()
        corpus = generate_corpus(spec)
        pairs = generate_caption_pairs(spec, cfg.caption_pairs)
        return cls(corpus, pairs, split_of(corpus, "train"), split_of(corpus, "dev"), split_of(corpus, "test"))


@dataclass
class RunResult:
    label: str
    report: RecallReport
    model: DialogRetriever
    seconds: float
    records: list[dict] = field(default_factory=list)


class BackboneCache:
    """Pretrained backbone weights keyed by the settings that shape them."""

    def __init__(self):
        self._states: dict[tuple, dict] = {}

    def load_into(self, model: DialogRetriever, cfg: RunConfig, data: Data) -> None:
        key = tuple(getattr(cfg, k) for k in _BACKBONE_KEYS) + (cfg.corpus_seed,)
        if key not in self._states:
            pretrain_backbone(model, cfg, data)
            groups = model.groups()
            self._states[key] = {
                n: p.data.copy() for g in ("backbone_text", "backbone_image") for n, p in groups[g].items()
            }
            return
        model.load_state_dict(self._states[key], strict=False)
        model.text_encoder.freeze()
        model.image_encoder.freeze()
        model.completed_stages.append("backbone")


def pretrain_backbone(model: DialogRetriever, cfg: RunConfig, data: Data) -> None:
    run_stage("backbone", data.pairs, model, cfg.train_config("backbone"))


def run_pipeline(
    cfg: RunConfig,
    data: Data | None = None,
    cache: BackboneCache | None = None,
    metrics: MetricsLog | None = None,
    skip_stage1: bool = False,
    label: str = "run",
    eval_split: str = "test",
) -> RunResult:
    """backbone -> stage1 -> stage2 -> evaluation on ``eval_split``.

    ``skip_stage1`` starts stage2 from freshly initialized prompts and experts.
    """
    start = time.perf_counter()
    data = data or Data.from_config(cfg)
    model = DialogRetriever(cfg.model_config(), seed=cfg.seed)
    (cache or BackboneCache()).load_into(model, cfg, data)
    metrics = metrics if metrics is not None else MetricsLog()
    if not skip_stage1:
        run_stage("stage1", data.train, model, cfg.train_config("stage1"), data.dev, "dev", metrics)
    run_stage("stage2", data.train, model, cfg.train_config("stage2"), data.dev, "dev", metrics)
    dialogs = split_of(data.corpus, eval_split)
    report, _ = evaluate(model, dialogs, cfg.pool_size, cfg.eval_seed, use_context=cfg.use_cpg)
    metrics.write({"stage": "final", "step": cfg.stage2_steps, "split": eval_split, **report.as_record()})
    seconds = time.perf_counter() - start
    log.info("%s: %s (%.1fs)", label, report, seconds)
    return RunResult(label, report, model, seconds, list(metrics.records))


def ablate(
    cfg: RunConfig,
    data: Data | None = None,
    seeds: Sequence[int] = (0,),
    variants: Iterable[str] = tuple(VARIANTS),
    include_random_init: bool = False,
    cache: BackboneCache | None = None,
) -> dict[str, list[RunResult]]:
    """Train every variant under each seed; returns label -> per-seed results."""
    data = data or Data.from_config(cfg)
    cache = cache or BackboneCache()
    out: dict[str, list[RunResult]] = {}
    for seed in seeds:
        base = cfg.replace(seed=seed)
        for name in variants:
            if name not in VARIANTS:
                raise ConfigError(f"unknown variant {name!r}; expected one of {tuple(VARIANTS)}")
            run = run_pipeline(base.replace(**VARIANTS[name]), data, cache, label=f"{name} seed={seed}")
            out.setdefault(name, []).append(run)
        if include_random_init:
            run = run_pipeline(base, data, cache, skip_stage1=True, label=f"random-init seed={seed}")
            out.setdefault("random-init", []).append(run)
    return out


def sweep(
    param: str,
    values: Sequence[int],
    cfg: RunConfig,
    data: Data | None = None,
    cache: BackboneCache | None = None,
) -> dict[str, list[RunResult]]:
    """One run per value of ``param`` at the config's seed."""
    if param not in SWEEP_PARAMS:
        raise ConfigError(f"cannot sweep {param!r}; expected one of {SWEEP_PARAMS}")
    if not values:
        raise ConfigError("sweep needs at least one value")
    configs = [cfg.replace(**{param: int(v)}) for v in values]
    for c in configs:
        c.model_config()
    data = data or Data.from_config(cfg)
    cache = cache or BackboneCache()
    return {str(v): [run_pipeline(c, data, cache, label=f"{param}={v}")] for v, c in zip(values, configs)}


# ------------------------------------------------------------------ tables

COLUMNS = ("R@1", "R@5", "R@10", "Sum")


def table_rows(results: dict[str, list[RunResult]]) -> list[tuple[str, float, float, float, float]]:
    """Per-label means over seeds, in percent."""
    rows = []
    for label, runs in results.items():
        n = len(runs)
        r1 = sum(r.report.r1 for r in runs) / n
        r5 = sum(r.report.r5 for r in runs) / n
        r10 = sum(r.report.r10 for r in runs) / n
        rows.append((label, 100 * r1, 100 * r5, 100 * r10, 100 * (r1 + r5 + r10)))
    return rows


def format_table(rows, first: str = "setting", fmt: str = "text") -> str:
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow((first, *COLUMNS))
        for label, *vals in rows:
            writer.writerow((label, *(f"{v:.2f}" for v in vals)))
        return buf.getvalue()
    if fmt != "text":
        raise ConfigError(f"unknown table format {fmt!r}")
    width = max([len(first)] + [len(r[0]) for r in rows])
    lines = [f"{first:<{width}}  " + "  ".join(f"{c:>6}" for c in COLUMNS)]
    for label, *vals in rows:
        lines.append(f"{label:<{width}}  " + "  ".join(f"{v:6.1f}" for v in vals))
    return "\n".join(lines) + "\n"
