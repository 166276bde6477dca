"""Training steps and the three-stage schedule (backbone -> stage1 -> stage2).

* ``backbone``: both encoders plus temporary linear heads are trained with a
  symmetric in-batch contrastive loss on single-round caption/image pairs,
  then frozen.
* ``stage1``: domain prompts and projection experts only, on single-round
  pairs cut from the dialogs (the last context turn paired with the
  response); no context prompts.
* ``stage2``: adds the context prompt generator and trains on full dialogs.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from ..data import Dialog, sample_batches
from ..errors import ConfigError, StateError
from ..evaluation import evaluate
from ..model import DialogRetriever, batch_retrieval_type
from ..module import Module, linear_init
from ..numerics import Rng, Tensor, add, backward, linear, mul
from .objective import in_batch_loss
from .optim import AdamW, linear_lr

log = logging.getLogger(__name__)

STAGES = ("backbone", "stage1", "stage2")


@dataclass
class TrainConfig:
    stage: str = "stage2"
    total_steps: int = 5000
    batch_size: int = 32
    base_lr: float = 5e-5
    weight_decay: float = 0.01
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    eval_every: int = 0
    pool_size: int = 100
    eval_seed: int = 0
    log_every: int = 100

    def validate(self) -> None:
        if self.stage not in STAGES:
            raise ConfigError(f"unknown stage {self.stage!r}; expected one of {STAGES}")
        if self.total_steps < 1 or self.batch_size < 1:
            raise ConfigError("total_steps and batch_size must be positive")
        if self.base_lr <= 0:
            raise ConfigError("base_lr must be positive")

    def optimizer(self) -> AdamW:
        return AdamW(self.adam_beta1, self.adam_beta2, self.adam_eps, self.weight_decay)


class MetricsLog:
    """Collects eval records and mirrors them to a JSONL file when a path is given."""

    def __init__(self, path: str | Path | None = None):
        self.records: list[dict] = []
        self.path = Path(path) if path is not None else None
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self.path.write_text("")

    def write(self, record: dict) -> None:
        self.records.append(record)
        if self.path is not None:
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(record) + "\n")


@dataclass
class StageResult:
    stage: str
    losses: list[float] = field(default_factory=list)
    records: list[dict] = field(default_factory=list)
    trainable_fraction: float = 0.0


def as_single_round(d: Dialog) -> Dialog:
    """The last context turn (or the input itself for one-turn dialogs) paired with the response."""
    source = d.turns[-2] if len(d.turns) >= 2 else d.turns[-1]
    return Dialog(d.id, [source], d.response, d.topic_id, d.split)


def train_step(
    batch: Sequence[Dialog],
    model: DialogRetriever,
    opt: AdamW,
    cfg: TrainConfig,
    step: int,
    use_context: bool = True,
) -> float:
    """One in-batch contrastive update on a retrieval-type-homogeneous batch."""
    rt = batch_retrieval_type(batch)
    queries = model.query_embeddings(batch, use_context)
    cands = model.candidate_embeddings([d.response for d in batch], rt)
    loss = in_batch_loss(queries, cands)
    params = model.trainable_parameters()
    for p in params.values():
        p.grad = None
    backward(loss)  # parameters off this batch's path keep grad None
    opt.step(params, linear_lr(step, cfg.base_lr, cfg.total_steps))
    return loss.item()


def _eval_record(model, stage, step, split, dialogs, cfg, use_context) -> dict:
    report, _ = evaluate(model, dialogs, cfg.pool_size, cfg.eval_seed, use_context)
    return {"stage": stage, "step": step, "split": split, **report.as_record()}


def run_stage(
    stage: str,
    corpus: Sequence,
    model: DialogRetriever,
    cfg: TrainConfig,
    eval_dialogs: Sequence[Dialog] | None = None,
    eval_split: str = "dev",
    metrics: MetricsLog | None = None,
    opt: AdamW | None = None,
    step_hook: Callable[[int, DialogRetriever], None] | None = None,
) -> StageResult:
    """Train one stage in place.

    ``corpus`` is a list of caption pairs for the backbone stage and a list of
    dialogs otherwise.
    """
    cfg.validate()
    if stage != cfg.stage:
        cfg = TrainConfig(**{**cfg.__dict__, "stage": stage})
    if stage != "backbone" and "backbone" not in model.completed_stages:
        raise StateError(f"{stage} needs a pretrained backbone; run the backbone stage or load its checkpoint")
    metrics = metrics if metrics is not None else MetricsLog()
    if stage == "backbone":
        result = _pretrain_backbone(corpus, model, cfg)
    else:
        model.set_stage(stage)
        result = StageResult(stage, trainable_fraction=model.trainable_fraction())
        log.info("%s: trainable fraction %.4f%% of %d parameters", stage,
                 100 * result.trainable_fraction, model.num_parameters())
        use_context = stage == "stage2"
        data = [as_single_round(d) for d in corpus] if stage == "stage1" else list(corpus)
        opt = opt or cfg.optimizer()
        batches = sample_batches(data, cfg.batch_size, Rng(cfg.seed).spawn(f"batches-{stage}"), epochs=None)
        for step in range(cfg.total_steps):
            loss = train_step(next(batches), model, opt, cfg, step, use_context)
            result.losses.append(loss)
            if step_hook is not None:
                step_hook(step, model)
            if cfg.log_every and (step + 1) % cfg.log_every == 0:
                log.info("%s step %d loss %.4f", stage, step + 1, float(np.mean(result.losses[-cfg.log_every:])))
            if eval_dialogs and cfg.eval_every and (step + 1) % cfg.eval_every == 0 and step + 1 < cfg.total_steps:
                record = _eval_record(model, stage, step + 1, eval_split, eval_dialogs, cfg, use_context)
                metrics.write(record)
                result.records.append(record)
    model.completed_stages.append(stage)
    if eval_dialogs:
        record = _eval_record(model, stage, cfg.total_steps, eval_split, eval_dialogs, cfg, stage == "stage2")
        metrics.write(record)
        result.records.append(record)
    return result


class _PairHeads(Module):
    def __init__(self, d: int, dim: int, rng: Rng):
        self.text_head = self.param(linear_init(rng, d, dim), "text_head")
        self.image_head = self.param(linear_init(rng, d, dim), "image_head")


def _pretrain_backbone(pairs: Sequence, model: DialogRetriever, cfg: TrainConfig) -> StageResult:
    model.set_stage("backbone")
    heads = _PairHeads(model.cfg.encoder.d_model, model.cfg.proj_dim, Rng(cfg.seed).spawn("pair_heads"))
    params = {**model.trainable_parameters(), **dict(heads.named_parameters("heads."))}
    result = StageResult("backbone", trainable_fraction=model.trainable_fraction())
    opt = cfg.optimizer()
    rng = Rng(cfg.seed).spawn("batches-backbone")
    order: list[int] = []
    for step in range(cfg.total_steps):
        if len(order) < cfg.batch_size:
            order.extend(rng.permutation(len(pairs)).tolist())
        idx, order = order[: cfg.batch_size], order[cfg.batch_size:]
        texts = [pairs[i][0] for i in idx]
        images = [pairs[i][1] for i in idx]
        t = linear(model.text_encoder.encode_utterances(texts), heads.text_head)
        v = linear(model.image_encoder.encode_utterances(images), heads.image_head)
        loss = mul(add(in_batch_loss(t, v), in_batch_loss(v, t)), 0.5)
        for p in params.values():
            p.grad = None
        backward(loss, params.values())
        opt.step(params, linear_lr(step, cfg.base_lr, cfg.total_steps))
        result.losses.append(loss.item())
        if cfg.log_every and (step + 1) % cfg.log_every == 0:
            log.info("backbone step %d loss %.4f", step + 1, float(np.mean(result.losses[-cfg.log_every:])))
    model.text_encoder.freeze()
    model.image_encoder.freeze()
    return result
