"""Flat run configuration: ``key = value`` files plus command-line overrides."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any, Mapping

from .data import CorpusSpec
from .encoders import EncoderConfig
from .errors import ConfigError
from .model import ModelConfig
from .training import TrainConfig


@dataclass
class RunConfig:
    # corpus
    n_topics: int = 16
    dialogs_per_topic: int = 200
    min_turns: int = 2
    max_turns: int = 6
    vocab_size: int = 256
    tokens_per_topic: int = 8
    utterance_len: int = 8
    topic_token_rate: float = 0.5
    caption_topic_rate: float = 0.75
    n_patches: int = 16
    patch_dim: int = 16
    noise_sigma: float = 1.0
    image_rate: float = 0.3
    response_image_rate: float = 0.5
    ambiguity_rate: float = 1.0
    corpus_seed: int = 0
    caption_pairs: int = 4000
    # model
    d_model: int = 64
    n_layers: int = 4
    n_heads: int = 4
    ffn_mult: int = 4
    max_seq: int = 128
    ctx_len: int = 96
    dom_len: int = 4
    prompt_layer: int = 1
    proj_dim: int = 32
    cpg_layers: int = 2
    bottleneck: int = 0
    use_cpg: bool = True
    shared_mop: bool = False
    # training
    seed: int = 0
    batch_size: int = 32
    backbone_steps: int = 2000
    backbone_lr: float = 1e-3
    stage1_steps: int = 2000
    stage1_lr: float = 5e-5
    stage2_steps: int = 5000
    stage2_lr: float = 5e-5
    weight_decay: float = 0.01
    eval_every: int = 0
    log_every: int = 100
    # evaluation
    pool_size: int = 100
    eval_seed: int = 0

    def replace(self, **changes: Any) -> "RunConfig":
        unknown = set(changes) - {f.name for f in fields(self)}
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(sorted(unknown))}")
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def corpus_spec(self) -> CorpusSpec:
        return CorpusSpec(
            n_topics=self.n_topics,
            dialogs_per_topic=self.dialogs_per_topic,
            min_turns=self.min_turns,
            max_turns=self.max_turns,
            vocab_size=self.vocab_size,
            tokens_per_topic=self.tokens_per_topic,
            utterance_len=self.utterance_len,
            topic_token_rate=self.topic_token_rate,
            caption_topic_rate=self.caption_topic_rate,
            n_patches=self.n_patches,
            patch_dim=self.patch_dim,
            noise_sigma=self.noise_sigma,
            image_rate=self.image_rate,
            response_image_rate=self.response_image_rate,
            ambiguity_rate=self.ambiguity_rate,
            seed=self.corpus_seed,
        )

    def model_config(self) -> ModelConfig:
        enc = EncoderConfig(
            d_model=self.d_model,
            n_layers=self.n_layers,
            n_heads=self.n_heads,
            vocab_size=self.vocab_size,
            max_seq=self.max_seq,
            patch_dim=self.patch_dim,
            n_patches=self.n_patches,
            ffn_mult=self.ffn_mult,
        )
        cfg = ModelConfig(
            encoder=enc,
            ctx_len=self.ctx_len,
            dom_len=self.dom_len,
            insert_layer=self.prompt_layer,
            proj_dim=self.proj_dim,
            cpg_layers=self.cpg_layers,
            bottleneck=self.bottleneck or None,
            use_cpg=self.use_cpg,
            shared_mop=self.shared_mop,
        )
        cfg.validate()
        return cfg

    def train_config(self, stage: str) -> TrainConfig:
        steps, lr = {
            "backbone": (self.backbone_steps, self.backbone_lr),
            "stage1": (self.stage1_steps, self.stage1_lr),
            "stage2": (self.stage2_steps, self.stage2_lr),
        }[stage]
        cfg = TrainConfig(
            stage=stage,
            total_steps=steps,
            batch_size=self.batch_size,
            base_lr=lr,
            weight_decay=self.weight_decay,
            seed=self.seed,
            eval_every=self.eval_every,
            pool_size=self.pool_size,
            eval_seed=self.eval_seed,
            log_every=self.log_every,
        )
        cfg.validate()
        return cfg


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def coerce(key: str, text: str) -> Any:
    """Convert a raw string to the type of config field ``key``."""
    if key not in _FIELD_TYPES:
        raise ConfigError(f"unknown config key {key!r}")
    kind = _FIELD_TYPES[key]
    text = text.strip()
    try:
        if kind == "bool":
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if kind == "int":
            return int(text)
        if kind == "float":
            return float(text)
    except ValueError:
        raise ConfigError(f"{key}: cannot read {text!r} as {kind}") from None
    return text


def parse_config_text(text: str) -> dict[str, Any]:
    out: dict[str, Any] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        try:
            out[key] = coerce(key, value)
        except ConfigError as e:
            raise ConfigError(f"line {lineno}: {e}") from None
    return out


def load_config(path: str | Path | None = None, overrides: Mapping[str, Any] | None = None) -> RunConfig:
    """Defaults, then the file's values, then ``overrides`` (already typed or raw strings)."""
    values: dict[str, Any] = {}
    if path is not None:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e.strerror}") from None
        values.update(parse_config_text(text))
    for key, value in (overrides or {}).items():
        values[key] = coerce(key, value) if isinstance(value, str) else value
    return RunConfig().replace(**values)


def format_config(cfg: RunConfig) -> str:
    return "".join(f"{k} = {v}\n" for k, v in cfg.to_dict().items())
