"""The prompt-tuned dual-encoder retriever and its parameter groups."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .cpg import CPGConfig, ContextPromptGenerator
from .encoders import DomainPrompts, EncoderConfig, PromptedEncoder
from .errors import ConfigError
from .module import Module
from .mop import MixtureOfProjection
from .numerics import ContractError, Rng, Tensor
from .types import Modality, RetrievalType

GROUPS = ("backbone_text", "backbone_image", "domain_prompts", "cpg", "mop")
STAGE_GROUPS = {
    "backbone": ("backbone_text", "backbone_image"),
    "stage1": ("domain_prompts", "mop"),
    "stage2": ("domain_prompts", "mop", "cpg"),
}


@dataclass
class ModelConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    ctx_len: int = 96
    dom_len: int = 4
    insert_layer: int = 1
    proj_dim: int = 32
    cpg_layers: int = 2
    bottleneck: int | None = None
    use_cpg: bool = True
    shared_mop: bool = False

    def validate(self) -> None:
        self.encoder.validate()
        if self.dom_len < 0:
            raise ConfigError("dom_len must be >= 0")
        if self.use_cpg and self.ctx_len < 1:
            raise ConfigError("ctx_len must be >= 1 when the context prompt generator is on")
        if not 0 <= self.insert_layer < self.encoder.n_layers:
            raise ConfigError(f"insert_layer {self.insert_layer} outside [0, {self.encoder.n_layers})")
        if not 1 <= self.proj_dim:
            raise ConfigError("proj_dim must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        data = dict(data)
        enc = EncoderConfig(**data.pop("encoder"))
        return cls(encoder=enc, **data)


class DialogRetriever(Module):
    def __init__(self, cfg: ModelConfig, seed: int = 0):
        cfg.validate()
        self.cfg = cfg
        rng = Rng(seed)
        enc = cfg.encoder
        self.text_encoder = PromptedEncoder(enc, Modality.TEXT, rng.spawn("text_encoder"))
        self.image_encoder = PromptedEncoder(enc, Modality.IMAGE, rng.spawn("image_encoder"))
        self.text_domain = DomainPrompts(enc.n_layers, cfg.dom_len, enc.d_model, rng.spawn("text_domain"))
        self.image_domain = DomainPrompts(enc.n_layers, cfg.dom_len, enc.d_model, rng.spawn("image_domain"))
        self.cpg = (
            ContextPromptGenerator(
                enc, CPGConfig(cfg.ctx_len, cfg.bottleneck, cfg.cpg_layers, enc.max_seq), rng.spawn("cpg")
            )
            if cfg.use_cpg
            else None
        )
        self.mop = MixtureOfProjection(enc.d_model, cfg.proj_dim, rng.spawn("mop"), shared=cfg.shared_mop)
        self.completed_stages: list[str] = []

    # ------------------------------------------------------------ parameter groups

    def groups(self) -> dict[str, dict[str, Tensor]]:
        out: dict[str, dict[str, Tensor]] = {g: {} for g in GROUPS}
        for name, p in self.named_parameters():
            out[group_of(name)][name] = p
        return out

    def set_stage(self, stage: str) -> None:
        """Make exactly the stage's groups trainable."""
        if stage not in STAGE_GROUPS:
            raise ConfigError(f"unknown stage {stage!r}")
        active = STAGE_GROUPS[stage]
        for group, params in self.groups().items():
            for p in params.values():
                p.requires_grad = group in active
                p.grad = None

    def trainable_parameters(self) -> dict[str, Tensor]:
        return {n: p for n, p in self.named_parameters() if p.requires_grad}

    def trainable_fraction(self) -> float:
        total = self.num_parameters()
        return sum(p.size for p in self.trainable_parameters().values()) / total

    def state_dict(self) -> dict[str, np.ndarray]:
        return {n: p.data.copy() for n, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray], strict: bool = True) -> None:
        params = dict(self.named_parameters())
        if strict and set(params) != set(state):
            missing = sorted(set(params) - set(state))
            extra = sorted(set(state) - set(params))
            raise ContractError(f"state mismatch; missing={missing[:5]} unexpected={extra[:5]}")
        for name, value in state.items():
            if name not in params:
                continue
            if params[name].shape != value.shape:
                raise ContractError(f"{name}: shape {value.shape} != {params[name].shape}")
            params[name].data = np.array(value, dtype=np.float64)

    # ------------------------------------------------------------ encoding

    def encoder_for(self, modality: Modality) -> PromptedEncoder:
        return self.text_encoder if modality is Modality.TEXT else self.image_encoder

    def domain_for(self, modality: Modality) -> DomainPrompts | None:
        domain = self.text_domain if modality is Modality.TEXT else self.image_domain
        return domain if domain.length else None

    def encode_queries(self, dialogs: Sequence, use_context: bool = True) -> Tensor:
        """(B, d_model) backbone outputs for the current inputs, with context prompts."""
        modality = dialogs[0].current_input.modality
        if any(d.current_input.modality is not modality for d in dialogs):
            raise ContractError("query batch mixes input modalities")
        ctx = None
        if use_context and self.cpg is not None:
            ctx = self.cpg([d.context for d in dialogs])
        encoder = self.encoder_for(modality)
        return encoder.encode_utterances(
            [d.current_input for d in dialogs], self.domain_for(modality), ctx, self.cfg.insert_layer
        )

    def encode_responses(self, responses: Sequence) -> Tensor:
        """(B, d_model) backbone outputs for same-modality responses (domain prompts only)."""
        modality = responses[0].modality
        if any(r.modality is not modality for r in responses):
            raise ContractError("response batch mixes modalities")
        return self.encoder_for(modality).encode_utterances(responses, self.domain_for(modality))

    def encode_response(self, response) -> Tensor:
        return self.encoder_for(response.modality).encode_response(response, self.domain_for(response.modality))

    def query_embeddings(self, dialogs: Sequence, use_context: bool = True) -> Tensor:
        rt = batch_retrieval_type(dialogs)
        return self.mop.project_query(self.encode_queries(dialogs, use_context), rt)

    def candidate_embeddings(self, responses: Sequence, rt: RetrievalType) -> Tensor:
        return self.mop.project_candidate(self.encode_responses(responses), rt)


def group_of(name: str) -> str:
    head = name.split(".", 1)[0]
    return {
        "text_encoder": "backbone_text",
        "image_encoder": "backbone_image",
        "text_domain": "domain_prompts",
        "image_domain": "domain_prompts",
        "cpg": "cpg",
        "mop": "mop",
    }[head]


def batch_retrieval_type(dialogs: Sequence) -> RetrievalType:
    if not dialogs:
        raise ContractError("empty batch")
    rt = dialogs[0].retrieval_type
    if any(d.retrieval_type != rt for d in dialogs):
        raise ContractError("batch mixes retrieval types")
    return rt
