"""Whole-model gradient check on toy dimensions."""

from __future__ import annotations

import time
from dataclasses import dataclass

from .data import CorpusSpec, generate_corpus
from .encoders import EncoderConfig
from .model import DialogRetriever, ModelConfig
from .numerics import GradCheckReport, Rng, add, grad_check
from .training import in_batch_loss
from .types import Modality


@dataclass
class GradientSuiteResult:
    report: GradCheckReport
    seconds: float
    n_params: int


def toy_model_config(d_model: int = 16, n_layers: int = 2, ctx_len: int = 4, dom_len: int = 2) -> ModelConfig:
    enc = EncoderConfig(
        d_model=d_model, n_layers=n_layers, n_heads=2, vocab_size=64, max_seq=32, patch_dim=4, n_patches=3, ffn_mult=2
    )
    return ModelConfig(encoder=enc, ctx_len=ctx_len, dom_len=dom_len, insert_layer=1, proj_dim=8, cpg_layers=1)


def gradient_suite(
    h: float = 1e-4,
    tol: float = 1e-3,
    batch_size: int = 4,
    max_coords: int | None = 6,
    seed: int = 0,
    cfg: ModelConfig | None = None,
) -> GradientSuiteResult:
    """Check d(loss)/d(theta) for every parameter of the model against central differences.

    The loss sums the in-batch objective over a text-input batch and an
    image-input batch so that both query encoders, the context generator
    (which sees mixed-modality contexts) and two projection experts are on the
    path. Backbone parameters are unfrozen for the check so the whole chain is
    covered, not only the groups trained in stage2.
    """
    start = time.perf_counter()
    cfg = cfg or toy_model_config()
    enc = cfg.encoder
    spec = CorpusSpec(
        n_topics=4, dialogs_per_topic=12, min_turns=2, max_turns=4, vocab_size=enc.vocab_size, tokens_per_topic=4,
        utterance_len=4, n_patches=enc.n_patches, patch_dim=enc.patch_dim, image_rate=0.5, seed=seed,
    )
    corpus = generate_corpus(spec)
    batches = []
    for modality in Modality:
        rows = [d for d in corpus if d.current_input.modality is modality and len(d.turns) > 1]
        rt = rows[0].retrieval_type
        batches.append([d for d in rows if d.retrieval_type == rt][:batch_size])
    model = DialogRetriever(cfg, seed=seed)
    model.set_trainable(True)
    params = dict(model.named_parameters())

    def loss():
        total = None
        for batch in batches:
            rt = batch[0].retrieval_type
            q = model.query_embeddings(batch)
            c = model.candidate_embeddings([d.response for d in batch], rt)
            part = in_batch_loss(q, c)
            total = part if total is None else add(total, part)
        return total

    report = grad_check(loss, params, h=h, tol=tol, max_coords=max_coords, rng=Rng(seed).spawn("gradcheck"))
    return GradientSuiteResult(report, time.perf_counter() - start, len(params))
