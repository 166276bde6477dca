"""Toy transformer dual encoders with deep domain prompts and mid-stack context prompts.

Layer layout is pre-norm: ``x + attn(ln(x))`` then ``x + ffn(ln(x))``, with a
final layer norm applied to the summary row only. Attention is bidirectional.

Prompt rows never receive positional embeddings. At layer ``l`` the rows fed
to the block are ``[domain_l ; ctx (once inserted) ; sequence]``; the domain
rows are dropped again after the block, while context rows stay and travel
through the remaining layers like ordinary positions.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigError, InputError
from .module import Module, linear_init
from .numerics import (
    Rng,
    ShapeError,
    Tensor,
    add,
    broadcast_to,
    concat,
    gelu,
    getitem,
    layer_norm,
    linear,
    matmul,
    mul,
    reshape,
    softmax,
    swap_last,
    take_rows,
    transpose,
)
from .types import Modality


@dataclass
class EncoderConfig:
    d_model: int = 64
    n_layers: int = 4
    n_heads: int = 4
    vocab_size: int = 256
    max_seq: int = 128
    patch_dim: int = 16
    n_patches: int = 16
    ffn_mult: int = 4
    ln_eps: float = 1e-5

    def validate(self) -> None:
        for name in ("d_model", "n_layers", "n_heads", "vocab_size", "max_seq", "patch_dim", "n_patches", "ffn_mult"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.d_model % self.n_heads:
            raise ConfigError(f"d_model {self.d_model} not divisible by n_heads {self.n_heads}")


class TransformerLayer(Module):
    def __init__(self, d: int, n_heads: int, ffn_mult: int, rng: Rng, eps: float = 1e-5):
        self.n_heads = n_heads
        self.eps = eps
        hidden = ffn_mult * d
        self.ln1_gamma = self.param(np.ones(d), "ln1_gamma")
        self.ln1_beta = self.param(np.zeros(d), "ln1_beta")
        self.w_q = self.param(linear_init(rng, d, d), "w_q")
        self.b_q = self.param(np.zeros(d), "b_q")
        self.w_k = self.param(linear_init(rng, d, d), "w_k")
        self.w_v = self.param(linear_init(rng, d, d), "w_v")
        self.b_v = self.param(np.zeros(d), "b_v")
        self.w_o = self.param(linear_init(rng, d, d), "w_o")
        self.b_o = self.param(np.zeros(d), "b_o")
        self.ln2_gamma = self.param(np.ones(d), "ln2_gamma")
        self.ln2_beta = self.param(np.zeros(d), "ln2_beta")
        self.w_ff1 = self.param(linear_init(rng, d, hidden), "w_ff1")
        self.b_ff1 = self.param(np.zeros(hidden), "b_ff1")
        self.w_ff2 = self.param(linear_init(rng, hidden, d), "w_ff2")
        self.b_ff2 = self.param(np.zeros(d), "b_ff2")

    def __call__(self, x: Tensor, key_bias: np.ndarray | None = None) -> Tensor:
        """``x`` is (B, T, d); ``key_bias`` is an additive (B, 1, 1, T) mask or None."""
        b, t, d = x.shape
        h_count = self.n_heads
        dh = d // h_count

        def heads(z: Tensor) -> Tensor:
            return transpose(reshape(z, (b, t, h_count, dh)), (0, 2, 1, 3))

        h = layer_norm(x, self.ln1_gamma, self.ln1_beta, self.eps)
        q = heads(mul(linear(h, self.w_q, self.b_q), dh ** -0.5))
        k = heads(linear(h, self.w_k))  # a key bias cancels in the softmax
        v = heads(linear(h, self.w_v, self.b_v))
        scores = matmul(q, swap_last(k))
        if key_bias is not None:
            scores = add(scores, Tensor(key_bias))
        mixed = matmul(softmax(scores, axis=-1), v)
        mixed = reshape(transpose(mixed, (0, 2, 1, 3)), (b, t, d))
        x = add(x, linear(mixed, self.w_o, self.b_o))
        h = layer_norm(x, self.ln2_gamma, self.ln2_beta, self.eps)
        return add(x, linear(gelu(linear(h, self.w_ff1, self.b_ff1)), self.w_ff2, self.b_ff2))


class DomainPrompts(Module):
    """One (length, d) prompt matrix per encoder layer."""

    def __init__(self, n_layers: int, length: int, d: int, rng: Rng, scale: float = 0.5):
        if length < 0:
            raise ConfigError("domain prompt length must be >= 0")
        self.length = length
        self.per_layer = [
            self.param(rng.normal((length, d), scale=scale), f"layer{i}") for i in range(n_layers)
        ]


class PromptedEncoder(Module):
    """Frozen-able transformer over text tokens or image patches.

    The output is the final-layer summary-token row (width ``d_model``).
    """

    def __init__(self, cfg: EncoderConfig, modality: Modality, rng: Rng):
        cfg.validate()
        self.cfg = cfg
        self.modality = Modality(modality)
        d = cfg.d_model
        if self.modality is Modality.TEXT:
            self.token_embedding = self.param(rng.normal((cfg.vocab_size, d), scale=0.5), "token_embedding")
        else:
            self.patch_proj = self.param(linear_init(rng, cfg.patch_dim, d), "patch_proj")
            self.patch_bias = self.param(np.zeros(d), "patch_bias")
        self.summary_token = self.param(rng.normal(d, scale=0.5), "summary_token")
        self.positions = self.param(rng.normal((cfg.max_seq, d), scale=0.1), "positions")
        self.layers = [TransformerLayer(d, cfg.n_heads, cfg.ffn_mult, rng, cfg.ln_eps) for _ in range(cfg.n_layers)]
        self.final_gamma = self.param(np.ones(d), "final_gamma")
        self.final_beta = self.param(np.zeros(d), "final_beta")

    @property
    def frozen(self) -> bool:
        return not any(p.requires_grad for p in self.parameters())

    def freeze(self) -> None:
        self.set_trainable(False)

    def unfreeze(self) -> None:
        self.set_trainable(True)

    # ------------------------------------------------------------ embedding

    def _with_summary(self, body: Tensor) -> Tensor:
        b, n, d = body.shape
        if n + 1 > self.cfg.max_seq:
            raise InputError(f"sequence of {n} items exceeds max_seq - 1 = {self.cfg.max_seq - 1}")
        summary = broadcast_to(reshape(self.summary_token, (1, 1, d)), (b, 1, d))
        return add(concat([summary, body], axis=1), getitem(self.positions, slice(0, n + 1)))

    def embed_texts(self, token_rows: Sequence[Sequence[int]]) -> Tensor:
        """(B, 1 + len, d) for a batch of equal-length token lists."""
        if self.modality is not Modality.TEXT:
            raise InputError("image encoder cannot embed text")
        ids = np.array([list(r) for r in token_rows], dtype=np.int64).reshape(len(token_rows), -1)
        if ids.size and (ids.min() < 0 or ids.max() >= self.cfg.vocab_size):
            raise InputError(f"token id out of vocabulary range [0, {self.cfg.vocab_size})")
        body = take_rows(self.token_embedding, ids)
        return self._with_summary(body)

    def embed_text(self, tokens: Sequence[int]) -> Tensor:
        return reshape(self.embed_texts([tokens]), (1 + len(tokens), self.cfg.d_model))

    def embed_images(self, patches: np.ndarray) -> Tensor:
        """(B, 1 + n_patches, d) for a (B, n_patches, patch_dim) array."""
        if self.modality is not Modality.IMAGE:
            raise InputError("text encoder cannot embed images")
        patches = np.asarray(patches, dtype=np.float64)
        expected = (self.cfg.n_patches, self.cfg.patch_dim)
        if patches.ndim != 3 or patches.shape[1:] != expected:
            raise InputError(f"image patches must be (B, {expected[0]}, {expected[1]}), got {patches.shape}")
        body = linear(Tensor(patches), self.patch_proj, self.patch_bias)
        return self._with_summary(body)

    def embed_image(self, patches) -> Tensor:
        patches = np.asarray(patches, dtype=np.float64)
        if patches.shape != (self.cfg.n_patches, self.cfg.patch_dim):
            raise InputError(
                f"image patches must be ({self.cfg.n_patches}, {self.cfg.patch_dim}), got {patches.shape}"
            )
        out = self.embed_images(patches[None])
        return reshape(out, out.shape[1:])

    def embed_utterances(self, utterances: Sequence) -> Tensor:
        """Embed same-modality, same-length utterances as one batch."""
        if self.modality is Modality.TEXT:
            return self.embed_texts([u.tokens for u in utterances])
        return self.embed_images(np.stack([u.patches for u in utterances]))

    # ------------------------------------------------------------ encoding

    def encode_with_prompts(
        self,
        seq: Tensor,
        domain: DomainPrompts | None = None,
        ctx: Tensor | None = None,
        insert_layer: int = 0,
        lengths_out: list[int] | None = None,
    ) -> Tensor:
        """Run the stack over an embedded sequence and return the summary row.

        ``seq`` is (T, d) or (B, T, d); ``ctx`` is (L_c, d) or (B, L_c, d).
        Returns (d,) or (B, d) to match.
        """
        d = self.cfg.d_model
        single = seq.ndim == 2
        if single:
            seq = reshape(seq, (1,) + seq.shape)
        if seq.ndim != 3 or seq.shape[-1] != d:
            raise ShapeError(f"sequence must have width {d}, got shape {seq.shape}")
        batch = seq.shape[0]
        if ctx is not None:
            if ctx.shape[-1] != d:
                raise ShapeError(f"context prompts must have width {d}, got shape {ctx.shape}")
            if not 0 <= insert_layer < self.cfg.n_layers:
                raise ConfigError(f"insert_layer {insert_layer} outside [0, {self.cfg.n_layers})")
            if ctx.ndim == 2:
                ctx = broadcast_to(reshape(ctx, (1,) + ctx.shape), (batch,) + ctx.shape)
            elif ctx.shape[0] != batch:
                raise ShapeError(f"context batch {ctx.shape[0]} != sequence batch {batch}")
        n_dom = domain.length if domain is not None else 0
        if domain is not None and len(domain.per_layer) != self.cfg.n_layers:
            raise ConfigError("domain prompts must provide one matrix per layer")

        x = seq
        summary_at = 0
        for i, layer in enumerate(self.layers):
            if ctx is not None and i == insert_layer:
                x = concat([ctx, x], axis=1)
                summary_at = ctx.shape[1]
            if n_dom:
                prompt = broadcast_to(reshape(domain.per_layer[i], (1, n_dom, d)), (batch, n_dom, d))
                x = concat([prompt, x], axis=1)
            if lengths_out is not None:
                lengths_out.append(x.shape[1])
            x = layer(x)
            if n_dom:
                x = getitem(x, (slice(None), slice(n_dom, None)))
        out = layer_norm(getitem(x, (slice(None), summary_at)), self.final_gamma, self.final_beta, self.cfg.ln_eps)
        return reshape(out, (d,)) if single else out

    def encode_utterances(
        self,
        utterances: Sequence,
        domain: DomainPrompts | None = None,
        ctx: Tensor | None = None,
        insert_layer: int = 0,
    ) -> Tensor:
        """(B, d) encodings; batches are split by sequence length and reassembled in order."""
        for u in utterances:
            if u.modality is not self.modality:
                raise InputError(f"{u.modality.value} utterance routed to {self.modality.value} encoder")
        groups: dict[int, list[int]] = {}
        for i, u in enumerate(utterances):
            size = len(u.tokens) if self.modality is Modality.TEXT else u.patches.shape[0]
            groups.setdefault(size, []).append(i)
        if len(groups) == 1:
            return self.encode_with_prompts(self.embed_utterances(utterances), domain, ctx, insert_layer)
        parts, order = [], []
        for idx in groups.values():
            sub_ctx = getitem(ctx, np.array(idx)) if ctx is not None else None
            emb = self.embed_utterances([utterances[i] for i in idx])
            parts.append(self.encode_with_prompts(emb, domain, sub_ctx, insert_layer))
            order.extend(idx)
        inverse = np.argsort(np.array(order))
        return getitem(concat(parts, axis=0), inverse)

    def encode_response(self, response, domain: DomainPrompts | None = None) -> Tensor:
        """(d,) encoding of a single response; no context prompts."""
        return reshape(self.encode_utterances([response], domain), (self.cfg.d_model,))
