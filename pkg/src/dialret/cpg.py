"""Context prompt generator: dialog context -> ``L_c`` prompt rows for the query encoder.

The context encoder embeds every turn (text through a token table, image
patches through a linear bridge), adds a role embedding per turn and one
position per row, and runs its own transformer over the concatenation. The
generator then pools those rows to the prompt length and applies a ReLU
bottleneck MLP::

    prompts = W2 . relu(W1 . pool(h) + b1) + b2

Contexts shorter than the prompt length are tiled cyclically instead of
pooled. An empty context is a single learned null row.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .encoders import EncoderConfig, TransformerLayer
from .errors import ConfigError, InputError
from .module import Module, linear_init
from .numerics import (
    Rng,
    ShapeError,
    Tensor,
    add,
    concat,
    getitem,
    layer_norm,
    linear,
    matmul,
    relu,
    reshape,
    segment_pool_matrix,
    take_rows,
)
from .types import Modality

ROLE_IDS = {"user": 0, "system": 1}
_MASKED = -1e9


@dataclass
class CPGConfig:
    prompt_len: int = 96
    bottleneck: int | None = None
    n_layers: int = 2
    max_rows: int = 256

    def bottleneck_width(self, d: int) -> int:
        return self.bottleneck if self.bottleneck is not None else 2 * d

    def validate(self) -> None:
        if self.prompt_len < 1:
            raise ConfigError("context prompt length must be >= 1")
        if self.n_layers < 1 or self.max_rows < 1:
            raise ConfigError("context encoder needs positive layers / max_rows")
        if self.bottleneck is not None and self.bottleneck < 1:
            raise ConfigError("bottleneck width must be positive")


def pooling_matrix(n: int, length: int) -> np.ndarray:
    """(length, n) map from context rows to pooled rows (cyclic tiling when n < length)."""
    if n < 1:
        raise ShapeError("cannot pool an empty sequence")
    if n >= length:
        return segment_pool_matrix(n, length)
    out = np.zeros((length, n))
    out[np.arange(length), np.arange(length) % n] = 1.0
    return out


class ContextEncoder(Module):
    def __init__(self, enc_cfg: EncoderConfig, cfg: CPGConfig, rng: Rng):
        d = enc_cfg.d_model
        self.d = d
        self.vocab_size = enc_cfg.vocab_size
        self.patch_dim = enc_cfg.patch_dim
        self.max_rows = cfg.max_rows
        self.eps = enc_cfg.ln_eps
        self.token_embedding = self.param(rng.normal((enc_cfg.vocab_size, d), scale=0.5), "token_embedding")
        self.bridge = self.param(linear_init(rng, enc_cfg.patch_dim, d), "bridge")
        self.bridge_bias = self.param(np.zeros(d), "bridge_bias")
        self.role_embedding = self.param(rng.normal((len(ROLE_IDS), d), scale=0.5), "role_embedding")
        self.null_context = self.param(rng.normal(d, scale=0.5), "null_context")
        self.positions = self.param(rng.normal((cfg.max_rows, d), scale=0.1), "positions")
        self.layers = [
            TransformerLayer(d, enc_cfg.n_heads, enc_cfg.ffn_mult, rng, enc_cfg.ln_eps) for _ in range(cfg.n_layers)
        ]
        self.final_gamma = self.param(np.ones(d), "final_gamma")
        self.final_beta = self.param(np.zeros(d), "final_beta")

    def _check(self, u) -> None:
        if u.role not in ROLE_IDS:
            raise InputError(f"unknown role {u.role!r}")
        if u.modality is Modality.TEXT:
            if not u.tokens:
                raise InputError("empty text turn in context")
            if min(u.tokens) < 0 or max(u.tokens) >= self.vocab_size:
                raise InputError("context token id out of vocabulary range")
        elif u.patches.ndim != 2 or u.patches.shape[1] != self.patch_dim:
            raise InputError(f"context image patches must have width {self.patch_dim}, got {u.patches.shape}")

    def encode_contexts(self, contexts: Sequence[Sequence]) -> tuple[Tensor, np.ndarray]:
        """Encode a batch of contexts into padded (B, T, d) rows plus true row counts.

        Rows beyond ``max_rows`` are dropped from the oldest end.
        """
        tokens: list[int] = []
        patches: list[np.ndarray] = []
        layouts = []  # per dialog: list of (source, start, count, role)
        for ctx in contexts:
            layout = []
            for u in ctx:
                self._check(u)
                role = ROLE_IDS[u.role]
                if u.modality is Modality.TEXT:
                    layout.append(("t", len(tokens), len(u.tokens), role))
                    tokens.extend(u.tokens)
                else:
                    layout.append(("v", sum(len(p) for p in patches), len(u.patches), role))
                    patches.append(u.patches)
            layouts.append(layout)

        n_tok = len(tokens)
        n_patch = sum(len(p) for p in patches)
        pieces = []
        if n_tok:
            pieces.append(take_rows(self.token_embedding, np.array(tokens)))
        if n_patch:
            pieces.append(linear(Tensor(np.concatenate(patches)), self.bridge, self.bridge_bias))
        null_row = n_tok + n_patch
        pieces.append(reshape(self.null_context, (1, self.d)))
        pieces.append(Tensor(np.zeros((1, self.d))))
        pad_row = null_row + 1
        table = concat(pieces, axis=0)

        rows_per = []
        for layout in layouts:
            src, roles = [], []
            for kind, start, count, role in layout:
                base = start if kind == "t" else n_tok + start
                src.extend(range(base, base + count))
                roles.extend([role] * count)
            if not src:
                src, roles = [null_row], [0]
            src, roles = src[-self.max_rows:], roles[-self.max_rows:]
            rows_per.append((src, roles))
        lengths = np.array([len(s) for s, _ in rows_per])
        width = int(lengths.max())
        index = np.full((len(contexts), width), pad_row)
        role_ids = np.zeros((len(contexts), width), dtype=np.int64)
        for b, (src, roles) in enumerate(rows_per):
            index[b, : len(src)] = src
            role_ids[b, : len(roles)] = roles

        x = getitem(table, index)
        x = add(x, take_rows(self.role_embedding, role_ids))
        x = add(x, getitem(self.positions, slice(0, width)))
        key_bias = None
        if (lengths < width).any():
            valid = np.arange(width)[None, :] < lengths[:, None]
            key_bias = np.where(valid, 0.0, _MASKED)[:, None, None, :]
        for layer in self.layers:
            x = layer(x, key_bias)
        return layer_norm(x, self.final_gamma, self.final_beta, self.eps), lengths

    def encode_context(self, context: Sequence) -> Tensor:
        """(n, d) encoded rows for one context."""
        h, lengths = self.encode_contexts([context])
        return reshape(getitem(h, (0, slice(0, int(lengths[0])))), (int(lengths[0]), self.d))


class PromptGenerator(Module):
    def __init__(self, d: int, prompt_len: int, bottleneck: int, rng: Rng):
        self.prompt_len = prompt_len
        self.w1 = self.param(linear_init(rng, d, bottleneck), "w1")
        self.b1 = self.param(np.zeros(bottleneck), "b1")
        self.w2 = self.param(linear_init(rng, bottleneck, d), "w2")
        self.b2 = self.param(np.zeros(d), "b2")

    def from_pooled(self, pooled: Tensor) -> Tensor:
        return linear(relu(linear(pooled, self.w1, self.b1)), self.w2, self.b2)

    def __call__(self, h: Tensor, lengths: np.ndarray | None = None) -> Tensor:
        """(n, d) -> (L_c, d), or padded (B, T, d) with ``lengths`` -> (B, L_c, d)."""
        d = self.w1.shape[0]
        if h.shape[-1] != d:
            raise ShapeError(f"context features have width {h.shape[-1]}, generator expects {d}")
        if h.ndim == 2:
            return self.from_pooled(matmul(Tensor(pooling_matrix(h.shape[0], self.prompt_len)), h))
        width = h.shape[1]
        pool = np.zeros((h.shape[0], self.prompt_len, width))
        for b, n in enumerate(lengths):
            pool[b, :, : int(n)] = pooling_matrix(int(n), self.prompt_len)
        return self.from_pooled(matmul(Tensor(pool), h))


def generate_prompts(h: Tensor, gen: PromptGenerator) -> Tensor:
    return gen(h)


class ContextPromptGenerator(Module):
    def __init__(self, enc_cfg: EncoderConfig, cfg: CPGConfig, rng: Rng):
        cfg.validate()
        self.encoder = ContextEncoder(enc_cfg, cfg, rng.spawn("context_encoder"))
        self.generator = PromptGenerator(
            enc_cfg.d_model, cfg.prompt_len, cfg.bottleneck_width(enc_cfg.d_model), rng.spawn("generator")
        )

    def __call__(self, contexts: Sequence[Sequence]) -> Tensor:
        """(B, L_c, d) context prompts for a batch of contexts."""
        h, lengths = self.encoder.encode_contexts(contexts)
        return self.generator(h, lengths)
