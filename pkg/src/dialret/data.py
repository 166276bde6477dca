"""Dialog records, JSONL I/O, and the synthetic topic corpus.

The generator plants a topic ``z`` per dialog. Text utterances mix tokens owned
by ``z`` with tokens shared by all topics; images are the topic's mean patch
matrix plus Gaussian noise. In an *ambiguous* dialog the current input carries
no topic evidence at all (shared tokens only, or a zero-mean noise image), so
the response can only be matched through the earlier turns.
"""

from __future__ import annotations

import gzip
import json
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from .errors import ConfigError
from .numerics import Rng
from .types import Modality, RetrievalType

ROLES = ("user", "system")
SPLITS = ("train", "dev", "test")


class ParseError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


@dataclass(eq=False)
class Utterance:
    modality: Modality
    role: str = "user"
    tokens: tuple[int, ...] | None = None
    patches: np.ndarray | None = None

    def __post_init__(self):
        self.modality = Modality(self.modality)
        if self.role not in ROLES:
            raise ValueError(f"role must be one of {ROLES}, got {self.role!r}")
        if (self.tokens is None) == (self.patches is None):
            raise ValueError("utterance needs exactly one of tokens / patches")
        if self.modality is Modality.TEXT:
            if self.tokens is None:
                raise ValueError("text utterance without tokens")
            self.tokens = tuple(int(t) for t in self.tokens)
        else:
            if self.patches is None:
                raise ValueError("image utterance without patches")
            self.patches = np.asarray(self.patches, dtype=np.float64)
            if self.patches.ndim != 2:
                raise ValueError(f"image patches must be 2-D, got shape {self.patches.shape}")

    @classmethod
    def text(cls, tokens: Sequence[int], role: str = "user") -> "Utterance":
        return cls(Modality.TEXT, role, tokens=tuple(tokens))

    @classmethod
    def image(cls, patches, role: str = "user") -> "Utterance":
        return cls(Modality.IMAGE, role, patches=np.asarray(patches, dtype=np.float64))

    def __eq__(self, other) -> bool:
        if not isinstance(other, Utterance):
            return NotImplemented
        if (self.modality, self.role, self.tokens) != (other.modality, other.role, other.tokens):
            return False
        if self.patches is None:
            return other.patches is None
        return other.patches is not None and np.array_equal(self.patches, other.patches)

    def to_json(self) -> dict:
        record = {"role": self.role, "modality": self.modality.value}
        if self.modality is Modality.TEXT:
            record["tokens"] = list(self.tokens)
        else:
            record["patches"] = self.patches.tolist()
        return record

    @classmethod
    def from_json(cls, record: dict) -> "Utterance":
        for key in ("role", "modality"):
            if key not in record:
                raise ParseError(f"utterance missing field {key!r}")
        modality = Modality.parse(record["modality"])
        if modality is Modality.TEXT:
            if "tokens" not in record:
                raise ParseError("text utterance missing field 'tokens'")
            return cls(modality, record["role"], tokens=tuple(record["tokens"]))
        if "patches" not in record:
            raise ParseError("image utterance missing field 'patches'")
        return cls(modality, record["role"], patches=np.array(record["patches"], dtype=np.float64))


@dataclass(eq=False)
class Dialog:
    id: str
    turns: list[Utterance]
    response: Utterance
    topic_id: int = -1
    split: str = "train"

    def __post_init__(self):
        if not self.turns:
            raise ValueError(f"dialog {self.id!r} has no turns")

    @property
    def context(self) -> list[Utterance]:
        """Every turn before the current input."""
        return self.turns[:-1]

    @property
    def current_input(self) -> Utterance:
        return self.turns[-1]

    @property
    def retrieval_type(self) -> RetrievalType:
        return RetrievalType(self.current_input.modality, self.response.modality)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dialog):
            return NotImplemented
        return (
            self.id == other.id
            and self.split == other.split
            and self.topic_id == other.topic_id
            and self.turns == other.turns
            and self.response == other.response
        )

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "split": self.split,
            "turns": [u.to_json() for u in self.turns],
            "response": self.response.to_json(),
            "topic_id": self.topic_id,
        }

    @classmethod
    def from_json(cls, record: dict) -> "Dialog":
        for key in ("id", "turns", "response"):
            if key not in record:
                raise ParseError(f"dialog missing field {key!r}")
        if not isinstance(record["turns"], list) or not record["turns"]:
            raise ParseError("field 'turns' must be a non-empty list")
        split = record.get("split", "train")
        if split not in SPLITS:
            raise ParseError(f"unknown split {split!r}")
        return cls(
            id=str(record["id"]),
            turns=[Utterance.from_json(t) for t in record["turns"]],
            response=Utterance.from_json(record["response"]),
            topic_id=int(record.get("topic_id", -1)),
            split=split,
        )


def _open(path: Path, mode: str):
    if path.suffix == ".gz":
        return gzip.open(path, mode + "t", encoding="utf-8")
    return open(path, mode, encoding="utf-8")


def write_jsonl(dialogs: Iterable[Dialog], path) -> None:
    path = Path(path)
    with _open(path, "w") as fh:
        for d in dialogs:
            fh.write(json.dumps(d.to_json(), separators=(",", ":")))
            fh.write("\n")


def read_jsonl(path) -> list[Dialog]:
    path = Path(path)
    out = []
    with _open(path, "r") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON ({exc.msg})", lineno) from None
            if not isinstance(record, dict):
                raise ParseError("expected a JSON object", lineno)
            try:
                out.append(Dialog.from_json(record))
            except ParseError as exc:
                raise ParseError(str(exc), lineno) from None
            except (ValueError, TypeError) as exc:
                raise ParseError(str(exc), lineno) from None
    return out


# ---------------------------------------------------------------- synthetic corpus


@dataclass
class CorpusSpec:
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
    image_mean_scale: float = 1.0
    noise_sigma: float = 1.0
    image_rate: float = 0.3
    response_image_rate: float = 0.5
    ambiguity_rate: float = 1.0
    split_fractions: tuple[float, float, float] = (0.7, 0.1, 0.2)
    seed: int = 0

    @property
    def n_topic_tokens(self) -> int:
        return self.n_topics * self.tokens_per_topic

    def validate(self) -> None:
        if self.n_topics < 2:
            raise ConfigError(f"need at least 2 topics, got {self.n_topics}")
        if self.n_topic_tokens >= self.vocab_size:
            raise ConfigError("topic tokens leave no shared tokens in the vocabulary")
        if not 1 <= self.min_turns <= self.max_turns:
            raise ConfigError(f"bad turn range [{self.min_turns}, {self.max_turns}]")
        for name in ("ambiguity_rate", "topic_token_rate", "caption_topic_rate", "image_rate", "response_image_rate"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1], got {value}")
        if self.dialogs_per_topic < 1 or self.utterance_len < 1 or self.tokens_per_topic < 1:
            raise ConfigError("counts must be positive")
        if len(self.split_fractions) != 3 or abs(sum(self.split_fractions) - 1.0) > 1e-9:
            raise ConfigError(f"split fractions must sum to 1, got {self.split_fractions}")


class TopicWorld:
    """Topic token sets and image means shared by the corpus and caption pairs."""

    def __init__(self, spec: CorpusSpec):
        spec.validate()
        self.spec = spec
        rng = Rng(spec.seed).spawn("world")
        self.image_means = rng.normal((spec.n_topics, spec.n_patches, spec.patch_dim), scale=spec.image_mean_scale)
        self.shared_tokens = np.arange(spec.n_topic_tokens, spec.vocab_size)

    def topic_tokens(self, z: int) -> np.ndarray:
        k = self.spec.tokens_per_topic
        return np.arange(z * k, (z + 1) * k)

    def text(self, z: int, rate: float, rng: Rng, role: str) -> Utterance:
        n = self.spec.utterance_len
        u = rng.uniform(n)
        topical = rng.integers(self.spec.tokens_per_topic, n) + z * self.spec.tokens_per_topic
        shared = self.shared_tokens[rng.integers(len(self.shared_tokens), n)]
        is_topic = u < rate
        if rate > 0 and not is_topic.any():
            is_topic[rng.integers(n)] = True
        return Utterance.text(np.where(is_topic, topical, shared).tolist(), role)

    def shared_text(self, rng: Rng, role: str) -> Utterance:
        ids = self.shared_tokens[rng.integers(len(self.shared_tokens), self.spec.utterance_len)]
        return Utterance.text(ids.tolist(), role)

    def image(self, z: int | None, rng: Rng, role: str) -> Utterance:
        shape = (self.spec.n_patches, self.spec.patch_dim)
        noise = rng.normal(shape, scale=self.spec.noise_sigma)
        mean = self.image_means[z] if z is not None else 0.0
        return Utterance.image(mean + noise, role)


def generate_corpus(spec: CorpusSpec) -> list[Dialog]:
    """Seeded synthetic dialogs; splits are assigned per topic in fixed proportions."""
    world = TopicWorld(spec)
    rng = Rng(spec.seed).spawn("dialogs")
    n_train = round(spec.split_fractions[0] * spec.dialogs_per_topic)
    n_dev = round(spec.split_fractions[1] * spec.dialogs_per_topic)
    dialogs = []
    for z in range(spec.n_topics):
        for j in range(spec.dialogs_per_topic):
            split = "train" if j < n_train else "dev" if j < n_train + n_dev else "test"
            n_turns = spec.min_turns + rng.integers(spec.max_turns - spec.min_turns + 1)
            ambiguous = rng.uniform() < spec.ambiguity_rate
            turns = []
            for i in range(n_turns):
                role = ROLES[(n_turns - 1 - i) % 2]
                is_input = i == n_turns - 1
                image = rng.uniform() < spec.image_rate
                if is_input and ambiguous:
                    turns.append(world.image(None, rng, role) if image else world.shared_text(rng, role))
                elif image:
                    turns.append(world.image(z, rng, role))
                else:
                    turns.append(world.text(z, spec.topic_token_rate, rng, role))
            if rng.uniform() < spec.response_image_rate:
                response = world.image(z, rng, "system")
            else:
                response = world.text(z, spec.topic_token_rate, rng, "system")
            dialogs.append(Dialog(f"z{z:02d}-{j:04d}", turns, response, z, split))
    order = rng.permutation(len(dialogs))
    return [dialogs[i] for i in order]


def generate_caption_pairs(spec: CorpusSpec, n: int, seed_key: str = "captions") -> list[tuple[Utterance, Utterance, int]]:
    """Single-round (text, image, topic) pairs for backbone pretraining.

    Captions are denser in topic tokens than dialog turns, which is the
    domain gap the dialog-side prompts have to close.
    """
    world = TopicWorld(spec)
    rng = Rng(spec.seed).spawn(seed_key)
    topics = rng.integers(spec.n_topics, n)
    return [
        (world.text(int(z), spec.caption_topic_rate, rng, "user"), world.image(int(z), rng, "user"), int(z))
        for z in topics
    ]


def split_of(corpus: Iterable[Dialog], split: str) -> list[Dialog]:
    return [d for d in corpus if d.split == split]


def sample_batches(
    corpus: Sequence[Dialog], batch_size: int, rng: Rng, epochs: int | None = 1
) -> Iterator[list[Dialog]]:
    """Type-homogeneous batches, each type sampled without replacement per epoch.

    Yields forever when ``epochs`` is None.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    groups: dict[RetrievalType, list[int]] = defaultdict(list)
    for i, d in enumerate(corpus):
        groups[d.retrieval_type].append(i)
    keys = sorted(groups, key=lambda rt: rt.key)
    epoch = 0
    while epochs is None or epoch < epochs:
        batches = []
        for rt in keys:
            idx = groups[rt]
            perm = rng.permutation(len(idx))
            for start in range(0, len(idx), batch_size):
                batches.append([corpus[idx[p]] for p in perm[start:start + batch_size]])
        if not batches:
            return
        for b in rng.permutation(len(batches)):
            yield batches[b]
        epoch += 1
