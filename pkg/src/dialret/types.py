from __future__ import annotations

from enum import Enum
from typing import NamedTuple


class Modality(str, Enum):
    TEXT = "t"
    IMAGE = "v"

    @classmethod
    def parse(cls, tag: str) -> "Modality":
        try:
            return cls(tag)
        except ValueError:
            raise ValueError(f"unknown modality {tag!r}; expected 't' or 'v'") from None


class RetrievalType(NamedTuple):
    """(modality of the current input, modality of the candidate response)."""

    input_modality: Modality
    response_modality: Modality

    @property
    def key(self) -> str:
        return self.input_modality.value + self.response_modality.value

    @classmethod
    def parse(cls, key: str) -> "RetrievalType":
        if len(key) != 2:
            raise ValueError(f"retrieval type key must be two characters, got {key!r}")
        return cls(Modality.parse(key[0]), Modality.parse(key[1]))

    def __str__(self) -> str:
        return f"({self.input_modality.value},{self.response_modality.value})"


ALL_RETRIEVAL_TYPES: tuple[RetrievalType, ...] = tuple(
    RetrievalType(i, r) for i in Modality for r in Modality
)
