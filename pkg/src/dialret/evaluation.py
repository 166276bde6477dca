"""Recall@k over per-query candidate pools."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigError, InputError
from .numerics import ContractError, Rng, Tensor, no_grad
from .types import ALL_RETRIEVAL_TYPES, Modality, RetrievalType

KS = (1, 5, 10)


@dataclass
class ScoreMatrix:
    scores: np.ndarray
    positive_index: np.ndarray
    row_types: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        self.positive_index = np.asarray(self.positive_index, dtype=np.int64)
        if self.scores.ndim != 2 or len(self.positive_index) != self.scores.shape[0]:
            raise ContractError("score matrix needs one positive index per row")
        if len(self.positive_index) and (
            self.positive_index.min() < 0 or self.positive_index.max() >= self.scores.shape[1]
        ):
            raise ContractError("positive index out of range")
        if not np.all(np.isfinite(self.scores)):
            raise ContractError("score matrix has non-finite entries")

    @property
    def n_candidates(self) -> int:
        return self.scores.shape[1]

    def ranks(self) -> np.ndarray:
        """0-based rank of each row's positive; ties go to the lower candidate index."""
        rows = np.arange(len(self.positive_index))
        pos = self.scores[rows, self.positive_index][:, None]
        cols = np.arange(self.n_candidates)[None, :]
        ahead = (self.scores > pos) | ((self.scores == pos) & (cols < self.positive_index[:, None]))
        return ahead.sum(axis=1)

    def subset(self, rows) -> "ScoreMatrix":
        rows = np.asarray(rows, dtype=np.int64)
        types = [self.row_types[i] for i in rows] if self.row_types else []
        return ScoreMatrix(self.scores[rows], self.positive_index[rows], types)


def recall_at_k(m: ScoreMatrix, k: int) -> float:
    if k < 1:
        raise ContractError("k must be >= 1")
    if k > m.n_candidates:
        raise ContractError(f"k={k} exceeds the {m.n_candidates} candidates per row")
    if len(m.positive_index) == 0:
        return 0.0
    return float(np.mean(m.ranks() < k))


@dataclass
class RecallReport:
    r1: float
    r5: float
    r10: float
    n_queries: int
    per_type: dict[str, tuple[float, float, float, int]] = field(default_factory=dict)
    per_response: dict[str, tuple[float, float, float, int]] = field(default_factory=dict)

    @property
    def sum_metric(self) -> float:
        return 100.0 * (self.r1 + self.r5 + self.r10)

    @classmethod
    def from_scores(cls, m: ScoreMatrix) -> "RecallReport":
        r = [recall_at_k(m, k) for k in KS]
        report = cls(r[0], r[1], r[2], len(m.positive_index))
        if m.row_types:
            by_type = defaultdict(list)
            by_resp = defaultdict(list)
            for i, key in enumerate(m.row_types):
                by_type[key].append(i)
                by_resp["TR" if key[1] == Modality.TEXT.value else "IR"].append(i)
            for key, rows in sorted(by_type.items()):
                sub = m.subset(rows)
                report.per_type[key] = (*(recall_at_k(sub, k) for k in KS), len(rows))
            for key, rows in sorted(by_resp.items()):
                sub = m.subset(rows)
                report.per_response[key] = (*(recall_at_k(sub, k) for k in KS), len(rows))
        return report

    def as_record(self) -> dict:
        return {"r1": self.r1, "r5": self.r5, "r10": self.r10, "sum": self.sum_metric}

    def __str__(self) -> str:
        head = f"R@1 {100 * self.r1:.1f}  R@5 {100 * self.r5:.1f}  R@10 {100 * self.r10:.1f}  Sum {self.sum_metric:.1f}"
        parts = [
            f"{key}@1/5/10 {100 * a:.1f}/{100 * b:.1f}/{100 * c:.1f} (n={n})"
            for key, (a, b, c, n) in self.per_response.items()
        ]
        return head + (" | " + "; ".join(parts) if parts else "") + f" [{self.n_queries} queries]"


@dataclass
class Pools:
    """Per-query candidate lists (indices into ``dialogs``' responses) with the positive's slot."""

    candidates: np.ndarray
    positive_index: np.ndarray


def build_pools(dialogs: Sequence, pool_size: int, rng: Rng) -> Pools:
    """Positive plus ``pool_size - 1`` distractors of the same modality from other topics.

    If some query has fewer eligible distractors, every pool shrinks to the
    largest size all queries can fill so the score matrix stays rectangular.
    """
    if pool_size < max(KS):
        raise ConfigError(f"pool size must be >= {max(KS)}, got {pool_size}")
    by_modality: dict[Modality, np.ndarray] = {}
    for modality in Modality:
        by_modality[modality] = np.array(
            [i for i, d in enumerate(dialogs) if d.response.modality is modality], dtype=np.int64
        )
    topics = np.array([d.topic_id for d in dialogs])
    eligible = []
    for i, d in enumerate(dialogs):
        same = by_modality[d.response.modality]
        eligible.append(same[topics[same] != d.topic_id] if d.topic_id >= 0 else same[same != i])
    size = min(pool_size, 1 + min(len(e) for e in eligible))
    if size < max(KS):
        raise InputError(f"split too small for pools of {max(KS)} candidates")
    cands = np.empty((len(dialogs), size), dtype=np.int64)
    pos = np.empty(len(dialogs), dtype=np.int64)
    for i, pool in enumerate(eligible):
        chosen = pool[rng.choice(len(pool), size - 1)]
        slot = rng.integers(size)
        cands[i] = np.insert(chosen, slot, i)
        pos[i] = slot
    return Pools(cands, pos)


def score_pools(model, dialogs: Sequence, pools: Pools, use_context: bool = True, chunk: int = 64) -> ScoreMatrix:
    """Encode every query and response once and score each query against its pool."""
    n = len(dialogs)
    scores = np.empty(pools.candidates.shape)
    row_types = [d.retrieval_type.key for d in dialogs]
    with no_grad():
        backbone_resp: dict[int, np.ndarray] = {}
        for modality in Modality:
            idx = [i for i, d in enumerate(dialogs) if d.response.modality is modality]
            for start in range(0, len(idx), chunk):
                part = idx[start:start + chunk]
                enc = model.encode_responses([dialogs[i].response for i in part]).data
                for j, i in enumerate(part):
                    backbone_resp[i] = enc[j]
        by_type = defaultdict(list)
        for i, d in enumerate(dialogs):
            by_type[d.retrieval_type].append(i)
        for rt in ALL_RETRIEVAL_TYPES:
            rows = by_type.get(rt, [])
            if not rows:
                continue
            needed = np.unique(pools.candidates[rows])
            stacked = Tensor(np.stack([backbone_resp[int(c)] for c in needed]))
            cand = model.mop.project_candidate(stacked, rt).data
            lookup = {int(c): j for j, c in enumerate(needed)}
            for start in range(0, len(rows), chunk):
                part = rows[start:start + chunk]
                q = model.query_embeddings([dialogs[i] for i in part], use_context).data
                for j, i in enumerate(part):
                    cols = [lookup[int(c)] for c in pools.candidates[i]]
                    scores[i] = cand[cols] @ q[j]
    return ScoreMatrix(scores, pools.positive_index.copy(), row_types)


def evaluate(
    model, dialogs: Sequence, pool_size: int = 100, seed: int = 0, use_context: bool = True
) -> tuple[RecallReport, ScoreMatrix]:
    if not dialogs:
        raise InputError("cannot evaluate an empty split")
    pools = build_pools(dialogs, pool_size, Rng(seed).spawn("pools"))
    m = score_pools(model, dialogs, pools, use_context)
    return RecallReport.from_scores(m), m
