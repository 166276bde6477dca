"""Hard-routed projection experts, one per retrieval type."""

from __future__ import annotations

import numpy as np

from .module import Module
from .numerics import Rng, ShapeError, Tensor, linear
from .types import ALL_RETRIEVAL_TYPES, Modality, RetrievalType

__all__ = ["Modality", "RetrievalType", "ALL_RETRIEVAL_TYPES", "ProjectionExpert", "MixtureOfProjection"]


class ProjectionExpert(Module):
    """An affine map for the query side and a linear map for the candidate side.

    A candidate-side bias would add the same ``q . b`` to every score of a
    query, which changes neither the loss nor any ranking, so there is none.
    """

    def __init__(self, d_model: int, dim: int, rng: Rng):
        # outputs start with per-coordinate variance 1/dim, so initial scores
        # are O(dim^-1/2) and the in-batch loss starts near ln(batch)
        scale = (d_model * dim) ** -0.5
        self.query_proj = self.param(rng.normal((d_model, dim), scale=scale), "query_proj")
        self.query_bias = self.param(np.zeros(dim), "query_bias")
        self.cand_proj = self.param(rng.normal((d_model, dim), scale=scale), "cand_proj")

    @property
    def d_model(self) -> int:
        return self.query_proj.shape[0]

    def _check(self, x: Tensor) -> None:
        if x.shape[-1] != self.d_model:
            raise ShapeError(f"projection expects width {self.d_model}, got shape {x.shape}")

    def query(self, x: Tensor) -> Tensor:
        self._check(x)
        return linear(x, self.query_proj, self.query_bias)

    def candidate(self, y: Tensor) -> Tensor:
        self._check(y)
        return linear(y, self.cand_proj)


class MixtureOfProjection(Module):
    """Four experts keyed by retrieval type, or a single shared one when ``shared``."""

    def __init__(self, d_model: int, dim: int, rng: Rng, shared: bool = False):
        self.shared = shared
        self.dim = dim
        n = 1 if shared else len(ALL_RETRIEVAL_TYPES)
        self.experts = [ProjectionExpert(d_model, dim, rng.spawn(f"expert{i}")) for i in range(n)]

    def expert_index(self, rt: RetrievalType) -> int:
        rt = RetrievalType(Modality(rt[0]), Modality(rt[1]))
        return 0 if self.shared else ALL_RETRIEVAL_TYPES.index(rt)

    def select_expert(self, rt: RetrievalType) -> ProjectionExpert:
        return self.experts[self.expert_index(rt)]

    def expert_parameters(self, rt: RetrievalType) -> dict[str, Tensor]:
        i = self.expert_index(rt)
        return dict(self.experts[i].named_parameters(f"experts.{i}."))

    def project_query(self, x: Tensor, rt: RetrievalType) -> Tensor:
        return self.select_expert(rt).query(x)

    def project_candidate(self, y: Tensor, rt: RetrievalType) -> Tensor:
        return self.select_expert(rt).candidate(y)
