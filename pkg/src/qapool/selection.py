"""Demonstration selection over the embedded QA pool: Random, Retrieve,
ClusterCenter, and RetrieveInCluster."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .clustering import KMeansModel
from .embedding import EmbeddingIndex, EmbeddingVector
from .errors import QapoolError

STRATEGIES = ("Random", "Retrieve", "ClusterCenter", "RetrieveInCluster")
_QUERY_STRATEGIES = ("Retrieve", "RetrieveInCluster")
_CLUSTER_STRATEGIES = ("ClusterCenter", "RetrieveInCluster")


class PoolTooSmall(QapoolError):
    """Fewer pool records than requested demonstrations."""


@dataclass(frozen=True)
class SelectionConfig:
    strategy: str = "RetrieveInCluster"
    k: int = 10
    seed: int = 0  # Random only

    def validate(self) -> None:
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}; choose from {STRATEGIES}")
        if self.k < 1:
            raise ValueError("k must be positive")


@dataclass
class SelectionResult:
    demo_ids: list[str]
    similarity_scores: list[float] | None
    strategy: str


def _require_model(index: EmbeddingIndex, k: int) -> KMeansModel:
    model = index.kmeans
    if model is None:
        raise ValueError("selection strategy needs a fitted k-means model on the index")
    if model.k != k:
        raise ValueError(
            f"model has {model.k} clusters but {k} demonstrations were requested; "
            "cluster strategies couple the two counts"
        )
    return model


def _rank_then_reverse(pairs: list[tuple[str, float]]) -> tuple[list[str], list[float]]:
    # rank by (similarity desc, id asc), then flip so the most similar
    # demonstration sits last, adjacent to the test question
    ranked = sorted(pairs, key=lambda p: (-p[1], p[0]))
    ranked.reverse()
    return [rid for rid, _ in ranked], [score for _, score in ranked]


def select(
    query: EmbeddingVector | None,
    index: EmbeddingIndex,
    cfg: SelectionConfig,
) -> SelectionResult:
    """Pick cfg.k demonstration record ids from the pool.

    Random draws uniformly with the seed; Retrieve takes the global cosine
    top-k; ClusterCenter takes each cluster's record nearest its centroid;
    RetrieveInCluster takes each cluster's record most similar to the query.
    Query-dependent results are ordered by ascending similarity, the rest by
    ascending cluster index; all ties break toward the lower record id.
    """
    cfg.validate()
    if cfg.k > index.count:
        raise PoolTooSmall(f"pool has {index.count} records, need {cfg.k}")
    if cfg.strategy in _QUERY_STRATEGIES:
        if query is None:
            raise ValueError(f"{cfg.strategy} requires a query vector")
        if query.dimension != index.dimension:
            raise ValueError("query dimension does not match the index")

    if cfg.strategy == "Random":
        rng = np.random.default_rng(cfg.seed)
        picks = rng.choice(index.count, size=cfg.k, replace=False)
        return SelectionResult(
            demo_ids=[index.ids[int(i)] for i in picks],
            similarity_scores=None,
            strategy=cfg.strategy,
        )

    if cfg.strategy == "Retrieve":
        sims = index.matrix @ query.values
        pairs = list(zip(index.ids, (float(s) for s in sims)))
        pairs.sort(key=lambda p: (-p[1], p[0]))
        ids, scores = _rank_then_reverse(pairs[: cfg.k])
        return SelectionResult(demo_ids=ids, similarity_scores=scores, strategy=cfg.strategy)

    model = _require_model(index, cfg.k)
    position = {rid: i for i, rid in enumerate(index.ids)}

    if cfg.strategy == "ClusterCenter":
        ids: list[str] = []
        scores: list[float] = []
        for cluster in range(model.k):
            member_ids = model.members(cluster)
            rows = index.matrix[[position[m] for m in member_ids]]
            deltas = rows - model.centroids[cluster]
            d2 = (deltas * deltas).sum(axis=1)
            best_id, best_d2 = min(zip(member_ids, d2), key=lambda p: (p[1], p[0]))
            ids.append(best_id)
            scores.append(float(best_d2))  # centroid distance, not a cosine
        return SelectionResult(demo_ids=ids, similarity_scores=scores, strategy=cfg.strategy)

    # RetrieveInCluster
    per_cluster: list[tuple[str, float]] = []
    for cluster in range(model.k):
        member_ids = model.members(cluster)
        rows = index.matrix[[position[m] for m in member_ids]]
        sims = rows @ query.values
        best_id, best_sim = min(zip(member_ids, sims), key=lambda p: (-p[1], p[0]))
        per_cluster.append((best_id, float(best_sim)))
    ids, scores = _rank_then_reverse(per_cluster)
    return SelectionResult(demo_ids=ids, similarity_scores=scores, strategy="RetrieveInCluster")
