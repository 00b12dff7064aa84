"""Seeded k-means over embedding vectors: k-means++ initialization, Lloyd
iterations to an assignment fixpoint, deterministic tie-breaking."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .embedding import EmbeddingVector
from .errors import QapoolError

MAX_ITERATIONS = 300


class TooFewPoints(QapoolError):
    """Fewer vectors than requested clusters."""


@dataclass
class KMeansModel:
    k: int
    seed: int
    centroids: np.ndarray  # (k, d)
    assignments: dict[str, int]  # record id -> cluster index
    inertia: float
    inertia_history: list[float] = field(default_factory=list)

    def members(self, cluster: int) -> list[str]:
        """Record ids assigned to one cluster, in pool order."""
        return [rid for rid, c in self.assignments.items() if c == cluster]

    def to_json_dict(self) -> dict:
        return {
            "k": self.k,
            "seed": self.seed,
            "inertia": self.inertia,
            "inertia_history": self.inertia_history,
            "centroids": self.centroids.tolist(),
            "assignments": self.assignments,
        }

    def save(self, path, extra: dict | None = None) -> None:
        record = self.to_json_dict()
        if extra:
            record.update(extra)
        path = Path(path)
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_text(json.dumps(record, ensure_ascii=False, indent=1), encoding="utf-8")
        os.replace(tmp, path)

    @classmethod
    def load(cls, path) -> "KMeansModel":
        with open(path, encoding="utf-8") as fh:
            record = json.load(fh)
        return cls(
            k=record["k"],
            seed=record["seed"],
            centroids=np.asarray(record["centroids"], dtype=np.float64),
            assignments={str(k): int(v) for k, v in record["assignments"].items()},
            inertia=record["inertia"],
            inertia_history=list(record.get("inertia_history", [])),
        )


def _sq_distances(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    # (n, k) squared Euclidean distances; clip the tiny negatives that the
    # expanded form produces from rounding.
    d2 = (
        (points * points).sum(axis=1)[:, None]
        - 2.0 * points @ centroids.T
        + (centroids * centroids).sum(axis=1)[None, :]
    )
    return np.maximum(d2, 0.0)


def _kmeans_pp_init(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    chosen = np.empty((k, points.shape[1]), dtype=np.float64)
    first = int(rng.integers(n))
    chosen[0] = points[first]
    best_d2 = _sq_distances(points, chosen[:1])[:, 0]
    for j in range(1, k):
        total = float(best_d2.sum())
        if total == 0.0:
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=best_d2 / total))
        chosen[j] = points[idx]
        best_d2 = np.minimum(best_d2, _sq_distances(points, chosen[j : j + 1])[:, 0])
    return chosen


def fit_kmeans_matrix(ids: Sequence[str], points: np.ndarray, k: int, seed: int) -> KMeansModel:
    """k-means on a prebuilt (n, d) matrix; `ids` labels the rows.

    Deterministic in (points, k, seed): k-means++ draws only from the seeded
    generator, nearest-centroid ties resolve to the lowest cluster index, and
    an empty cluster is reseeded with the point currently farthest from its
    own centroid. Stops at an assignment fixpoint or MAX_ITERATIONS.
    """
    points = np.asarray(points, dtype=np.float64)
    n = points.shape[0]
    if k < 1:
        raise ValueError("k must be positive")
    if n < k:
        raise TooFewPoints(f"{n} vectors cannot form {k} clusters")
    if len(ids) != n:
        raise ValueError("ids and points disagree on length")

    rng = np.random.default_rng(seed)
    centroids = _kmeans_pp_init(points, k, rng)
    history: list[float] = []
    assign: np.ndarray | None = None

    for iteration in range(MAX_ITERATIONS + 1):
        d2 = _sq_distances(points, centroids)
        new_assign = d2.argmin(axis=1)  # argmin takes the lowest index on ties
        own = d2[np.arange(n), new_assign]
        history.append(float(own.sum()))
        converged = assign is not None and np.array_equal(new_assign, assign)
        assign = new_assign
        if converged or iteration == MAX_ITERATIONS:
            break  # centroids stay consistent with the recorded assignment

        for j in range(k):
            mask = assign == j
            if mask.any():
                centroids[j] = points[mask].mean(axis=0)
        empties = [j for j in range(k) if not (assign == j).any()]
        if empties:
            # moving the empty centroid onto a point changes no current
            # assignment, so recorded inertia stays monotone
            repair_d2 = own.copy()
            for j in empties:
                worst = int(repair_d2.argmax())
                centroids[j] = points[worst]
                repair_d2[worst] = -1.0

    assignments = {str(rid): int(c) for rid, c in zip(ids, assign)}
    return KMeansModel(
        k=k,
        seed=seed,
        centroids=centroids,
        assignments=assignments,
        inertia=history[-1],
        inertia_history=history,
    )


def fit_kmeans(vectors: Sequence[EmbeddingVector], k: int, seed: int) -> KMeansModel:
    """Cluster embedding vectors; see fit_kmeans_matrix for the contract."""
    ids = [v.source_id for v in vectors]
    points = np.stack([v.values for v in vectors]) if vectors else np.zeros((0, 0))
    return fit_kmeans_matrix(ids, points, k, seed)
