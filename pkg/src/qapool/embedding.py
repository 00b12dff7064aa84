"""Unit-vector text embeddings (HTTP provider or deterministic feature
hashing) plus the on-disk vector index for the QA pool."""

from __future__ import annotations

import hashlib
import json
import os
import re
import threading
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import requests

from .errors import AuthError, QapoolError, TransportError

KIND_HTTP = "http_embedding"
KIND_LOCAL_HASH = "local_hash"

_NORM_TOLERANCE = 1e-6
_WORD = re.compile(r"\w+")


class DimensionMismatch(QapoolError):
    """Two vectors (or a provider response) disagree on dimensionality."""


@dataclass(frozen=True)
class EmbeddingVector:
    values: np.ndarray  # float64, unit L2 norm
    source_id: str = "query"

    @property
    def dimension(self) -> int:
        return int(self.values.shape[0])


def unit_vector(values, source_id: str = "query") -> EmbeddingVector:
    """Normalize raw values to unit length; rejects the zero vector."""
    arr = np.asarray(values, dtype=np.float64).reshape(-1)
    norm = float(np.linalg.norm(arr))
    if norm == 0.0:
        raise ValueError(f"cannot normalize a zero vector (source {source_id!r})")
    return EmbeddingVector(values=arr / norm, source_id=source_id)


def cosine(a: EmbeddingVector, b: EmbeddingVector) -> float:
    """Dot product of unit vectors; in [-1, 1]."""
    if a.dimension != b.dimension:
        raise DimensionMismatch(f"dimensions differ: {a.dimension} vs {b.dimension}")
    return float(np.dot(a.values, b.values))


@dataclass(frozen=True)
class ProviderConfig:
    kind: str = KIND_LOCAL_HASH
    dimension: int = 256
    model_id: str = "local-hash-256"
    base_url: str | None = None
    api_key_env: str = "QAPOOL_API_KEY"
    request_timeout: float = 60.0

    def validate(self) -> None:
        if self.kind not in (KIND_HTTP, KIND_LOCAL_HASH):
            raise ValueError(f"unknown embedding provider kind {self.kind!r}")
        if self.kind == KIND_HTTP and not self.base_url:
            raise ValueError("http embedding provider requires base_url")
        if self.dimension < 1:
            raise ValueError("dimension must be positive")


def _hash_features(text: str, dimension: int) -> np.ndarray:
    # Signed feature hashing of lowercased word tokens; hashlib keeps it
    # stable across processes and platforms (builtin hash() is salted).
    tokens = _WORD.findall(text.lower()) or [text.strip()]
    vec = np.zeros(dimension, dtype=np.float64)
    for token in tokens:
        digest = hashlib.sha256(token.encode("utf-8")).digest()
        bucket = int.from_bytes(digest[:8], "little") % dimension
        sign = 1.0 if digest[8] & 1 else -1.0
        vec[bucket] += sign
    if not vec.any():  # opposing signs cancelled out
        digest = hashlib.sha256(text.encode("utf-8")).digest()
        vec[int.from_bytes(digest[:8], "little") % dimension] = 1.0
    return vec


class Embedder:
    """Embedding provider wrapper with an in-memory (text, model_id) cache."""

    def __init__(self, config: ProviderConfig, *, transport=None):
        config.validate()
        self.config = config
        self._transport = transport
        self._cache: dict[str, np.ndarray] = {}
        self._lock = threading.Lock()
        self.provider_calls = 0

    def embed(self, text: str, source_id: str = "query") -> EmbeddingVector:
        if not text:
            raise ValueError("cannot embed empty text")
        with self._lock:
            hit = self._cache.get(text)
        if hit is not None:
            return EmbeddingVector(values=hit, source_id=source_id)
        if self.config.kind == KIND_LOCAL_HASH:
            raw = _hash_features(text, self.config.dimension)
        else:
            raw = self._http_embed(text)
        if raw.shape[0] != self.config.dimension:
            raise DimensionMismatch(
                f"provider returned {raw.shape[0]} dims, expected {self.config.dimension}"
            )
        vector = unit_vector(raw, source_id)
        with self._lock:
            self._cache[text] = vector.values
            self.provider_calls += 1
        return vector

    def _http_embed(self, text: str) -> np.ndarray:
        api_key = os.environ.get(self.config.api_key_env)
        if not api_key:
            raise AuthError(f"environment variable {self.config.api_key_env} is not set")
        url = self.config.base_url.rstrip("/") + "/embeddings"
        payload = {"model": self.config.model_id, "input": text}
        headers = {"Authorization": f"Bearer {api_key}"}
        transport = self._transport
        try:
            if transport is not None:
                status, body = transport(url, payload, headers, self.config.request_timeout)
            else:
                resp = requests.post(url, json=payload, headers=headers, timeout=self.config.request_timeout)
                status, body = resp.status_code, resp.json()
        except (requests.RequestException, ValueError) as exc:
            raise TransportError(f"embedding request failed: {exc}") from exc
        if status in (401, 403):
            raise AuthError(f"embedding backend rejected credentials (HTTP {status})")
        if status != 200:
            raise TransportError(f"embedding backend returned HTTP {status}")
        try:
            values = body["data"][0]["embedding"]
        except (KeyError, IndexError, TypeError):
            raise TransportError("malformed embedding response body")
        return np.asarray(values, dtype=np.float64).reshape(-1)


_INDEX_FORMAT = "qapool-index-v1"


@dataclass
class EmbeddingIndex:
    """Unit vectors for every pool record, in a fixed id order."""

    model_id: str
    dimension: int
    ids: list[str]
    matrix: np.ndarray  # (n, dimension) float64, unit rows
    kmeans: "object | None" = field(default=None, repr=False)

    @property
    def count(self) -> int:
        return len(self.ids)

    def row(self, record_id: str) -> np.ndarray:
        return self.matrix[self.ids.index(record_id)]

    @classmethod
    def build(cls, embedder: Embedder, texts_by_id: list[tuple[str, str]]) -> "EmbeddingIndex":
        vectors = [embedder.embed(text, source_id=rid) for rid, text in texts_by_id]
        matrix = (
            np.stack([v.values for v in vectors])
            if vectors
            else np.zeros((0, embedder.config.dimension))
        )
        return cls(
            model_id=embedder.config.model_id,
            dimension=embedder.config.dimension,
            ids=[rid for rid, _ in texts_by_id],
            matrix=matrix,
        )

    def save(self, path) -> None:
        """Header line (JSON) then count*dimension float32 little-endian values."""
        header = {
            "format": _INDEX_FORMAT,
            "model_id": self.model_id,
            "dimension": self.dimension,
            "count": self.count,
            "dtype": "float32",
            "byte_order": "little",
            "ids": self.ids,
        }
        path = Path(path)
        tmp = path.with_name(path.name + ".tmp")
        with open(tmp, "wb") as fh:
            fh.write(json.dumps(header, ensure_ascii=False).encode("utf-8"))
            fh.write(b"\n")
            fh.write(np.ascontiguousarray(self.matrix, dtype="<f4").tobytes())
        os.replace(tmp, path)

    @classmethod
    def load(cls, path, expected_model_id: str | None = None) -> "EmbeddingIndex":
        with open(path, "rb") as fh:
            header_line = fh.readline()
            header = json.loads(header_line.decode("utf-8"))
            if header.get("format") != _INDEX_FORMAT:
                raise ValueError(f"{path}: not a {_INDEX_FORMAT} file")
            count, dim = header["count"], header["dimension"]
            blob = fh.read(count * dim * 4)
        if len(blob) != count * dim * 4:
            raise ValueError(f"{path}: truncated vector payload")
        if expected_model_id is not None and header["model_id"] != expected_model_id:
            raise ValueError(
                f"{path}: index built with model {header['model_id']!r}, "
                f"provider configured for {expected_model_id!r}"
            )
        matrix = np.frombuffer(blob, dtype="<f4").astype(np.float64).reshape(count, dim)
        # float32 round-trip nudges norms; restore exact unit length
        norms = np.linalg.norm(matrix, axis=1, keepdims=True)
        matrix = matrix / np.where(norms == 0.0, 1.0, norms)
        return cls(
            model_id=header["model_id"],
            dimension=dim,
            ids=[str(i) for i in header["ids"]],
            matrix=matrix,
        )
