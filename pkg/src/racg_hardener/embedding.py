"""Text embedding, cosine similarity, and exact top-k retrieval.

Two embedder implementations share one duck-typed interface (``embed``,
``dimension``, ``identifier``): a deterministic hashing embedder for offline
runs and tests, and an HTTP client for a live embedding service. Retrieval is
an exact linear scan; corpora here are small enough that approximate indexes
would only complicate the oracle story.
"""

from __future__ import annotations

import math
import os
import re
from dataclasses import dataclass
from typing import Protocol, Sequence

import numpy as np

from .errors import TransportError

_TOKEN_RE = re.compile(r"[a-z0-9]+")

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF

# Documented fixed seeds: the defender-side reference embedder and the
# attacker-side stand-in must produce unrelated vector spaces.
DEFAULT_EMBED_SEED = 0x243F6A8885A308D3
ATTACKER_EMBED_SEED = 0x452821E638D01377

REFERENCE_DIMENSION = 256


class EmbeddingError(Exception):
    pass


def fnv1a64(data: bytes, seed: int = 0) -> int:
    """Seeded 64-bit FNV-1a. Stable across platforms and runs."""
    h = (_FNV_OFFSET ^ seed) & _MASK64
    for byte in data:
        h ^= byte
        h = (h * _FNV_PRIME) & _MASK64
    return h


class Embedder(Protocol):
    dimension: int
    identifier: str

    def embed(self, text: str) -> np.ndarray: ...


class ReferenceEmbedder:
    """Deterministic bag-of-hashed-tokens embedder.

    Lowercases, splits on non-alphanumerics, hashes each token into one of
    ``dimension`` buckets with seeded FNV-1a, and scales the count vector to
    unit Euclidean norm. Output is float64 and identical on every platform.
    """

    def __init__(self, dimension: int = REFERENCE_DIMENSION, seed: int = DEFAULT_EMBED_SEED):
        if dimension < 1:
            raise ValueError("dimension must be >= 1")
        self.dimension = dimension
        self.seed = seed
        self.identifier = f"ref{dimension}-{seed:016x}"

    def embed(self, text: str) -> np.ndarray:
        stripped = text.strip()
        if not stripped:
            raise EmbeddingError("cannot embed empty text")
        tokens = _TOKEN_RE.findall(stripped.lower())
        if not tokens:
            # Symbol-only text: hash the raw stripped text as a single token
            # so every non-empty input still gets a unit vector.
            tokens = [stripped.lower()]
        counts = np.zeros(self.dimension, dtype=np.float64)
        for token in tokens:
            counts[fnv1a64(token.encode("utf-8"), self.seed) % self.dimension] += 1.0
        return counts / np.linalg.norm(counts)


class HttpEmbedder:
    """Client for a JSON embedding endpoint: ``{model, input: [text]}`` in,
    ``{data: [{embedding: [...]}]}`` out.

    Endpoint and key come from RACG_EMBED_URL / RACG_EMBED_KEY unless given
    explicitly. Transport failures raise :class:`TransportError` after the
    retry budget is spent; client (4xx) errors are not retried.
    """

    def __init__(self, model: str, dimension: int, url: str | None = None,
                 api_key: str | None = None, max_attempts: int = 3, backoff_s: float = 1.0):
        self.model = model
        self.dimension = dimension
        self.identifier = f"http-{model}"
        self.url = url or os.environ.get("RACG_EMBED_URL", "")
        self.api_key = api_key if api_key is not None else os.environ.get("RACG_EMBED_KEY", "")
        self.max_attempts = max_attempts
        self.backoff_s = backoff_s
        if not self.url:
            raise EmbeddingError("no embedding endpoint configured (RACG_EMBED_URL)")

    def embed(self, text: str) -> np.ndarray:
        import time

        import requests

        if not text.strip():
            raise EmbeddingError("cannot embed empty text")
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        body = {"model": self.model, "input": [text]}
        last_error = None
        for attempt in range(1, self.max_attempts + 1):
            try:
                resp = requests.post(self.url, json=body, headers=headers, timeout=60)
            except requests.RequestException as exc:
                last_error = exc
            else:
                if 400 <= resp.status_code < 500:
                    raise EmbeddingError(f"embedding endpoint rejected request: {resp.status_code}")
                if resp.status_code == 200:
                    values = resp.json()["data"][0]["embedding"]
                    vec = np.asarray(values, dtype=np.float64)
                    if vec.shape != (self.dimension,):
                        raise EmbeddingError(
                            f"endpoint returned dimension {vec.shape[0]}, expected {self.dimension}")
                    return vec
                last_error = RuntimeError(f"status {resp.status_code}")
            if attempt < self.max_attempts:
                time.sleep(self.backoff_s * (2 ** (attempt - 1)))
        raise TransportError(f"embedding request failed: {last_error}", attempts=self.max_attempts)


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity in [-1, 1].

    Element-wise identical (or exactly opposite) inputs short-circuit to
    1.0 / -1.0 so identity comparisons are exact despite float rounding;
    everything else is dot/(|a||b|) clamped against rounding spill.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        raise ValueError("cosine undefined for zero vectors")
    if np.array_equal(a, b):
        return 1.0
    if np.array_equal(a, -b):
        return -1.0
    value = float(np.dot(a, b)) / (na * nb)
    return max(-1.0, min(1.0, value))


@dataclass(frozen=True)
class VectorIndex:
    """Immutable id->vector store quantized to float32 (the storage format).

    Quantizing at construction keeps in-memory values bit-identical to what a
    save/load round-trip yields. ``embedder_id`` records which embedder
    produced the vectors; retrieval paths refuse to mix embedders.
    """

    name: str
    dimension: int
    embedder_id: str
    ids: tuple[str, ...]
    matrix: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "ids", tuple(self.ids))
        mat = np.ascontiguousarray(np.asarray(self.matrix, dtype=np.float32))
        if mat.ndim != 2 or mat.shape != (len(self.ids), self.dimension):
            raise ValueError(
                f"matrix shape {mat.shape} inconsistent with {len(self.ids)} ids x dim {self.dimension}")
        if len(set(self.ids)) != len(self.ids):
            raise ValueError("item ids must be unique")
        if not np.isfinite(mat).all():
            raise ValueError("vectors must be finite")
        mat.setflags(write=False)
        object.__setattr__(self, "matrix", mat)

    def __len__(self) -> int:
        return len(self.ids)

    def vector(self, i: int) -> np.ndarray:
        return self.matrix[i].astype(np.float64)


def build_index(name: str, items: Sequence[tuple[str, np.ndarray]], embedder_id: str,
                dimension: int) -> VectorIndex:
    ids = [item_id for item_id, _ in items]
    if items:
        matrix = np.stack([np.asarray(v, dtype=np.float32) for _, v in items])
    else:
        matrix = np.zeros((0, dimension), dtype=np.float32)
    return VectorIndex(name=name, dimension=dimension, embedder_id=embedder_id,
                       ids=tuple(ids), matrix=matrix)


def top_k(query: np.ndarray, index: VectorIndex, k: int) -> list[tuple[str, float]]:
    """Exact top-min(k, |index|) items by cosine, scores included.

    Ties keep insertion order (earlier item first). The query is quantized to
    the index's float32 precision first so that an indexed text queried with
    its own embedding scores exactly 1.0.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if len(index) == 0:
        raise ValueError("index is empty")
    query = np.asarray(query, dtype=np.float64)
    if query.shape != (index.dimension,):
        raise ValueError(f"dimension mismatch: query {query.shape} vs index {index.dimension}")
    q = query.astype(np.float32).astype(np.float64)
    scores = np.empty(len(index), dtype=np.float64)
    for i in range(len(index)):
        scores[i] = cosine(q, index.vector(i))
    order = np.argsort(-scores, kind="stable")[: min(k, len(index))]
    return [(index.ids[int(i)], float(scores[int(i)])) for i in order]


def unit_norm_error(vec: np.ndarray) -> float:
    return abs(float(np.linalg.norm(np.asarray(vec, dtype=np.float64))) - 1.0)


def check_same_embedder(embedder: Embedder, index: VectorIndex) -> None:
    if embedder.identifier != index.embedder_id:
        raise ValueError(
            f"embedder {embedder.identifier!r} does not match index embedder {index.embedder_id!r}")


def estimate_tokens(text: str) -> int:
    """Cheap token-count proxy used for prompt budget enforcement."""
    return max(1, math.ceil(len(text) / 4))
