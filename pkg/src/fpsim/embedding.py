"""Text embeddings, a cosine-similarity post store and agent affinity.

``HashingEmbedder`` is the deterministic offline provider: lowercase
whitespace tokens are hashed into ``dim`` buckets, counted and L2-normalised.
``RemoteEmbedder`` talks to any HTTP service accepting ``{"input": [...]}``
and answering ``{"data": [{"embedding": [...]}, ...]}``.
"""
from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass
from typing import Iterable, Protocol, Sequence

import httpx
import numpy as np

DEFAULT_DIM = 256
DUPLICATE_THRESHOLD = 0.99


class EmbeddingError(ValueError):
    pass


class Embedder(Protocol):
    dim: int

    def embed(self, text: str) -> np.ndarray: ...


def _normalize(vec: np.ndarray) -> np.ndarray:
    norm = float(np.linalg.norm(vec))
    if norm == 0.0:
        raise EmbeddingError("cannot normalise a zero vector")
    return vec / norm


def tokenize(text: str) -> list[str]:
    return text.lower().split()


def token_bucket(token: str, dim: int) -> int:
    digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little") % dim


class HashingEmbedder:
    """Bag-of-hashed-tokens embedder. Pure function of the exact text."""

    name = "hashing"

    def __init__(self, dim: int = DEFAULT_DIM):
        if dim < 1:
            raise EmbeddingError("dimension must be positive")
        self.dim = dim
        self._cache: dict[str, np.ndarray] = {}

    def embed(self, text: str) -> np.ndarray:
        cached = self._cache.get(text)
        if cached is not None:
            return cached
        tokens = tokenize(text)
        if not tokens:
            raise EmbeddingError("cannot embed empty text")
        vec = np.zeros(self.dim)
        for tok in tokens:
            vec[token_bucket(tok, self.dim)] += 1.0
        vec = _normalize(vec)
        vec.setflags(write=False)
        self._cache[text] = vec
        return vec


class RemoteEmbedder:
    """Embeddings fetched from an HTTP endpoint (``EMBED_ENDPOINT`` by default)."""

    name = "remote"

    def __init__(self, endpoint: str | None = None, dim: int | None = None,
                 timeout: float = 30.0, client: httpx.Client | None = None):
        self.endpoint = endpoint or os.environ.get("EMBED_ENDPOINT", "")
        if not self.endpoint:
            raise EmbeddingError("no embedding endpoint configured (set EMBED_ENDPOINT)")
        self.dim = dim
        self._client = client or httpx.Client(timeout=timeout)
        self._cache: dict[str, np.ndarray] = {}

    def embed_many(self, texts: Sequence[str]) -> list[np.ndarray]:
        missing = [t for t in dict.fromkeys(texts) if t not in self._cache]
        if any(not t.strip() for t in missing):
            raise EmbeddingError("cannot embed empty text")
        if missing:
            resp = self._client.post(self.endpoint, json={"input": missing})
            resp.raise_for_status()
            data = resp.json()["data"]
            if len(data) != len(missing):
                raise EmbeddingError(f"asked for {len(missing)} embeddings, got {len(data)}")
            for text, row in zip(missing, data):
                vec = _normalize(np.asarray(row["embedding"], dtype=float))
                if self.dim is None:
                    self.dim = vec.shape[0]
                elif vec.shape[0] != self.dim:
                    raise EmbeddingError(f"dimension changed from {self.dim} to {vec.shape[0]}")
                vec.setflags(write=False)
                self._cache[text] = vec
        return [self._cache[t] for t in texts]

    def embed(self, text: str) -> np.ndarray:
        return self.embed_many([text])[0]


def cosine(u: np.ndarray, v: np.ndarray) -> float:
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if u.shape != v.shape:
        raise EmbeddingError(f"dimension mismatch: {u.shape} vs {v.shape}")
    nu, nv = float(np.linalg.norm(u)), float(np.linalg.norm(v))
    if nu == 0.0 or nv == 0.0:
        raise EmbeddingError("cosine undefined for a zero vector")
    return float(np.clip(np.dot(u, v) / (nu * nv), -1.0, 1.0))


@dataclass(frozen=True)
class StoreEntry:
    post: int
    author: int
    iteration: int
    original: bool


class VectorStore:
    """Linear-scan store of unit vectors keyed by post id, in insertion order."""

    def __init__(self, dim: int):
        self.dim = dim
        self._entries: list[StoreEntry] = []
        self._vectors: list[np.ndarray] = []
        self._index: dict[int, int] = {}
        self._matrix: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, post: int) -> bool:
        return post in self._index

    def add(self, post: int, vector: np.ndarray, author: int, iteration: int,
            original: bool = True) -> None:
        if post in self._index:
            raise EmbeddingError(f"post {post} already stored")
        vector = np.asarray(vector, dtype=float)
        if vector.shape != (self.dim,):
            raise EmbeddingError(f"expected dimension {self.dim}, got {vector.shape}")
        self._index[post] = len(self._entries)
        self._entries.append(StoreEntry(post, author, iteration, original))
        self._vectors.append(vector)
        self._matrix = None

    def vector(self, post: int) -> np.ndarray:
        return self._vectors[self._index[post]]

    def entries(self) -> list[StoreEntry]:
        return list(self._entries)

    def matrix(self) -> np.ndarray:
        if self._matrix is None:
            self._matrix = (np.vstack(self._vectors) if self._vectors
                            else np.zeros((0, self.dim)))
        return self._matrix

    def posts_by(self, author: int) -> list[int]:
        return [e.post for e in self._entries if e.author == author]

    def copy(self) -> VectorStore:
        other = VectorStore(self.dim)
        other._entries = list(self._entries)
        other._vectors = list(self._vectors)
        other._index = dict(self._index)
        return other


def top_k_similar(store: VectorStore, query: np.ndarray, k: int,
                  exclude_author: int | None = None) -> list[int]:
    """Post ids ranked by cosine to ``query`` (descending); ties go to the
    newer iteration, then the lower post id."""
    if k < 1:
        raise EmbeddingError("k must be at least 1")
    if len(store) == 0:
        return []
    entries = store.entries()
    sims = store.matrix() @ np.asarray(query, dtype=float)
    keep = [i for i, e in enumerate(entries) if e.author != exclude_author]
    ranked = sorted(keep, key=lambda i: (-sims[i], -entries[i].iteration, entries[i].post))
    return [entries[i].post for i in ranked[:k]]


def agent_affinity(store: VectorStore, a: int, b: int,
                   persona_fallback: dict[int, np.ndarray] | Sequence[np.ndarray]) -> float:
    """Mean cosine over every (post of a, post of b) pair.

    An agent without posts is represented by its persona embedding alone.
    """
    if a > b:
        a, b = b, a

    def vecs(agent: int) -> list[np.ndarray]:
        posts = store.posts_by(agent)
        if not posts:
            return [persona_fallback[agent]]
        return [store.vector(p) for p in posts]

    left, right = vecs(a), vecs(b)
    total = sum(float(np.dot(u, v)) for u in left for v in right)
    return total / (len(left) * len(right))


def mean_post_vectors(store: VectorStore, persona_vectors: np.ndarray) -> np.ndarray:
    """Per-agent mean of post embeddings; persona embedding for postless agents."""
    n = persona_vectors.shape[0]
    sums = np.zeros_like(persona_vectors)
    counts = np.zeros(n)
    entries = store.entries()
    if entries:
        authors = np.fromiter((e.author for e in entries), dtype=np.int64, count=len(entries))
        np.add.at(sums, authors, store.matrix())
        counts = np.bincount(authors, minlength=n).astype(float)
    means = persona_vectors.copy()
    has = counts > 0
    means[has] = sums[has] / counts[has, None]
    return means


def affinity_matrix(store: VectorStore, persona_vectors: np.ndarray) -> np.ndarray:
    """All-pairs ``agent_affinity`` at once.

    For unit vectors the mean pairwise dot product equals the dot product of
    the two mean vectors, so one Gram matrix suffices. The result is made
    exactly symmetric.
    """
    means = mean_post_vectors(store, persona_vectors)
    gram = means @ means.T
    upper = np.triu(gram)
    return upper + np.triu(gram, 1).T


def is_near_duplicate(store: VectorStore, candidate: np.ndarray,
                      threshold: float = DUPLICATE_THRESHOLD) -> bool:
    """True iff some stored original post has cosine strictly above ``threshold``."""
    originals = [i for i, e in enumerate(store.entries()) if e.original]
    if not originals:
        return False
    sims = store.matrix()[originals] @ np.asarray(candidate, dtype=float)
    return bool(np.max(sims) > threshold)


def embed_all(embedder: Embedder, texts: Iterable[str]) -> np.ndarray:
    texts = list(texts)
    if hasattr(embedder, "embed_many"):
        return np.vstack(embedder.embed_many(texts))
    return np.vstack([embedder.embed(t) for t in texts])
