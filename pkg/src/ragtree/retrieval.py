"""Knowledge retrieval: embeddings over an HTTP endpoint, a disk cache, and
an exact cosine top-R index.

The index is a brute-force scan. Knowledge bases here are a few hundred to a
few thousand items, so exactness beats approximate structures.
"""

from __future__ import annotations

import hashlib
import json
import os
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol, Sequence

import httpx
import numpy as np

from .bench import KnowledgeBase, KnowledgeItem


class RetrievalError(RuntimeError):
    pass


class EmbeddingDimensionError(RetrievalError):
    """Vectors of inconsistent dimension reached one index. Not retryable."""


def cosine(a: Sequence[float] | np.ndarray, b: Sequence[float] | np.ndarray) -> float:
    """Cosine similarity of two equal-dimension, non-zero vectors."""
    av = np.asarray(a, dtype=np.float64)
    bv = np.asarray(b, dtype=np.float64)
    if av.shape != bv.shape or av.ndim != 1:
        raise EmbeddingDimensionError(f"dimension mismatch: {av.shape} vs {bv.shape}")
    if not (np.isfinite(av).all() and np.isfinite(bv).all()):
        raise RetrievalError("vectors must be finite")
    norm_a = float(np.linalg.norm(av))
    norm_b = float(np.linalg.norm(bv))
    if norm_a == 0.0 or norm_b == 0.0:
        raise RetrievalError("cosine undefined for the zero vector")
    return float(np.dot(av, bv) / (norm_a * norm_b))


class Embedder(Protocol):
    model_name: str

    def embed_texts(self, texts: list[str]) -> list[np.ndarray]: ...


@dataclass
class EmbeddingConfig:
    base_url: str = "http://localhost:8001/v1"
    model: str = "embedding-model"
    api_key_env: str = "RAGTREE_EMBED_API_KEY"
    batch_size: int = 64
    timeout_s: float = 60.0
    max_retries: int = 2
    backoff_s: float = 0.5

    def __post_init__(self) -> None:
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.timeout_s <= 0:
            raise ValueError("timeout_s must be > 0")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")


class HttpEmbedder:
    """Client for an OpenAI-style embeddings endpoint.

    POST {base_url}/embeddings with {"model": ..., "input": [texts]} and
    expects {"data": [{"embedding": [...]}, ...]} in input order. Batches are
    issued sequentially; transient HTTP failures are retried with backoff.
    """

    def __init__(self, config: EmbeddingConfig, transport: httpx.BaseTransport | None = None):
        self.config = config
        self.model_name = config.model
        headers = {}
        api_key = os.environ.get(config.api_key_env, "")
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        self._client = httpx.Client(
            base_url=config.base_url,
            headers=headers,
            timeout=config.timeout_s,
            transport=transport,
        )
        self.request_count = 0

    def embed_texts(self, texts: list[str]) -> list[np.ndarray]:
        if not texts:
            raise ValueError("texts must be non-empty")
        vectors: list[np.ndarray] = []
        for start in range(0, len(texts), self.config.batch_size):
            batch = texts[start : start + self.config.batch_size]
            payload = self._post_batch(batch)
            for row in payload:
                vectors.append(np.asarray(row, dtype=np.float64))
        _check_dimensions(vectors)
        return vectors

    def _post_batch(self, batch: list[str]) -> list[list[float]]:
        attempts = 1 + self.config.max_retries
        last_error: Exception | None = None
        for attempt in range(attempts):
            try:
                self.request_count += 1
                response = self._client.post(
                    "/embeddings", json={"model": self.config.model, "input": batch}
                )
                response.raise_for_status()
                data = response.json()["data"]
                return [entry["embedding"] for entry in data]
            except (httpx.TransportError, httpx.HTTPStatusError) as exc:
                last_error = exc
                if attempt + 1 < attempts:
                    time.sleep(self.config.backoff_s * (2**attempt))
        raise RetrievalError(f"embedding endpoint failed after {attempts} attempts: {last_error}")


class CachingEmbedder:
    """Disk cache in front of any embedder, keyed by (model name, text hash).

    Re-runs over the same knowledge base must not re-bill the endpoint.
    Cache writes are serialized; reads are lock-free.
    """

    def __init__(self, inner: Embedder, cache_dir: str | Path):
        self.inner = inner
        self.model_name = inner.model_name
        safe_model = "".join(c if c.isalnum() or c in "-_." else "_" for c in inner.model_name)
        self.cache_dir = Path(cache_dir) / safe_model
        self.cache_dir.mkdir(parents=True, exist_ok=True)
        self._write_lock = threading.Lock()

    def _path_for(self, text: str) -> Path:
        digest = hashlib.sha256(text.encode("utf-8")).hexdigest()
        return self.cache_dir / f"{digest}.json"

    def embed_texts(self, texts: list[str]) -> list[np.ndarray]:
        if not texts:
            raise ValueError("texts must be non-empty")
        vectors: list[np.ndarray | None] = [None] * len(texts)
        missing: list[int] = []
        for i, text in enumerate(texts):
            path = self._path_for(text)
            if path.exists():
                vectors[i] = np.asarray(json.loads(path.read_text(encoding="utf-8")), dtype=np.float64)
            else:
                missing.append(i)
        if missing:
            fresh = self.inner.embed_texts([texts[i] for i in missing])
            with self._write_lock:
                for i, vec in zip(missing, fresh):
                    vectors[i] = vec
                    self._path_for(texts[i]).write_text(
                        json.dumps([float(x) for x in vec]), encoding="utf-8"
                    )
        out = [v for v in vectors if v is not None]
        _check_dimensions(out)
        return out


def _check_dimensions(vectors: list[np.ndarray]) -> None:
    if not vectors:
        return
    dim = vectors[0].shape
    for i, vec in enumerate(vectors):
        if vec.ndim != 1 or vec.shape != dim:
            raise EmbeddingDimensionError(
                f"vector {i} has dimension {vec.shape}, expected {dim}"
            )
        if not np.isfinite(vec).all():
            raise RetrievalError(f"vector {i} contains non-finite entries")


@dataclass
class RetrievalResult:
    item: KnowledgeItem
    score: float


@dataclass
class VectorIndex:
    """Immutable exact-scan index over one knowledge base.

    Scores are cosine similarities; results are sorted by score descending
    with ties broken by item id ascending, so retrieval is deterministic for
    fixed embeddings.
    """

    items: list[KnowledgeItem]
    matrix: np.ndarray  # shape (len(items), dim)
    embedder: Embedder
    _norms: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if len(self.items) != self.matrix.shape[0]:
            raise RetrievalError("items and matrix row count differ")
        if len(self.items) and (self.matrix == 0).all(axis=1).any():
            raise RetrievalError("index contains a zero vector")
        self._norms = np.linalg.norm(self.matrix, axis=1) if len(self.items) else np.empty(0)

    @classmethod
    def build(cls, kb: KnowledgeBase, embedder: Embedder) -> "VectorIndex":
        if not kb.items:
            return cls(items=[], matrix=np.empty((0, 0)), embedder=embedder)
        vectors = embedder.embed_texts([item.text for item in kb.items])
        return cls(items=list(kb.items), matrix=np.stack(vectors), embedder=embedder)

    def __len__(self) -> int:
        return len(self.items)

    def retrieve(self, query: str, r: int) -> list[RetrievalResult]:
        """Top-r items by cosine similarity to the embedded query.

        An empty index returns an empty list; fewer than r results only when
        the index is smaller than r.
        """
        if r < 1:
            raise ValueError("r must be >= 1")
        if not self.items:
            return []
        qvec = self.embedder.embed_texts([query])[0]
        if qvec.shape[0] != self.matrix.shape[1]:
            raise EmbeddingDimensionError(
                f"query dimension {qvec.shape[0]} != index dimension {self.matrix.shape[1]}"
            )
        qnorm = float(np.linalg.norm(qvec))
        if qnorm == 0.0:
            raise RetrievalError("query embedded to the zero vector")
        scores = (self.matrix @ qvec) / (self._norms * qnorm)
        order = sorted(range(len(self.items)), key=lambda i: (-scores[i], self.items[i].id))
        return [RetrievalResult(item=self.items[i], score=float(scores[i])) for i in order[:r]]


def save_index(index: VectorIndex, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savez(
        path,
        ids=np.array([item.id for item in index.items]),
        vectors=index.matrix,
        model=np.array(index.embedder.model_name),
    )


def load_index(path: str | Path, kb: KnowledgeBase, embedder: Embedder) -> VectorIndex:
    """Rebuild an index from a saved vector file and its knowledge base.

    The file stores vectors by item id; every id must resolve to a KB item.
    """
    data = np.load(Path(path), allow_pickle=False)
    by_id = {item.id: item for item in kb.items}
    items = []
    for item_id in data["ids"]:
        item = by_id.get(str(item_id))
        if item is None:
            raise RetrievalError(f"index references unknown knowledge item '{item_id}'")
        items.append(item)
    return VectorIndex(items=items, matrix=np.asarray(data["vectors"], dtype=np.float64), embedder=embedder)
