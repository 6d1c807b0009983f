"""Text embeddings: a deterministic local feature-hashing embedder, a
remote embeddings-API client, and a file-backed cache.

The local embedder hashes word unigrams and bigrams into ``dimension``
signed buckets (blake2b keyed by the seed, bucket from the digest modulo
dimension, sign from the top digest bit) and L2-normalizes, so it is a pure
function of (text, dimension, seed) on every platform.

The remote client speaks the common embeddings JSON shape — POST
``{"model": ..., "input": [...]}`` returning ``{"data": [{"embedding":
[...]}, ...]}`` — with bearer auth from an environment variable, batching,
and exponential backoff with jitter on 429/5xx/timeouts.
"""

from __future__ import annotations

import hashlib
import os
import random
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np

from .errors import (AuthMissing, DimensionMismatch, IoFailure, ProviderError)
from .ingest import ColumnSchema

MISSING_TEXT = "<missing>"
DEFAULT_TEXT_COLUMNS = ("topic", "question", "class", "stratification",
                        "stratificationcategory1", "stratificationcategory2")
LOCAL_PROVIDER_ID = "local"
REMOTE_PROVIDER_ID = "remote"


@dataclass(frozen=True)
class EmbeddingVector:
    values: np.ndarray
    provider_id: str
    model_id: str


@dataclass(frozen=True)
class ProviderConfig:
    kind: str = "local"                 # local | remote
    endpoint: str = ""
    model_id: str = ""
    dimension: int = 256                # local embedder width
    seed: int = 42                      # local hashing seed
    batch_size: int = 16
    max_retries: int = 3
    timeout: float = 30.0
    api_key_env: str = "DMV_EMBED_API_KEY"
    max_concurrency: int = 1

    def __post_init__(self):
        if self.kind not in ("local", "remote"):
            raise ValueError(f"unknown provider kind {self.kind!r}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.kind == "local" and self.dimension < 8:
            raise ValueError("local embedding dimension must be >= 8")
        if self.kind == "remote" and not self.endpoint:
            raise ValueError("remote provider needs an endpoint")

    @property
    def provider_id(self) -> str:
        return LOCAL_PROVIDER_ID if self.kind == "local" else REMOTE_PROVIDER_ID

    @property
    def effective_model_id(self) -> str:
        if self.kind == "local":
            return self.model_id or f"feathash-d{self.dimension}-s{self.seed}"
        return self.model_id


def build_text(record: Mapping[str, Optional[str]],
               text_columns: Sequence[str]) -> str:
    """Canonical `name: value` serialization joined by " | "; missing cells
    render as `name: <missing>`. Callers pass columns in schema order."""
    parts = []
    for name in text_columns:
        value = record.get(name)
        parts.append(f"{name}: {MISSING_TEXT if value is None else value}")
    return " | ".join(parts)


def default_text_columns(schema: ColumnSchema) -> tuple[str, ...]:
    """The shipped default text columns present in the schema, schema order."""
    wanted = set(DEFAULT_TEXT_COLUMNS)
    return tuple(n for n in schema.names if n in wanted)


def embed_local(text: str, dimension: int = 256, seed: int = 42) -> EmbeddingVector:
    """Signed feature hashing of word unigrams+bigrams, L2-normalized.
    Empty text yields the zero vector."""
    if dimension < 8:
        raise ValueError("dimension must be >= 8")
    vec = np.zeros(dimension, dtype=np.float64)
    tokens = text.lower().split()
    grams = list(tokens)
    grams.extend(f"{a} {b}" for a, b in zip(tokens, tokens[1:]))
    key = (seed & (2 ** 64 - 1)).to_bytes(8, "little")
    for gram in grams:
        digest = hashlib.blake2b(gram.encode("utf-8"), key=key,
                                 digest_size=8).digest()
        raw = int.from_bytes(digest, "little")
        bucket = raw % dimension
        vec[bucket] += 1.0 if (raw >> 63) == 0 else -1.0
    norm = float(np.linalg.norm(vec))
    if norm > 0.0:
        vec /= norm
    return EmbeddingVector(values=vec, provider_id=LOCAL_PROVIDER_ID,
                           model_id=f"feathash-d{dimension}-s{seed}")


# --- cache --------------------------------------------------------------------

def cache_key(provider_id: str, model_id: str, text: str) -> str:
    return hashlib.sha256(f"{provider_id}|{model_id}|{text}".encode("utf-8")).hexdigest()


class EmbeddingCache:
    """Append-only line cache: `<sha256> TAB <D> TAB <floats>`. Floats are
    written with round-trip repr, so get-after-put is bit-identical across
    process restarts."""

    def __init__(self, path):
        self.path = path
        self._entries: dict[str, np.ndarray] = {}
        self._lock = threading.Lock()
        self._load()

    def _load(self) -> None:
        if not os.path.exists(self.path):
            return
        try:
            with open(self.path, "r", encoding="utf-8") as fh:
                for line in fh:
                    line = line.rstrip("\n")
                    if not line:
                        continue
                    key, dim_s, floats = line.split("\t")
                    vec = np.array([float(v) for v in floats.split(" ")],
                                   dtype=np.float64)
                    if vec.size != int(dim_s):
                        raise IoFailure(
                            f"cache line for {key} declares {dim_s} dims, "
                            f"has {vec.size}")
                    self._entries[key] = vec
        except OSError as exc:
            raise IoFailure(f"cannot read cache {self.path}: {exc}") from exc

    def __len__(self) -> int:
        return len(self._entries)

    def get(self, key: str) -> Optional[np.ndarray]:
        return self._entries.get(key)

    def put(self, key: str, values: np.ndarray) -> None:
        with self._lock:
            if key in self._entries:
                return
            vec = np.asarray(values, dtype=np.float64)
            line = "{}\t{}\t{}\n".format(
                key, vec.size, " ".join(repr(float(v)) for v in vec))
            try:
                with open(self.path, "a", encoding="utf-8") as fh:
                    fh.write(line)
            except OSError as exc:
                raise IoFailure(f"cannot append to cache {self.path}: {exc}") from exc
            self._entries[key] = vec


# --- remote client --------------------------------------------------------------

_RETRYABLE_STATUS = {429, 500, 502, 503, 504}


def _post_batch(endpoint: str, model_id: str, batch: list[str], api_key: str,
                timeout: float, max_retries: int, backoff_base: float) -> list[list[float]]:
    import requests

    headers = {"Authorization": f"Bearer {api_key}",
               "Content-Type": "application/json"}
    payload = {"model": model_id, "input": batch}
    attempt = 0
    while True:
        status, body = None, ""
        try:
            resp = requests.post(endpoint, json=payload, headers=headers,
                                 timeout=timeout)
            status = resp.status_code
            body = resp.text
            if status == 200:
                data = resp.json()["data"]
                if len(data) != len(batch):
                    raise DimensionMismatch(
                        f"{len(data)} embeddings returned for {len(batch)} inputs")
                return [item["embedding"] for item in data]
            if status not in _RETRYABLE_STATUS:
                raise ProviderError(status, body)
        except (requests.Timeout, requests.ConnectionError) as exc:
            status, body = 599, str(exc)
        if attempt >= max_retries:
            raise ProviderError(status if status is not None else 0, body)
        time.sleep(backoff_base * (2 ** attempt) * (1.0 + 0.1 * random.random()))
        attempt += 1


def embed_remote(texts: Sequence[str], config: ProviderConfig,
                 cache: EmbeddingCache, backoff_base: float = 1.0) -> list[EmbeddingVector]:
    """Embed texts through the remote API, cache-first. Output order and
    length match the input; misses are sent in batches of batch_size."""
    api_key = os.environ.get(config.api_key_env)
    if not api_key:
        raise AuthMissing(config.api_key_env)
    provider_id = config.provider_id
    model_id = config.effective_model_id
    keys = [cache_key(provider_id, model_id, t) for t in texts]
    results: list[Optional[np.ndarray]] = [cache.get(k) for k in keys]

    miss_positions = [i for i, r in enumerate(results) if r is None]
    batches = [miss_positions[i:i + config.batch_size]
               for i in range(0, len(miss_positions), config.batch_size)]

    def fetch(batch_positions: list[int]) -> list[np.ndarray]:
        raw = _post_batch(config.endpoint, model_id,
                          [texts[i] for i in batch_positions], api_key,
                          config.timeout, config.max_retries, backoff_base)
        return [np.asarray(v, dtype=np.float64) for v in raw]

    if config.max_concurrency > 1 and len(batches) > 1:
        with ThreadPoolExecutor(max_workers=config.max_concurrency) as pool:
            fetched = list(pool.map(fetch, batches))
    else:
        fetched = [fetch(b) for b in batches]

    for positions, vectors in zip(batches, fetched):
        for pos, vec in zip(positions, vectors):
            results[pos] = vec
            cache.put(keys[pos], vec)

    dims = {r.size for r in results if r is not None}
    if len(dims) > 1:
        raise DimensionMismatch(f"provider returned mixed dimensions {sorted(dims)}")
    return [EmbeddingVector(values=r, provider_id=provider_id, model_id=model_id)
            for r in results]


def embed_texts(texts: Sequence[str], config: ProviderConfig,
                cache: Optional[EmbeddingCache] = None,
                backoff_base: float = 1.0) -> np.ndarray:
    """Embedding matrix (n, D) for the given texts under either provider."""
    if config.kind == "remote":
        if cache is None:
            raise ValueError("remote embedding requires a cache")
        vectors = embed_remote(texts, config, cache, backoff_base=backoff_base)
        return np.vstack([v.values for v in vectors]) if vectors else \
            np.zeros((0, 0), dtype=np.float64)
    provider_id, model_id = LOCAL_PROVIDER_ID, config.effective_model_id
    out = np.zeros((len(texts), config.dimension), dtype=np.float64)
    for i, text in enumerate(texts):
        key = cache_key(provider_id, model_id, text) if cache is not None else None
        if cache is not None:
            hit = cache.get(key)
            if hit is not None:
                out[i] = hit
                continue
        vec = embed_local(text, config.dimension, config.seed).values
        out[i] = vec
        if cache is not None:
            cache.put(key, vec)
    return out
