from __future__ import annotations

import hashlib
import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Protocol

import httpx
import numpy as np
from pydantic import BaseModel

from src.errors import (
    DimensionMismatch,
    EmptyTextError,
    IndexOutOfRange,
    MalformedResponseError,
)
from src.memory_store import Memory, SuccessLog
from src.providers import RetryPolicy, bearer_headers, call_with_retries, post_json

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class EmbeddingVector:
    """Unit-norm embedding (the zero vector is allowed for texts with no n-grams)."""

    values: np.ndarray

    @property
    def dimension(self) -> int:
        return int(self.values.shape[0])


class EmbeddingProvider(Protocol):
    name: str
    dimension: int

    def embed(self, text: str) -> EmbeddingVector: ...


def _normalized(values: np.ndarray) -> np.ndarray:
    norm = float(np.linalg.norm(values))
    if norm == 0.0:
        return values
    return values / norm


@dataclass
class HashedNgramEmbedder:
    """Character n-gram feature hashing into a fixed-size signed vector.

    Each lowercase word is padded as ``#word#`` and split into overlapping
    n-grams. Every n-gram hashes (keyed by ``seed``) to a bucket and a sign.
    """

    dimension: int = 256
    ngram: int = 3
    seed: int = 0
    name: str = field(init=False)

    def __post_init__(self) -> None:
        if self.dimension < 1 or self.ngram < 1:
            raise ValueError("dimension and ngram must be positive")
        self.name = f"hashed-{self.ngram}gram-{self.dimension}"
        self._key = self.seed.to_bytes(8, "little", signed=False)

    def ngrams(self, text: str) -> list[str]:
        grams: list[str] = []
        for word in text.lower().split():
            padded = f"#{word}#"
            if len(padded) <= self.ngram:
                grams.append(padded)
                continue
            grams.extend(
                padded[i : i + self.ngram] for i in range(len(padded) - self.ngram + 1)
            )
        return grams

    def _hash(self, gram: str) -> int:
        digest = hashlib.blake2b(gram.encode("utf-8"), digest_size=8, key=self._key)
        return int.from_bytes(digest.digest(), "little")

    def embed(self, text: str) -> EmbeddingVector:
        values = np.zeros(self.dimension, dtype=np.float64)
        for gram in self.ngrams(text):
            hashed = self._hash(gram)
            sign = -1.0 if hashed >> 63 else 1.0
            values[hashed % self.dimension] += sign
        return EmbeddingVector(values=_normalized(values))


class HttpEmbeddingProvider:
    """POSTs ``{"input", "model"}`` to ``endpoint`` and reads ``{"embedding": [...]}``.

    OpenAI-style ``{"data": [{"embedding": [...]}]}`` bodies are accepted too.
    """

    def __init__(
        self,
        *,
        endpoint: str,
        model: str,
        dimension: int,
        api_key: str | None = None,
        timeout_seconds: float = 30.0,
        policy: RetryPolicy | None = None,
        transport: httpx.BaseTransport | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ) -> None:
        self.name = f"http-embed:{model}"
        self.dimension = dimension
        self.url = endpoint
        self.model = model
        self.policy = policy or RetryPolicy()
        self._headers = bearer_headers(api_key)
        self._sleep = sleep
        self._client = httpx.Client(timeout=timeout_seconds, transport=transport)

    def _request_once(self, text: str) -> list[float]:
        data = post_json(
            self._client,
            self.url,
            {"model": self.model, "input": text},
            headers=self._headers,
        )
        try:
            embedding = data["embedding"] if "embedding" in data else data["data"][0]["embedding"]
        except (KeyError, IndexError, TypeError) as exc:
            raise MalformedResponseError("response has no embedding", cause=exc) from exc
        if not isinstance(embedding, list):
            raise MalformedResponseError("embedding is not a list of numbers")
        return embedding

    def embed(self, text: str) -> EmbeddingVector:
        raw, _ = call_with_retries(
            lambda: self._request_once(text),
            policy=self.policy,
            sleep=self._sleep,
            describe=f"embedding ({self.model})",
        )
        values = np.asarray(raw, dtype=np.float64)
        if values.ndim != 1 or values.shape[0] != self.dimension:
            raise DimensionMismatch(self.dimension, int(values.size))
        return EmbeddingVector(values=_normalized(values))


def embed(provider: EmbeddingProvider, text: str) -> EmbeddingVector:
    if not text.strip():
        raise EmptyTextError("cannot embed empty text")
    return provider.embed(text)


def cosine_similarity(a: EmbeddingVector, b: EmbeddingVector) -> float:
    if a.dimension != b.dimension:
        raise DimensionMismatch(a.dimension, b.dimension)
    denom = float(np.linalg.norm(a.values) * np.linalg.norm(b.values))
    if denom == 0.0:
        return 0.0
    score = float(np.dot(a.values, b.values) / denom)
    return min(1.0, max(-1.0, score))


class RankedEntry(BaseModel):
    memory_index: int
    score: float

    model_config = {"frozen": True}


class RetrievalRanking(BaseModel):
    """Memory indices ordered by descending similarity, ties by ascending index."""

    query_instruction: str
    entries: list[RankedEntry]

    model_config = {"frozen": True}

    def __len__(self) -> int:
        return len(self.entries)


def rank_memory(
    provider: EmbeddingProvider, instruction: str, memory: Memory
) -> RetrievalRanking:
    query = embed(provider, instruction)
    cache: dict[str, EmbeddingVector] = {}
    scored: list[RankedEntry] = []
    for index, log in enumerate(memory.logs):
        if log.instruction not in cache:
            cache[log.instruction] = embed(provider, log.instruction)
        score = cosine_similarity(query, cache[log.instruction])
        scored.append(RankedEntry(memory_index=index, score=score))

    # Stable sort keeps ascending index among equal scores.
    scored.sort(key=lambda entry: -entry.score)
    logger.debug(
        "Ranked %d memory log(s) for %r; top=%s",
        len(scored),
        instruction,
        scored[0].memory_index if scored else None,
    )
    return RetrievalRanking(query_instruction=instruction, entries=scored)


def retrieve_ith(ranking: RetrievalRanking, memory: Memory, i: int) -> SuccessLog:
    if i < 0 or i >= len(ranking.entries):
        raise IndexOutOfRange(i, len(ranking.entries))
    return memory.logs[ranking.entries[i].memory_index]
