"""Dense retrieval over triples: top-k seeding, one-hop expansion, pruning.

All ranking is cosine similarity on unit-norm vectors with a deterministic
tie-break (descending score, then lexicographic triple key), so identical
inputs always produce identical subgraphs.
"""

from __future__ import annotations

import hashlib
import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Protocol, Sequence

import numpy as np

from .errors import MaxHopsExceeded, ProviderError
from .kb import KnowledgeBase, Triple


class EmbeddingProvider(Protocol):
    """text -> unit-norm vector; deterministic per input text."""

    dim: int

    def embed(self, texts: Sequence[str]) -> list[list[float]]: ...


@dataclass
class RetrievalConfig:
    top_n: int = 5
    expand_m: int = 10
    max_hops: int = 2

    def __post_init__(self):
        if self.top_n < 1:
            raise ValueError("top_n must be >= 1")
        if self.expand_m < 1:
            raise ValueError("expand_m must be >= 1")
        if self.max_hops < 0:
            raise ValueError("max_hops must be >= 0")


@dataclass
class Subgraph:
    """Retrieved subgraph for one query at a given hop, with per-triple scores."""

    query_id: str
    hop: int
    triples: tuple[Triple, ...]
    scores: dict[Triple, float] = field(default_factory=dict)

    @property
    def items(self) -> set[str]:
        out: set[str] = set()
        for t in self.triples:
            out.add(t.head)
            out.add(t.tail)
        return out

    @property
    def triple_set(self) -> frozenset[Triple]:
        return frozenset(self.triples)


def triple_text(t: Triple) -> str:
    """Canonical serialization used for embedding a triple."""
    return f"{t.head} | {t.relation} | {t.tail}"


class HashingEmbedder:
    """Seeded feature-hashing embedder over token n-grams.

    Fully offline and deterministic across processes (hashing is blake2b,
    never the builtin hash). Output is L2-normalized.
    """

    def __init__(self, dim: int = 64, seed: int = 0):
        if dim < 2:
            raise ValueError("dim must be >= 2")
        self.dim = dim
        self.seed = seed

    def _features(self, text: str) -> list[str]:
        tokens = text.lower().split()
        feats = list(tokens)
        feats.extend(f"{a}_{b}" for a, b in zip(tokens, tokens[1:]))
        return feats or ["<empty>"]

    def _vector(self, text: str) -> np.ndarray:
        vec = np.zeros(self.dim, dtype=np.float64)
        prefix = struct.pack("<q", self.seed)
        for feat in self._features(text):
            digest = hashlib.blake2b(prefix + feat.encode("utf-8"), digest_size=8).digest()
            value = int.from_bytes(digest, "little")
            bucket = value % self.dim
            sign = 1.0 if (value >> 62) & 1 else -1.0
            vec[bucket] += sign
        norm = float(np.linalg.norm(vec))
        if norm == 0.0:
            vec[0] = 1.0
            norm = 1.0
        return vec / norm

    def embed(self, texts: Sequence[str]) -> list[list[float]]:
        return [self._vector(t).tolist() for t in texts]


class CachingProvider:
    """Wraps a provider with an exact-text cache, optionally persisted as JSONL."""

    def __init__(self, inner: EmbeddingProvider, cache_path: str | Path | None = None):
        self.inner = inner
        self.dim = inner.dim
        self.cache_path = Path(cache_path) if cache_path else None
        self._cache: dict[str, list[float]] = {}
        if self.cache_path and self.cache_path.exists():
            with open(self.cache_path, encoding="utf-8") as fh:
                for line in fh:
                    if line.strip():
                        obj = json.loads(line)
                        self._cache[obj["text"]] = obj["vector"]

    def embed(self, texts: Sequence[str]) -> list[list[float]]:
        missing = [t for t in dict.fromkeys(texts) if t not in self._cache]
        if missing:
            vectors = self.inner.embed(missing)
            if len(vectors) != len(missing):
                raise ProviderError("provider returned wrong number of vectors")
            new_entries = dict(zip(missing, vectors))
            self._cache.update(new_entries)
            if self.cache_path:
                with open(self.cache_path, "a", encoding="utf-8") as fh:
                    for text in missing:
                        fh.write(
                            json.dumps({"text": text, "vector": new_entries[text]},
                                       ensure_ascii=False) + "\n")
        return [list(self._cache[t]) for t in texts]


def _rank(query: str, triples: Iterable[Triple],
          provider: EmbeddingProvider) -> list[tuple[float, Triple]]:
    """Score triples against the query; sorted by (-score, triple key).

    Dot products accumulate with math.fsum (correctly rounded), so the
    ranking is bit-for-bit reproducible regardless of BLAS or platform.
    """
    triples = list(triples)
    if not triples:
        return []
    vectors = provider.embed([query] + [triple_text(t) for t in triples])
    q_vec = vectors[0]
    if abs(float(np.linalg.norm(q_vec)) - 1.0) > 1e-6:
        raise ProviderError("provider returned non-unit query vector")
    scores = [math.fsum(a * b for a, b in zip(q_vec, vec)) for vec in vectors[1:]]
    ranked = sorted(zip(scores, triples), key=lambda p: (-p[0], p[1].key))
    return ranked


def top_k_triples(query: str, kb: KnowledgeBase, n: int,
                  provider: EmbeddingProvider, query_id: str = "") -> Subgraph:
    """Hop-0 seed: the top-n most query-similar triples in the whole KB."""
    if n < 1:
        raise ValueError("n must be >= 1")
    ranked = _rank(query, kb.sorted_triples(), provider)[:n]
    return Subgraph(
        query_id=query_id,
        hop=0,
        triples=tuple(t for _, t in ranked),
        scores={t: s for s, t in ranked},
    )


def collect_candidates(kb: KnowledgeBase, sg: Subgraph) -> set[Triple]:
    """Triples one hop out from the subgraph's items, excluding what it holds."""
    out: set[Triple] = set()
    for item in sg.items:
        out |= kb.neighbors(item)
    return out - sg.triple_set


def prune_candidates(query: str, candidates: Iterable[Triple], m: int,
                     provider: EmbeddingProvider) -> list[tuple[float, Triple]]:
    """Top-m candidates by query similarity, as (score, triple) in rank order."""
    if m < 1:
        raise ValueError("m must be >= 1")
    return _rank(query, candidates, provider)[:m]


def expand(query: str, kb: KnowledgeBase, sg: Subgraph, cfg: RetrievalConfig,
           provider: EmbeddingProvider) -> Subgraph:
    """One expansion hop: collect neighbors, prune to m, merge into the subgraph."""
    if sg.hop >= cfg.max_hops:
        raise MaxHopsExceeded(f"hop {sg.hop} is already at max_hops={cfg.max_hops}")
    kept = prune_candidates(query, collect_candidates(kb, sg), cfg.expand_m, provider)
    merged = list(sg.triples)
    scores = dict(sg.scores)
    for score, t in kept:
        if t not in scores:
            merged.append(t)
        scores[t] = score
    return Subgraph(query_id=sg.query_id, hop=sg.hop + 1,
                    triples=tuple(merged), scores=scores)
