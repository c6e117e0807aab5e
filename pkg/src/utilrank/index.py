"""Phase-1 hybrid candidate retrieval.

Two channels run over the same segment population: BM25 over an inverted
index, and exact cosine search over embedding vectors. Their top-k lists
are unioned without fusion weighting into a high-recall candidate pool;
cross-candidate ordering is left entirely to the judge phase.

Embeddings come from a provider behind a small interface. The builtin
provider hashes character 3-grams into a fixed number of buckets, which is
deterministic and needs no model; production points at a remote
OpenAI-compatible embeddings endpoint.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from enum import Enum
from hashlib import blake2b
from pathlib import Path
from typing import TYPE_CHECKING, Protocol

import numpy as np
import requests

from .errors import DimensionMismatch, DuplicateSegmentId, ProviderUnavailable
from .ingest import Segment

if TYPE_CHECKING:
    from .controller import CandidateSet
    from .ingest import DocumentSource, SegmentedDocument

BM25_K1 = 1.2
BM25_B = 0.75
DEFAULT_POOL_K = 50
BUILTIN_DIMENSION = 256

_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)


def tokenize(text: str) -> list[str]:
    """Lowercased Unicode word tokens; splits on anything non-alphanumeric."""
    return _TOKEN_RE.findall(text.lower())


# ---------------------------------------------------------------------------
# Lexical channel
# ---------------------------------------------------------------------------

@dataclass
class LexicalIndex:
    postings: dict[str, list[tuple[str, int]]] = field(default_factory=dict)
    doc_lengths: dict[str, int] = field(default_factory=dict)
    avg_doc_length: float = 0.0
    corpus_size: int = 0


@dataclass
class DenseIndex:
    vectors: dict[str, np.ndarray]
    dimension: int


class Provenance(str, Enum):
    KEYWORD = "keyword"
    EMBED = "embed"
    BOTH = "both"


@dataclass
class ScoredCandidate:
    segment_id: str
    lexical_score: float | None = None
    dense_score: float | None = None
    provenance: Provenance = Provenance.KEYWORD

    def __post_init__(self):
        if self.provenance in (Provenance.KEYWORD, Provenance.BOTH):
            if self.lexical_score is None:
                raise ValueError("keyword provenance requires a lexical score")
        if self.provenance in (Provenance.EMBED, Provenance.BOTH):
            if self.dense_score is None:
                raise ValueError("embed provenance requires a dense score")


def build_lexical_index(segments: list[Segment]) -> LexicalIndex:
    """Inverted index with exact per-segment term frequencies."""
    idx = LexicalIndex()
    for segment in segments:
        if segment.segment_id in idx.doc_lengths:
            raise DuplicateSegmentId(segment.segment_id)
        tokens = tokenize(segment.text)
        idx.doc_lengths[segment.segment_id] = len(tokens)
        counts: dict[str, int] = {}
        for token in tokens:
            counts[token] = counts.get(token, 0) + 1
        for term, tf in counts.items():
            idx.postings.setdefault(term, []).append((segment.segment_id, tf))
    idx.corpus_size = len(idx.doc_lengths)
    if idx.corpus_size:
        idx.avg_doc_length = sum(idx.doc_lengths.values()) / idx.corpus_size
    return idx


def lexical_top_k(
    idx: LexicalIndex, query_tokens: list[str], k: int
) -> list[ScoredCandidate]:
    """BM25 ranking; only positive-scoring segments are returned.

    Uses the non-negative idf variant ln(1 + (N - df + 0.5)/(df + 0.5)) so
    very common terms dilute rather than subtract. Repeated query tokens
    contribute once per occurrence. Ties break by ascending segment_id.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if idx.corpus_size == 0:
        return []
    avg_len = idx.avg_doc_length or 1.0
    scores: dict[str, float] = {}
    for term in query_tokens:
        postings = idx.postings.get(term)
        if not postings:
            continue
        idf = math.log(1.0 + (idx.corpus_size - len(postings) + 0.5) / (len(postings) + 0.5))
        for segment_id, tf in postings:
            norm = 1.0 - BM25_B + BM25_B * idx.doc_lengths[segment_id] / avg_len
            gain = idf * tf * (BM25_K1 + 1.0) / (tf + BM25_K1 * norm)
            scores[segment_id] = scores.get(segment_id, 0.0) + gain
    ranked = sorted(
        ((sid, sc) for sid, sc in scores.items() if sc > 0.0),
        key=lambda pair: (-pair[1], pair[0]),
    )
    return [
        ScoredCandidate(sid, lexical_score=sc, provenance=Provenance.KEYWORD)
        for sid, sc in ranked[:k]
    ]


# ---------------------------------------------------------------------------
# Dense channel
# ---------------------------------------------------------------------------

class EmbeddingProvider(Protocol):
    name: str
    dimension: int

    def embed_batch(self, texts: list[str]) -> list[np.ndarray]: ...


class HashEmbedder:
    """Deterministic character-3-gram feature-hashing embedder.

    Grams of the lowercased text are hashed with blake2b (stable across
    processes, unlike ``hash``) into ``dimension`` buckets and the count
    vector is L2-normalized. Texts shorter than 3 characters hash as one
    gram; empty text maps to the first basis vector.
    """

    name = "builtin-hash-3gram"

    def __init__(self, dimension: int = BUILTIN_DIMENSION):
        self.dimension = dimension

    def _bucket(self, gram: str) -> int:
        digest = blake2b(gram.encode("utf-8"), digest_size=8).digest()
        return int.from_bytes(digest, "big") % self.dimension

    def embed_batch(self, texts: list[str]) -> list[np.ndarray]:
        return [self._embed_one(t) for t in texts]

    def _embed_one(self, text: str) -> np.ndarray:
        vec = np.zeros(self.dimension, dtype=np.float64)
        normalized = text.lower()
        if len(normalized) >= 3:
            grams = (normalized[i : i + 3] for i in range(len(normalized) - 2))
        elif normalized:
            grams = (normalized,)
        else:
            vec[0] = 1.0
            return vec
        for gram in grams:
            vec[self._bucket(gram)] += 1.0
        return vec / np.linalg.norm(vec)


class RemoteEmbedder:
    """OpenAI-compatible embeddings endpoint client with bounded retries."""

    name = "remote"

    def __init__(
        self,
        url: str,
        model: str,
        dimension: int,
        *,
        timeout: float = 30.0,
        max_retries: int = 2,
        session: requests.Session | None = None,
    ):
        self.url = url
        self.model = model
        self.dimension = dimension
        self.timeout = timeout
        self.max_retries = max_retries
        self._session = session or requests.Session()

    def embed_batch(self, texts: list[str]) -> list[np.ndarray]:
        payload = {"input": texts, "model": self.model}
        last_error = "no attempt made"
        for _ in range(self.max_retries + 1):
            try:
                response = self._session.post(self.url, json=payload, timeout=self.timeout)
            except requests.RequestException as exc:
                last_error = str(exc)
                continue
            if response.status_code != 200:
                last_error = f"HTTP {response.status_code}"
                continue
            try:
                rows = response.json()["data"]
                vectors = [np.asarray(row["embedding"], dtype=np.float64) for row in rows]
            except (ValueError, KeyError, TypeError) as exc:
                last_error = f"malformed response: {exc}"
                continue
            if len(vectors) != len(texts):
                last_error = f"expected {len(texts)} embeddings, got {len(vectors)}"
                continue
            for vec in vectors:
                if vec.shape != (self.dimension,):
                    raise DimensionMismatch(
                        f"provider returned dimension {vec.shape}, expected {self.dimension}"
                    )
            return vectors
        raise ProviderUnavailable(f"embedding endpoint {self.url}: {last_error}")


def embed_text(provider: EmbeddingProvider, text: str) -> np.ndarray:
    """Embed one text and guarantee a unit-norm vector of the provider's d."""
    vec = provider.embed_batch([text])[0]
    if vec.shape != (provider.dimension,):
        raise DimensionMismatch(
            f"provider {provider.name} returned {vec.shape}, expected ({provider.dimension},)"
        )
    norm = float(np.linalg.norm(vec))
    if norm == 0.0:
        vec = np.zeros(provider.dimension, dtype=np.float64)
        vec[0] = 1.0
        return vec
    if abs(norm - 1.0) > 1e-6:
        vec = vec / norm
    return vec


def build_dense_index(
    segments: list[Segment], provider: EmbeddingProvider, *, batch_size: int = 64
) -> DenseIndex:
    vectors: dict[str, np.ndarray] = {}
    for offset in range(0, len(segments), batch_size):
        batch = segments[offset : offset + batch_size]
        embedded = provider.embed_batch([s.text for s in batch])
        if len(embedded) != len(batch):
            raise ProviderUnavailable("provider returned a short embedding batch")
        for segment, vec in zip(batch, embedded):
            if segment.segment_id in vectors:
                raise DuplicateSegmentId(segment.segment_id)
            norm = float(np.linalg.norm(vec))
            vectors[segment.segment_id] = vec / norm if norm else vec
    return DenseIndex(vectors=vectors, dimension=provider.dimension)


def dense_top_k(idx: DenseIndex, query_vec: np.ndarray, k: int) -> list[ScoredCandidate]:
    """Exact cosine ranking: brute-force dot products, no approximation."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if query_vec.shape != (idx.dimension,):
        raise DimensionMismatch(
            f"query vector {query_vec.shape} vs index dimension {idx.dimension}"
        )
    if not idx.vectors:
        return []
    ids = sorted(idx.vectors)
    sims = np.stack([idx.vectors[i] for i in ids]) @ query_vec
    order = sorted(range(len(ids)), key=lambda i: (-sims[i], ids[i]))
    return [
        ScoredCandidate(
            ids[i], dense_score=float(sims[i]), provenance=Provenance.EMBED
        )
        for i in order[:k]
    ]


# ---------------------------------------------------------------------------
# Hybrid pool
# ---------------------------------------------------------------------------

def hybrid_retrieve(
    lex: LexicalIndex,
    dense: DenseIndex,
    provider: EmbeddingProvider,
    q: str,
    k: int = DEFAULT_POOL_K,
) -> "CandidateSet":
    """Union of the lexical and dense top-k lists, deduplicated by id.

    The pool is deliberately unranked (listed in ascending segment_id): no
    fusion score exists at this stage, and ordering across candidates is
    the judge phase's job. A segment found by both channels carries both
    scores and provenance Both.
    """
    from .controller import CandidateSet, Stage

    merged: dict[str, ScoredCandidate] = {
        c.segment_id: c for c in lexical_top_k(lex, tokenize(q), k)
    }
    query_vec = embed_text(provider, q)
    for candidate in dense_top_k(dense, query_vec, k):
        existing = merged.get(candidate.segment_id)
        if existing is None:
            merged[candidate.segment_id] = candidate
        else:
            merged[candidate.segment_id] = ScoredCandidate(
                candidate.segment_id,
                lexical_score=existing.lexical_score,
                dense_score=candidate.dense_score,
                provenance=Provenance.BOTH,
            )
    entries = [(merged[sid], None) for sid in sorted(merged)]
    return CandidateSet(stage=Stage.POOL, entries=entries)


# ---------------------------------------------------------------------------
# Index persistence (lexical.idx.json, dense.idx.json)
# ---------------------------------------------------------------------------

def write_lexical_index(idx: LexicalIndex, path: Path) -> None:
    data = {
        "postings": {t: [[sid, tf] for sid, tf in p] for t, p in idx.postings.items()},
        "doc_lengths": idx.doc_lengths,
        "avg_doc_length": idx.avg_doc_length,
        "corpus_size": idx.corpus_size,
    }
    path.write_text(json.dumps(data, ensure_ascii=False), encoding="utf-8")


def read_lexical_index(path: Path) -> LexicalIndex:
    data = json.loads(path.read_text(encoding="utf-8"))
    return LexicalIndex(
        postings={t: [(sid, tf) for sid, tf in p] for t, p in data["postings"].items()},
        doc_lengths=data["doc_lengths"],
        avg_doc_length=data["avg_doc_length"],
        corpus_size=data["corpus_size"],
    )


def write_dense_index(idx: DenseIndex, provider_name: str, path: Path) -> None:
    data = {
        "provider": provider_name,
        "dimension": idx.dimension,
        "vectors": {sid: vec.tolist() for sid, vec in idx.vectors.items()},
    }
    path.write_text(json.dumps(data, ensure_ascii=False), encoding="utf-8")


def read_dense_index(path: Path) -> tuple[DenseIndex, str]:
    data = json.loads(path.read_text(encoding="utf-8"))
    vectors = {
        sid: np.asarray(vec, dtype=np.float64) for sid, vec in data["vectors"].items()
    }
    return DenseIndex(vectors=vectors, dimension=data["dimension"]), data["provider"]


def stored_dense_dimension(path: Path) -> int:
    """Dimension recorded in a persisted dense index, without loading vectors."""
    return json.loads(path.read_text(encoding="utf-8"))["dimension"]


# ---------------------------------------------------------------------------
# Corpus handle
# ---------------------------------------------------------------------------

@dataclass
class IndexedCorpus:
    """Everything a query needs: metadata, segments, both indexes, embedder."""

    documents: dict[str, "DocumentSource"]
    segments: dict[str, Segment]
    lexical: LexicalIndex
    dense: DenseIndex
    embedder: EmbeddingProvider

    @classmethod
    def build(
        cls, documents: list["SegmentedDocument"], embedder: EmbeddingProvider
    ) -> "IndexedCorpus":
        all_segments = [s for doc in documents for s in doc.segments]
        return cls(
            documents={doc.source.doc_id: doc.source for doc in documents},
            segments={s.segment_id: s for s in all_segments},
            lexical=build_lexical_index(all_segments),
            dense=build_dense_index(all_segments, embedder),
            embedder=embedder,
        )

    def save(self, out_dir: Path) -> None:
        from .ingest import SegmentedDocument, write_segments

        out_dir.mkdir(parents=True, exist_ok=True)
        by_doc = {
            doc_id: SegmentedDocument(source) for doc_id, source in self.documents.items()
        }
        for segment in self.segments.values():
            by_doc[segment.doc_id].segments.append(segment)
        write_segments(list(by_doc.values()), out_dir)
        write_lexical_index(self.lexical, out_dir / "lexical.idx.json")
        write_dense_index(self.dense, self.embedder.name, out_dir / "dense.idx.json")

    @classmethod
    def load(
        cls, out_dir: Path, embedder: EmbeddingProvider | None = None
    ) -> "IndexedCorpus":
        from .ingest import read_segments

        documents = read_segments(out_dir)
        dense, provider_name = read_dense_index(out_dir / "dense.idx.json")
        if embedder is None:
            if provider_name != HashEmbedder.name:
                raise ProviderUnavailable(
                    f"index was built with provider {provider_name!r}; "
                    "pass a matching embedder to load it"
                )
            embedder = HashEmbedder(dense.dimension)
        elif embedder.dimension != dense.dimension:
            raise DimensionMismatch(
                f"embedder dimension {embedder.dimension} vs stored index "
                f"dimension {dense.dimension}"
            )
        return cls(
            documents={doc.source.doc_id: doc.source for doc in documents},
            segments={s.segment_id: s for doc in documents for s in doc.segments},
            lexical=read_lexical_index(out_dir / "lexical.idx.json"),
            dense=dense,
            embedder=embedder,
        )
