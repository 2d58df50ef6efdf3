"""Information-retrieval baselines over a codebase index.

BM25, rVSM without the fix-history term, BLUiR field matching, and cosine
ranking over an embedding provider.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Protocol, Sequence

from .corpus import CodebaseIndex, tokenize
from .errors import EmptyIndex, ProviderError

K1 = 1.2
B = 0.75


@dataclass
class RankedList:
    """Ordered, duplicate-free list of paths with optional scores."""

    items: list[tuple[str, float | None]] = field(default_factory=list)
    k_limit: int | None = None

    def __post_init__(self) -> None:
        seen = set()
        for path, _ in self.items:
            if path in seen:
                raise ValueError(f"duplicate path in ranked list: {path}")
            seen.add(path)

    @classmethod
    def from_scores(cls, scores: Mapping[str, float], k: int | None = None) -> "RankedList":
        """Keep positive scores, sort descending with lexicographic ties, cut at *k*."""
        ranked = sorted(((p, s) for p, s in scores.items() if s > 0), key=lambda ps: (-ps[1], ps[0]))
        if k is not None:
            ranked = ranked[:k]
        return cls(ranked, k)

    @classmethod
    def from_paths(cls, paths: Iterable[str], k: int | None = None) -> "RankedList":
        out: list[tuple[str, float | None]] = []
        seen = set()
        for p in paths:
            if p not in seen:
                seen.add(p)
                out.append((p, None))
        if k is not None:
            out = out[:k]
        return cls(out, k)

    @property
    def paths(self) -> list[str]:
        return [p for p, _ in self.items]

    def rank(self, path: str) -> float:
        for i, (p, _) in enumerate(self.items, start=1):
            if p == path:
                return i
        return math.inf

    def __len__(self) -> int:
        return len(self.items)

    def __iter__(self):
        return iter(self.items)


@dataclass(frozen=True)
class Query:
    text: str
    tokens: tuple[str, ...]

    @classmethod
    def of(cls, text: str) -> "Query":
        return cls(text, tuple(tokenize(text)))

    @classmethod
    def from_report(cls, report) -> "Query":
        return cls.of(f"{report.title}\n{report.description}")


class Bm25Stats:
    """Okapi BM25 over a fixed collection of tokenized documents."""

    def __init__(self, docs: Mapping[str, Sequence[str]], k1: float = K1, b: float = B):
        self.k1 = k1
        self.b = b
        self.doc_lengths = {d: len(toks) for d, toks in docs.items()}
        self.n_docs = len(self.doc_lengths)
        total = sum(self.doc_lengths.values())
        self.avg_length = total / self.n_docs if self.n_docs else 0.0
        self.postings: dict[str, dict[str, int]] = {}
        for d, toks in docs.items():
            for t, tf in Counter(toks).items():
                self.postings.setdefault(t, {})[d] = tf

    @classmethod
    def from_index(cls, index: CodebaseIndex) -> "Bm25Stats":
        stats = cls.__new__(cls)
        stats.k1, stats.b = K1, B
        stats.doc_lengths = index.doc_lengths
        stats.n_docs = len(index)
        stats.avg_length = index.avg_doc_length
        stats.postings = index.inverted
        return stats

    def idf(self, term: str) -> float:
        df = len(self.postings.get(term, ()))
        return math.log(1.0 + (self.n_docs - df + 0.5) / (df + 0.5))

    def scores(self, query_tokens: Iterable[str], restrict: set[str] | None = None) -> dict[str, float]:
        # query terms are taken as a set and summed in sorted order
        out: dict[str, float] = {}
        avg = self.avg_length or 1.0
        for term in sorted(set(query_tokens)):
            posting = self.postings.get(term)
            if not posting:
                continue
            idf = self.idf(term)
            for doc, tf in posting.items():
                if restrict is not None and doc not in restrict:
                    continue
                norm = self.k1 * (1 - self.b + self.b * self.doc_lengths[doc] / avg)
                out[doc] = out.get(doc, 0.0) + idf * tf * (self.k1 + 1) / (tf + norm)
        return out


def _require(index: CodebaseIndex, k: int) -> None:
    if k < 1:
        raise ValueError("k must be >= 1")
    if len(index) == 0:
        raise EmptyIndex("index contains no files")


def bm25_rank(index: CodebaseIndex, query: Query, k: int) -> RankedList:
    _require(index, k)
    return RankedList.from_scores(Bm25Stats.from_index(index).scores(query.tokens), k)


def length_boost(lengths: Mapping[str, int]) -> dict[str, float]:
    """Logistic boost of min-max scaled document length; longer documents get more."""
    if not lengths:
        return {}
    lo, hi = min(lengths.values()), max(lengths.values())
    out = {}
    for d, n in lengths.items():
        x = 0.5 if hi == lo else (n - lo) / (hi - lo)
        out[d] = 1.0 / (1.0 + math.exp(-x))
    return out


def rvsm_rank(index: CodebaseIndex, query: Query, k: int) -> RankedList:
    _require(index, k)
    n_docs = len(index)

    def idf(term: str) -> float:
        return math.log(n_docs / len(index.inverted[term]))

    q_tf = Counter(t for t in query.tokens if t in index.inverted)
    q_vec = {t: (1 + math.log(tf)) * idf(t) for t, tf in q_tf.items()}
    q_norm = math.sqrt(sum(q_vec[t] ** 2 for t in sorted(q_vec)))
    if q_norm == 0:
        return RankedList([], k)

    dots: dict[str, float] = {}
    for term in sorted(q_vec):
        qw = q_vec[term]
        if qw == 0:
            continue
        term_idf = idf(term)
        for doc, tf in index.inverted[term].items():
            dots[doc] = dots.get(doc, 0.0) + qw * (1 + math.log(tf)) * term_idf

    boost = length_boost(index.doc_lengths)
    scores = {}
    for doc, dot in dots.items():
        d_norm = _doc_norm(index, doc, idf)
        if d_norm > 0:
            scores[doc] = boost[doc] * dot / (q_norm * d_norm)
    return RankedList.from_scores(scores, k)


def _doc_norm(index: CodebaseIndex, doc: str, idf) -> float:
    cache = index.__dict__.setdefault("_rvsm_norms", {})
    if doc not in cache:
        tf = Counter(index.tokens_by_file[doc])
        cache[doc] = math.sqrt(sum(((1 + math.log(n)) * idf(t)) ** 2 for t, n in sorted(tf.items())))
    return cache[doc]


BLUIR_FIELDS = ("functions", "types", "identifiers", "comments")


def bluir_fields(index: CodebaseIndex) -> dict[str, Bm25Stats]:
    """Per-field BM25 collections over the code entities of every file."""
    cached = index.__dict__.get("_bluir_fields")
    if cached is not None:
        return cached
    docs: dict[str, dict[str, list[str]]] = {f: {} for f in BLUIR_FIELDS}
    for path, ents in index.entities_by_file.items():
        docs["functions"][path] = tokenize(" ".join(ents.function_names))
        docs["types"][path] = tokenize(" ".join(ents.struct_names + ents.macro_names))
        docs["identifiers"][path] = tokenize(" ".join(ents.identifiers))
        docs["comments"][path] = tokenize("\n".join(ents.comments))
    stats = {f: Bm25Stats(d) for f, d in docs.items()}
    index.__dict__["_bluir_fields"] = stats
    return stats


def bluir_rank(index: CodebaseIndex, report, k: int) -> RankedList:
    _require(index, k)
    fields = bluir_fields(index)
    total: dict[str, float] = {}
    for query_text in (report.title, report.description):
        q = tokenize(query_text)
        for name in BLUIR_FIELDS:
            for doc, s in fields[name].scores(q).items():
                total[doc] = total.get(doc, 0.0) + s
    return RankedList.from_scores(total, k)


class EmbeddingProvider(Protocol):
    max_input_chars: int

    def embed(self, texts: Sequence[str]) -> list[Sequence[float]]: ...


class SentenceTransformerProvider:
    """Embeddings from a local sentence-transformers model (``all-MiniLM-L6-v2`` by default)."""

    def __init__(self, model: str = "sentence-transformers/all-MiniLM-L6-v2", max_input_chars: int = 2000):
        try:
            from sentence_transformers import SentenceTransformer
        except ImportError as exc:  # pragma: no cover
            raise ProviderError("transport", f"sentence-transformers unavailable: {exc}") from exc
        try:
            self._model = SentenceTransformer(model)
        except Exception as exc:  # pragma: no cover - depends on local model cache
            raise ProviderError("transport", str(exc)) from exc
        self.max_input_chars = max_input_chars

    def embed(self, texts):
        return [list(map(float, v)) for v in self._model.encode(list(texts))]


def _cosine(a: Sequence[float], b: Sequence[float]) -> float:
    dot = sum(x * y for x, y in zip(a, b))
    na = math.sqrt(sum(x * x for x in a))
    nb = math.sqrt(sum(y * y for y in b))
    if na == 0 or nb == 0:
        return 0.0
    return dot / (na * nb)


def embed_rank(provider: EmbeddingProvider, index: CodebaseIndex, query: Query, k: int) -> RankedList:
    _require(index, k)
    limit = provider.max_input_chars
    paths = index.paths
    try:
        vectors = provider.embed([query.text[:limit]] + [index.files[p].content[:limit] for p in paths])
    except ProviderError:
        raise
    except Exception as exc:
        raise ProviderError("transport", str(exc)) from exc
    q = vectors[0]
    scores = {p: _cosine(q, v) for p, v in zip(paths, vectors[1:])}
    return RankedList.from_scores(scores, k)
