"""BM25 inverted index over lexicon-aware tokens."""

from __future__ import annotations

import io
import math
import os
import struct
from collections import Counter
from dataclasses import dataclass

from .errors import RetrievalIndexError
from .lexicon import EMPTY, Lexicon, tokenize_spans

MAGIC = b"YPSI"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class Bm25Params:
    k1: float = 1.2
    b: float = 0.75
    lexicon_term_boost: float = 1.0


def analyze(text: str, lexicon: Lexicon | None = None) -> list[str]:
    """Index terms of ``text``: lexicon tokens minus bare punctuation."""
    return [t.text for t in tokenize_spans(text, lexicon)[1] if not t.is_punct]


class InvertedIndex:
    def __init__(
        self,
        refs: list[str],
        doc_lengths: list[int],
        postings: dict[str, list[tuple[int, int]]],
        params: Bm25Params = Bm25Params(),
        lexicon: Lexicon | None = None,
        lexicon_version: str | None = None,
    ):
        self.refs = refs
        self.doc_lengths = doc_lengths
        self.postings = postings
        self.params = params
        self.lexicon = lexicon if lexicon is not None else EMPTY
        self.lexicon_version = lexicon_version or self.lexicon.version
        if self.lexicon.version != self.lexicon_version:
            raise RetrievalIndexError(
                f"index was built with lexicon {self.lexicon_version}, got {self.lexicon.version}"
            )
        self.N = len(refs)
        self.avgdl = sum(doc_lengths) / self.N if self.N else 0.0

    @classmethod
    def build(cls, source, lexicon: Lexicon | None = None, params: Bm25Params = Bm25Params()) -> "InvertedIndex":
        """Index a store (anything with ``scan()``) or an iterable of (ref, text)."""
        pairs = [(p.passage_id, p.text) for p in source.scan()] if hasattr(source, "scan") else list(source)
        if not pairs:
            raise RetrievalIndexError("cannot build an index over an empty store")
        pairs.sort(key=lambda rt: rt[0])
        refs = [r for r, _ in pairs]
        if len(set(refs)) != len(refs):
            raise RetrievalIndexError("duplicate passage refs")
        lengths = []
        postings: dict[str, list[tuple[int, int]]] = {}
        for doc_no, (_, text) in enumerate(pairs):
            tokens = analyze(text, lexicon)
            lengths.append(len(tokens))
            for term, tf in Counter(tokens).items():
                postings.setdefault(term, []).append((doc_no, tf))
        return cls(refs, lengths, postings, params, lexicon)

    def check_lexicon(self, lexicon: Lexicon) -> None:
        if lexicon.version != self.lexicon_version:
            raise RetrievalIndexError(
                f"index was built with lexicon {self.lexicon_version}, query uses {lexicon.version}"
            )

    def idf(self, term: str) -> float:
        df = len(self.postings.get(term, ()))
        return math.log(1.0 + (self.N - df + 0.5) / (df + 0.5))

    def _weight(self, term: str) -> float:
        return self.params.lexicon_term_boost if term in self.lexicon.terms else 1.0

    def _tf_part(self, tf: int, dl: int) -> float:
        k1, b = self.params.k1, self.params.b
        norm = 1.0 - b + b * dl / self.avgdl if self.avgdl else 1.0
        return tf * (k1 + 1.0) / (tf + k1 * norm)

    def query_terms(self, query_text: str) -> list[str]:
        return list(dict.fromkeys(analyze(query_text, self.lexicon)))

    def score(self, query_text: str) -> dict[str, float]:
        """BM25 score per passage ref; refs matching no query term are omitted.

        Each distinct query term counts once, however often it is repeated.
        """
        acc: dict[int, float] = {}
        for term in self.query_terms(query_text):
            plist = self.postings.get(term)
            if not plist:
                continue
            w = self.idf(term) * self._weight(term)
            for doc_no, tf in plist:
                acc[doc_no] = acc.get(doc_no, 0.0) + w * self._tf_part(tf, self.doc_lengths[doc_no])
        return {self.refs[d]: s for d, s in acc.items()}

    def score_text(self, query_text: str, text: str) -> float:
        """Score an arbitrary text against the query using this index's statistics."""
        counts = Counter(analyze(text, self.lexicon))
        dl = sum(counts.values())
        total = 0.0
        for term in self.query_terms(query_text):
            tf = counts.get(term, 0)
            if tf:
                total += self.idf(term) * self._weight(term) * self._tf_part(tf, dl)
        return total

    def top_k(self, query_text: str, k: int) -> list[tuple[str, float]]:
        if k < 1:
            raise ValueError("k must be >= 1")
        ranked = sorted(self.score(query_text).items(), key=lambda rs: (-rs[1], rs[0]))
        return ranked[:k]

    # -- persistence -----------------------------------------------------

    def save(self, path: str | os.PathLike) -> None:
        buf = io.BytesIO()
        buf.write(MAGIC)
        buf.write(struct.pack("<I", FORMAT_VERSION))
        buf.write(struct.pack("<3d", self.params.k1, self.params.b, self.params.lexicon_term_boost))
        _write_str(buf, self.lexicon_version)
        buf.write(struct.pack("<I", self.N))
        for ref, length in zip(self.refs, self.doc_lengths):
            _write_str(buf, ref)
            buf.write(struct.pack("<I", length))
        buf.write(struct.pack("<I", len(self.postings)))
        for term in sorted(self.postings):
            plist = self.postings[term]
            _write_str(buf, term)
            buf.write(struct.pack("<I", len(plist)))
            flat, prev = [], 0
            for doc_no, tf in plist:
                flat.extend((doc_no - prev, tf))
                prev = doc_no
            buf.write(struct.pack(f"<{len(flat)}I", *flat))
        tmp = f"{os.fspath(path)}.tmp"
        with open(tmp, "wb") as fh:
            fh.write(buf.getvalue())
        os.replace(tmp, path)

    @classmethod
    def load(cls, path: str | os.PathLike, lexicon: Lexicon | None = None) -> "InvertedIndex":
        with open(path, "rb") as fh:
            data = fh.read()
        view = _Reader(data)
        if view.take(4) != MAGIC:
            raise RetrievalIndexError(f"{path}: not a sparse index file")
        (version,) = view.unpack("<I")
        if version != FORMAT_VERSION:
            raise RetrievalIndexError(f"{path}: index format {version}, expected {FORMAT_VERSION}")
        k1, b, boost = view.unpack("<3d")
        lexicon_version = view.string()
        lexicon = lexicon if lexicon is not None else EMPTY
        if lexicon.version != lexicon_version:
            raise RetrievalIndexError(
                f"{path}: built with lexicon {lexicon_version}, loaded with {lexicon.version}"
            )
        (n,) = view.unpack("<I")
        refs, lengths = [], []
        for _ in range(n):
            refs.append(view.string())
            lengths.append(view.unpack("<I")[0])
        (n_terms,) = view.unpack("<I")
        postings = {}
        for _ in range(n_terms):
            term = view.string()
            (count,) = view.unpack("<I")
            flat = view.unpack(f"<{2 * count}I")
            plist, doc_no = [], 0
            for i in range(count):
                doc_no += flat[2 * i]
                plist.append((doc_no, flat[2 * i + 1]))
            postings[term] = plist
        if not view.done():
            raise RetrievalIndexError(f"{path}: trailing bytes after postings")
        return cls(refs, lengths, postings, Bm25Params(k1, b, boost), lexicon, lexicon_version)


def _write_str(buf: io.BytesIO, s: str) -> None:
    raw = s.encode("utf-8")
    buf.write(struct.pack("<I", len(raw)))
    buf.write(raw)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise RetrievalIndexError("truncated index file")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str) -> tuple:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def string(self) -> str:
        (n,) = self.unpack("<I")
        try:
            return self.take(n).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise RetrievalIndexError(f"corrupt string in index file: {exc}") from None

    def done(self) -> bool:
        return self.pos == len(self.data)

