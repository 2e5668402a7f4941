"""Passage store: chunk documents, deduplicate, persist, serve by id."""

from __future__ import annotations

import difflib
import json
import logging
import os
import re
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

from . import prompts
from .errors import ChunkingError, ConfigError, IngestError
from .lexicon import Lexicon, count_tokens
from .text import content_hash, sha256_hex

log = logging.getLogger(__name__)

PASSAGES_FILE = "passages.jsonl"
DOCUMENTS_FILE = "documents.jsonl"
MANIFEST_FILE = "manifest.json"
FORMAT_VERSION = 1

_SENTENCE_END = re.compile(r"[.!?]+[\"')\]]*(?=\s|$)|[。！？；]+|\n\s*\n")
_CJK_CLASS = "\u3040-\u30ff\u3400-\u4dbf\u4e00-\u9fff\uac00-\ud7af\uf900-\ufaff"
_PIECE = re.compile(f"[{_CJK_CLASS}]|[^\\s{_CJK_CLASS}]+")
_PRONOUNS = frozenset("he she it they them this these those its their his her theirs".split())


@dataclass(frozen=True)
class Document:
    doc_id: str
    raw_text: str
    title: str = ""
    year: int = 0
    subfield: str = ""
    source_path: str = ""

    def __post_init__(self):
        if not self.doc_id:
            raise IngestError("document has an empty doc_id")
        if not self.raw_text or not self.raw_text.strip():
            raise IngestError(f"document {self.doc_id!r} has no text")

    def meta(self) -> dict:
        return {
            "doc_id": self.doc_id,
            "title": self.title,
            "year": self.year,
            "subfield": self.subfield,
            "source_path": self.source_path,
            "text_hash": sha256_hex(self.raw_text.encode("utf-8")),
        }


@dataclass(frozen=True)
class Passage:
    passage_id: str
    doc_id: str
    seq_no: int
    text: str
    char_span: tuple[int, int] | None
    content_hash: str

    @classmethod
    def make(cls, doc_id: str, seq_no: int, text: str, span: tuple[int, int] | None) -> "Passage":
        return cls(f"{doc_id}:{seq_no}", doc_id, seq_no, text, span, content_hash(text))

    def to_json(self) -> str:
        d = asdict(self)
        d["char_span"] = list(self.char_span) if self.char_span is not None else None
        return json.dumps(d, ensure_ascii=False, sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "Passage":
        d = json.loads(line)
        span = tuple(d["char_span"]) if d.get("char_span") is not None else None
        return cls(d["passage_id"], d["doc_id"], int(d["seq_no"]), d["text"], span, d["content_hash"])


@dataclass(frozen=True)
class ChunkingPolicy:
    mode: str = "rule"
    min_tokens: int = 64
    max_tokens: int = 512
    overlap_tokens: int = 0

    def __post_init__(self):
        if self.mode not in ("rule", "llm_assisted"):
            raise ConfigError(f"unknown chunking mode {self.mode!r}")
        if not 0 < self.min_tokens < self.max_tokens:
            raise ConfigError("chunking needs 0 < min_tokens < max_tokens")
        if self.overlap_tokens < 0 or self.overlap_tokens >= self.max_tokens:
            raise ConfigError("overlap_tokens must lie in [0, max_tokens)")


@dataclass
class StoreStats:
    docs: int = 0
    passages: int = 0
    duplicates_dropped: int = 0


def sentence_spans(text: str) -> list[tuple[int, int]]:
    """Trimmed (start, end) spans of sentences; gaps between them are whitespace."""
    spans = []
    start = 0
    for m in _SENTENCE_END.finditer(text):
        spans.append((start, m.end()))
        start = m.end()
    spans.append((start, len(text)))
    out = []
    for a, b in spans:
        seg = text[a:b]
        stripped = seg.strip()
        if not stripped:
            continue
        lead = len(seg) - len(seg.lstrip())
        out.append((a + lead, a + lead + len(stripped)))
    return out


def _split_long(text: str, span: tuple[int, int], max_tokens: int, lexicon) -> list[tuple[int, int]]:
    a, b = span
    pieces = [(a + m.start(), a + m.end()) for m in _PIECE.finditer(text[a:b])]
    out = []
    cur_start, cur_end, used = None, None, 0
    for ps, pe in pieces:
        n = count_tokens(text[ps:pe], lexicon) or 1
        if cur_start is not None and used + n > max_tokens:
            out.append((cur_start, cur_end))
            cur_start, used = None, 0
        if cur_start is None:
            cur_start = ps
        cur_end = pe
        used += n
    if cur_start is not None:
        out.append((cur_start, cur_end))
    return out


def rule_chunk_spans(text: str, policy: ChunkingPolicy, lexicon: Lexicon | None = None) -> list[tuple[int, int]]:
    units: list[tuple[int, int, int]] = []
    for span in sentence_spans(text):
        n = count_tokens(text[span[0]:span[1]], lexicon)
        if n > policy.max_tokens:
            for sub in _split_long(text, span, policy.max_tokens, lexicon):
                units.append((*sub, count_tokens(text[sub[0]:sub[1]], lexicon)))
        else:
            units.append((*span, n))

    chunks: list[list[tuple[int, int, int]]] = []
    current: list[tuple[int, int, int]] = []
    used = 0
    for unit in units:
        if current and used + unit[2] > policy.max_tokens:
            chunks.append(current)
            carry: list[tuple[int, int, int]] = []
            if policy.overlap_tokens:
                budget = policy.overlap_tokens
                for prev in reversed(current):
                    if prev[2] > budget or sum(u[2] for u in carry) + prev[2] + unit[2] > policy.max_tokens:
                        break
                    carry.insert(0, prev)
                    budget -= prev[2]
            current, used = carry, sum(u[2] for u in carry)
        current.append(unit)
        used += unit[2]
    if current:
        chunks.append(current)
    return [(c[0][0], c[-1][1]) for c in chunks]


def _words_with_spans(text: str) -> list[tuple[str, int, int]]:
    return [(m.group().lower().strip(".,;:!?\"'()"), m.start(), m.end()) for m in _PIECE.finditer(text)]


def _locate_segment(raw: str, segment: str, cursor: int) -> tuple[int, int] | None:
    """Span of ``segment`` in ``raw`` at or after ``cursor``.

    Exact substrings match directly. Otherwise the segment may differ from the
    source only where a single pronoun was replaced by the noun it refers to.
    """
    seg = segment.strip()
    if not seg:
        return None
    pos = raw.find(seg, cursor)
    if pos >= 0:
        return pos, pos + len(seg)
    seg_words = [w for w, _, _ in _words_with_spans(seg)]
    raw_words = [w for w in _words_with_spans(raw) if w[1] >= cursor]
    if not seg_words:
        return None
    first = seg_words[0]
    for k, (w, _, _) in enumerate(raw_words):
        if w != first and w not in _PRONOUNS:
            continue
        window = raw_words[k:k + len(seg_words) + 4]
        sm = difflib.SequenceMatcher(a=[x[0] for x in window], b=seg_words, autojunk=False)
        ok = True
        last_raw = -1
        for tag, i1, i2, j1, j2 in sm.get_opcodes():
            if tag == "equal":
                last_raw = i2
            elif tag == "replace" and i2 - i1 == 1 and window[i1][0] in _PRONOUNS:
                last_raw = i2
            elif tag == "delete" and last_raw == i1 and j2 == len(seg_words):
                break  # trailing raw words beyond the segment
            else:
                ok = False
                break
        if ok and last_raw > 0:
            return window[0][1], window[last_raw - 1][2]
    return None


def llm_chunk_spans(doc: Document, gateway) -> list[tuple[tuple[int, int], str]]:
    """Segments proposed by the model, as (span, text). Raises ChunkingError."""
    reply = gateway.chat(prompts.render("chunk_segment", document=doc.raw_text))
    try:
        segments = json.loads(reply)
        if not isinstance(segments, list) or not all(isinstance(s, str) for s in segments):
            raise ValueError("not a list of strings")
    except ValueError as exc:
        raise ChunkingError(f"{doc.doc_id}: unparseable segmentation: {exc}", fallback=True) from exc
    out = []
    cursor = 0
    for seg in segments:
        if not seg.strip():
            continue
        span = _locate_segment(doc.raw_text, seg, cursor)
        if span is None:
            raise ChunkingError(f"{doc.doc_id}: segment is not grounded in the source: {seg[:60]!r}", fallback=True)
        out.append((span, seg.strip()))
        cursor = span[1]
    if not out:
        raise ChunkingError(f"{doc.doc_id}: model returned no segments", fallback=True)
    return out


def chunk(
    doc: Document,
    policy: ChunkingPolicy = ChunkingPolicy(),
    gateway=None,
    lexicon: Lexicon | None = None,
    strict: bool = False,
) -> list[Passage]:
    """Split one document into passages.

    LLM-assisted segmentation falls back to rule chunking when the model's
    output is unparseable or not grounded in the source text, unless
    ``strict`` is set, in which case the ChunkingError propagates.
    """
    if policy.mode == "llm_assisted":
        if gateway is None:
            raise ConfigError("llm_assisted chunking needs a gateway")
        try:
            found = llm_chunk_spans(doc, gateway)
            return [Passage.make(doc.doc_id, i, text, span) for i, (span, text) in enumerate(found)]
        except ChunkingError as exc:
            if strict:
                raise
            log.warning("%s; falling back to rule chunking", exc)
    spans = rule_chunk_spans(doc.raw_text, policy, lexicon)
    return [Passage.make(doc.doc_id, i, doc.raw_text[a:b], (a, b)) for i, (a, b) in enumerate(spans)]


def dedup(passages: Iterable[Passage], seen: set[str] | None = None) -> list[Passage]:
    """Keep the first passage per content hash, preserving order."""
    seen = set() if seen is None else seen
    out = []
    for p in passages:
        if p.content_hash in seen:
            continue
        seen.add(p.content_hash)
        out.append(p)
    return out


def load_registry(path: str | os.PathLike) -> frozenset[str]:
    with open(path, encoding="utf-8") as fh:
        return frozenset(line.strip() for line in fh if line.strip() and not line.startswith("#"))


def default_registry() -> frozenset[str]:
    from importlib import resources

    return load_registry(resources.files("evidencerag").joinpath("data/subfields.txt"))


def read_documents(directory: str | os.PathLike) -> list[Document]:
    """Read ``*.txt`` files with optional ``<stem>.meta.json`` sidecars."""
    docs = []
    for path in sorted(Path(directory).glob("*.txt")):
        meta_path = path.with_name(path.stem + ".meta.json")
        meta = {}
        if meta_path.exists():
            with open(meta_path, encoding="utf-8") as fh:
                meta = json.load(fh)
        docs.append(
            Document(
                doc_id=str(meta.get("doc_id", path.stem)),
                raw_text=path.read_text(encoding="utf-8"),
                title=str(meta.get("title", "")),
                year=int(meta.get("year", 0) or 0),
                subfield=str(meta.get("subfield", "")),
                source_path=str(path),
            )
        )
    return docs


@dataclass
class Store:
    """In-memory passage table, optionally backed by a directory."""

    root: str | os.PathLike | None = None
    registry: frozenset[str] | None = None
    lexicon: Lexicon | None = None
    _passages: dict[str, Passage] = field(default_factory=dict, repr=False)
    _docs: dict[str, dict] = field(default_factory=dict, repr=False)
    _hashes: set[str] = field(default_factory=set, repr=False)
    _by_doc_seq: dict[tuple[str, int], str] = field(default_factory=dict, repr=False)

    def ingest(
        self,
        docs: Iterable[Document],
        policy: ChunkingPolicy = ChunkingPolicy(),
        gateway=None,
    ) -> StoreStats:
        docs = list(docs)
        ids = [d.doc_id for d in docs]
        dupes = sorted({i for i in ids if ids.count(i) > 1})
        if dupes:
            raise IngestError(f"duplicate doc_id in input: {', '.join(dupes)}")
        stats = StoreStats(docs=len(docs))
        for doc in docs:
            if self.registry is not None and doc.subfield not in self.registry:
                raise IngestError(f"{doc.doc_id}: subfield {doc.subfield!r} is not in the registry")
            meta = doc.meta()
            known = self._docs.get(doc.doc_id)
            if known is not None and known["text_hash"] != meta["text_hash"]:
                raise IngestError(f"{doc.doc_id}: already ingested with different content")
            chunks = chunk(doc, policy, gateway, self.lexicon)
            kept = dedup(chunks, self._hashes)
            stats.duplicates_dropped += len(chunks) - len(kept)
            stats.passages += len(kept)
            if known is None:
                self._docs[doc.doc_id] = meta
            for p in kept:
                self._add(p)
        if self.root is not None:
            self.save()
        return stats

    def _add(self, p: Passage) -> None:
        if p.passage_id in self._passages:
            raise IngestError(f"passage id collision: {p.passage_id}")
        self._passages[p.passage_id] = p
        self._hashes.add(p.content_hash)
        self._by_doc_seq[(p.doc_id, p.seq_no)] = p.passage_id

    def get(self, passage_id: str) -> Passage:
        try:
            return self._passages[passage_id]
        except KeyError:
            raise KeyError(f"no passage {passage_id!r}") from None

    def __contains__(self, passage_id: str) -> bool:
        return passage_id in self._passages

    def scan(self) -> Iterator[Passage]:
        return iter(list(self._passages.values()))

    def __len__(self) -> int:
        return len(self._passages)

    def document(self, doc_id: str) -> dict:
        return dict(self._docs[doc_id])

    def documents(self) -> list[dict]:
        return [dict(d) for d in self._docs.values()]

    def subfield_of(self, passage_id: str) -> str:
        return self._docs[self.get(passage_id).doc_id]["subfield"]

    def neighbour(self, passage: Passage, offset: int) -> Passage | None:
        pid = self._by_doc_seq.get((passage.doc_id, passage.seq_no + offset))
        return self._passages[pid] if pid is not None else None

    def save(self, root: str | os.PathLike | None = None) -> Path:
        root = Path(root if root is not None else self.root)
        root.mkdir(parents=True, exist_ok=True)
        body = "".join(p.to_json() + "\n" for p in self._passages.values()).encode("utf-8")
        _atomic_write(root / PASSAGES_FILE, body)
        docs = "".join(json.dumps(d, ensure_ascii=False, sort_keys=True) + "\n" for d in self._docs.values())
        _atomic_write(root / DOCUMENTS_FILE, docs.encode("utf-8"))
        manifest = {
            "format": FORMAT_VERSION,
            "docs": len(self._docs),
            "passages": len(self._passages),
            "passages_sha256": sha256_hex(body),
        }
        _atomic_write(root / MANIFEST_FILE, json.dumps(manifest, indent=2, sort_keys=True).encode("utf-8"))
        return root

    @classmethod
    def load(cls, root: str | os.PathLike, **kwargs) -> "Store":
        root = Path(root)
        store = cls(root=root, **kwargs)
        if not (root / MANIFEST_FILE).exists():
            return store
        manifest = json.loads((root / MANIFEST_FILE).read_text(encoding="utf-8"))
        if manifest.get("format") != FORMAT_VERSION:
            raise IngestError(f"{root}: unsupported store format {manifest.get('format')!r}")
        body = (root / PASSAGES_FILE).read_bytes()
        if sha256_hex(body) != manifest["passages_sha256"]:
            raise IngestError(f"{root}: passages file does not match its manifest hash")
        for line in (root / DOCUMENTS_FILE).read_text(encoding="utf-8").splitlines():
            if line.strip():
                d = json.loads(line)
                store._docs[d["doc_id"]] = d
        for line in body.decode("utf-8").splitlines():
            if line.strip():
                store._add(Passage.from_json(line))
        return store


def _atomic_write(path: Path, data: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)
