"""Domain lexicon: mining new terms, validating them, and tokenizing with them.

Mining counts every n-gram of "units" (words for alphabetic script, single
characters for CJK) and scores it by internal cohesion and boundary entropy.
Tokenization is forward maximum matching against the lexicon, falling back
to words / single CJK characters where no term matches.
"""

from __future__ import annotations

import logging
import math
import os
from collections import Counter, defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Iterable, Iterator

from . import prompts
from .errors import MiningError, ValidationError
from .text import is_cjk, is_word_char, lower_preserving_length, normalize, sha256_hex

log = logging.getLogger(__name__)

PATHOLOGY = "pathology_specific"
GENERIC = "generic_medical"
CATEGORIES = (PATHOLOGY, GENERIC)
ORIGINS = ("seed", "mined")


def canonical_term(term: str) -> str:
    return lower_preserving_length(normalize(term))


@dataclass(frozen=True)
class LexiconEntry:
    term: str
    category: str = GENERIC
    origin: str = "seed"
    validated: bool = False

    def __post_init__(self):
        if not self.term:
            raise ValueError("lexicon term must be non-empty")
        if self.category not in CATEGORIES:
            raise ValueError(f"unknown category {self.category!r}")
        if self.origin not in ORIGINS:
            raise ValueError(f"unknown origin {self.origin!r}")

    def line(self) -> str:
        return f"{self.term}\t{self.category}\t{self.origin}\t{str(self.validated).lower()}"


class Lexicon:
    """Immutable set of terms. ``version`` is a hash of the serialized entries."""

    def __init__(self, entries: Iterable[LexiconEntry] = ()):
        table: dict[str, LexiconEntry] = {}
        for entry in entries:
            term = canonical_term(entry.term)
            if not term:
                continue
            if term in table:
                # First writer wins so seed entries keep their labels on merge.
                continue
            table[term] = LexiconEntry(term, entry.category, entry.origin, entry.validated)
        self._entries = table
        self._terms = frozenset(table)
        by_first: dict[str, set[int]] = defaultdict(set)
        for term in table:
            by_first[term[0]].add(len(term))
        self._lengths = {ch: sorted(ls, reverse=True) for ch, ls in by_first.items()}
        self.version = sha256_hex("\n".join(self.lines()).encode("utf-8"))[:16]

    @classmethod
    def from_terms(cls, terms: Iterable[str], category: str = GENERIC, origin: str = "seed") -> "Lexicon":
        return cls(LexiconEntry(t, category, origin) for t in terms)

    def lines(self) -> list[str]:
        return [self._entries[t].line() for t in sorted(self._entries)]

    @property
    def entries(self) -> frozenset[LexiconEntry]:
        return frozenset(self._entries.values())

    @property
    def terms(self) -> frozenset[str]:
        return self._terms

    def get(self, term: str) -> LexiconEntry | None:
        return self._entries.get(canonical_term(term))

    def __contains__(self, term: str) -> bool:
        return canonical_term(term) in self._entries

    def __len__(self) -> int:
        return len(self._entries)

    def __eq__(self, other) -> bool:
        return isinstance(other, Lexicon) and self._entries == other._entries

    def merged(self, entries: Iterable[LexiconEntry]) -> "Lexicon":
        return Lexicon([*self._entries.values(), *entries])

    def longest_match(self, s: str, i: int) -> int:
        """Length of the longest term matching ``s`` at ``i`` (0 if none).

        ``s`` must already be canonical (normalized, lowercased). A term that
        begins or ends with a word character must sit on word boundaries.
        """
        lengths = self._lengths.get(s[i]) if i < len(s) else None
        if not lengths:
            return 0
        if is_word_char(s[i]) and i > 0 and is_word_char(s[i - 1]):
            return 0
        for n in lengths:
            end = i + n
            if end > len(s) or s[i:end] not in self._entries:
                continue
            if is_word_char(s[end - 1]) and end < len(s) and is_word_char(s[end]):
                continue
            return n
        return 0

    def save(self, path: str | os.PathLike) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"# version\t{self.version}\n")
            for line in self.lines():
                fh.write(line + "\n")

    @classmethod
    def load(cls, path: str | os.PathLike) -> "Lexicon":
        entries = []
        declared = None
        with open(path, encoding="utf-8") as fh:
            for lineno, raw in enumerate(fh, 1):
                line = raw.rstrip("\n")
                if not line.strip():
                    continue
                if line.startswith("#"):
                    parts = line[1:].strip().split("\t")
                    if parts[0] == "version" and len(parts) == 2:
                        declared = parts[1]
                    continue
                fields = line.split("\t")
                if len(fields) != 4 or fields[3] not in ("true", "false"):
                    raise ValidationError(f"{path}:{lineno}: expected term<TAB>category<TAB>origin<TAB>validated")
                try:
                    entries.append(LexiconEntry(fields[0], fields[1], fields[2], fields[3] == "true"))
                except ValueError as exc:
                    raise ValidationError(f"{path}:{lineno}: {exc}") from exc
        lex = cls(entries)
        if declared is not None and declared != lex.version:
            raise ValidationError(f"{path}: declared version {declared} but content hashes to {lex.version}")
        return lex


EMPTY = Lexicon()


# -- tokenization ------------------------------------------------------------


@dataclass(frozen=True)
class Token:
    text: str
    start: int
    end: int
    is_term: bool = False

    @property
    def is_punct(self) -> bool:
        return not any(ch.isalnum() for ch in self.text)


def tokenize_spans(text: str, lexicon: Lexicon | None = None) -> tuple[str, list[Token]]:
    """Tokenize; returns the canonical text and tokens with spans into it."""
    lexicon = lexicon or EMPTY
    s = lower_preserving_length(normalize(text))
    tokens: list[Token] = []
    i, n = 0, len(s)
    while i < n:
        ch = s[i]
        if ch.isspace():
            i += 1
            continue
        m = lexicon.longest_match(s, i)
        if m:
            tokens.append(Token(s[i:i + m], i, i + m, True))
            i += m
            continue
        if is_cjk(ch) or not ch.isalnum():
            tokens.append(Token(ch, i, i + 1))
            i += 1
            continue
        j = i
        while j < n and not s[j].isspace() and not is_cjk(s[j]):
            j += 1
        while j > i + 1 and not s[j - 1].isalnum():
            j -= 1
        tokens.append(Token(s[i:j], i, j))
        i = j
    return s, tokens


def tokenize(text: str, lexicon: Lexicon | None = None) -> list[str]:
    return [t.text for t in tokenize_spans(text, lexicon)[1]]


def count_tokens(text: str, lexicon: Lexicon | None = None) -> int:
    return len(tokenize_spans(text, lexicon)[1])


# -- mining ------------------------------------------------------------------


@dataclass(frozen=True)
class TermCandidate:
    term: str
    frequency: int
    cohesion_pmi: float
    left_entropy: float
    right_entropy: float


@dataclass(frozen=True)
class FilterThresholds:
    min_pmi: float = 3.0
    min_entropy: float = 1.0
    min_freq: int = 5


def unit_segments(text: str) -> list[list[str]]:
    """Runs of mining units, broken at punctuation and at script changes."""
    segments: list[list[str]] = []
    current: list[str] = []
    script = None
    for tok in tokenize_spans(text)[1]:
        if tok.is_punct:
            if current:
                segments.append(current)
            current, script = [], None
            continue
        tok_script = "cjk" if is_cjk(tok.text[0]) else "word"
        if script is not None and tok_script != script and current:
            segments.append(current)
            current = []
        current.append(tok.text)
        script = tok_script
    if current:
        segments.append(current)
    return segments


def join_units(units: tuple[str, ...]) -> str:
    if units and is_cjk(units[0][0]):
        return "".join(units)
    return " ".join(units)


def _count_text(args: tuple[str, int]) -> tuple[Counter, int]:
    text, max_n = args
    counts: Counter = Counter()
    units = 0
    for seg in unit_segments(text):
        units += len(seg)
        for i in range(len(seg)):
            for n in range(1, min(max_n, len(seg) - i) + 1):
                counts[tuple(seg[i:i + n])] += 1
    return counts, units


def _neighbours_text(args: tuple[str, int, frozenset]) -> dict:
    text, max_n, wanted = args
    left: dict = defaultdict(Counter)
    right: dict = defaultdict(Counter)
    for seg in unit_segments(text):
        for i in range(len(seg)):
            for n in range(2, min(max_n, len(seg) - i) + 1):
                gram = tuple(seg[i:i + n])
                if gram not in wanted:
                    continue
                if i > 0:
                    left[gram][seg[i - 1]] += 1
                if i + n < len(seg):
                    right[gram][seg[i + n]] += 1
    return {"left": left, "right": right}


def entropy_bits(counter: Counter) -> float:
    total = sum(counter.values())
    if total == 0:
        return 0.0
    h = -sum((c / total) * math.log2(c / total) for c in counter.values())
    return max(h, 0.0)


def _texts_of(source) -> list[str]:
    if hasattr(source, "scan"):
        return [p.text for p in source.scan()]
    return [t for t in source]


def _map(fn, items: list, workers: int) -> Iterator:
    if workers <= 1 or len(items) < 2:
        return map(fn, items)
    pool = ProcessPoolExecutor(max_workers=workers)
    try:
        return iter(list(pool.map(fn, items, chunksize=max(1, len(items) // (workers * 4)))))
    finally:
        pool.shutdown()


def mine_candidates(source, max_ngram: int = 6, min_freq: int = 5, workers: int = 1) -> list[TermCandidate]:
    """Score every multi-unit n-gram occurring at least ``min_freq`` times.

    ``source`` is a store (anything with ``scan()``) or an iterable of texts.
    Probabilities are counts over the total number of units in the corpus.
    """
    texts = _texts_of(source)
    if not texts:
        raise MiningError("cannot mine candidates from an empty corpus")
    counts: Counter = Counter()
    total = 0
    # Counter addition is commutative, so the merge is order independent.
    for c, u in _map(_count_text, [(t, max_ngram) for t in texts], workers):
        counts.update(c)
        total += u
    if total == 0:
        raise MiningError("corpus contains no minable units")

    wanted = frozenset(g for g, c in counts.items() if len(g) >= 2 and c >= min_freq)
    left: dict = defaultdict(Counter)
    right: dict = defaultdict(Counter)
    for part in _map(_neighbours_text, [(t, max_ngram, wanted) for t in texts], workers):
        for gram, c in part["left"].items():
            left[gram].update(c)
        for gram, c in part["right"].items():
            right[gram].update(c)

    out = []
    for gram in wanted:
        p = counts[gram] / total
        worst = max(
            (counts[gram[:s]] / total) * (counts[gram[s:]] / total) for s in range(1, len(gram))
        )
        out.append(
            TermCandidate(
                term=join_units(gram),
                frequency=counts[gram],
                cohesion_pmi=math.log2(p / worst),
                left_entropy=entropy_bits(left[gram]),
                right_entropy=entropy_bits(right[gram]),
            )
        )
    out.sort(key=lambda c: (-c.frequency, c.term))
    return out


def filter_candidates(
    cands: Iterable[TermCandidate],
    thresholds: FilterThresholds = FilterThresholds(),
    seed: Lexicon | None = None,
) -> list[TermCandidate]:
    known = seed.terms if seed is not None else frozenset()
    return [
        c
        for c in cands
        if c.frequency >= thresholds.min_freq
        and c.cohesion_pmi >= thresholds.min_pmi
        and c.left_entropy >= thresholds.min_entropy
        and c.right_entropy >= thresholds.min_entropy
        and canonical_term(c.term) not in known
    ]


_LABELS = {"PATHOLOGY": PATHOLOGY, "GENERIC_MEDICAL": GENERIC, "REJECT": None}


def parse_label(reply: str) -> str | None:
    """Return the verdict label, or raise ValueError if the reply is not one."""
    line = reply.strip().splitlines()[0] if reply.strip() else ""
    label = line.strip().strip(".:;'\"`*").strip().upper().replace(" ", "_").replace("-", "_")
    if label not in _LABELS:
        raise ValueError(f"unrecognised verdict {reply!r}")
    return label


def llm_validate(cands: Iterable[TermCandidate | str], gateway) -> list[LexiconEntry]:
    """Ask the judge for one label per term; keep PATHOLOGY/GENERIC_MEDICAL."""
    terms = [c.term if isinstance(c, TermCandidate) else c for c in cands]
    entries = []
    unparseable = 0
    for term in terms:
        reply = gateway.chat(prompts.render("lexicon_validate", term=term))
        try:
            label = parse_label(reply)
        except ValueError:
            unparseable += 1
            log.warning("dropping %r: unparseable verdict %r", term, reply[:80])
            continue
        category = _LABELS[label]
        if category is not None:
            entries.append(LexiconEntry(canonical_term(term), category, "mined", True))
    if terms and unparseable == len(terms):
        raise ValidationError(f"all {len(terms)} verdicts were unparseable")
    return entries
