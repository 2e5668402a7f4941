"""Benchmark construction: questions from passages, leveled candidates, support scoring.

Per question the candidate pool mixes positives (P1 source and its nearest
neighbour, P2 truncated halves of P1, P3 adjacent passages) with negatives
(A1 other-subfield passages, A2 vague rewrites, A3 contradicting rewrites,
A4 boilerplate), then a judge confirms each level and assigns a rank score.
"""

from __future__ import annotations

import csv
import logging
import os
import random
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

from . import prompts
from .benchmark import CANDIDATES_PER_ITEM, BenchCandidate, BenchmarkItem
from .errors import BenchmarkError, ConfigError, ConstructionError
from .levels import CANONICAL_SCORES, LEVELS, MAX_RANK_SCORE, MIN_RANK_SCORE, is_positive
from .store import Passage, Store
from .text import content_hash, fold

log = logging.getLogger(__name__)

BOILERPLATE_SUBFIELD = "boilerplate"
_BOILERPLATE = re.compile(
    r"acknowledg|funding|grant (?:no|number)|conflicts? of interest|competing interests|"
    r"all rights reserved|copyright|corresponding author|author contributions",
    re.IGNORECASE,
)


@dataclass(frozen=True)
class LevelPlan:
    counts: tuple[tuple[str, int], ...] = tuple((lv, 2) for lv in LEVELS)

    def __post_init__(self):
        d = dict(self.counts)
        if set(d) != set(LEVELS):
            raise ConfigError(f"level plan must cover exactly {', '.join(LEVELS)}")
        if any(v < 1 for v in d.values()):
            raise ConfigError("every level needs at least one candidate")
        if sum(d.values()) != CANDIDATES_PER_ITEM:
            raise ConfigError(f"level plan must total {CANDIDATES_PER_ITEM}, got {sum(d.values())}")

    @classmethod
    def from_dict(cls, counts: dict[str, int]) -> "LevelPlan":
        return cls(tuple((lv, int(counts[lv])) for lv in LEVELS))

    def __getitem__(self, level: str) -> int:
        return dict(self.counts)[level]


@dataclass(frozen=True)
class GeneratedQuestion:
    question: str
    reference_answer: str
    source_ref: str
    keywords: tuple[str, ...]


@dataclass
class BuiltCandidate:
    text: str
    intended_level: str
    source_ref: str | None = None
    level: str | None = None
    rank_score: float | None = None
    justification: str = ""
    verified: bool = False

    @property
    def content_hash(self) -> str:
        return content_hash(self.text)


@dataclass
class BuiltItem:
    item: BenchmarkItem
    source_ref: str
    provenance: list[BuiltCandidate] = field(default_factory=list)


def is_boilerplate(store: Store, p: Passage) -> bool:
    return store.document(p.doc_id).get("subfield") == BOILERPLATE_SUBFIELD or bool(_BOILERPLATE.search(p.text))


# -- stage 1: questions ------------------------------------------------------


def parse_qa(reply: str) -> tuple[str, str, tuple[str, ...]]:
    fields = {}
    for line in reply.strip().splitlines():
        key, sep, value = line.partition(":")
        if sep and key.strip().upper() in ("QUESTION", "ANSWER", "KEYWORDS"):
            fields[key.strip().upper()] = value.strip()
    if set(fields) != {"QUESTION", "ANSWER", "KEYWORDS"} or not fields["QUESTION"] or not fields["ANSWER"]:
        raise ValueError("reply lacks QUESTION/ANSWER/KEYWORDS lines")
    keywords = tuple(dict.fromkeys(k.strip() for k in re.split(r"[;,]", fields["KEYWORDS"]) if k.strip()))
    if not 3 <= len(keywords) <= 8:
        raise ValueError(f"expected 3-8 keywords, got {len(keywords)}")
    return fields["QUESTION"], fields["ANSWER"], keywords


def grounded(answer: str, passage: str, keywords) -> bool:
    a, p = fold(answer), fold(passage)
    return any(fold(k) in a and fold(k) in p for k in keywords)


def generate_questions(store: Store, gateway, n: int, seed: int) -> list[GeneratedQuestion]:
    """Sample passages and ask for one grounded question/answer/keywords each."""
    if len(store) == 0:
        raise ConstructionError("cannot generate questions from an empty store")
    rng = random.Random(seed)
    eligible = [p for p in store.scan() if not is_boilerplate(store, p)]
    rng.shuffle(eligible)
    out: list[GeneratedQuestion] = []
    for p in eligible:
        if len(out) == n:
            break
        reply = gateway.chat(prompts.render("bench_question", passage=p.text))
        try:
            q, a, kws = parse_qa(reply)
        except ValueError as exc:
            log.info("%s: skipping passage: %s", p.passage_id, exc)
            continue
        if not grounded(a, p.text, kws):
            log.info("%s: answer shares no keyword with the passage", p.passage_id)
            continue
        out.append(GeneratedQuestion(q, a, p.passage_id, kws))
    if len(out) * 2 < n:
        raise ConstructionError(f"only {len(out)} of {n} requested questions could be generated")
    return out


# -- stage 2: candidates -----------------------------------------------------


def halves(text: str) -> tuple[str, str]:
    """Split near the middle, on whitespace when there is any."""
    mid = len(text) // 2
    spaces = [m.start() for m in re.finditer(r"\s", text)]
    cut = min(spaces, key=lambda i: abs(i - mid)) if spaces else mid
    return text[:cut].rstrip(), text[cut:].lstrip()


class _Pool:
    def __init__(self):
        self.items: list[BuiltCandidate] = []
        self.hashes: set[str] = set()

    def add(self, cand: BuiltCandidate) -> bool:
        if not cand.text.strip() or cand.content_hash in self.hashes:
            return False
        self.hashes.add(cand.content_hash)
        self.items.append(cand)
        return True

    def count(self, level: str) -> int:
        return sum(c.intended_level == level for c in self.items)


def build_candidates(
    q: GeneratedQuestion,
    store: Store,
    plan: LevelPlan,
    gateway,
    dense_index,
    rng: random.Random,
) -> list[BuiltCandidate]:
    source = store.get(q.source_ref)
    pool = _Pool()

    def need(level: str) -> int:
        return plan[level] - pool.count(level)

    def require(level: str, why: str) -> None:
        if need(level) > 0:
            raise ConstructionError(f"{q.source_ref}: level {level}: {why}")

    pool.add(BuiltCandidate(source.text, "P1", source.passage_id))
    if need("P1") > 0:
        # Walk the nearest neighbours of the source in embedding space.
        for ref, _ in dense_index.top_k(dense_index.vector(source.passage_id), len(dense_index)):
            if need("P1") == 0:
                break
            p = store.get(ref)
            if ref != source.passage_id and not is_boilerplate(store, p):
                pool.add(BuiltCandidate(p.text, "P1", ref))
    require("P1", "no distinct dense neighbour")
    p1 = [c for c in pool.items if c.intended_level == "P1"]

    for part in (0, 1):
        for c in p1:
            if need("P2") == 0:
                break
            pool.add(BuiltCandidate(halves(c.text)[part], "P2", c.source_ref))
    require("P2", "P1 texts too short to truncate")

    for base in [source] + [store.get(c.source_ref) for c in p1[1:]]:
        for offset in (-1, 1, -2, 2):
            if need("P3") == 0:
                break
            adj = store.neighbour(base, offset)
            if adj is not None and not is_boilerplate(store, adj):
                pool.add(BuiltCandidate(adj.text, "P3", adj.passage_id))
    require("P3", "no adjacent passages in the source document")

    own = store.subfield_of(source.passage_id)
    others = [p for p in store.scan() if store.subfield_of(p.passage_id) != own and not is_boilerplate(store, p)]
    rng.shuffle(others)
    for p in others:
        if need("A1") == 0:
            break
        pool.add(BuiltCandidate(p.text, "A1", p.passage_id))
    require("A1", f"no passages outside subfield {own!r}")

    # Rewrites start from the P1 texts; near-identical P1s can yield identical
    # rewrites, so the adjacent (P3) passages serve as further sources.
    rewrite_sources = p1 + [c for c in pool.items if c.intended_level == "P3"]
    for level, template in (("A2", "bench_vague"), ("A3", "bench_contradict")):
        for c in rewrite_sources:
            if need(level) == 0:
                break
            rewritten = gateway.chat(prompts.render(template, passage=c.text)).strip()
            pool.add(BuiltCandidate(rewritten, level, c.source_ref))
        require(level, "rewrites were empty or duplicated other candidates")

    boiler = [p for p in store.scan() if is_boilerplate(store, p)]
    rng.shuffle(boiler)
    for p in boiler:
        if need("A4") == 0:
            break
        pool.add(BuiltCandidate(p.text, "A4", p.passage_id))
    require("A4", "boilerplate pool is empty")

    items = pool.items
    rng.shuffle(items)
    return items


# -- stage 3: support scoring ------------------------------------------------


def parse_support(reply: str) -> tuple[str, float, str]:
    lines = [ln.strip() for ln in reply.strip().splitlines() if "|" in ln]
    if len(lines) != 1:
        raise ValueError("expected exactly one LEVEL|SCORE|JUSTIFICATION line")
    parts = lines[0].split("|", 2)
    if len(parts) != 3 or parts[0].strip().upper() not in LEVELS:
        raise ValueError(f"bad verdict {lines[0]!r}")
    return parts[0].strip().upper(), float(parts[1]), parts[2].strip()


def difficulty_of(cands) -> float:
    pos = [c.rank_score for c in cands if is_positive(c.level)]
    if not pos:
        return 1.0
    return min(1.0, max(0.0, 1.0 - sum(pos) / len(pos)))


def score_support(q: GeneratedQuestion, cands: list[BuiltCandidate], gateway) -> tuple[list[BuiltCandidate], float]:
    """Annotate level, rank score and justification per candidate; return difficulty."""
    for c in cands:
        reply = gateway.chat(
            prompts.render(
                "bench_support",
                question=q.question,
                answer=q.reference_answer,
                passage=c.text,
                level=c.intended_level,
            )
        )
        try:
            level, score, why = parse_support(reply)
        except ValueError:
            c.level = c.intended_level
            c.rank_score = CANONICAL_SCORES[c.intended_level]
            c.justification = "unverified: judge verdict could not be parsed"
            c.verified = False
            continue
        c.level = level
        c.rank_score = min(MAX_RANK_SCORE, max(MIN_RANK_SCORE, score))
        c.justification = why
        c.verified = True
    return cands, difficulty_of(cands)


# -- orchestration -----------------------------------------------------------


def build_benchmark(
    store: Store,
    gateway,
    dense_index,
    n: int,
    seed: int,
    plan: LevelPlan = LevelPlan(),
    judge=None,
) -> list[BuiltItem]:
    """All three stages. ``gateway`` writes questions and rewrites; ``judge`` scores."""
    judge = judge or gateway
    questions = generate_questions(store, gateway, n, seed)

    def one(indexed: tuple[int, GeneratedQuestion]) -> BuiltItem | None:
        i, q = indexed
        rng = random.Random(f"{seed}:{i}")
        try:
            cands = build_candidates(q, store, plan, gateway, dense_index, rng)
        except ConstructionError as exc:
            log.warning("q%04d: %s", i, exc)
            return None
        cands, difficulty = score_support(q, cands, judge)
        item = BenchmarkItem(
            question_id=f"q{i:04d}",
            question=q.question,
            reference_answer=q.reference_answer,
            keywords=list(q.keywords),
            difficulty=difficulty,
            candidates=[BenchCandidate(c.text, c.level, c.rank_score, c.justification) for c in cands],
        )
        try:
            item.validate()
        except BenchmarkError as exc:
            log.warning("dropping %s: %s", item.question_id, exc)
            return None
        return BuiltItem(item, q.source_ref, cands)

    workers = max(1, getattr(getattr(gateway, "cfg", None), "max_in_flight", 1))
    with ThreadPoolExecutor(max_workers=workers) as pool:
        built = list(pool.map(one, enumerate(questions)))
    out = [b for b in built if b is not None]
    if not out:
        raise ConstructionError("no benchmark item survived construction")
    return out


def select_hardest(items: list[BenchmarkItem], m: int) -> list[BenchmarkItem]:
    """The ``m`` highest-difficulty items, ties broken by question_id."""
    if m > len(items):
        log.warning("asked for %d hardest items but only %d exist", m, len(items))
    return sorted(items, key=lambda it: (-it.difficulty, it.question_id))[:m]


REVIEW_COLUMNS = (
    "question_id",
    "candidate_index",
    "intended_level",
    "level",
    "rank_score",
    "verified",
    "human_level",
    "source_ref",
    "text",
)


def export_review(built: list[BuiltItem], path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(REVIEW_COLUMNS)
        for b in built:
            for i, c in enumerate(b.provenance):
                w.writerow(
                    (
                        b.item.question_id,
                        i,
                        c.intended_level,
                        c.level,
                        f"{c.rank_score:.2f}",
                        str(c.verified).lower(),
                        "",
                        c.source_ref or "",
                        c.text.replace("\t", " ").replace("\n", " "),
                    )
                )


def apply_review(items: list[BenchmarkItem], path: str | os.PathLike) -> list[BenchmarkItem]:
    """Apply non-empty ``human_level`` cells; the level's canonical score replaces the judge's."""
    by_id = {it.question_id: it for it in items}
    touched = set()
    with open(path, encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh, delimiter="\t"):
            level = (row.get("human_level") or "").strip().upper()
            if not level:
                continue
            if level not in LEVELS:
                raise BenchmarkError(f"review row {row['question_id']}/{row['candidate_index']}: bad level {level!r}")
            try:
                item = by_id[row["question_id"]]
                cand = item.candidates[int(row["candidate_index"])]
            except (KeyError, IndexError, ValueError) as exc:
                raise BenchmarkError(f"review row does not match the benchmark: {exc}") from None
            cand.level = level
            cand.rank_score = CANONICAL_SCORES[level]
            cand.justification = f"human override: {level}"
            touched.add(item.question_id)
    for qid in touched:
        item = by_id[qid]
        item.difficulty = difficulty_of(item.candidates)
        item.validate()
    return items
