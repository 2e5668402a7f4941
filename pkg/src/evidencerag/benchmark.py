"""Benchmark records and their JSON-lines file format.

A retrieval benchmark line carries 14 leveled candidates per question; a QA
benchmark line has the same fields minus ``candidates``.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

from .errors import BenchmarkError
from .levels import LEVELS, MAX_RANK_SCORE, MIN_RANK_SCORE, is_positive

CANDIDATES_PER_ITEM = 14


@dataclass
class BenchCandidate:
    text: str
    level: str
    rank_score: float
    justification: str = ""

    @property
    def positive(self) -> bool:
        return is_positive(self.level)

    def to_dict(self) -> dict:
        return {
            "text": self.text,
            "level": self.level,
            "rank_score": self.rank_score,
            "justification": self.justification,
        }


@dataclass
class BenchmarkItem:
    question_id: str
    question: str
    reference_answer: str
    keywords: list[str]
    difficulty: float = 0.0
    candidates: list[BenchCandidate] = field(default_factory=list)

    def validate(self, require_candidates: bool = True) -> None:
        where = f"question {self.question_id!r}"
        if not self.question_id or not self.question.strip():
            raise BenchmarkError(f"{where}: empty id or question")
        if not isinstance(self.keywords, list) or not all(isinstance(k, str) and k.strip() for k in self.keywords):
            raise BenchmarkError(f"{where}: keywords must be a list of non-empty strings")
        if not 0.0 <= self.difficulty <= 1.0:
            raise BenchmarkError(f"{where}: difficulty {self.difficulty} outside [0, 1]")
        if not require_candidates:
            return
        if len(self.candidates) != CANDIDATES_PER_ITEM:
            raise BenchmarkError(f"{where}: {len(self.candidates)} candidates, expected {CANDIDATES_PER_ITEM}")
        for c in self.candidates:
            if c.level not in LEVELS:
                raise BenchmarkError(f"{where}: unknown level {c.level!r}")
            if not MIN_RANK_SCORE <= c.rank_score <= MAX_RANK_SCORE:
                raise BenchmarkError(f"{where}: rank_score {c.rank_score} outside [0.10, 0.95]")
            if not c.text:
                raise BenchmarkError(f"{where}: empty candidate text")
        if not any(c.positive for c in self.candidates):
            raise BenchmarkError(f"{where}: no positive (P-level) candidate")
        if all(c.positive for c in self.candidates):
            raise BenchmarkError(f"{where}: no negative (A-level) candidate")

    @property
    def positives(self) -> list[int]:
        return [i for i, c in enumerate(self.candidates) if c.positive]

    def to_dict(self, qa_only: bool = False) -> dict:
        d = {
            "question_id": self.question_id,
            "question": self.question,
            "reference_answer": self.reference_answer,
            "keywords": list(self.keywords),
            "difficulty": self.difficulty,
        }
        if not qa_only:
            d["candidates"] = [c.to_dict() for c in self.candidates]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "BenchmarkItem":
        try:
            cands = [
                BenchCandidate(str(c["text"]), str(c["level"]), float(c["rank_score"]), str(c.get("justification", "")))
                for c in d.get("candidates", [])
            ]
            return cls(
                question_id=str(d["question_id"]),
                question=str(d["question"]),
                reference_answer=str(d.get("reference_answer", "")),
                keywords=list(d.get("keywords", [])),
                difficulty=float(d.get("difficulty", 0.0)),
                candidates=cands,
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise BenchmarkError(f"malformed benchmark record: {exc}") from exc


def load_benchmark(path: str | os.PathLike, require_candidates: bool | None = None) -> list[BenchmarkItem]:
    """Read and validate a benchmark file.

    ``require_candidates=None`` infers the flavour from the first record.
    """
    items = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                raw = json.loads(line)
            except ValueError as exc:
                raise BenchmarkError(f"{path}:{lineno}: not JSON: {exc}") from exc
            if require_candidates is None:
                require_candidates = "candidates" in raw
            item = BenchmarkItem.from_dict(raw)
            try:
                item.validate(require_candidates)
            except BenchmarkError as exc:
                raise BenchmarkError(f"{path}:{lineno}: {exc}") from exc
            items.append(item)
    ids = [i.question_id for i in items]
    if len(set(ids)) != len(ids):
        raise BenchmarkError(f"{path}: duplicate question_id")
    return items


def save_benchmark(items, path: str | os.PathLike, qa_only: bool = False) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for item in items:
            fh.write(json.dumps(item.to_dict(qa_only), ensure_ascii=False) + "\n")
