"""Supportive evidence discrimination.

A judge model scores each (question, passage) pair for factual support.
Candidates below the threshold are dropped; survivors are re-ranked by a
blend of their fused retrieval score and their support score.
"""

from __future__ import annotations

import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Mapping, Sequence

from . import prompts
from .benchmark import BenchmarkItem
from .errors import BenchmarkError, ConfigError, ExportError, JudgmentError, TransportError
from .fusion import Candidate
from .levels import CANONICAL_SCORES, LEVELS, consistent, is_positive

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SedConfig:
    threshold: float = 0.5
    alpha: float = 0.5

    def __post_init__(self):
        if not 0.0 <= self.threshold <= 1.0:
            raise ConfigError("SED threshold must lie in [0, 1]")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError("SED alpha must lie in [0, 1]")


@dataclass(frozen=True)
class SupportJudgment:
    passage_ref: str
    support_score: float
    level: str | None
    rationale: str

    def __post_init__(self):
        if not 0.0 <= self.support_score <= 1.0:
            raise ValueError(f"support score {self.support_score} outside [0, 1]")
        if self.level is not None and not consistent(self.level, self.support_score):
            raise ValueError(f"score {self.support_score} inconsistent with level {self.level}")


@dataclass(frozen=True)
class Evidence:
    passage_ref: str
    text: str
    fused: float
    support_score: float
    final: float
    level: str | None
    rationale: str = ""


def parse_verdict(reply: str) -> tuple[str, float, str]:
    """Parse ``LEVEL|SCORE|RATIONALE``; raises ValueError on any deviation."""
    lines = [ln.strip() for ln in reply.strip().splitlines() if "|" in ln]
    if len(lines) != 1:
        raise ValueError("expected exactly one LEVEL|SCORE|RATIONALE line")
    parts = lines[0].split("|", 2)
    if len(parts) != 3:
        raise ValueError("expected three '|'-separated fields")
    level = parts[0].strip().upper()
    if level not in LEVELS:
        raise ValueError(f"unknown level {parts[0]!r}")
    score = float(parts[1])
    if not 0.0 <= score <= 1.0:
        raise ValueError(f"score {score} outside [0, 1]")
    if not consistent(level, score):
        raise ValueError(f"score {score} too far from canonical {CANONICAL_SCORES[level]} for {level}")
    return level, score, parts[2].strip()


def judge(question: str, passage_ref: str, passage_text: str, gateway) -> SupportJudgment:
    """Judge one pair, retrying once on an unparseable verdict.

    Raises JudgmentError when the provider fails outright.
    """
    req = prompts.render("sed_judge", question=question, passage=passage_text)
    for attempt in range(2):
        try:
            reply = gateway.chat(req)
        except TransportError as exc:
            raise JudgmentError(f"{passage_ref}: judge unavailable: {exc}") from exc
        try:
            level, score, rationale = parse_verdict(reply)
            return SupportJudgment(passage_ref, score, level, rationale)
        except ValueError as exc:
            log.info("%s: unparseable verdict (attempt %d): %s", passage_ref, attempt + 1, exc)
            req = prompts.with_retry_note(req)
    return SupportJudgment(passage_ref, 0.0, None, "judge verdict could not be parsed")


def judge_pool(
    question: str,
    candidates: Sequence[Candidate],
    texts: Mapping[str, str],
    gateway,
) -> dict[str, SupportJudgment | None]:
    """Judge every candidate; a ``None`` value marks an unjudged candidate."""

    def one(c: Candidate) -> SupportJudgment | None:
        try:
            return judge(question, c.passage_ref, texts[c.passage_ref], gateway)
        except JudgmentError as exc:
            log.warning("%s", exc)
            return None

    workers = max(1, min(len(candidates), gateway.cfg.max_in_flight))
    with ThreadPoolExecutor(max_workers=workers) as pool:
        results = list(pool.map(one, candidates))
    return {c.passage_ref: j for c, j in zip(candidates, results)}


def filter_and_rerank(
    candidates: Sequence[Candidate],
    judgments: Mapping[str, SupportJudgment | None],
    cfg: SedConfig = SedConfig(),
    texts: Mapping[str, str] | None = None,
) -> list[Evidence]:
    """Drop unjudged and low-support candidates, blend and sort the rest.

    An empty result is valid: it means no passage supports an answer.
    """
    out = []
    for c in candidates:
        j = judgments.get(c.passage_ref)
        if j is None or j.support_score < cfg.threshold:
            continue
        final = cfg.alpha * c.fused + (1.0 - cfg.alpha) * j.support_score
        text = texts.get(c.passage_ref, "") if texts is not None else ""
        out.append(Evidence(c.passage_ref, text, c.fused, j.support_score, final, j.level, j.rationale))
    out.sort(key=lambda e: (-e.final, e.passage_ref))
    return out


def training_pairs(items: Sequence[BenchmarkItem]) -> list[dict]:
    records = []
    for item in items:
        try:
            item.validate(require_candidates=True)
        except BenchmarkError as exc:
            raise ExportError(f"cannot export training pairs: {exc}") from exc
        for c in item.candidates:
            records.append(
                {
                    "question": item.question,
                    "passage": c.text,
                    "label": 1 if is_positive(c.level) else 0,
                    "level": c.level,
                    "rank_score": c.rank_score,
                }
            )
    return records


def export_training_pairs(items: Sequence[BenchmarkItem], path: str | os.PathLike) -> int:
    """Write one labeled (question, passage) record per candidate; returns the count."""
    records = training_pairs(items)
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r, ensure_ascii=False) + "\n")
    return len(records)
