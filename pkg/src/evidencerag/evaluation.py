"""Retrieval and QA metrics, evaluation runs, and K/C ablation sweeps."""

from __future__ import annotations

import csv
import logging
import math
import os
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from itertools import combinations
from typing import Callable, Sequence

import numpy as np

from . import prompts
from .benchmark import CANDIDATES_PER_ITEM, BenchmarkItem
from .errors import MetricError, RagError
from .fusion import RetrievalConfig, fuse
from .sed import SedConfig, filter_and_rerank, judge_pool
from .text import fold

log = logging.getLogger(__name__)

RETRIEVAL_FIELDS = ("precision_at_5", "hit_at_6", "mean_rank", "ior_global", "ior_positive")
QA_FIELDS = ("keyword", "coverage", "faithfulness", "semantic_similarity")
SWEEP_COLUMNS = ("param", "value", "keyword", "coverage", "faithfulness", "semantic")
FAILURE_LIMIT = 0.10


# -- retrieval metrics -------------------------------------------------------


@dataclass(frozen=True)
class RetrievalRecord:
    question_id: str
    precision_at_5: float
    hit_at_6: int
    mean_rank: float
    ior_global: float
    ior_positive: float


def in_order_ratio(positions: Sequence[int], scores: Sequence[float], members: Sequence[int]) -> float:
    """Share of member pairs with distinct gold scores that the ranking orders correctly.

    ``positions[i]`` is candidate i's 0-based place in the ranking. Pairs
    with equal gold scores are not counted; with no countable pair the
    ratio is 1.0.
    """
    agree = total = 0
    for i, j in combinations(members, 2):
        if scores[i] == scores[j]:
            continue
        total += 1
        if (scores[i] > scores[j]) == (positions[i] < positions[j]):
            agree += 1
    return agree / total if total else 1.0


def retrieval_metrics(ranking: Sequence[int], item: BenchmarkItem) -> RetrievalRecord:
    n = len(item.candidates)
    if sorted(ranking) != list(range(n)) or n != CANDIDATES_PER_ITEM:
        raise MetricError(f"{item.question_id}: ranking is not a permutation of the {n} candidates")
    positive = [c.positive for c in item.candidates]
    if not any(positive):
        raise MetricError(f"{item.question_id}: no positive candidates")
    positions = [0] * n
    for place, idx in enumerate(ranking):
        positions[idx] = place
    scores = [c.rank_score for c in item.candidates]
    pos_idx = [i for i in range(n) if positive[i]]
    return RetrievalRecord(
        question_id=item.question_id,
        precision_at_5=sum(positive[i] for i in ranking[:5]) / 5,
        hit_at_6=sum(positive[i] for i in ranking[:6]),
        mean_rank=sum(positions[i] + 1 for i in pos_idx) / len(pos_idx),
        ior_global=in_order_ratio(positions, scores, range(n)),
        ior_positive=in_order_ratio(positions, scores, pos_idx),
    )


# -- QA metrics --------------------------------------------------------------


def keyword_score(answer: str, keywords: Sequence[str]) -> float:
    if not keywords:
        raise MetricError("keyword score needs at least one keyword")
    text = fold(answer)
    return sum(fold(k) in text for k in keywords) / len(keywords)


def semantic_similarity(answer: str, reference: str, gateway) -> float:
    if not answer.strip() or not reference.strip():
        return 0.0
    batch = gateway.embed([answer, reference])
    cos = float(np.dot(batch.vectors[0], batch.vectors[1]))
    return min(1.0, max(0.0, cos))


_RATIO = re.compile(r"^\s*(\d+)\s*/\s*(\d+)\s*$")


def parse_ratio(reply: str) -> float:
    hits = [m for m in (_RATIO.match(ln) for ln in reply.strip().splitlines()) if m]
    if len(hits) != 1:
        raise ValueError(f"expected one N/M line, got {reply[:60]!r}")
    num, den = int(hits[0].group(1)), int(hits[0].group(2))
    if den == 0 or num > den:
        raise ValueError(f"invalid ratio {num}/{den}")
    return num / den


def _judged_ratio(template: str, gateway, **fields) -> float | None:
    req = prompts.render(template, **fields)
    for _ in range(2):
        try:
            return parse_ratio(gateway.chat(req))
        except ValueError as exc:
            log.info("%s: %s", template, exc)
            req = prompts.with_retry_note(req)
    return None


def judged_coverage(answer: str, reference: str, gateway) -> float | None:
    """Share of reference points covered; ``None`` when the verdict is unusable."""
    return _judged_ratio("coverage", gateway, reference=reference, answer=answer)


def judged_faithfulness(answer: str, evidence: str, gateway) -> float | None:
    """Share of answer claims supported by the evidence; ``None`` when unusable."""
    return _judged_ratio("faithfulness", gateway, evidence=evidence or "NO EVIDENCE AVAILABLE", answer=answer)


# -- reports -----------------------------------------------------------------


def _mean(values) -> float | None:
    vals = [v for v in values if v is not None]
    return math.fsum(vals) / len(vals) if vals else None


@dataclass
class RetrievalReport:
    records: list[RetrievalRecord]
    failures: list[tuple[str, str]] = field(default_factory=list)

    @property
    def means(self) -> dict[str, float | None]:
        return {f: _mean(getattr(r, f) for r in self.records) for f in RETRIEVAL_FIELDS}

    @property
    def failure_rate(self) -> float:
        total = len(self.records) + len(self.failures)
        return len(self.failures) / total if total else 0.0


@dataclass(frozen=True)
class QaRecord:
    question_id: str
    keyword: float
    coverage: float | None
    faithfulness: float | None
    semantic_similarity: float


@dataclass
class QaReport:
    records: list[QaRecord]
    failures: list[tuple[str, str]] = field(default_factory=list)

    @property
    def means(self) -> dict[str, float | None]:
        return {f: _mean(getattr(r, f) for r in self.records) for f in QA_FIELDS}

    @property
    def missing(self) -> dict[str, int]:
        return {f: sum(getattr(r, f) is None for r in self.records) for f in QA_FIELDS}

    @property
    def failure_rate(self) -> float:
        total = len(self.records) + len(self.failures)
        return len(self.failures) / total if total else 0.0


def _run(items: Sequence[BenchmarkItem], fn, workers: int):
    def guarded(item):
        try:
            return fn(item), None
        except (RagError, ValueError, KeyError) as exc:
            log.warning("%s failed: %s", item.question_id, exc)
            return None, (item.question_id, f"{type(exc).__name__}: {exc}")

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        results = list(pool.map(guarded, items))
    records = [r for r, _ in results if r is not None]
    failures = [e for _, e in results if e is not None]
    return records, failures


Ranker = Callable[[BenchmarkItem], Sequence[int]]


def run_retrieval_eval(items: Sequence[BenchmarkItem], ranker: Ranker, workers: int = 1) -> RetrievalReport:
    records, failures = _run(items, lambda it: retrieval_metrics(list(ranker(it)), it), workers)
    return RetrievalReport(records, failures)


def run_qa_eval(
    items: Sequence[BenchmarkItem],
    pipeline,
    embedder,
    judge,
    workers: int = 1,
) -> QaReport:
    """Answer every question with ``pipeline`` and score the answers.

    ``pipeline`` needs ``answer(question)`` and ``evidence_block(answer)``.
    """

    def one(item: BenchmarkItem) -> QaRecord:
        ans = pipeline.answer(item.question)
        evidence = pipeline.evidence_block(ans)
        return QaRecord(
            question_id=item.question_id,
            keyword=keyword_score(ans.text, item.keywords),
            coverage=judged_coverage(ans.text, item.reference_answer, judge),
            faithfulness=judged_faithfulness(ans.text, evidence, judge),
            semantic_similarity=semantic_similarity(ans.text, item.reference_answer, embedder),
        )

    records, failures = _run(items, one, workers)
    return QaReport(records, failures)


def sweep(
    param: str,
    values: Sequence[int],
    items: Sequence[BenchmarkItem],
    make_pipeline: Callable[[str, int], object],
    embedder,
    judge,
    workers: int = 1,
) -> list[dict]:
    """Re-run the QA evaluation once per value of ``param`` (``k`` or ``c``)."""
    if param not in ("k", "c"):
        raise MetricError(f"can only sweep k or c, not {param!r}")
    rows = []
    for value in values:
        report = run_qa_eval(items, make_pipeline(param, value), embedder, judge, workers)
        m = report.means
        rows.append(
            {
                "param": param.upper(),
                "value": value,
                "keyword": m["keyword"],
                "coverage": m["coverage"],
                "faithfulness": m["faithfulness"],
                "semantic": m["semantic_similarity"],
            }
        )
    return rows


# -- output ------------------------------------------------------------------


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return f"{v:.6f}"
    return str(v)


def write_retrieval_tsv(report: RetrievalReport, path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(("question_id", *RETRIEVAL_FIELDS, "error"))
        for r in report.records:
            w.writerow((r.question_id, *(_fmt(getattr(r, f)) for f in RETRIEVAL_FIELDS), ""))
        for qid, err in report.failures:
            w.writerow((qid, *([""] * len(RETRIEVAL_FIELDS)), err))
        w.writerow(("MEAN", *(_fmt(report.means[f]) for f in RETRIEVAL_FIELDS), f"failed={len(report.failures)}"))


def write_qa_tsv(report: QaReport, path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(("question_id", *QA_FIELDS, "error"))
        for r in report.records:
            w.writerow((r.question_id, *(_fmt(getattr(r, f)) for f in QA_FIELDS), ""))
        for qid, err in report.failures:
            w.writerow((qid, *([""] * len(QA_FIELDS)), err))
        w.writerow(("MEAN", *(_fmt(report.means[f]) for f in QA_FIELDS), f"failed={len(report.failures)}"))
        w.writerow(("MISSING", *(str(report.missing[f]) for f in QA_FIELDS), ""))


def write_sweep(rows: Sequence[dict], csv_path: str | os.PathLike, tsv_path: str | os.PathLike | None = None) -> None:
    with open(csv_path, "w", encoding="utf-8", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=SWEEP_COLUMNS, lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: _fmt(row[k]) for k in SWEEP_COLUMNS})
    if tsv_path is not None:
        with open(tsv_path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, delimiter="\t", lineterminator="\n")
            w.writerow(SWEEP_COLUMNS)
            for row in rows:
                w.writerow([_fmt(row[k]) for k in SWEEP_COLUMNS])


def report_dict(report) -> dict:
    return {
        "means": report.means,
        "records": [asdict(r) for r in report.records],
        "failures": [{"question_id": q, "error": e} for q, e in report.failures],
        **({"missing": report.missing} if isinstance(report, QaReport) else {}),
    }


# -- rankers over an item's own candidates -----------------------------------


def oracle_ranker(item: BenchmarkItem) -> list[int]:
    """Gold order: rank score descending, candidate index breaking ties."""
    return sorted(range(len(item.candidates)), key=lambda i: (-item.candidates[i].rank_score, i))


def reversed_oracle_ranker(item: BenchmarkItem) -> list[int]:
    return oracle_ranker(item)[::-1]


def _ref(i: int) -> str:
    return f"c{i:02d}"


@dataclass
class CandidateRanker:
    """Ranks one item's candidates with the live retrieval machinery.

    ``mode`` is ``dense``, ``sparse``, ``hybrid`` or ``hybrid_sed``. Dense
    scores are query/candidate cosines; sparse scores are BM25 against the
    corpus index statistics. With ``hybrid_sed`` the judge filters the fused
    pool; survivors come first in final-score order, then the rejected
    candidates in fused order.
    """

    mode: str
    embedder: object = None
    sparse: object = None
    judge: object = None
    retrieval: RetrievalConfig = field(default_factory=RetrievalConfig)
    sed: SedConfig = field(default_factory=SedConfig)

    def __post_init__(self):
        if self.mode not in ("dense", "sparse", "hybrid", "hybrid_sed"):
            raise MetricError(f"unknown ranker mode {self.mode!r}")

    def _dense(self, item: BenchmarkItem) -> list[tuple[str, float]]:
        batch = self.embedder.embed([item.question] + [c.text for c in item.candidates])
        sims = batch.vectors[1:] @ batch.vectors[0]
        return [(_ref(i), float(s)) for i, s in enumerate(sims)]

    def _sparse(self, item: BenchmarkItem) -> list[tuple[str, float]]:
        out = []
        for i, c in enumerate(item.candidates):
            s = self.sparse.score_text(item.question, c.text)
            if s > 0:
                out.append((_ref(i), s))
        return out

    def __call__(self, item: BenchmarkItem) -> list[int]:
        n = len(item.candidates)
        cfg = RetrievalConfig(pool_k=n, w_dense=self.retrieval.w_dense)
        if self.mode == "dense":
            cfg = RetrievalConfig(pool_k=n, w_dense=1.0)
            dense, sparse = self._dense(item), []
        elif self.mode == "sparse":
            cfg = RetrievalConfig(pool_k=n, w_dense=0.0)
            dense, sparse = [], self._sparse(item)
        else:
            dense, sparse = self._dense(item), self._sparse(item)
        pool = fuse(dense, sparse, cfg)
        seen = {c.passage_ref for c in pool}
        # Candidates neither channel scored still need a place in the permutation.
        order = [c.passage_ref for c in pool] + [_ref(i) for i in range(n) if _ref(i) not in seen]
        if self.mode == "hybrid_sed":
            texts = {_ref(i): c.text for i, c in enumerate(item.candidates)}
            judgments = judge_pool(item.question, pool, texts, self.judge)
            kept = [e.passage_ref for e in filter_and_rerank(pool, judgments, self.sed, texts)]
            order = kept + [r for r in order if r not in set(kept)]
        return [int(r[1:]) for r in order]
