import csv

import numpy as np
import pytest

from evidencerag.benchmark import BenchCandidate, BenchmarkItem
from evidencerag.errors import MetricError
from evidencerag.evaluation import (
    CandidateRanker,
    QaRecord,
    QaReport,
    keyword_score,
    oracle_ranker,
    parse_ratio,
    judged_coverage,
    retrieval_metrics,
    run_qa_eval,
    run_retrieval_eval,
    semantic_similarity,
    sweep,
    write_qa_tsv,
    write_retrieval_tsv,
    write_sweep,
)
from evidencerag.gateway import Gateway, ProviderConfig
from evidencerag.generate import Answer
from evidencerag.levels import CANONICAL_SCORES
from evidencerag.mock import MockBackend

LEVELS_14 = ["P1", "P1", "P2", "P2", "P3", "P3", "A1", "A1", "A2", "A2", "A3", "A3", "A4", "A4"]


def _item(qid="q1", levels=LEVELS_14):
    cands = [BenchCandidate(f"candidate {i}", lv, CANONICAL_SCORES[lv]) for i, lv in enumerate(levels)]
    return BenchmarkItem(qid, "What is x?", "x is renal clear cell", ["renal", "clear cell"], 0.3, cands)


def test_metrics_worked_example():
    # positives at places 1, 3, 5, 7, 9, 11; negatives fill the even places
    ranking = [0, 6, 1, 7, 2, 8, 3, 9, 4, 10, 5, 11, 12, 13]
    r = retrieval_metrics(ranking, _item())
    assert r.precision_at_5 == pytest.approx(3 / 5)
    assert r.hit_at_6 == 3
    assert r.mean_rank == pytest.approx((1 + 3 + 5 + 7 + 9 + 11) / 6)
    assert r.ior_positive == 1.0
    # discordant pairs: each of A1 (0.25) placed above later positives
    assert 0 < r.ior_global < 1


def test_metrics_reject_bad_rankings():
    with pytest.raises(MetricError):
        retrieval_metrics(list(range(13)), _item())
    with pytest.raises(MetricError):
        retrieval_metrics([0] * 14, _item())


def test_retrieval_eval_collects_failures(tmp_path):
    items = [_item("q1"), _item("q2")]
    report = run_retrieval_eval(items, lambda it: oracle_ranker(it) if it.question_id == "q1" else [0])
    assert [r.question_id for r in report.records] == ["q1"]
    assert report.failures[0][0] == "q2" and report.failure_rate == 0.5
    path = tmp_path / "r.tsv"
    write_retrieval_tsv(report, path)
    rows = list(csv.reader(path.open(), delimiter="\t"))
    assert rows[0] == ["question_id", "precision_at_5", "hit_at_6", "mean_rank", "ior_global", "ior_positive", "error"]
    assert rows[1][:3] == ["q1", "1.000000", "6"]
    assert rows[2][0] == "q2" and rows[2][-1].startswith("MetricError")
    assert rows[3][0] == "MEAN" and rows[3][-1] == "failed=1"


def test_keyword_score_folds_case_and_whitespace_only():
    assert keyword_score("RENAL tumour with Clear\n  cell change", ["renal", "clear cell", "grade"]) == pytest.approx(2 / 3)
    # NFC, not NFKC: fullwidth letters stay distinct, composed accents match
    assert keyword_score("Ｃｌｅａｒ cell", ["clear cell"]) == 0.0
    assert keyword_score("cafe\u0301", ["caf\u00e9"]) == 1.0
    with pytest.raises(MetricError):
        keyword_score("x", [])


def test_semantic_similarity_is_clamped():
    gw = Gateway(ProviderConfig(), MockBackend({"embed": {"vectors": {"a": [1.0, 0.0], "b": [-1.0, 0.1], "c": [1.0, 1.0]}}}))
    assert semantic_similarity("a", "b", gw) == 0.0
    assert semantic_similarity("a", "c", gw) == pytest.approx(np.sqrt(0.5))
    assert semantic_similarity("", "c", gw) == 0.0


@pytest.mark.parametrize("reply, value", [("3/4", 0.75), ("Points:\n 2 / 5 ", 0.4), ("0/3", 0.0)])
def test_parse_ratio(reply, value):
    assert parse_ratio(reply) == value


@pytest.mark.parametrize("reply", ["three of four", "5/4", "1/0", "1/2\n2/3"])
def test_parse_ratio_rejects(reply):
    with pytest.raises(ValueError):
        parse_ratio(reply)


def test_unusable_judge_verdicts_become_missing():
    gw = Gateway(ProviderConfig(), MockBackend({"chat": [{"reply": "most of them"}]}))
    assert judged_coverage("answer", "reference", gw) is None
    assert gw.backend_calls == 2


class _FakePipeline:
    def __init__(self, text):
        self.text = text

    def answer(self, question):
        return Answer(question, self.text, [], None, [])

    def evidence_block(self, answer):
        return ""


def _qa_gateways(coverage_reply="2/4"):
    judge = Gateway(
        ProviderConfig(),
        MockBackend({"chat": [{"system_contains": "reference answer", "reply": coverage_reply}, {"reply": "1/1"}]}),
    )
    embedder = Gateway(ProviderConfig(), MockBackend({"embed": {"dim": 32, "mode": "hash"}}))
    return embedder, judge


def test_qa_eval_and_report(tmp_path):
    embedder, judge = _qa_gateways("garbled")
    report = run_qa_eval([_item("q1"), _item("q2")], _FakePipeline("x is renal"), embedder, judge)
    assert [r.keyword for r in report.records] == [0.5, 0.5]
    assert report.missing == {"keyword": 0, "coverage": 2, "faithfulness": 0, "semantic_similarity": 0}
    assert report.means["coverage"] is None and report.means["faithfulness"] == 1.0
    path = tmp_path / "qa.tsv"
    write_qa_tsv(report, path)
    rows = list(csv.reader(path.open(), delimiter="\t"))
    assert rows[1][2] == "" and rows[-1] == ["MISSING", "0", "2", "0", "0", ""]


def test_qa_means_skip_missing_values():
    report = QaReport([QaRecord("a", 1.0, None, 0.5, 0.2), QaRecord("b", 0.0, 0.5, None, 0.4)])
    assert report.means == pytest.approx({"keyword": 0.5, "coverage": 0.5, "faithfulness": 0.5, "semantic_similarity": 0.3})


def test_sweep_rows_and_files(tmp_path):
    embedder, judge = _qa_gateways()
    seen = []

    def make(param, value):
        seen.append((param, value))
        return _FakePipeline("x is renal clear cell" if value > 1 else "nothing")

    rows = sweep("c", [1, 3], [_item()], make, embedder, judge)
    assert seen == [("c", 1), ("c", 3)]
    assert [(r["param"], r["value"], r["keyword"], r["coverage"]) for r in rows] == [("C", 1, 0.0, 0.5), ("C", 3, 1.0, 0.5)]
    write_sweep(rows, tmp_path / "s.csv", tmp_path / "s.tsv")
    lines = (tmp_path / "s.csv").read_text().splitlines()
    assert lines[0] == "param,value,keyword,coverage,faithfulness,semantic"
    assert lines[1].startswith("C,1,0.000000,0.500000,1.000000,")
    assert (tmp_path / "s.tsv").read_text().splitlines()[0].split("\t")[0] == "param"
    with pytest.raises(MetricError):
        sweep("w", [1], [], make, embedder, judge)


def test_candidate_ranker_modes():
    with pytest.raises(MetricError):
        CandidateRanker("bm25")
    embedder = Gateway(ProviderConfig(), MockBackend({"embed": {"dim": 64, "mode": "hash"}}))
    ranking = CandidateRanker("dense", embedder=embedder)(_item())
    assert sorted(ranking) == list(range(14))
