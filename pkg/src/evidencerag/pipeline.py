"""The full retrieve, judge, generate loop over loaded indexes."""

from __future__ import annotations

from dataclasses import dataclass, field

from .dense import VectorIndex
from .fusion import Candidate, RetrievalConfig, fuse
from .gateway import Gateway
from .generate import Answer, GenerationConfig, assemble_context, generate_answer
from .sed import Evidence, SedConfig, filter_and_rerank, judge_pool
from .sparse import InvertedIndex
from .store import Store

SEARCH_COLUMNS = (
    "rank",
    "passage_ref",
    "doc_id",
    "seq_no",
    "dense_raw",
    "sparse_raw",
    "dense_norm",
    "sparse_norm",
    "fused",
    "support_score",
    "level",
    "final",
    "kept",
    "text",
)


@dataclass
class Providers:
    embedder: Gateway
    judge: Gateway | None = None
    drafter: Gateway | None = None
    refiner: Gateway | None = None


@dataclass
class Pipeline:
    store: Store
    sparse: InvertedIndex
    dense: VectorIndex
    providers: Providers
    retrieval: RetrievalConfig = field(default_factory=RetrievalConfig)
    sed: SedConfig = field(default_factory=SedConfig)
    generation: GenerationConfig = field(default_factory=GenerationConfig)

    def channel_hits(self, query: str) -> tuple[list[tuple[str, float]], list[tuple[str, float]]]:
        qvec = self.providers.embedder.embed([query]).vectors[0]
        dense_hits = self.dense.top_k(qvec, self.retrieval.pool_k)
        sparse_hits = self.sparse.top_k(query, self.retrieval.pool_k)
        return dense_hits, sparse_hits

    def retrieve(self, query: str) -> list[Candidate]:
        return fuse(*self.channel_hits(query), self.retrieval)

    def texts(self, refs) -> dict[str, str]:
        return {r: self.store.get(r).text for r in refs}

    def judge(self, query: str, pool: list[Candidate]) -> tuple[dict, list[Evidence]]:
        if self.providers.judge is None:
            raise ValueError("support judging needs a judge provider")
        texts = self.texts(c.passage_ref for c in pool)
        judgments = judge_pool(query, pool, texts, self.providers.judge)
        return judgments, filter_and_rerank(pool, judgments, self.sed, texts)

    def evidence(self, query: str) -> list[Evidence]:
        return self.judge(query, self.retrieve(query))[1]

    def answer(self, question: str) -> Answer:
        return generate_answer(
            question,
            self.evidence(question),
            self.generation,
            self.providers.drafter,
            self.providers.refiner,
        )

    def evidence_block(self, answer: Answer) -> str:
        """The context the generator saw, rebuilt from the answer's evidence refs."""
        evidence = [
            Evidence(ref, self.store.get(ref).text, 0.0, 0.0, final, None)
            for ref, final in answer.evidence_used
        ]
        return assemble_context(evidence, self.generation.context_c)

    def search(self, query: str, judge: bool = False) -> list[dict]:
        """Ranked pool rows with per-channel, fused and (optionally) support scores."""
        pool = self.retrieve(query)
        if not judge:
            ordered = [(c, None, None) for c in pool]
        else:
            judgments, evidence = self.judge(query, pool)
            by_ref = {c.passage_ref: c for c in pool}
            kept = {e.passage_ref for e in evidence}
            ordered = [(by_ref[e.passage_ref], judgments[e.passage_ref], e) for e in evidence]
            ordered += [(c, judgments.get(c.passage_ref), None) for c in pool if c.passage_ref not in kept]
        rows = []
        for rank, (c, j, e) in enumerate(ordered, 1):
            p = self.store.get(c.passage_ref)
            rows.append(
                {
                    "rank": rank,
                    "passage_ref": c.passage_ref,
                    "doc_id": p.doc_id,
                    "seq_no": p.seq_no,
                    "dense_raw": c.dense_raw,
                    "sparse_raw": c.sparse_raw,
                    "dense_norm": c.dense_norm,
                    "sparse_norm": c.sparse_norm,
                    "fused": c.fused,
                    "support_score": j.support_score if j is not None else None,
                    "level": j.level if j is not None else None,
                    "final": e.final if e is not None else None,
                    "kept": (e is not None) if judge else None,
                    "text": p.text,
                }
            )
        return rows
