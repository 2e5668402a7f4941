import math
import struct

import numpy as np
import pytest

from evidencerag.dense import VectorIndex
from evidencerag.errors import ConfigError, QueryError, RetrievalIndexError
from evidencerag.fusion import RetrievalConfig, fuse, normalize_minmax
from evidencerag.gateway import Gateway, ProviderConfig
from evidencerag.lexicon import Lexicon
from evidencerag.mock import MockBackend
from evidencerag.sparse import MAGIC, Bm25Params, InvertedIndex, analyze
from evidencerag.store import Document, Store

DOCS = [
    ("p1", "caseous necrosis in a granuloma"),
    ("p2", "granuloma without necrosis"),
    ("p3", "reactive lymph node"),
]


def test_bm25_hand_computed():
    index = InvertedIndex.build(DOCS)
    # N = 3, avgdl = 11/3; "necrosis" occurs in p1 (dl 5) and p2 (dl 3)
    avgdl = 11 / 3
    idf = math.log(1 + (3 - 2 + 0.5) / (2 + 0.5))
    expect_p1 = idf * 2.2 / (1 + 1.2 * (0.25 + 0.75 * 5 / avgdl))
    expect_p2 = idf * 2.2 / (1 + 1.2 * (0.25 + 0.75 * 3 / avgdl))
    got = index.score("necrosis necrosis")  # repeated query terms count once
    assert got == pytest.approx({"p1": expect_p1, "p2": expect_p2}, abs=1e-12)
    assert index.top_k("necrosis", 5) == sorted(got.items(), key=lambda t: -t[1])
    assert index.score("absent") == {}


def test_lexicon_terms_are_single_index_terms_and_can_be_boosted():
    lex = Lexicon.from_terms(["lymph node", "caseous necrosis"])
    assert analyze("Reactive lymph node, caseous necrosis.", lex) == ["reactive", "lymph node", "caseous necrosis"]
    plain = InvertedIndex.build(DOCS, lex)
    boosted = InvertedIndex.build(DOCS, lex, Bm25Params(lexicon_term_boost=2.0))
    assert boosted.score("lymph node")["p3"] == pytest.approx(2 * plain.score("lymph node")["p3"])
    assert boosted.score("granuloma") == plain.score("granuloma")
    assert set(plain.score("necrosis")) == {"p2"}  # p1 only holds the compound term


def test_score_text_matches_indexed_scores():
    index = InvertedIndex.build(DOCS)
    for ref, text in DOCS:
        assert index.score_text("granuloma necrosis node", text) == pytest.approx(
            index.score("granuloma necrosis node").get(ref, 0.0), abs=1e-12
        )


def test_sparse_round_trip_and_corruption(tmp_path):
    lex = Lexicon.from_terms(["lymph node"])
    index = InvertedIndex.build(DOCS, lex, Bm25Params(k1=0.9, b=0.4))
    path = tmp_path / "s.idx"
    index.save(path)
    loaded = InvertedIndex.load(path, lex)
    assert loaded.params == index.params and loaded.postings == index.postings
    assert loaded.score("lymph node granuloma") == index.score("lymph node granuloma")

    with pytest.raises(RetrievalIndexError):
        InvertedIndex.load(path)  # built with a different lexicon
    raw = path.read_bytes()
    for bad in (b"XXXX" + raw[4:], raw[:-3], raw + b"\0", MAGIC + struct.pack("<I", 99) + raw[8:]):
        path.write_bytes(bad)
        with pytest.raises(RetrievalIndexError):
            InvertedIndex.load(path, lex)


def test_sparse_rejects_empty_and_duplicates():
    with pytest.raises(RetrievalIndexError):
        InvertedIndex.build([])
    with pytest.raises(RetrievalIndexError):
        InvertedIndex.build([("a", "x"), ("a", "y")])


# -- dense -------------------------------------------------------------------


def _embedder(dim=16, max_in_flight=3, delay=0.0):
    backend = MockBackend({"embed": {"dim": dim, "mode": "hash"}}, delay=delay)
    return Gateway(ProviderConfig(model_id="emb", max_in_flight=max_in_flight), backend), backend


def test_dense_build_and_query():
    store = Store()
    store.ingest([Document(f"d{i}", f"Passage number {i} about topic {i % 3}.") for i in range(40)])
    gw, backend = _embedder(delay=0.01)
    index = VectorIndex.build(store, gw, batch_size=4)
    assert len(index) == 40 and index.dim == 16 and index.provider_model_id == "emb"
    assert backend.embed_calls == 10 and backend.peak_in_flight <= 3
    target = store.get("d7:0")
    top = index.top_k(gw.embed([target.text]).vectors[0], 3)
    assert top[0][0] == "d7:0" and top[0][1] == pytest.approx(1.0, abs=1e-6)


def test_dense_ties_break_by_id():
    m = np.array([[1, 0], [1, 0], [0, 1], [1, 0]], dtype=np.float32)
    index = VectorIndex(["c", "a", "z", "b"], m)
    assert [r for r, _ in index.top_k([2.0, 0.0], 4)] == ["a", "b", "c", "z"]


def test_dense_scores_are_cosines_for_unnormalized_rows():
    index = VectorIndex(["a", "b"], np.array([[3, 4], [0, 2]], dtype=np.float32))
    assert index.scores([0.0, 5.0]) == pytest.approx([0.8, 1.0])


def test_dense_query_validation():
    index = VectorIndex(["a"], np.ones((1, 3), dtype=np.float32))
    with pytest.raises(QueryError):
        index.top_k([1.0, 0.0], 1)
    with pytest.raises(QueryError):
        index.top_k([0.0, 0.0, 0.0], 1)
    with pytest.raises(QueryError):
        index.top_k([1.0, 0.0, 0.0], 0)
    with pytest.raises(RetrievalIndexError):
        VectorIndex(["a", "a"], np.ones((2, 3)))
    with pytest.raises(RetrievalIndexError):
        VectorIndex(["a"], np.zeros((1, 3)))


def test_dense_round_trip_and_corruption(tmp_path):
    rng = np.random.default_rng(0)
    index = VectorIndex([f"p{i}" for i in range(50)], rng.standard_normal((50, 8)), "emb")
    index.save(tmp_path / "d")
    loaded = VectorIndex.load(tmp_path / "d")
    q = rng.standard_normal(8)
    assert loaded.top_k(q, 50) == index.top_k(q, 50)
    assert loaded.provider_model_id == "emb"
    vec = tmp_path / "d" / "vectors.f32"
    vec.write_bytes(vec.read_bytes()[:-4])
    with pytest.raises(RetrievalIndexError):
        VectorIndex.load(tmp_path / "d")
    index.save(tmp_path / "d")
    data = bytearray(vec.read_bytes())
    data[0] ^= 1
    vec.write_bytes(bytes(data))
    with pytest.raises(RetrievalIndexError):
        VectorIndex.load(tmp_path / "d")


def test_embedding_dimension_mismatch_is_rejected():
    with pytest.raises(RetrievalIndexError):
        VectorIndex(["a"], np.ones((1, 0)))


# -- fusion ------------------------------------------------------------------


def test_minmax_edge_cases():
    assert normalize_minmax([]) == []
    assert normalize_minmax([3.0, 3.0]) == [0.5, 0.5]
    assert normalize_minmax([1.0, 3.0, 2.0]) == [0.0, 1.0, 0.5]


def test_fuse_worked_example():
    dense = [("a", 0.9), ("b", 0.5), ("c", 0.1)]
    sparse = [("c", 12.0), ("d", 4.0)]
    pool = fuse(dense, sparse, RetrievalConfig(pool_k=3, w_dense=0.7))
    assert [(c.passage_ref, round(c.fused, 10)) for c in pool] == [("a", 0.7), ("b", 0.35), ("c", 0.3)]
    c = pool[2]
    assert (c.dense_raw, c.sparse_raw, c.dense_norm, c.sparse_norm) == (0.1, 12.0, 0.0, 1.0)
    d = fuse(dense, sparse, RetrievalConfig(pool_k=10))[-1]
    assert (d.passage_ref, d.dense_raw, d.dense_norm, d.fused) == ("d", None, 0.0, 0.0)


def test_fuse_breaks_ties_by_ref_and_handles_empty_channel():
    pool = fuse([("b", 1.0), ("a", 1.0)], [], RetrievalConfig(pool_k=5, w_dense=1.0))
    assert [c.passage_ref for c in pool] == ["a", "b"]
    assert fuse([], [], RetrievalConfig()) == []


def test_retrieval_config_validation():
    for kwargs in ({"pool_k": 0}, {"w_dense": 1.5}, {"fusion": "rrf"}):
        with pytest.raises(ConfigError):
            RetrievalConfig(**kwargs)
