import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import naive_mining

from evidencerag.errors import ValidationError
from evidencerag.gateway import Gateway, ProviderConfig
from evidencerag.lexicon import (
    EMPTY,
    GENERIC,
    PATHOLOGY,
    FilterThresholds,
    Lexicon,
    LexiconEntry,
    TermCandidate,
    filter_candidates,
    llm_validate,
    mine_candidates,
    parse_label,
    tokenize,
    tokenize_spans,
)
from evidencerag.mock import MockBackend

LEX = Lexicon.from_terms(["clear cell carcinoma", "cell", "carcinoma in situ", "病理学", "HER2"])


def test_longest_match_wins():
    assert tokenize("Clear cell carcinoma, not carcinoma in situ.", LEX) == [
        "clear cell carcinoma", ",", "not", "carcinoma in situ", ".",
    ]


def test_terms_respect_word_boundaries():
    # "cell" must not fire inside "cellular" or "subcell"
    assert tokenize("cellular subcell cell", LEX) == ["cellular", "subcell", "cell"]


def test_fallback_words_and_punctuation():
    assert tokenize("Ki-67 index: 30%.") == ["ki-67", "index", ":", "30", "%", "."]
    # a hyphen is a word boundary, so a lexicon term can end right before it
    assert tokenize("HER2-positive", LEX) == ["her2", "-", "positive"]
    assert tokenize("HER2-positive") == ["her2-positive"]


def test_cjk_terms_and_single_characters():
    assert tokenize("病理学家报告", LEX) == ["病理学", "家", "报", "告"]
    assert tokenize("biopsy病理学", LEX) == ["biopsy", "病理学"]


def test_spans_point_into_canonical_text():
    canon, toks = tokenize_spans("  Clear   cell carcinoma!", LEX)
    assert canon == "clear cell carcinoma!"
    assert [(t.text, canon[t.start:t.end], t.is_term) for t in toks] == [
        ("clear cell carcinoma", "clear cell carcinoma", True),
        ("!", "!", False),
    ]


_text = st.lists(st.sampled_from(list("abc ABC.,-病理学x") + ["cell ", "carcinoma ", "in situ"]), max_size=40).map("".join)


@settings(max_examples=300, deadline=None)
@given(_text)
def test_tokens_cover_every_visible_character(text):
    canon, toks = tokenize_spans(text, LEX)
    assert "".join("".join(t.text.split()) for t in toks) == "".join(canon.split())
    assert all(canon[t.start:t.end] == t.text for t in toks)
    assert all(a.end <= b.start for a, b in zip(toks, toks[1:]))
    assert all(t.text == t.text.lower() for t in toks)


def test_lexicon_version_is_content_hash(tmp_path):
    a = Lexicon([LexiconEntry("b term"), LexiconEntry("a term", PATHOLOGY, "mined", True)])
    b = Lexicon([LexiconEntry("a term", PATHOLOGY, "mined", True), LexiconEntry("b term")])
    assert a.version == b.version and a == b
    assert a.version != EMPTY.version
    a.save(tmp_path / "lex.tsv")
    assert Lexicon.load(tmp_path / "lex.tsv") == a


def test_tampered_lexicon_file_is_rejected(tmp_path):
    path = tmp_path / "lex.tsv"
    Lexicon.from_terms(["granuloma"]).save(path)
    path.write_text(path.read_text(encoding="utf-8") + "caseous necrosis\tgeneric_medical\tseed\tfalse\n", encoding="utf-8")
    with pytest.raises(ValidationError):
        Lexicon.load(path)
    path.write_text("only two\tfields\n", encoding="utf-8")
    with pytest.raises(ValidationError):
        Lexicon.load(path)


# -- mining ------------------------------------------------------------------

WORDS = "lymph node biopsy showed reactive follicles with germinal centres and sinus histiocytosis".split()


def _random_corpus(seed):
    rng = random.Random(seed)
    texts = []
    for _ in range(40):
        parts = []
        for _ in range(rng.randint(1, 3)):
            n = rng.randint(2, 9)
            start = rng.randrange(len(WORDS))
            # mostly contiguous runs so that real collocations recur
            parts.append(" ".join(WORDS[(start + k) % len(WORDS)] if rng.random() < 0.8 else rng.choice(WORDS) for k in range(n)))
        texts.append(", ".join(parts) + ".")
    return texts


@pytest.mark.parametrize("seed", [1, 2, 3])
def test_mining_statistics_match_enumeration_oracle(seed):
    texts = _random_corpus(seed)
    want = naive_mining(texts, 4, 3)
    got = {c.term: c for c in mine_candidates(texts, max_ngram=4, min_freq=3)}
    assert set(got) == set(want)
    for term, (freq, pmi, hl, hr) in want.items():
        c = got[term]
        assert c.frequency == freq
        assert c.cohesion_pmi == pytest.approx(pmi, abs=1e-12)
        assert c.left_entropy == pytest.approx(hl, abs=1e-12)
        assert c.right_entropy == pytest.approx(hr, abs=1e-12)


def test_parallel_mining_matches_serial():
    texts = _random_corpus(4)
    assert mine_candidates(texts, 4, 3, workers=2) == mine_candidates(texts, 4, 3, workers=1)


def test_cjk_units_are_characters():
    texts = ["病理学报告。", "病理学诊断，病理学会议"] * 3
    terms = {c.term: c.frequency for c in mine_candidates(texts, max_ngram=3, min_freq=5)}
    assert terms["病理学"] == 9
    assert terms["病理"] == 9
    assert "学报" not in terms  # only three occurrences


def test_mining_stops_at_script_changes():
    terms = {c.term for c in mine_candidates(["her2病理"] * 5, max_ngram=3, min_freq=5)}
    assert terms == {"病理"}


def test_filter_thresholds_are_inclusive_and_skip_seed_terms():
    cands = [
        TermCandidate("a b", 5, 3.0, 1.0, 1.0),
        TermCandidate("c d", 4, 9.0, 2.0, 2.0),
        TermCandidate("e f", 9, 2.99, 2.0, 2.0),
        TermCandidate("g h", 9, 9.0, 0.99, 2.0),
        TermCandidate("Known Term", 9, 9.0, 2.0, 2.0),
    ]
    kept = filter_candidates(cands, FilterThresholds(), Lexicon.from_terms(["known term"]))
    assert [c.term for c in kept] == ["a b"]


def _judge(replies: dict[str, str]) -> Gateway:
    def handler(cfg, req):
        term = req.user_text.split("### TERM", 1)[1].strip().splitlines()[0]
        return replies[term]

    return Gateway(ProviderConfig(model_id="judge"), MockBackend(handler=handler))


def test_llm_validate_keeps_accepted_terms():
    gw = _judge({"Caseous Necrosis": "PATHOLOGY", "blood pressure": "generic_medical.", "the patient": "REJECT", "odd": "maybe?"})
    entries = llm_validate(["Caseous Necrosis", "blood pressure", "the patient", "odd"], gw)
    assert [(e.term, e.category, e.origin, e.validated) for e in entries] == [
        ("caseous necrosis", PATHOLOGY, "mined", True),
        ("blood pressure", GENERIC, "mined", True),
    ]


def test_llm_validate_fails_when_nothing_parses():
    with pytest.raises(ValidationError):
        llm_validate(["a", "b"], _judge({"a": "sure", "b": ""}))


def test_parse_label():
    assert parse_label("Pathology\nbecause ...") == "PATHOLOGY"
    assert parse_label("generic medical") == "GENERIC_MEDICAL"
    with pytest.raises(ValueError):
        parse_label("I think it is a pathology term")
