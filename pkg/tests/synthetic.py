"""Adversarial toy corpus shared by the end-to-end and acceptance tests.

Every subfield holds a family of sibling entities ("papillary renal carcinoma",
"chromophobe renal carcinoma", ...). The mock embedder maps the sibling
modifiers onto one concept, so the dense channel cannot tell siblings apart;
only exact terminology separates them. Half of the generated questions name
the entity and reuse passage wording (terminology-critical). The other half
are written purely in synonyms that the embedder maps onto passage concepts
but that share no surface token with the passage (paraphrase-critical).

Each passage is a single long sentence, so rule chunking with
``CHUNK_MAX_TOKENS`` reproduces the passages exactly.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from pathlib import Path

from evidencerag import prompts
from evidencerag.gateway import ChatRequest, Gateway, ProviderConfig
from evidencerag.levels import CANONICAL_SCORES
from evidencerag.mock import MockBackend
from evidencerag.store import ChunkingPolicy, Document, Store

CHUNK_MAX_TOKENS = 48
POLICY = ChunkingPolicy(mode="rule", min_tokens=1, max_tokens=CHUNK_MAX_TOKENS)

FAMILIES = {
    "renal pathology": ("renal carcinoma", ["clear", "papillary", "chromophobe"]),
    "thyroid pathology": ("thyroid carcinoma", ["follicular", "medullary", "anaplastic"]),
    "breast pathology": ("breast carcinoma", ["lobular", "ductal", "mucinous"]),
    "soft tissue pathology": ("sarcoma", ["synovial", "epithelioid", "myxoid"]),
    "neuropathology": ("astrocytoma", ["pilocytic", "diffuse", "pleomorphic"]),
    "hematopathology": ("lymphoma", ["mantle", "marginal", "burkitt"]),
    "gastrointestinal pathology": ("adenoma", ["tubular", "villous", "serrated"]),
    "pulmonary pathology": ("lung carcinoma", ["squamous", "sarcomatoid", "neuroendocrine"]),
}

CITIES = ["Lyon", "Osaka", "Leeds", "Porto", "Graz", "Turku", "Bergen", "Quebec"]
MARKERS = ["CK7", "CD10", "vimentin", "PAX8", "TTF1", "GATA3", "SOX10", "desmin", "S100", "CD117", "p63", "synaptophysin"]
PATTERNS = ["solid", "trabecular", "cribriform", "nested", "glandular", "sheetlike"]
CELLS = ["eosinophilic", "basophilic", "spindled", "plasmacytoid", "columnar", "polygonal"]

# Synonyms the paraphrase questions use; each maps onto a passage word.
SYNONYMS = {
    "elderly": "aged",
    "individuals": "patients",
    "neoplasm": "tumour",
    "lesion": "tumour",
    "dimension": "size",
    "excision": "resection",
    "microscopically": "histologically",
    "arrangement": "architecture",
    "immunostains": "immunohistochemistry",
    "reactive": "positive",
    "lacking": "negative",
    "mimics": "differential",
    "distinguished": "separated",
    "longevity": "survival",
    "relapse": "recurrence",
    "operation": "surgery",
    "timeframe": "months",
    "cohort": "series",
}
HEAD_ALIASES = {
    "renal": "nephric",
    "carcinoma": "cancer",
    "thyroid": "thyroidal",
    "breast": "mammary",
    "sarcoma": "mesenchymoma",
    "astrocytoma": "glioma",
    "lymphoma": "lymphomatosis",
    "adenoma": "polyp",
    "lung": "pulmonary",
}
CITY_ALIASES = {
    "Lyon": "Lugdunum",
    "Osaka": "Naniwa",
    "Leeds": "Loidis",
    "Porto": "Portus",
    "Graz": "Gradec",
    "Turku": "Aboa",
    "Bergen": "Bjorgvin",
    "Quebec": "Kebek",
}


def modifier_alias(mod: str) -> str:
    return "x" + mod[::-1]


def entity_alias(entity: str) -> str:
    words = entity.split()
    return " ".join([modifier_alias(words[0])] + [HEAD_ALIASES[w] for w in words[1:]])


BOILERPLATE = [
    "The authors thank the laboratory staff of the pathology department for technical assistance with slide preparation, scanning and archiving of the material used in this study",
    "This work was supported by institutional funding and a regional research grant, and the funders had no role in study design, data collection, analysis or the decision to publish",
    "The authors declare no conflicts of interest and no competing interests related to the content of this article, its figures or the supplementary material",
    "Correspondence concerning this article should be addressed to the corresponding author at the department of pathology, and reprints are available on reasonable request",
    "Copyright belongs to the publisher and all rights reserved; no part of this article may be reproduced without written permission from the editorial office of the journal",
]


@dataclass
class QA:
    question: str
    answer: str
    keywords: list[str]
    kind: str  # "term" or "para"


@dataclass
class Corpus:
    documents: list[Document]
    qa: dict[str, QA]  # passage text -> question
    concepts: dict[str, str]
    boilerplate_docs: list[str] = field(default_factory=list)

    def embed_script(self, dim: int = 384, seed: int = 7) -> dict:
        return {"dim": dim, "seed": seed, "mode": "bag", "concepts": self.concepts}


def _sentences(entity: str, city: str, rng: random.Random) -> tuple[list[str], list[tuple[str, str, list[str]]]]:
    a = rng.randint(25, 45)
    b = a + rng.randint(10, 30)
    size = rng.randint(2, 9)
    m1, m2, m3 = rng.sample(MARKERS, 3)
    pattern, cell = rng.choice(PATTERNS), rng.choice(CELLS)
    pct, months = rng.randint(40, 95), rng.randint(6, 48)
    sibling = "its closest sibling entities"
    texts = [
        f"In the {city} series, {entity} most often presented in patients aged {a} to {b} years, "
        f"with a typical tumour size of {size} cm at resection and a slight male predominance overall",
        f"Histologically, {entity} in the {city} series showed {pattern} architecture with {cell} cells, "
        f"irregular nuclei and scattered mitoses in most of the sampled tumour areas",
        f"In the {city} series, immunohistochemistry for {entity} was positive for {m1} and {m2}, "
        f"while {m3} staining remained negative in the tumour cells of every case",
        f"The differential diagnosis of {entity} in the {city} series included {sibling}, "
        f"which were separated by {m1} expression and the {pattern} architecture",
        f"Reported survival for {entity} in the {city} series was {pct} percent at five years, "
        f"and recurrence usually appeared within {months} months after surgery",
    ]
    term_q = [
        f"What age range and tumour size at resection characterise {entity} in the {city} series?",
        f"What architecture and cells does {entity} show histologically in the {city} series?",
        f"Which immunohistochemistry markers are positive and negative in {entity} in the {city} series?",
        f"Which differential diagnosis of {entity} is separated by {m1} expression in the {city} series?",
        f"What survival and recurrence timeframe were reported for {entity} in the {city} series?",
    ]
    alias, cohort = entity_alias(entity), f"{CITY_ALIASES[city]} cohort"
    para_q = [
        f"Which elderly individuals develop {alias} in the {cohort}, and what dimension does the lesion reach at excision?",
        f"Microscopically, what arrangement does {alias} display in the {cohort}?",
        f"Which immunostains are reactive and which are lacking in {alias} within the {cohort}?",
        f"Which mimics are distinguished from {alias} in the {cohort}?",
        f"What longevity and relapse timeframe follow the operation for {alias} in the {cohort}?",
    ]
    keys = [
        [str(a), str(b), f"{size} cm", "resection"],
        [pattern, cell, "architecture"],
        [m1, m2, m3],
        [m1, pattern, "differential"],
        [str(pct), str(months), "survival", "recurrence"],
    ]
    return texts, list(zip(term_q, para_q, keys))


def build_corpus(docs_per_entity: int = 4, seed: int = 11) -> Corpus:
    """96 entity documents of five passages plus four boilerplate documents: 500 passages."""
    rng = random.Random(seed)
    concepts = dict(SYNONYMS)
    concepts.update({v.lower(): k for k, v in HEAD_ALIASES.items()})
    concepts.update({v.lower(): k.lower() for k, v in CITY_ALIASES.items()})
    documents: list[Document] = []
    qa: dict[str, QA] = {}
    n = 0
    for subfield, (head, modifiers) in FAMILIES.items():
        family_concept = "variant_" + head.split()[0]
        for mod in modifiers:
            concepts[mod] = concepts[modifier_alias(mod)] = family_concept
            entity = f"{mod} {head}"
            for j in range(docs_per_entity):
                city = CITIES[(j + len(documents)) % len(CITIES)]
                texts, questions = _sentences(entity, city, rng)
                doc_id = f"d{len(documents):03d}"
                documents.append(
                    Document(doc_id, ". ".join(texts) + ".", title=f"{entity} ({city})", year=2000 + j, subfield=subfield)
                )
                for text, (tq, pq, keys) in zip(texts, questions):
                    kind = "term" if n % 2 == 0 else "para"
                    n += 1
                    qa[text + "."] = QA(tq if kind == "term" else pq, text + ".", keys, kind)
    boiler_ids = []
    for k in range(4):
        rot = BOILERPLATE[k:] + BOILERPLATE[:k]
        doc_id = f"b{k:02d}"
        boiler_ids.append(doc_id)
        body = ". ".join(f"{t} (volume {k + 1}, section {i + 1})" for i, t in enumerate(rot)) + "."
        documents.append(Document(doc_id, body, title="back matter", year=2020, subfield="boilerplate"))
    return Corpus(documents, qa, concepts, boiler_ids)


def build_store(corpus: Corpus, root=None) -> Store:
    store = Store(root=root)
    store.ingest(corpus.documents, POLICY)
    return store


def write_documents(corpus: Corpus, directory: Path) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    for d in corpus.documents:
        (directory / f"{d.doc_id}.txt").write_text(d.raw_text, encoding="utf-8")
        meta = {"title": d.title, "year": d.year, "subfield": d.subfield}
        (directory / f"{d.doc_id}.meta.json").write_text(json.dumps(meta), encoding="utf-8")


# -- mock providers ----------------------------------------------------------

GENERIC_RULES = [
    {"system_contains": "You judge whether a passage", "transform": "lexical_support"},
    {"system_contains": "Annotate how strongly", "transform": "confirm_level"},
    {"system_contains": "Write one professional question", "transform": "qa_from_passage"},
    {"system_contains": "removes all specific claims", "transform": "vague"},
    {"system_contains": "contradicts the original", "transform": "contradict"},
    {"system_contains": "careful domain specialist", "transform": "cite_first"},
    {"system_contains": "You edit a draft", "transform": "section:DRAFT"},
    {"system_contains": "Answer the question using only", "transform": "cite_first"},
    {"system_contains": "information points", "reply": "3/4"},
    {"system_contains": "atomic factual claims", "reply": "4/5"},
    {"system_contains": "Classify a candidate term", "reply": "PATHOLOGY"},
]


def mock_script(corpus: Corpus | None = None, dim: int = 384) -> dict:
    embed = corpus.embed_script(dim) if corpus is not None else {"dim": dim, "seed": 7, "mode": "bag"}
    return {"chat": [dict(r) for r in GENERIC_RULES], "embed": embed}


def question_handler(corpus: Corpus):
    """Answers question-generation prompts from the corpus' prepared questions."""

    def handle(cfg: ProviderConfig, req: ChatRequest) -> str | None:
        if "Write one professional question" not in req.system_text:
            return None
        passage = prompts.sections(req.user_text).get("PASSAGE", "")
        qa = corpus.qa.get(passage)
        if qa is None:
            return "no question"
        return f"QUESTION: {qa.question}\nANSWER: {qa.answer}\nKEYWORDS: {'; '.join(qa.keywords)}"

    return handle


def oracle_judge_handler(gold: dict[tuple[str, str], str]):
    """Judge that answers support prompts with the gold level and its canonical score."""

    def handle(cfg: ProviderConfig, req: ChatRequest) -> str | None:
        if "You judge whether a passage" not in req.system_text:
            return None
        sec = prompts.sections(req.user_text)
        level = gold.get((sec.get("QUESTION", ""), sec.get("PASSAGE", "")))
        if level is None:
            return "unknown passage"
        return f"{level}|{CANONICAL_SCORES[level]:.2f}|oracle"

    return handle


def gateways(backend, roles=("embedder", "judge", "drafter", "refiner"), cache_dir=None) -> dict[str, Gateway]:
    return {r: Gateway(ProviderConfig(model_id=r, max_in_flight=4), backend, cache_dir) for r in roles}


def corpus_backend(corpus: Corpus, handler=None) -> MockBackend:
    return MockBackend(mock_script(corpus), handler=handler or question_handler(corpus))
