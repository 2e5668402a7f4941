"""Evidence-grounded answer generation: draft with one model, refine with another."""

from __future__ import annotations

import json
import re
from dataclasses import asdict, dataclass, field
from typing import Sequence

from . import prompts
from .errors import ConfigError
from .sed import Evidence

NO_EVIDENCE = "NO EVIDENCE AVAILABLE"
DISCLAIMER = (
    "No passage in the corpus was judged to support an answer to this question, "
    "so no answer is given."
)

_HEAD = re.compile(r"^\[(\d+)\] \((.+)\)$", re.MULTILINE)
_CITE = re.compile(r"\[(\d+)\]")


@dataclass(frozen=True)
class GenerationConfig:
    context_c: int = 3
    single_stage: bool = False

    def __post_init__(self):
        if self.context_c < 1:
            raise ConfigError("context_c must be >= 1")


@dataclass
class Answer:
    question: str
    text: str
    cited_passage_refs: list[str]
    draft_text: str | None
    evidence_used: list[tuple[str, float]] = field(default_factory=list)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["evidence_used"] = [{"passage_ref": r, "final_score": s} for r, s in self.evidence_used]
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), ensure_ascii=False, sort_keys=True, indent=2)


def assemble_context(evidence: Sequence[Evidence], c: int) -> str:
    """Top ``c`` passages as numbered blocks ``[k] (ref)`` separated by blank lines."""
    if c < 1:
        raise ConfigError("context size must be >= 1")
    blocks = [f"[{k}] ({e.passage_ref})\n{e.text.strip()}" for k, e in enumerate(evidence[:c], 1)]
    return "\n\n".join(blocks)


def parse_context(context: str) -> list[tuple[str, str]]:
    """Inverse of assemble_context: ``[(ref, text), ...]`` in block order."""
    heads = list(_HEAD.finditer(context))
    out = []
    for i, m in enumerate(heads):
        end = heads[i + 1].start() if i + 1 < len(heads) else len(context)
        out.append((m.group(2), context[m.end():end].strip()))
    return out


def parse_citations(text: str, context: str) -> list[str]:
    """Refs cited by ``[k]`` markers, first-appearance order; unknown k ignored."""
    refs = [ref for ref, _ in parse_context(context)]
    out: list[str] = []
    for m in _CITE.finditer(text):
        k = int(m.group(1))
        if 1 <= k <= len(refs) and refs[k - 1] not in out:
            out.append(refs[k - 1])
    return out


def draft(question: str, context: str, gateway) -> str:
    return gateway.chat(prompts.render("draft", question=question, context=context or NO_EVIDENCE))


def refine(question: str, draft_text: str, context: str, gateway) -> str:
    return gateway.chat(
        prompts.render("refine", question=question, context=context or NO_EVIDENCE, draft=draft_text)
    )


def single_stage(question: str, context: str, gateway) -> str:
    return gateway.chat(prompts.render("single_stage", question=question, context=context or NO_EVIDENCE))


def generate_answer(
    question: str,
    evidence: Sequence[Evidence],
    cfg: GenerationConfig,
    drafter,
    refiner,
) -> Answer:
    used = [(e.passage_ref, e.final) for e in evidence]
    if not evidence:
        return Answer(question, DISCLAIMER, [], None, used)
    context = assemble_context(evidence, cfg.context_c)
    if cfg.single_stage:
        text = single_stage(question, context, refiner)
        draft_text = None
    else:
        draft_text = draft(question, context, drafter)
        text = refine(question, draft_text, context, refiner)
    return Answer(question, text, parse_citations(text, context), draft_text, used)
