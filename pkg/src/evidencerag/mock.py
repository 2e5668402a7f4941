"""Deterministic offline stand-in for chat and embedding providers.

A mock is driven by a script (a dict, usually loaded from JSON)::

    {
      "chat": [
        {"model": "judge", "user_contains": "granuloma", "reply": "P1|0.95|direct"},
        {"transform": "echo"}
      ],
      "embed": {"dim": 384, "seed": 0, "mode": "bag", "concepts": {"neoplasm": "tumor"}}
    }

Chat rules are tried in order; the first whose conditions all hold answers.
Conditions: ``model``, ``system_contains``, ``user_contains``, ``user_regex``.
Actions: ``reply`` (fixed text), ``replies`` (served in sequence, the last one
repeating), ``transform`` (a named function of the request, see
``TRANSFORMS``) or ``status`` (simulated HTTP failure). ``times`` limits how
often a rule may fire.

Embeddings are pure functions of the text. ``mode: "hash"`` maps the whole
text to one pseudo-random unit vector; ``mode: "bag"`` (default) sums one
pseudo-random vector per content word, after mapping words through the
optional ``concepts`` table, so texts sharing words or concepts land close
together. ``vectors`` pins exact vectors for given texts.
"""

from __future__ import annotations

import hashlib
import json
import re
import threading
import time
from functools import lru_cache
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import prompts
from .errors import ProtocolError, TransportError
from .gateway import ChatRequest, ProviderConfig
from .levels import CANONICAL_SCORES
from .text import is_cjk

DEFAULT_DIM = 384

STOPWORDS = frozenset(
    """a an and are as at be been by can could did do does for from has have how in is it its
    of on or that the their there these this those to was were what when where which who whom
    why will with within without would into than then also may most more such""".split()
)

_UNIT = re.compile(r"[^\W_]+", re.UNICODE)
_SENTENCE_END = re.compile(r"(?<=[.!?。！？])\s+")
_BLOCK_HEAD = re.compile(r"^\[(\d+)\] \((.+)\)$", re.MULTILINE)


def content_words(text: str) -> list[str]:
    out = []
    for m in _UNIT.finditer(text.lower()):
        word = m.group()
        if is_cjk(word[0]):
            out.extend(ch for ch in word)
        elif word not in STOPWORDS:
            out.append(word)
    return out


def first_sentence(text: str) -> str:
    return _SENTENCE_END.split(text.strip(), maxsplit=1)[0]


# -- chat transforms ---------------------------------------------------------


def _echo(req: ChatRequest) -> str:
    return req.user_text


def _cite_first(req: ChatRequest) -> str:
    evidence = prompts.sections(req.user_text).get("EVIDENCE", "")
    heads = list(_BLOCK_HEAD.finditer(evidence))
    if not heads:
        return "The available evidence does not answer the question."
    end = heads[1].start() if len(heads) > 1 else len(evidence)
    body = evidence[heads[0].end():end].strip()
    return f"{first_sentence(body)} [{heads[0].group(1)}]"


def vague_text(text: str) -> str:
    seen: list[str] = []
    for word in content_words(text):
        if len(word) >= 6 and not word.isdigit() and word not in seen:
            seen.append(word)
        if len(seen) == 10:
            break
    if not seen:
        seen = content_words(text)[:3] or ["this", "topic"]
    return f"This passage touches on {', '.join(seen)} in general terms without specific findings."


_SWAPS = {
    "before": "after", "after": "before",
    "increased": "decreased", "decreased": "increased",
    "increases": "decreases", "decreases": "increases",
    "early": "late", "late": "early",
    "always": "never", "never": "always",
    "higher": "lower", "lower": "higher",
    "more": "fewer", "fewer": "more",
    "positive": "negative", "negative": "positive",
}
_MUTABLE = re.compile(r"\b(\d+(?:\.\d+)?|" + "|".join(_SWAPS) + r")\b", re.IGNORECASE)


def contradict_text(text: str) -> str:
    m = _MUTABLE.search(text)
    if m is None:
        return f"Contrary to common reports, it is not the case that {text[:1].lower()}{text[1:]}"
    token = m.group(1)
    if token[0].isdigit():
        value = float(token)
        new = value * 2 + 1
        repl = str(int(new)) if "." not in token else f"{new:g}"
    else:
        repl = _SWAPS[token.lower()]
        if token[0].isupper():
            repl = repl.capitalize()
    return text[: m.start(1)] + repl + text[m.end(1):]


def _vague(req: ChatRequest) -> str:
    return vague_text(prompts.sections(req.user_text).get("PASSAGE", req.user_text))


def _contradict(req: ChatRequest) -> str:
    return contradict_text(prompts.sections(req.user_text).get("PASSAGE", req.user_text))


def _confirm_level(req: ChatRequest) -> str:
    level = prompts.sections(req.user_text).get("INTENDED LEVEL", "").strip()
    if level not in CANONICAL_SCORES:
        return "unparseable"
    return f"{level}|{CANONICAL_SCORES[level]:.2f}|confirmed intended level"


def _lexical_support(req: ChatRequest) -> str:
    sec = prompts.sections(req.user_text)
    q = {w for w in content_words(sec.get("QUESTION", "")) if len(w) >= 4}
    p = set(content_words(sec.get("PASSAGE", "")))
    frac = len(q & p) / len(q) if q else 0.0
    for cut, level in ((0.6, "P1"), (0.4, "P2"), (0.25, "P3")):
        if frac >= cut:
            return f"{level}|{CANONICAL_SCORES[level]:.2f}|{frac:.0%} of question terms present"
    return f"A1|{CANONICAL_SCORES['A1']:.2f}|{frac:.0%} of question terms present"


def _qa_from_passage(req: ChatRequest) -> str:
    passage = prompts.sections(req.user_text).get("PASSAGE", req.user_text)
    sentence = first_sentence(passage)
    words = content_words(sentence)
    ranked = sorted(dict.fromkeys(w for w in words if not w.isdigit()), key=len, reverse=True)
    keywords = ranked[:4] or words[:1]
    topic = " ".join(words[:5])
    return f"QUESTION: What is reported about {topic}?\nANSWER: {sentence}\nKEYWORDS: {'; '.join(keywords)}"


TRANSFORMS: dict[str, Callable[[ChatRequest], str]] = {
    "echo": _echo,
    "cite_first": _cite_first,
    "vague": _vague,
    "contradict": _contradict,
    "confirm_level": _confirm_level,
    "lexical_support": _lexical_support,
    "qa_from_passage": _qa_from_passage,
}


def _apply_transform(name: str, req: ChatRequest) -> str:
    if name.startswith("section:"):
        return prompts.sections(req.user_text).get(name.split(":", 1)[1], "")
    try:
        return TRANSFORMS[name](req)
    except KeyError:
        raise ProtocolError(f"mock: unknown transform {name!r}") from None


# -- embeddings --------------------------------------------------------------


@lru_cache(maxsize=65536)
def _seeded_vector(token: str, dim: int, seed: int) -> np.ndarray:
    digest = hashlib.blake2b(f"{seed}\x00{token}".encode("utf-8"), digest_size=8).digest()
    rng = np.random.default_rng(int.from_bytes(digest, "little"))
    vec = rng.standard_normal(dim)
    vec.setflags(write=False)
    return vec


def mock_embedding(
    text: str,
    dim: int = DEFAULT_DIM,
    seed: int = 0,
    mode: str = "bag",
    concepts: dict[str, str] | None = None,
) -> np.ndarray:
    """Unit vector for ``text``; a pure function of its arguments."""
    if mode == "hash":
        vec = _seeded_vector("\x01" + text, dim, seed).copy()
    else:
        concepts = concepts or {}
        units = [concepts.get(w, w) for w in content_words(text)]
        if not units:
            vec = _seeded_vector("\x01" + text, dim, seed).copy()
        else:
            vec = np.zeros(dim)
            for unit in units:
                vec += _seeded_vector(unit, dim, seed)
            if not np.any(vec):
                vec = _seeded_vector("\x01" + text, dim, seed).copy()
    return vec / np.linalg.norm(vec)


# -- backend -----------------------------------------------------------------


class MockBackend:
    """Scripted backend; also records call counts and peak concurrency."""

    def __init__(
        self,
        script: dict | None = None,
        handler: Callable[[ProviderConfig, ChatRequest], str | None] | None = None,
        delay: float = 0.0,
    ):
        script = script or {}
        self.rules: list[dict] = [dict(r) for r in script.get("chat", [])]
        emb = script.get("embed", {})
        self.dim = int(emb.get("dim", DEFAULT_DIM))
        self.seed = int(emb.get("seed", 0))
        self.mode = emb.get("mode", "bag")
        self.concepts = {k.lower(): v for k, v in emb.get("concepts", {}).items()}
        self.pinned = {k: np.asarray(v, dtype=float) for k, v in emb.get("vectors", {}).items()}
        self.handler = handler
        self.delay = delay
        self._lock = threading.Lock()
        self._fired = [0] * len(self.rules)
        self.chat_calls = 0
        self.embed_calls = 0
        self.in_flight = 0
        self.peak_in_flight = 0

    @classmethod
    def from_file(cls, path: str | Path, **kwargs) -> "MockBackend":
        with open(path, encoding="utf-8") as fh:
            return cls(json.load(fh), **kwargs)

    def _enter(self):
        with self._lock:
            self.in_flight += 1
            self.peak_in_flight = max(self.peak_in_flight, self.in_flight)
        if self.delay:
            time.sleep(self.delay)

    def _exit(self):
        with self._lock:
            self.in_flight -= 1

    def _matches(self, rule: dict, cfg: ProviderConfig, req: ChatRequest) -> bool:
        if "model" in rule and rule["model"] != cfg.model_id:
            return False
        if "system_contains" in rule and rule["system_contains"] not in req.system_text:
            return False
        if "user_contains" in rule and rule["user_contains"] not in req.user_text:
            return False
        if "user_regex" in rule and not re.search(rule["user_regex"], req.user_text):
            return False
        return True

    def _pick(self, cfg: ProviderConfig, req: ChatRequest) -> tuple[dict, int] | None:
        with self._lock:
            for i, rule in enumerate(self.rules):
                if "times" in rule and self._fired[i] >= rule["times"]:
                    continue
                if self._matches(rule, cfg, req):
                    self._fired[i] += 1
                    return rule, self._fired[i]
        return None

    def chat(self, cfg: ProviderConfig, req: ChatRequest) -> str:
        with self._lock:
            self.chat_calls += 1
        self._enter()
        try:
            if self.handler is not None:
                out = self.handler(cfg, req)
                if out is not None:
                    return out
            picked = self._pick(cfg, req)
            if picked is None:
                raise ProtocolError(f"mock: no chat rule matches request to {cfg.model_id!r}")
            rule, nth = picked
            if "status" in rule:
                status = int(rule["status"])
                if status >= 500 or status == 429:
                    raise TransportError(f"mock: HTTP {status}")
                raise ProtocolError(f"mock: HTTP {status}")
            if "replies" in rule:
                replies = rule["replies"]
                return replies[min(nth, len(replies)) - 1]
            if "reply" in rule:
                return rule["reply"]
            if "transform" in rule:
                return _apply_transform(rule["transform"], req)
            raise ProtocolError("mock: rule has no action")
        finally:
            self._exit()

    def embed(self, cfg: ProviderConfig, texts: Sequence[str]) -> list[list[float]]:
        with self._lock:
            self.embed_calls += 1
        self._enter()
        try:
            out = []
            for text in texts:
                if text in self.pinned:
                    out.append(self.pinned[text].tolist())
                else:
                    vec = mock_embedding(text, self.dim, self.seed, self.mode, self.concepts)
                    out.append(vec.tolist())
            return out
        finally:
            self._exit()
