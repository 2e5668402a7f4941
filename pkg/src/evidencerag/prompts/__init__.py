"""Versioned prompt templates.

Each ``*.txt`` asset starts with ``@version N`` and holds an ``@system`` and an
``@user`` block. User blocks are organised as ``### NAME`` sections, which is
also how the mock backend finds its inputs.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources

from ..gateway import ChatRequest

_SECTION = re.compile(r"^### (.+)$", re.MULTILINE)


@dataclass(frozen=True)
class Template:
    name: str
    version: int
    system: str
    user: str

    def request(self, **fields) -> ChatRequest:
        return ChatRequest(user_text=self.user.format(**fields), system_text=self.system)


@lru_cache(maxsize=None)
def load(name: str) -> Template:
    raw = resources.files(__package__).joinpath(f"{name}.txt").read_text(encoding="utf-8")
    head, _, rest = raw.partition("\n")
    if not head.startswith("@version "):
        raise ValueError(f"prompt {name!r} lacks an @version header")
    system, _, user = rest.partition("@user\n")
    system = system.removeprefix("@system\n").strip()
    return Template(name=name, version=int(head.split()[1]), system=system, user=user.strip())


def render(name: str, **fields) -> ChatRequest:
    return load(name).request(**fields)


def with_retry_note(req: ChatRequest) -> ChatRequest:
    """Same request plus a format reminder; the changed text gets a fresh cache key."""
    note = load("retry_note").user
    return ChatRequest(
        user_text=f"{req.user_text}\n\n{note}",
        system_text=req.system_text,
        temperature=req.temperature,
        max_tokens=req.max_tokens,
        seed=req.seed,
    )


def sections(user_text: str) -> dict[str, str]:
    """Split a rendered user prompt back into its ``### NAME`` sections."""
    out: dict[str, str] = {}
    matches = list(_SECTION.finditer(user_text))
    for i, m in enumerate(matches):
        end = matches[i + 1].start() if i + 1 < len(matches) else len(user_text)
        out[m.group(1).strip()] = user_text[m.end():end].strip("\n")
    return out
