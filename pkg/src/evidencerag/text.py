"""Text normalization and hashing helpers shared across modules."""

from __future__ import annotations

import hashlib
import re
import unicodedata

_WS = re.compile(r"\s+")

# CJK Unified Ideographs (+ ext. A), compatibility ideographs, kana, hangul.
_CJK_RANGES = (
    (0x3040, 0x30FF),
    (0x3400, 0x4DBF),
    (0x4E00, 0x9FFF),
    (0xAC00, 0xD7AF),
    (0xF900, 0xFAFF),
)


def is_cjk(ch: str) -> bool:
    cp = ord(ch)
    return any(lo <= cp <= hi for lo, hi in _CJK_RANGES)


def is_word_char(ch: str) -> bool:
    return ch.isalnum() and not is_cjk(ch)


def normalize(text: str) -> str:
    """NFC, collapse whitespace runs to one space, trim. Idempotent."""
    return _WS.sub(" ", unicodedata.normalize("NFC", text)).strip()


def fold(text: str) -> str:
    """normalize() plus case folding; used for keyword matching."""
    return normalize(normalize(text).casefold())


def lower_preserving_length(text: str) -> str:
    # str.lower() may change length for a few code points (e.g. U+0130);
    # spans computed on the lowered string must stay valid on the original.
    out = []
    for ch in text:
        low = ch.lower()
        out.append(low if len(low) == 1 else ch)
    return "".join(out)


def content_hash(text: str) -> str:
    """64-bit hash of the normalized text, as 16 hex chars."""
    return hashlib.blake2b(normalize(text).encode("utf-8"), digest_size=8).hexdigest()


def sha256_hex(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()
