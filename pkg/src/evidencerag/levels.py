"""Support levels and their canonical scores."""

from __future__ import annotations

LEVELS = ("P1", "P2", "P3", "A1", "A2", "A3", "A4")
POSITIVE_LEVELS = frozenset({"P1", "P2", "P3"})
NEGATIVE_LEVELS = frozenset({"A1", "A2", "A3", "A4"})

CANONICAL_SCORES = {
    "P1": 0.95,
    "P2": 0.75,
    "P3": 0.55,
    "A1": 0.25,
    "A2": 0.20,
    "A3": 0.15,
    "A4": 0.10,
}

MIN_RANK_SCORE = 0.10
MAX_RANK_SCORE = 0.95
LEVEL_TOLERANCE = 0.10


def is_positive(level: str) -> bool:
    return level in POSITIVE_LEVELS


def consistent(level: str, score: float) -> bool:
    return abs(CANONICAL_SCORES[level] - score) <= LEVEL_TOLERANCE + 1e-12
