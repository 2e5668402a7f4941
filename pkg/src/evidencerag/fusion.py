"""Per-query min-max normalization and linear fusion of the two channels."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .errors import ConfigError


@dataclass(frozen=True)
class RetrievalConfig:
    pool_k: int = 20
    w_dense: float = 0.7
    fusion: str = "linear"

    def __post_init__(self):
        if self.pool_k < 1:
            raise ConfigError("pool_k must be >= 1")
        if not 0.0 <= self.w_dense <= 1.0:
            raise ConfigError("w_dense must lie in [0, 1]")
        if self.fusion != "linear":
            raise ConfigError(f"fusion method {self.fusion!r} is not implemented (only 'linear')")

    @property
    def w_sparse(self) -> float:
        return 1.0 - self.w_dense


@dataclass(frozen=True)
class Candidate:
    passage_ref: str
    dense_raw: float | None
    sparse_raw: float | None
    dense_norm: float
    sparse_norm: float
    fused: float


def normalize_minmax(scores: Sequence[float]) -> list[float]:
    """Map scores onto [0, 1]; a constant list maps to 0.5 everywhere."""
    if not scores:
        return []
    lo, hi = min(scores), max(scores)
    if hi == lo:
        return [0.5] * len(scores)
    span = hi - lo
    return [(s - lo) / span for s in scores]


def _normalized(channel: Sequence[tuple[str, float]]) -> dict[str, tuple[float, float]]:
    refs = [r for r, _ in channel]
    raw = [s for _, s in channel]
    return {r: (s, n) for r, s, n in zip(refs, raw, normalize_minmax(raw))}


def fuse(
    dense_list: Sequence[tuple[str, float]],
    sparse_list: Sequence[tuple[str, float]],
    cfg: RetrievalConfig = RetrievalConfig(),
) -> list[Candidate]:
    """Union both channels' hits, fuse, rank, and keep the top ``pool_k``.

    A passage missing from one channel gets normalized score 0 there.
    """
    dense = _normalized(dense_list)
    sparse = _normalized(sparse_list)
    pool = []
    for ref in dense.keys() | sparse.keys():
        d_raw, d_norm = dense.get(ref, (None, 0.0))
        s_raw, s_norm = sparse.get(ref, (None, 0.0))
        fused = cfg.w_dense * d_norm + cfg.w_sparse * s_norm
        pool.append(Candidate(ref, d_raw, s_raw, d_norm, s_norm, fused))
    pool.sort(key=lambda c: (-c.fused, c.passage_ref))
    return pool[: cfg.pool_k]
