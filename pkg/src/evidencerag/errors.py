"""Exception hierarchy.

Every error carries an ``exit_code`` so the CLI can map failures onto its
documented exit statuses (1 usage/config, 2 data/index, 3 provider/transport).
"""

from __future__ import annotations


class RagError(Exception):
    exit_code = 2


class ConfigError(RagError):
    exit_code = 1


class ProviderError(RagError):
    exit_code = 3


class TransportError(ProviderError):
    """Provider unreachable, timed out, or kept failing after all retries."""


class ProtocolError(ProviderError):
    """Provider answered, but the body does not have the expected shape."""


class ChunkingError(RagError):
    def __init__(self, message: str, fallback: bool = False):
        super().__init__(message)
        self.fallback = fallback


class IngestError(RagError):
    pass


class MiningError(RagError):
    pass


class ValidationError(RagError):
    pass


class RetrievalIndexError(RagError):
    """Index build, load, or version-check failure."""


class QueryError(RagError):
    pass


class JudgmentError(ProviderError):
    pass


class ExportError(RagError):
    pass


class MetricError(RagError):
    pass


class BenchmarkError(RagError):
    pass


class ConstructionError(RagError):
    pass
