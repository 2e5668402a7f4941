"""Flat ``section.key = value`` configuration with ``YPRAG_`` environment overrides.

Example::

    paths.store_dir = store
    providers.judge.model_id = qwen2.5-7b-instruct
    retrieval.pool_k = 20

``YPRAG_RETRIEVAL_POOL_K=30`` overrides ``retrieval.pool_k``. Relative paths
resolve against the directory holding the config file.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError
from .fusion import RetrievalConfig
from .gateway import ProviderConfig
from .generate import GenerationConfig
from .lexicon import FilterThresholds
from .sed import SedConfig
from .sparse import Bm25Params
from .store import ChunkingPolicy

ENV_PREFIX = "YPRAG_"
DEFAULT_FILE = "evidencerag.conf"
ROLES = ("embedder", "judge", "drafter", "refiner")

DEFAULTS: dict[str, str] = {
    "paths.store_dir": "store",
    "paths.lexicon_file": "lexicon.tsv",
    "paths.seed_lexicon": "",
    "paths.sparse_index": "sparse.idx",
    "paths.dense_dir": "dense",
    "paths.cache_dir": "cache",
    "paths.subfield_registry": "",
    "chunking.mode": "rule",
    "chunking.min_tokens": "64",
    "chunking.max_tokens": "512",
    "chunking.overlap_tokens": "0",
    "lexicon.max_ngram": "6",
    "lexicon.min_freq": "5",
    "lexicon.min_pmi": "3.0",
    "lexicon.min_entropy": "1.0",
    "sparse.k1": "1.2",
    "sparse.b": "0.75",
    "sparse.lexicon_term_boost": "1.0",
    "dense.batch_size": "64",
    "retrieval.pool_k": "20",
    "retrieval.w_dense": "0.7",
    "sed.threshold": "0.5",
    "sed.alpha": "0.5",
    "generation.context_c": "3",
    "generation.single_stage": "false",
    "eval.workers": "4",
}
for _role in ROLES:
    DEFAULTS.update(
        {
            f"providers.{_role}.base_url": "http://localhost:8000/v1",
            f"providers.{_role}.model_id": _role,
            f"providers.{_role}.api_key_env": "",
            f"providers.{_role}.timeout": "60",
            f"providers.{_role}.max_retries": "2",
            f"providers.{_role}.max_in_flight": "4",
        }
    )

_PATH_KEYS = {k for k in DEFAULTS if k.startswith("paths.")}


def env_name(key: str) -> str:
    return ENV_PREFIX + key.upper().replace(".", "_")


def parse_text(text: str, origin: str = "<config>") -> dict[str, str]:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"{origin}:{lineno}: expected 'key = value'")
        key = key.strip()
        if key not in DEFAULTS:
            raise ConfigError(f"{origin}:{lineno}: unknown key {key!r}")
        values[key] = value.strip()
    return values


@dataclass
class Config:
    values: dict[str, str] = field(default_factory=dict)
    base_dir: Path = field(default_factory=Path.cwd)

    @classmethod
    def load(cls, path: str | os.PathLike | None = None, environ=None) -> "Config":
        environ = os.environ if environ is None else environ
        values = dict(DEFAULTS)
        base = Path.cwd()
        if path is None and Path(DEFAULT_FILE).exists():
            path = DEFAULT_FILE
        if path is not None:
            p = Path(path)
            if not p.exists():
                raise ConfigError(f"config file {p} does not exist")
            values.update(parse_text(p.read_text(encoding="utf-8"), str(p)))
            base = p.resolve().parent
        for key in DEFAULTS:
            name = env_name(key)
            if name in environ:
                values[key] = environ[name]
        return cls(values, base)

    def get(self, key: str) -> str:
        return self.values[key]

    def integer(self, key: str) -> int:
        try:
            return int(self.values[key])
        except ValueError:
            raise ConfigError(f"{key} must be an integer, got {self.values[key]!r}") from None

    def number(self, key: str) -> float:
        try:
            return float(self.values[key])
        except ValueError:
            raise ConfigError(f"{key} must be a number, got {self.values[key]!r}") from None

    def flag(self, key: str) -> bool:
        v = self.values[key].lower()
        if v in ("1", "true", "yes", "on"):
            return True
        if v in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{key} must be a boolean, got {self.values[key]!r}")

    def path(self, key: str) -> Path | None:
        if key not in _PATH_KEYS:
            raise ConfigError(f"{key} is not a path setting")
        raw = self.values[key]
        if not raw:
            return None
        p = Path(raw).expanduser()
        return p if p.is_absolute() else self.base_dir / p

    def require_path(self, key: str, must_exist: bool = True) -> Path:
        p = self.path(key)
        if p is None:
            raise ConfigError(f"{key} is not set")
        if must_exist and not p.exists():
            raise ConfigError(f"{key} points at {p}, which does not exist")
        return p

    def provider(self, role: str) -> ProviderConfig:
        pre = f"providers.{role}."
        return ProviderConfig(
            base_url=self.get(pre + "base_url"),
            model_id=self.get(pre + "model_id"),
            api_key_env=self.get(pre + "api_key_env"),
            timeout=self.number(pre + "timeout"),
            max_retries=self.integer(pre + "max_retries"),
            max_in_flight=self.integer(pre + "max_in_flight"),
        )

    def chunking(self) -> ChunkingPolicy:
        return ChunkingPolicy(
            mode=self.get("chunking.mode"),
            min_tokens=self.integer("chunking.min_tokens"),
            max_tokens=self.integer("chunking.max_tokens"),
            overlap_tokens=self.integer("chunking.overlap_tokens"),
        )

    def thresholds(self) -> FilterThresholds:
        return FilterThresholds(
            min_pmi=self.number("lexicon.min_pmi"),
            min_entropy=self.number("lexicon.min_entropy"),
            min_freq=self.integer("lexicon.min_freq"),
        )

    def bm25(self) -> Bm25Params:
        return Bm25Params(self.number("sparse.k1"), self.number("sparse.b"), self.number("sparse.lexicon_term_boost"))

    def retrieval(self) -> RetrievalConfig:
        return RetrievalConfig(pool_k=self.integer("retrieval.pool_k"), w_dense=self.number("retrieval.w_dense"))

    def sed(self) -> SedConfig:
        return SedConfig(threshold=self.number("sed.threshold"), alpha=self.number("sed.alpha"))

    def generation(self) -> GenerationConfig:
        return GenerationConfig(
            context_c=self.integer("generation.context_c"),
            single_stage=self.flag("generation.single_stage"),
        )
