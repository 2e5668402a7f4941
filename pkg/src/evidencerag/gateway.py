"""Client for chat-completion and embedding providers.

Speaks the common ``/chat/completions`` + ``/embeddings`` JSON protocol over
HTTP, caches every response on disk keyed by request content, retries
transient failures, and bounds in-flight requests per provider. A
``MockBackend`` (see :mod:`evidencerag.mock`) can stand in for the network.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import tempfile
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol, Sequence

import httpx
import numpy as np

from .errors import ConfigError, ProtocolError, TransportError

log = logging.getLogger(__name__)

DEFAULT_TEMPERATURE = 0.0
DEFAULT_SEED = 0


@dataclass(frozen=True)
class ProviderConfig:
    base_url: str = "http://localhost:8000/v1"
    model_id: str = "mock"
    api_key_env: str = ""
    timeout: float = 60.0
    max_retries: int = 2
    max_in_flight: int = 4

    def __post_init__(self):
        if self.max_in_flight < 1:
            raise ConfigError(f"max_in_flight must be >= 1, got {self.max_in_flight}")
        if self.timeout <= 0:
            raise ConfigError(f"timeout must be > 0, got {self.timeout}")
        if self.max_retries < 0:
            raise ConfigError(f"max_retries must be >= 0, got {self.max_retries}")


@dataclass(frozen=True)
class ChatRequest:
    user_text: str
    system_text: str = ""
    temperature: float = DEFAULT_TEMPERATURE
    max_tokens: int = 1024
    seed: int | None = DEFAULT_SEED

    def __post_init__(self):
        if not self.user_text:
            raise ValueError("user_text must be non-empty")
        if not 0.0 <= self.temperature <= 2.0:
            raise ValueError(f"temperature must lie in [0, 2], got {self.temperature}")


@dataclass
class EmbeddingBatch:
    texts: list[str]
    vectors: np.ndarray  # (len(texts), dim), rows unit-normalized
    dim: int

    def __post_init__(self):
        if self.vectors.shape != (len(self.texts), self.dim) or self.dim <= 0:
            raise ProtocolError(
                f"embedding batch shape {self.vectors.shape} does not match "
                f"{len(self.texts)} texts x dim {self.dim}"
            )


class Backend(Protocol):
    def chat(self, cfg: ProviderConfig, req: ChatRequest) -> str: ...

    def embed(self, cfg: ProviderConfig, texts: Sequence[str]) -> list[list[float]]: ...


def cache_key(cfg: ProviderConfig, req: ChatRequest) -> str:
    """Content address of a chat request.

    Texts are hashed byte-for-byte (no whitespace canonicalization), so two
    prompts differing only in spacing are distinct cache entries.
    """
    payload = {
        "kind": "chat",
        "model_id": cfg.model_id,
        "system_text": req.system_text,
        "user_text": req.user_text,
        "temperature": req.temperature,
        "max_tokens": req.max_tokens,
        "seed": req.seed,
    }
    return _digest(payload)


def embed_cache_key(cfg: ProviderConfig, text: str) -> str:
    return _digest({"kind": "embed", "model_id": cfg.model_id, "text": text})


def _digest(payload: dict) -> str:
    blob = json.dumps(payload, sort_keys=True, ensure_ascii=False, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


class ResponseCache:
    """Append-only directory of ``key -> response`` records.

    Each record is its own JSON file, written to a temp file and renamed into
    place so concurrent writers never expose a partial record.
    """

    def __init__(self, root: str | os.PathLike):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def _path(self, key: str) -> Path:
        return self.root / key[:2] / f"{key}.json"

    def get(self, key: str):
        path = self._path(key)
        try:
            with open(path, encoding="utf-8") as fh:
                return json.load(fh)["response"]
        except FileNotFoundError:
            return None

    def put(self, key: str, response) -> None:
        path = self._path(key)
        if path.exists():
            return
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-", suffix=".json")
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as fh:
                json.dump({"key": key, "response": response}, fh, ensure_ascii=False)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise

    def __len__(self) -> int:
        return sum(1 for _ in self.root.glob("*/*.json"))


class HttpBackend:
    """Blocking HTTP client for the chat-completions/embeddings protocol."""

    def __init__(self, transport: httpx.BaseTransport | None = None):
        self._transport = transport
        self._clients: dict[tuple[str, float], httpx.Client] = {}
        self._lock = threading.Lock()

    def _client(self, cfg: ProviderConfig) -> httpx.Client:
        key = (cfg.base_url, cfg.timeout)
        with self._lock:
            if key not in self._clients:
                self._clients[key] = httpx.Client(
                    base_url=cfg.base_url.rstrip("/") + "/",
                    timeout=cfg.timeout,
                    transport=self._transport,
                )
            return self._clients[key]

    def _headers(self, cfg: ProviderConfig) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        if cfg.api_key_env:
            token = os.environ.get(cfg.api_key_env, "")
            if token:
                headers["Authorization"] = f"Bearer {token}"
        return headers

    def _post(self, cfg: ProviderConfig, path: str, body: dict) -> dict:
        try:
            resp = self._client(cfg).post(path, json=body, headers=self._headers(cfg))
        except (httpx.TimeoutException, httpx.TransportError) as exc:
            raise TransportError(f"{cfg.base_url}/{path}: {exc}") from exc
        if resp.status_code == 429 or resp.status_code >= 500:
            raise TransportError(f"{cfg.base_url}/{path}: HTTP {resp.status_code}")
        if resp.status_code >= 400:
            raise ProtocolError(f"{cfg.base_url}/{path}: HTTP {resp.status_code}: {resp.text[:200]}")
        try:
            return resp.json()
        except ValueError as exc:
            raise ProtocolError(f"{cfg.base_url}/{path}: response is not JSON") from exc

    def chat(self, cfg: ProviderConfig, req: ChatRequest) -> str:
        messages = []
        if req.system_text:
            messages.append({"role": "system", "content": req.system_text})
        messages.append({"role": "user", "content": req.user_text})
        body = {
            "model": cfg.model_id,
            "messages": messages,
            "temperature": req.temperature,
            "max_tokens": req.max_tokens,
        }
        if req.seed is not None:
            body["seed"] = req.seed
        data = self._post(cfg, "chat/completions", body)
        try:
            content = data["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise ProtocolError("chat response lacks choices[0].message.content") from exc
        if not isinstance(content, str):
            raise ProtocolError("chat response content is not a string")
        return content

    def embed(self, cfg: ProviderConfig, texts: Sequence[str]) -> list[list[float]]:
        data = self._post(cfg, "embeddings", {"model": cfg.model_id, "input": list(texts)})
        try:
            items = sorted(data["data"], key=lambda d: d["index"])
            vectors = [list(map(float, d["embedding"])) for d in items]
        except (KeyError, TypeError, ValueError) as exc:
            raise ProtocolError("embedding response lacks data[i].embedding") from exc
        if len(vectors) != len(texts):
            raise ProtocolError(f"asked for {len(texts)} embeddings, got {len(vectors)}")
        return vectors


@dataclass
class Gateway:
    """One provider endpoint plus its cache, retry policy and concurrency bound."""

    cfg: ProviderConfig
    backend: Backend = field(default_factory=HttpBackend)
    cache_dir: str | os.PathLike | None = None
    retry_backoff: float = 0.5

    def __post_init__(self):
        self.cache = ResponseCache(self.cache_dir) if self.cache_dir is not None else None
        self._slots = threading.BoundedSemaphore(self.cfg.max_in_flight)
        self._stats_lock = threading.Lock()
        self.backend_calls = 0
        self.cache_hits = 0

    def _call(self, fn, *args):
        last: Exception | None = None
        for attempt in range(self.cfg.max_retries + 1):
            if attempt and self.retry_backoff:
                time.sleep(self.retry_backoff * 2 ** (attempt - 1))
            with self._slots:
                with self._stats_lock:
                    self.backend_calls += 1
                try:
                    return fn(self.cfg, *args)
                except TransportError as exc:
                    last = exc
                    log.warning("%s attempt %d failed: %s", self.cfg.model_id, attempt + 1, exc)
        raise TransportError(
            f"{self.cfg.model_id}: giving up after {self.cfg.max_retries + 1} attempts: {last}"
        )

    def chat(self, req: ChatRequest) -> str:
        key = cache_key(self.cfg, req)
        if self.cache is not None:
            hit = self.cache.get(key)
            if hit is not None:
                with self._stats_lock:
                    self.cache_hits += 1
                return hit
        text = self._call(self.backend.chat, req)
        if not isinstance(text, str):
            raise ProtocolError("backend returned a non-string completion")
        if self.cache is not None:
            self.cache.put(key, text)
        return text

    def embed(self, texts: Sequence[str]) -> EmbeddingBatch:
        texts = list(texts)
        if not texts or any(not t for t in texts):
            raise ValueError("embed() needs a non-empty list of non-empty texts")
        found: dict[int, list[float]] = {}
        keys = [embed_cache_key(self.cfg, t) for t in texts]
        if self.cache is not None:
            for i, key in enumerate(keys):
                hit = self.cache.get(key)
                if hit is not None:
                    found[i] = hit
            with self._stats_lock:
                self.cache_hits += len(found)
        missing = [i for i in range(len(texts)) if i not in found]
        if missing:
            fresh = self._call(self.backend.embed, [texts[i] for i in missing])
            if len(fresh) != len(missing):
                raise ProtocolError(f"asked for {len(missing)} embeddings, got {len(fresh)}")
            for i, vec in zip(missing, fresh):
                vec = _unit(vec)
                found[i] = vec
                if self.cache is not None:
                    self.cache.put(keys[i], vec)
        dims = {len(found[i]) for i in range(len(texts))}
        if len(dims) != 1:
            raise ProtocolError(f"inconsistent embedding dimensions in one batch: {sorted(dims)}")
        matrix = np.asarray([found[i] for i in range(len(texts))], dtype=np.float64)
        return EmbeddingBatch(texts=texts, vectors=matrix, dim=matrix.shape[1])


def _unit(vec: Sequence[float]) -> list[float]:
    arr = np.asarray(vec, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise ProtocolError("embedding is not a non-empty vector")
    norm = float(np.linalg.norm(arr))
    if not np.isfinite(norm) or norm == 0.0:
        raise ProtocolError("embedding has zero or non-finite norm")
    return (arr / norm).tolist()
