"""Exact cosine-similarity index over passage embeddings."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .errors import QueryError, RetrievalIndexError
from .text import sha256_hex

MANIFEST_FILE = "manifest.txt"
VECTORS_FILE = "vectors.f32"
IDS_FILE = "ids.txt"
FORMAT_VERSION = 1


class VectorIndex:
    def __init__(self, ids: list[str], matrix: np.ndarray, provider_model_id: str = ""):
        matrix = np.ascontiguousarray(matrix, dtype="<f4")
        if matrix.ndim != 2 or matrix.shape[0] != len(ids) or matrix.shape[1] == 0:
            raise RetrievalIndexError(f"matrix shape {matrix.shape} does not fit {len(ids)} ids")
        if len(set(ids)) != len(ids):
            raise RetrievalIndexError("duplicate ids in vector index")
        self.ids = list(ids)
        self.matrix = matrix
        self.dim = matrix.shape[1]
        self.provider_model_id = provider_model_id
        scoring = matrix.astype(np.float64)
        norms = np.linalg.norm(scoring, axis=1)
        if not np.all(np.isfinite(norms)) or np.any(norms == 0):
            raise RetrievalIndexError("vector index rows must be finite and non-zero")
        # Rows are scored as unit vectors so scores are cosines whatever was stored.
        self._scoring = scoring / norms[:, None]
        order = sorted(range(len(ids)), key=ids.__getitem__)
        self._id_rank = np.empty(len(ids), dtype=np.int64)
        self._id_rank[order] = np.arange(len(ids))

    def __len__(self) -> int:
        return len(self.ids)

    @classmethod
    def build(cls, store, gateway, batch_size: int = 64) -> "VectorIndex":
        passages = list(store.scan())
        if not passages:
            raise RetrievalIndexError("cannot build a vector index over an empty store")
        texts = [p.text for p in passages]
        batches = [texts[i:i + batch_size] for i in range(0, len(texts), batch_size)]
        # The gateway's own semaphore bounds the requests actually in flight.
        with ThreadPoolExecutor(max_workers=gateway.cfg.max_in_flight) as pool:
            results = list(pool.map(gateway.embed, batches))
        dims = {r.dim for r in results}
        if len(dims) != 1:
            raise RetrievalIndexError(f"embedding provider returned inconsistent dims {sorted(dims)}")
        matrix = np.vstack([r.vectors for r in results])
        return cls([p.passage_id for p in passages], matrix, gateway.cfg.model_id)

    def scores(self, query_vector) -> np.ndarray:
        q = np.asarray(query_vector, dtype=np.float64)
        if q.shape != (self.dim,):
            raise QueryError(f"query has shape {q.shape}, index dim is {self.dim}")
        norm = np.linalg.norm(q)
        if norm == 0 or not np.isfinite(norm):
            raise QueryError("query vector has zero or non-finite norm")
        return self._scoring @ (q / norm)

    def top_k(self, query_vector, k: int) -> list[tuple[str, float]]:
        """Highest cosines first; equal cosines ordered by ascending id."""
        if k < 1:
            raise QueryError("k must be >= 1")
        s = self.scores(query_vector)
        order = np.lexsort((self._id_rank, -s))[:k]
        return [(self.ids[i], float(s[i])) for i in order]

    def vector(self, passage_id: str) -> np.ndarray:
        return self._scoring[self.ids.index(passage_id)]

    def save(self, directory: str | os.PathLike) -> Path:
        root = Path(directory)
        root.mkdir(parents=True, exist_ok=True)
        blob = self.matrix.tobytes()
        ids_blob = "".join(i + "\n" for i in self.ids).encode("utf-8")
        (root / VECTORS_FILE).write_bytes(blob)
        (root / IDS_FILE).write_bytes(ids_blob)
        manifest = [
            ("format", FORMAT_VERSION),
            ("dim", self.dim),
            ("count", len(self.ids)),
            ("provider_model_id", self.provider_model_id),
            ("vectors_sha256", sha256_hex(blob)),
            ("ids_sha256", sha256_hex(ids_blob)),
        ]
        (root / MANIFEST_FILE).write_text("".join(f"{k}\t{v}\n" for k, v in manifest), encoding="utf-8")
        return root

    @classmethod
    def load(cls, directory: str | os.PathLike) -> "VectorIndex":
        root = Path(directory)
        try:
            manifest = dict(
                line.split("\t", 1)
                for line in (root / MANIFEST_FILE).read_text(encoding="utf-8").splitlines()
                if line
            )
            if int(manifest["format"]) != FORMAT_VERSION:
                raise RetrievalIndexError(f"{root}: unsupported vector index format {manifest['format']}")
            dim, count = int(manifest["dim"]), int(manifest["count"])
        except (OSError, KeyError, ValueError) as exc:
            raise RetrievalIndexError(f"{root}: unreadable vector manifest: {exc}") from exc
        blob = (root / VECTORS_FILE).read_bytes()
        if len(blob) != count * dim * 4:
            raise RetrievalIndexError(f"{root}: vector file has {len(blob)} bytes, expected {count * dim * 4}")
        if sha256_hex(blob) != manifest.get("vectors_sha256"):
            raise RetrievalIndexError(f"{root}: vector file does not match its manifest hash")
        ids_blob = (root / IDS_FILE).read_bytes()
        if sha256_hex(ids_blob) != manifest.get("ids_sha256"):
            raise RetrievalIndexError(f"{root}: id file does not match its manifest hash")
        ids = ids_blob.decode("utf-8").splitlines()
        matrix = np.frombuffer(blob, dtype="<f4").reshape(count, dim)
        return cls(ids, matrix, manifest.get("provider_model_id", ""))
