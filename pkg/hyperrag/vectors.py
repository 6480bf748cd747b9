# hyperrag/vectors.py
"""
Exact cosine top-k over an in-memory float32 matrix.

Vectors are addressed by embedding id. Ids of the form ``<namespace>:<key>``
(``entity:``, ``edge:``, ``chunk:``, ``image:``, ``caption:``, ``shape:``) can be
searched per namespace, so one index serves every retrieval criterion.
"""
from __future__ import annotations

import logging
from typing import Dict, Iterable, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from .errors import CorruptManifestError, DimensionMismatchError, ZeroVectorError

log = logging.getLogger("knowledge")

# scores are compared at this granularity before the id tie-break
SCORE_QUANTUM = 1e-9


class ScoredHit(NamedTuple):
    id: str
    score: float


def namespace_of(embedding_id: str) -> str:
    return embedding_id.split(":", 1)[0] if ":" in embedding_id else ""


def quantize(scores: np.ndarray) -> np.ndarray:
    return np.rint(np.asarray(scores, dtype=np.float64) / SCORE_QUANTUM).astype(np.int64)


def rank_order(ids: Sequence[str], scores: np.ndarray) -> np.ndarray:
    """Indices sorted by score descending, ties by ascending id."""
    if len(ids) == 0:
        return np.zeros(0, dtype=np.int64)
    id_rank = np.empty(len(ids), dtype=np.int64)
    id_rank[np.argsort(np.asarray(ids, dtype=str), kind="stable")] = np.arange(len(ids))
    return np.lexsort((id_rank, -quantize(scores)))


class VectorIndex:
    def __init__(self, dimension: int):
        if dimension < 1:
            raise ValueError("dimension must be positive")
        self.dimension = dimension
        self._ids: List[str] = []
        self._rows: Dict[str, int] = {}
        self._ns_rows: Dict[str, List[int]] = {}
        self._matrix = np.zeros((0, dimension), dtype=np.float32)
        self._norms = np.zeros(0, dtype=np.float64)
        self._size = 0

    def __len__(self) -> int:
        return self._size

    def __contains__(self, embedding_id: object) -> bool:
        return embedding_id in self._rows

    def ids(self) -> List[str]:
        return list(self._ids)

    # ---- validation ----

    def _as_vector(self, values: Iterable[float]) -> Tuple[np.ndarray, float]:
        vec = np.asarray(list(values) if not isinstance(values, np.ndarray) else values, dtype=np.float64).ravel()
        if vec.shape[0] != self.dimension:
            raise DimensionMismatchError(self.dimension, int(vec.shape[0]))
        norm = float(np.linalg.norm(vec))
        if not np.isfinite(norm) or norm == 0.0:
            raise ZeroVectorError("vector has zero (or non-finite) L2 norm")
        return vec, norm

    def _grow(self, need: int) -> None:
        cap = self._matrix.shape[0]
        if need <= cap:
            return
        new_cap = max(need, cap * 2, 64)
        m = np.zeros((new_cap, self.dimension), dtype=np.float32)
        m[: self._size] = self._matrix[: self._size]
        n = np.zeros(new_cap, dtype=np.float64)
        n[: self._size] = self._norms[: self._size]
        self._matrix, self._norms = m, n

    # ---- writes ----

    def upsert(self, embedding_id: str, vector: Iterable[float]) -> None:
        vec, _ = self._as_vector(vector)
        stored = vec.astype(np.float32)
        norm = float(np.linalg.norm(stored.astype(np.float64)))
        if norm == 0.0:
            raise ZeroVectorError("vector underflows to zero in float32")
        row = self._rows.get(embedding_id)
        if row is None:
            self._grow(self._size + 1)
            row = self._size
            self._size += 1
            self._ids.append(embedding_id)
            self._rows[embedding_id] = row
            self._ns_rows.setdefault(namespace_of(embedding_id), []).append(row)
        self._matrix[row] = stored
        self._norms[row] = norm

    # ---- reads ----

    def get(self, embedding_id: str) -> Optional[np.ndarray]:
        row = self._rows.get(embedding_id)
        if row is None:
            return None
        return self._matrix[row].copy()

    def similarity(self, query: Iterable[float], embedding_id: str) -> Optional[float]:
        row = self._rows.get(embedding_id)
        if row is None:
            return None
        q, qn = self._as_vector(query)
        score = float(self._matrix[row].astype(np.float64) @ q / (self._norms[row] * qn))
        return max(-1.0, min(1.0, score))

    def top_k(self, query: Iterable[float], k: int, namespace: Optional[str] = None) -> List[ScoredHit]:
        if k < 1:
            raise ValueError("k must be >= 1")
        q, qn = self._as_vector(query)
        if namespace is None:
            rows = np.arange(self._size)
        else:
            rows = np.asarray(self._ns_rows.get(namespace, []), dtype=np.int64)
        if rows.size == 0:
            return []
        scores = (self._matrix[rows].astype(np.float64) @ q) / (self._norms[rows] * qn)
        np.clip(scores, -1.0, 1.0, out=scores)
        ids = [self._ids[r] for r in rows]
        order = rank_order(ids, scores)[: min(k, rows.size)]
        return [ScoredHit(ids[i], float(scores[i])) for i in order]

    # ---- persistence ----

    def export(self) -> Tuple[Dict[str, int], bytes]:
        """Row table (sorted by id) plus little-endian float32 row-major payload."""
        order = sorted(self._ids)
        table = {eid: i for i, eid in enumerate(order)}
        if not order:
            return table, b""
        rows = np.asarray([self._rows[eid] for eid in order], dtype=np.int64)
        return table, self._matrix[rows].astype("<f4").tobytes()

    @classmethod
    def restore(cls, dimension: int, table: Dict[str, int], payload: bytes) -> "VectorIndex":
        idx = cls(dimension)
        n = len(table)
        if len(payload) != n * dimension * 4:
            raise CorruptManifestError(
                f"vectors.bin holds {len(payload)} bytes, expected {n * dimension * 4}"
            )
        if sorted(table.values()) != list(range(n)):
            raise CorruptManifestError("row table is not a permutation of 0..n-1")
        data = np.frombuffer(payload, dtype="<f4").reshape(n, dimension) if n else None
        for eid, row in sorted(table.items(), key=lambda kv: kv[1]):
            idx.upsert(eid, data[row])  # type: ignore[index]
        return idx
