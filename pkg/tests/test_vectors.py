import numpy as np
import pytest

from hyperrag.errors import CorruptManifestError, DimensionMismatchError, ZeroVectorError
from hyperrag.vectors import VectorIndex, rank_order


def full_scan(matrix: np.ndarray, ids, query: np.ndarray, k: int):
    m = matrix.astype(np.float32).astype(np.float64)
    scores = (m @ query) / (np.linalg.norm(m, axis=1) * np.linalg.norm(query))
    order = sorted(range(len(ids)), key=lambda i: (-round(scores[i] / 1e-9), ids[i]))
    return [ids[i] for i in order[:k]]


def test_upsert_checks_dimension_and_norm():
    idx = VectorIndex(4)
    idx.upsert("a", [1.0, 0.0, 0.0, 0.0])
    assert len(idx) == 1
    with pytest.raises(DimensionMismatchError):
        idx.upsert("b", [1.0, 0.0, 0.0])
    with pytest.raises(ZeroVectorError):
        idx.upsert("c", [0.0, 0.0, 0.0, 0.0])


def test_upsert_replaces():
    idx = VectorIndex(2)
    idx.upsert("a", [1.0, 0.0])
    idx.upsert("a", [0.0, 1.0])
    assert len(idx) == 1
    assert idx.top_k([0.0, 1.0], 1)[0].score == pytest.approx(1.0)


def test_orthogonal_and_self():
    idx = VectorIndex(2)
    idx.upsert("a", [1.0, 0.0])
    idx.upsert("b", [0.0, 1.0])
    hits = idx.top_k([1.0, 0.0], 5)
    assert [h.id for h in hits] == ["a", "b"]
    assert hits[0].score == pytest.approx(1.0, abs=1e-6)
    assert hits[1].score == pytest.approx(0.0, abs=1e-6)


def test_ties_break_by_id():
    idx = VectorIndex(2)
    for name in ("c", "a", "b"):
        idx.upsert(name, [1.0, 1.0])
    assert [h.id for h in idx.top_k([1.0, 1.0], 3)] == ["a", "b", "c"]


def test_query_validation():
    idx = VectorIndex(3)
    idx.upsert("a", [1.0, 2.0, 3.0])
    with pytest.raises(DimensionMismatchError):
        idx.top_k([1.0, 2.0], 1)
    with pytest.raises(ZeroVectorError):
        idx.top_k([0.0, 0.0, 0.0], 1)
    with pytest.raises(ValueError):
        idx.top_k([1.0, 0.0, 0.0], 0)


@pytest.mark.parametrize("k", [1, 5, 20])
def test_matches_full_scan(k):
    rng = np.random.default_rng(7)
    data = rng.normal(size=(1000, 64))
    ids = [f"v{i:04d}" for i in range(1000)]
    idx = VectorIndex(64)
    for i, row in zip(ids, data):
        idx.upsert(i, row)
    for _ in range(100):
        q = rng.normal(size=64)
        hits = idx.top_k(q, k)
        assert [h.id for h in hits] == full_scan(data, ids, q, k)
        scores = [h.score for h in hits]
        assert scores == sorted(scores, reverse=True)


def test_scale_invariance():
    rng = np.random.default_rng(3)
    idx = VectorIndex(16)
    for i in range(200):
        idx.upsert(f"x{i}", rng.normal(size=16))
    q = rng.normal(size=16)
    assert [h.id for h in idx.top_k(q, 10)] == [h.id for h in idx.top_k(q * 37.5, 10)]


def test_namespaces():
    idx = VectorIndex(2)
    idx.upsert("chunk:1", [1.0, 0.0])
    idx.upsert("entity:1", [1.0, 0.1])
    assert [h.id for h in idx.top_k([1.0, 0.0], 5, namespace="entity")] == ["entity:1"]
    assert idx.top_k([1.0, 0.0], 5, namespace="image") == []


def test_k_larger_than_size():
    idx = VectorIndex(2)
    idx.upsert("a", [1.0, 0.0])
    assert len(idx.top_k([1.0, 0.0], 50)) == 1


def test_export_restore_bit_equal():
    rng = np.random.default_rng(11)
    idx = VectorIndex(8)
    for i in range(30):
        idx.upsert(f"e{29 - i}", rng.normal(size=8))
    table, payload = idx.export()
    assert list(table) == sorted(table)
    restored = VectorIndex.restore(8, table, payload)
    assert restored.export() == (table, payload)


def test_restore_rejects_bad_payload():
    with pytest.raises(CorruptManifestError):
        VectorIndex.restore(4, {"a": 0}, b"\x00" * 12)
    with pytest.raises(CorruptManifestError):
        VectorIndex.restore(1, {"a": 0, "b": 0}, b"\x00" * 8)


def test_rank_order_empty():
    assert len(rank_order([], np.zeros(0))) == 0
