import json
import random

import numpy as np
import pytest

from hyperrag.errors import (
    ArityTooSmallError,
    CorruptManifestError,
    EmptyNameError,
    IntegrityError,
    KnowledgeBaseIOError,
    UnknownEntityError,
    VersionMismatchError,
    WeightOutOfRangeError,
)
from hyperrag.knowledge import KnowledgeBase, merge_description
from hyperrag.models import DESCRIPTION_CAP, Chunk, EntityKind, chunk_id_for


def kb_with_chunk(doc="d", text="some text") -> tuple[KnowledgeBase, str]:
    kb = KnowledgeBase(dimension=4)
    cid = kb.add_chunk(Chunk(id=chunk_id_for(doc, 0), text=text, doc_id=doc))
    return kb, cid


def test_add_entity_and_merge():
    kb, src = kb_with_chunk()
    a = kb.add_entity("Zyn", "text", "nicotine pouch brand", src)
    assert len(kb.entities) == 1
    b = kb.add_entity("zyn ", EntityKind.text, "sold in cans", src)
    assert a == b
    assert len(kb.entities) == 1
    ent = kb.entities[a]
    assert ent.name == "zyn"
    assert ent.description == "nicotine pouch brand<SEP>sold in cans"


def test_merge_unions_sources():
    kb = KnowledgeBase()
    c1 = kb.add_chunk(Chunk(id="c1", text="x", doc_id="d"))
    c2 = kb.add_chunk(Chunk(id="c2", text="y", doc_id="d"))
    eid = kb.add_entity("Zyn", "text", "", c1)
    kb.add_entity("Zyn", "text", "", c2)
    assert kb.entities[eid].sources == {"c1", "c2"}


def test_kind_disambiguates():
    kb, src = kb_with_chunk()
    kb.add_entity("Zyn", "text", "", src)
    kb.add_entity("Zyn", "image", "", src)
    assert len(kb.entities) == 2


def test_empty_name():
    kb, src = kb_with_chunk()
    with pytest.raises(EmptyNameError):
        kb.add_entity("   ", "text", "", src)


def test_merge_description_dedupes_and_caps():
    assert merge_description("a", "a") == "a"
    assert merge_description("a<SEP>b", "b") == "a<SEP>b"
    long = merge_description("x" * DESCRIPTION_CAP, "more")
    assert len(long) == DESCRIPTION_CAP


def test_same_name_inserted_many_times():
    kb, src = kb_with_chunk()
    for _ in range(10):
        kb.add_entity("Velo", "text", "brand", src)
    assert len(kb.entities) == 1


def test_hyperedges_and_neighbors():
    kb, src = kb_with_chunk()
    a, b, c, d = (kb.add_entity(n, "text", "", src) for n in "abcd")
    kb.add_hyperedge([a, b], "a-b", 1.0, src)
    kb.add_hyperedge([a, c, d], "a-c-d", 1.0, src)
    assert kb.neighbors(a) == {b, c, d}
    assert kb.neighbors(b) == {a}
    e = kb.add_entity("e", "text", "", src)
    assert kb.neighbors(e) == set()


def test_hyperedge_errors():
    kb, src = kb_with_chunk()
    a = kb.add_entity("a", "text", "", src)
    b = kb.add_entity("b", "text", "", src)
    with pytest.raises(ArityTooSmallError):
        kb.add_hyperedge([a], "solo", 1.0, src)
    with pytest.raises(ArityTooSmallError):
        kb.add_hyperedge([a, a], "twice", 1.0, src)
    with pytest.raises(UnknownEntityError):
        kb.add_hyperedge([a, "missing"], "x", 1.0, src)
    with pytest.raises(WeightOutOfRangeError):
        kb.add_hyperedge([a, b], "x", 1.5, src)
    with pytest.raises(UnknownEntityError):
        kb.neighbors("missing")


def test_identical_hyperedge_is_idempotent():
    kb, src = kb_with_chunk()
    a = kb.add_entity("a", "text", "", src)
    b = kb.add_entity("b", "text", "", src)
    h1 = kb.add_hyperedge([a, b], "r", 1.0, src)
    h2 = kb.add_hyperedge([a, b], "r", 1.0, src)
    assert h1 == h2
    assert len(kb.hyperedges) == 1


def random_kb(seed: int, n_entities: int, n_edges: int, dim: int = 8) -> KnowledgeBase:
    rng = random.Random(seed)
    nrng = np.random.default_rng(seed)
    kb = KnowledgeBase(dimension=dim)
    chunks = []
    for i in range(max(1, n_entities // 10)):
        chunks.append(kb.add_chunk(Chunk(id=chunk_id_for(f"doc{seed}", i), text=f"chunk {i}", doc_id=f"doc{seed}", offset=i)))
    ids = []
    for i in range(n_entities):
        kind = rng.choice(["text", "descriptor"])
        eid = kb.add_entity(f"ent {i}", kind, f"description {rng.random():.6f}", rng.choice(chunks))
        ids.append(eid)
    for i in range(n_edges):
        members = rng.sample(ids, rng.randint(2, 5))
        kb.add_hyperedge(members, f"relation {i}", round(rng.random(), 4), rng.choice(chunks))
    for eid in ids:
        kb.index.upsert(f"entity:{eid}", nrng.normal(size=dim))
        kb.entities[eid].embedding_id = f"entity:{eid}"
    for hid in kb.hyperedges:
        kb.index.upsert(f"edge:{hid}", nrng.normal(size=dim))
        kb.hyperedges[hid].embedding_id = f"edge:{hid}"
    return kb


def test_neighbors_matches_brute_force():
    kb = random_kb(5, 20, 15)
    for eid in kb.entities:
        expected = set()
        for h in kb.hyperedges.values():
            if eid in h.members:
                expected.update(h.members)
        expected.discard(eid)
        assert kb.neighbors(eid) == expected
        for nb in kb.neighbors(eid):
            assert eid in kb.neighbors(nb)


def test_random_ops_keep_integrity():
    for seed in range(5):
        kb = random_kb(seed, 40, 30)
        kb.check_integrity()


def test_empty_roundtrip(tmp_path):
    kb = KnowledgeBase(dimension=4)
    kb.save(tmp_path / "kb")
    loaded = KnowledgeBase.load(tmp_path / "kb")
    assert kb.structurally_equal(loaded)
    assert loaded.stats()["entities"] == 0


@pytest.mark.parametrize("seed", range(20))
def test_large_roundtrip(tmp_path, seed):
    kb = random_kb(seed, 500, 300)
    kb.save(tmp_path / "kb")
    loaded = KnowledgeBase.load(tmp_path / "kb")
    assert kb.structurally_equal(loaded)
    for eid in list(kb.entities)[:20]:
        assert loaded.neighbors(eid) == kb.neighbors(eid)


def test_resave_is_byte_identical(tmp_path):
    kb = random_kb(1, 50, 30)
    kb.save(tmp_path / "a")
    KnowledgeBase.load(tmp_path / "a").save(tmp_path / "b")
    for name in ("manifest.json", "entities.jsonl", "hyperedges.jsonl", "chunks.jsonl", "images.jsonl", "vectors.bin"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_version_mismatch(tmp_path):
    KnowledgeBase(dimension=4).save(tmp_path / "kb")
    mpath = tmp_path / "kb" / "manifest.json"
    data = json.loads(mpath.read_text())
    data["version"] = 99
    mpath.write_text(json.dumps(data))
    with pytest.raises(VersionMismatchError):
        KnowledgeBase.load(tmp_path / "kb")


def test_corrupt_manifest(tmp_path):
    KnowledgeBase(dimension=4).save(tmp_path / "kb")
    (tmp_path / "kb" / "manifest.json").write_text("{not json")
    with pytest.raises(CorruptManifestError):
        KnowledgeBase.load(tmp_path / "kb")


def test_missing_directory(tmp_path):
    with pytest.raises(KnowledgeBaseIOError):
        KnowledgeBase.load(tmp_path / "nowhere")


def test_dangling_reference_detected(tmp_path):
    kb = random_kb(2, 10, 5)
    kb.save(tmp_path / "kb")
    edges = tmp_path / "kb" / "hyperedges.jsonl"
    rows = [json.loads(line) for line in edges.read_text().splitlines()]
    rows[0]["members"][0] = "f" * 32
    edges.write_text("\n".join(json.dumps(r) for r in rows) + "\n")
    with pytest.raises(IntegrityError):
        KnowledgeBase.load(tmp_path / "kb")
