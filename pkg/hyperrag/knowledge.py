# hyperrag/knowledge.py
from __future__ import annotations

import json
import logging
import os
from collections import Counter
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Set, Type, TypeVar

from pydantic import BaseModel, ValidationError

from .errors import (
    ArityTooSmallError,
    CorruptManifestError,
    EmptyNameError,
    IntegrityError,
    KnowledgeBaseIOError,
    UnknownEntityError,
    VersionMismatchError,
    WeightOutOfRangeError,
)
from .models import (
    DESCRIPTION_CAP,
    DESCRIPTION_SEP,
    MANIFEST_VERSION,
    Chunk,
    Entity,
    EntityKind,
    Hyperedge,
    ImageRecord,
    Manifest,
    entity_id_for,
    hyperedge_id_for,
)
from .utils import normalize_name
from .vectors import VectorIndex

log = logging.getLogger("knowledge")

M = TypeVar("M", bound=BaseModel)

MANIFEST_FILE = "manifest.json"
VECTORS_FILE = "vectors.bin"
ENTITIES_FILE = "entities.jsonl"
HYPEREDGES_FILE = "hyperedges.jsonl"
CHUNKS_FILE = "chunks.jsonl"
IMAGES_FILE = "images.jsonl"


def merge_description(current: str, extra: str) -> str:
    """Append with the separator unless the segment is already present; capped."""
    extra = (extra or "").strip()
    if not extra:
        return current
    if not current:
        merged = extra
    elif extra in current.split(DESCRIPTION_SEP):
        return current
    else:
        merged = f"{current}{DESCRIPTION_SEP}{extra}"
    return merged[:DESCRIPTION_CAP]


class KnowledgeBase:
    """
    The multimodal hypergraph: entities, n-ary hyperedges, text chunks, image
    records and the vector index holding every embedding.

    Single writer while building; read-only afterwards.
    """

    def __init__(self, dimension: int = 64, lambdas: Optional[Iterable[int]] = None):
        self.entities: Dict[str, Entity] = {}
        self.hyperedges: Dict[str, Hyperedge] = {}
        self.chunks: Dict[str, Chunk] = {}
        self.images: Dict[str, ImageRecord] = {}
        self.index = VectorIndex(dimension)
        self.lambdas: List[int] = sorted(set(lambdas)) if lambdas else [1, 2, 3, 4]
        self._incidence: Dict[str, Set[str]] = {}

    @property
    def dimension(self) -> int:
        return self.index.dimension

    # ───────────────────────── writes ─────────────────────────

    def add_entity(
        self,
        name: str,
        kind: EntityKind | str,
        description: str,
        source: str,
        entity_type: Optional[str] = None,
    ) -> str:
        norm = normalize_name(name)
        if not norm:
            raise EmptyNameError("entity name is empty after normalization")
        kind = EntityKind(kind)
        eid = entity_id_for(norm, kind)
        ent = self.entities.get(eid)
        if ent is None:
            self.entities[eid] = Entity(
                id=eid,
                name=norm,
                kind=kind,
                description=merge_description("", description),
                sources={source} if source else set(),
                entity_type=entity_type,
            )
            self._incidence.setdefault(eid, set())
            return eid
        ent.description = merge_description(ent.description, description)
        if source:
            ent.sources.add(source)
        if entity_type and not ent.entity_type:
            ent.entity_type = entity_type
        return eid

    def add_hyperedge(self, members: List[str], relation_text: str, weight: float = 1.0, source: str = "") -> str:
        if len(set(members)) < 2:
            raise ArityTooSmallError(f"hyperedge needs at least 2 distinct members, got {len(set(members))}")
        for m in members:
            if m not in self.entities:
                raise UnknownEntityError(m)
        if not (0.0 <= weight <= 1.0):
            raise WeightOutOfRangeError(f"weight {weight} outside [0, 1]")
        hid = hyperedge_id_for(members, relation_text, source)
        if hid in self.hyperedges:
            return hid
        self.hyperedges[hid] = Hyperedge(
            id=hid, members=list(members), relation_text=relation_text, weight=weight, source=source
        )
        for m in members:
            self._incidence.setdefault(m, set()).add(hid)
        return hid

    def add_chunk(self, chunk: Chunk) -> str:
        self.chunks[chunk.id] = chunk
        return chunk.id

    def add_image(self, record: ImageRecord) -> str:
        self.images[record.id] = record
        return record.id

    # ───────────────────────── reads ─────────────────────────

    def find_entity(self, name: str, kind: EntityKind | str) -> Optional[Entity]:
        norm = normalize_name(name)
        if not norm:
            return None
        return self.entities.get(entity_id_for(norm, kind))

    def incident_edges(self, entity_id: str) -> List[Hyperedge]:
        if entity_id not in self.entities:
            raise UnknownEntityError(entity_id)
        return [self.hyperedges[h] for h in sorted(self._incidence.get(entity_id, ()))]

    def neighbors(self, entity_id: str) -> Set[str]:
        if entity_id not in self.entities:
            raise UnknownEntityError(entity_id)
        out: Set[str] = set()
        for hid in self._incidence.get(entity_id, ()):
            out.update(self.hyperedges[hid].members)
        out.discard(entity_id)
        return out

    def stats(self) -> dict:
        by_kind = Counter(e.kind.value for e in self.entities.values())
        lam_edges = Counter()
        for h in self.hyperedges.values():
            facet = h.relation_text.split(":", 1)[0] if h.source in self.images else "text"
            lam_edges[facet] += 1
        return {
            "entities": len(self.entities),
            "entities_by_kind": {k.value: by_kind.get(k.value, 0) for k in EntityKind},
            "hyperedges": len(self.hyperedges),
            "hyperedges_by_facet": dict(sorted(lam_edges.items())),
            "chunks": len(self.chunks),
            "images": len(self.images),
            "vectors": len(self.index),
            "lambdas": list(self.lambdas),
            "lambda_coverage": self._lambda_coverage(),
        }

    def _lambda_coverage(self) -> Dict[str, int]:
        cov = {"1": 0, "2": 0, "3": 0, "4": 0}
        for img in self.images.values():
            d = img.descriptors
            cov["1"] += d.color is not None
            cov["2"] += d.shape is not None
            cov["3"] += d.ocr is not None
            cov["4"] += d.caption is not None
        return cov

    def check_integrity(self) -> None:
        for h in self.hyperedges.values():
            for m in h.members:
                if m not in self.entities:
                    raise IntegrityError(f"hyperedge {h.id} references missing entity {m}")
        for e in self.entities.values():
            for s in e.sources:
                if s not in self.chunks and s not in self.images:
                    raise IntegrityError(f"entity {e.id} cites unknown source {s}")
            if e.embedding_id and e.embedding_id not in self.index:
                raise IntegrityError(f"entity {e.id} embedding {e.embedding_id} missing")
        for c in self.chunks.values():
            for i in c.image_ids:
                if i not in self.images:
                    raise IntegrityError(f"chunk {c.id} links unknown image {i}")
            if c.embedding_id and c.embedding_id not in self.index:
                raise IntegrityError(f"chunk {c.id} embedding {c.embedding_id} missing")

    # ───────────────────────── persistence ─────────────────────────

    def save(self, path: str | os.PathLike) -> None:
        root = Path(path)
        try:
            root.mkdir(parents=True, exist_ok=True)
            table, payload = self.index.export()
            manifest = Manifest(version=MANIFEST_VERSION, dimension=self.dimension, lambdas=self.lambdas, rows=table)
            (root / MANIFEST_FILE).write_text(
                json.dumps(manifest.model_dump(mode="json"), indent=2, sort_keys=True) + "\n", encoding="utf-8"
            )
            _write_jsonl(root / ENTITIES_FILE, self.entities.values())
            _write_jsonl(root / HYPEREDGES_FILE, self.hyperedges.values())
            _write_jsonl(root / CHUNKS_FILE, self.chunks.values())
            _write_jsonl(root / IMAGES_FILE, self.images.values())
            (root / VECTORS_FILE).write_bytes(payload)
        except OSError as e:
            raise KnowledgeBaseIOError(f"cannot write knowledge base at {root}: {e}") from e
        log.info("saved knowledge base to %s (%d entities, %d hyperedges)", root, len(self.entities), len(self.hyperedges))

    @classmethod
    def load(cls, path: str | os.PathLike) -> "KnowledgeBase":
        root = Path(path)
        mpath = root / MANIFEST_FILE
        if not mpath.is_file():
            raise KnowledgeBaseIOError(f"no knowledge base at {root} (missing {MANIFEST_FILE})")
        try:
            raw = json.loads(mpath.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as e:
            raise CorruptManifestError(f"unreadable manifest {mpath}: {e}") from e
        if not isinstance(raw, dict):
            raise CorruptManifestError("manifest must be a JSON object")
        if raw.get("version") != MANIFEST_VERSION:
            raise VersionMismatchError(f"manifest version {raw.get('version')!r}, expected {MANIFEST_VERSION}")
        try:
            manifest = Manifest.model_validate(raw)
        except ValidationError as e:
            raise CorruptManifestError(f"invalid manifest: {e}") from e

        try:
            payload = (root / VECTORS_FILE).read_bytes()
        except OSError as e:
            raise KnowledgeBaseIOError(f"cannot read {VECTORS_FILE}: {e}") from e

        kb = cls(dimension=manifest.dimension, lambdas=manifest.lambdas)
        kb.index = VectorIndex.restore(manifest.dimension, manifest.rows, payload)
        for ent in _read_jsonl(root / ENTITIES_FILE, Entity):
            kb.entities[ent.id] = ent
            kb._incidence.setdefault(ent.id, set())
        for h in _read_jsonl(root / HYPEREDGES_FILE, Hyperedge):
            kb.hyperedges[h.id] = h
            for m in h.members:
                kb._incidence.setdefault(m, set()).add(h.id)
        for c in _read_jsonl(root / CHUNKS_FILE, Chunk):
            kb.chunks[c.id] = c
        for img in _read_jsonl(root / IMAGES_FILE, ImageRecord):
            kb.images[img.id] = img
        kb.check_integrity()
        return kb

    def structurally_equal(self, other: "KnowledgeBase") -> bool:
        if (self.entities, self.hyperedges, self.chunks, self.images) != (
            other.entities, other.hyperedges, other.chunks, other.images
        ):
            return False
        if self.dimension != other.dimension or self.lambdas != other.lambdas:
            return False
        return self.index.export() == other.index.export()


def _write_jsonl(path: Path, items: Iterable[BaseModel]) -> None:
    ordered = sorted(items, key=lambda m: m.id)  # type: ignore[attr-defined]
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        for m in ordered:
            fh.write(json.dumps(m.model_dump(mode="json"), sort_keys=True, ensure_ascii=False) + "\n")


def _read_jsonl(path: Path, model: Type[M]) -> List[M]:
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise KnowledgeBaseIOError(f"cannot read {path.name}: {e}") from e
    out: List[M] = []
    for n, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            out.append(model.model_validate_json(line))
        except ValidationError as e:
            raise CorruptManifestError(f"{path.name} line {n}: {e}") from e
    return out
