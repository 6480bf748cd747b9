# hyperrag/construction.py
from __future__ import annotations

import asyncio
import json
import logging
import os
import re
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

from pydantic import ValidationError

from .config import AppConfig
from .descriptors import DescriptorRelation, embed_description, extract_all, label_relations
from .errors import CorpusError, EmptyDocumentError, EmptyNameError, ParseFailure
from .knowledge import KnowledgeBase
from .models import Chunk, EntityKind, ImageBlob, ImageLabels, ImageRecord, chunk_id_for
from .prompting import EXTRACT, REPAIR, PromptLibrary
from .providers import Providers
from .schemas import ConstructionReport, CorpusSpec, ExtractionPayload, ImageManifestRow
from .utils import mentions_word, normalize_name

log = logging.getLogger("construction")

REPORT_FILE = "report.json"
STUB_DESCRIPTION = "(mentioned)"
EXTRACTION_KEYS = ("entities", "relations")

# ---------------------------------------------------------------------------
# corpus inputs
# ---------------------------------------------------------------------------

def load_corpus_spec(path: str | os.PathLike) -> CorpusSpec:
    """Read corpus.json; document and manifest paths resolve against its directory."""
    p = Path(path)
    if not p.is_file():
        raise CorpusError(f"corpus file not found: {p}")
    try:
        spec = CorpusSpec.model_validate_json(p.read_text(encoding="utf-8"))
    except (OSError, ValidationError) as e:
        raise CorpusError(f"invalid corpus file {p}: {e}") from e
    base = p.resolve().parent
    spec.docs = [str(d if Path(d).is_absolute() else base / d) for d in spec.docs]
    if spec.images and not Path(spec.images).is_absolute():
        spec.images = str(base / spec.images)
    return spec


def read_image_manifest(path: str | os.PathLike) -> List[Tuple[ImageBlob, ImageLabels]]:
    """One JSONL record per image: {uri, tobacco_type?, product_type?, brand?}."""
    p = Path(path)
    try:
        lines = p.read_text(encoding="utf-8").splitlines()
    except OSError as e:
        raise CorpusError(f"cannot read image manifest {p}: {e}") from e
    out: List[Tuple[ImageBlob, ImageLabels]] = []
    for n, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            row = ImageManifestRow.model_validate_json(line)
        except ValidationError as e:
            raise CorpusError(f"{p.name} line {n}: {e}") from e
        uri = Path(row.uri)
        if not uri.is_absolute():
            uri = p.resolve().parent / uri
        blob = ImageBlob.from_path(uri)
        # the manifest's own uri goes into the knowledge base
        blob = ImageBlob(data=blob.data, digest=blob.digest, uri=row.uri)
        out.append((blob, ImageLabels(tobacco_type=row.tobacco_type, product_type=row.product_type, brand=row.brand)))
    return out

# ---------------------------------------------------------------------------
# chunking
# ---------------------------------------------------------------------------

def chunk_text(doc_id: str, text: str, size: int = 200, overlap: int = 40) -> List[Chunk]:
    """
    Sliding windows of ``size`` words with stride ``size - overlap``.
    The last window may be shorter; no empty trailing window.
    """
    if size < 16:
        raise ValueError("chunk size must be at least 16 words")
    if not 0 <= overlap < size:
        raise ValueError("chunk overlap must be in [0, size)")
    words = text.split()
    if not words:
        raise EmptyDocumentError(f"document {doc_id} has no words")
    stride = size - overlap
    chunks: List[Chunk] = []
    start = 0
    while True:
        window = words[start:start + size]
        chunks.append(Chunk(id=chunk_id_for(doc_id, start), text=" ".join(window), doc_id=doc_id, offset=start))
        if start + size >= len(words):
            break
        start += stride
    return chunks

# ---------------------------------------------------------------------------
# text extraction
# ---------------------------------------------------------------------------

_FENCE_RE = re.compile(r"^```(?:json)?\s*|\s*```$", re.I)


def parse_extraction(raw: str) -> ExtractionPayload:
    text = _FENCE_RE.sub("", (raw or "").strip())
    start, end = text.find("{"), text.rfind("}")
    if start < 0 or end <= start:
        raise ParseFailure("no JSON object in model output")
    try:
        data = json.loads(text[start:end + 1])
        return ExtractionPayload.model_validate(data)
    except (json.JSONDecodeError, ValidationError) as e:
        raise ParseFailure(f"extraction output does not match the schema: {e}") from e


async def extract_text_graph(
    chunk: Chunk,
    providers: Providers,
    prompts: PromptLibrary,
    report: Optional[ConstructionReport] = None,
) -> ExtractionPayload:
    """
    Ask the chat model for entities and relations in one chunk. One repair
    round on unparseable output; after that the chunk contributes nothing
    and is listed in the report.
    """
    prompt = prompts.render(EXTRACT, chunk_id=chunk.id)
    raw = await providers.chat(prompt, [chunk.text], purpose="extract")
    try:
        return parse_extraction(raw)
    except ParseFailure as first:
        log.warning("chunk %s: unparseable extraction (%s); asking for a repair", chunk.id, first)
    if report is not None:
        report.repairs += 1
    repair = prompts.render(REPAIR, previous=raw[:2000], keys=EXTRACTION_KEYS)
    raw = await providers.chat(repair, [chunk.text], purpose="repair")
    try:
        return parse_extraction(raw)
    except ParseFailure as second:
        log.warning("chunk %s: extraction failed after repair: %s", chunk.id, second)
        if report is not None:
            report.parse_failures.append(chunk.id)
        return ExtractionPayload()


def apply_extraction(kb: KnowledgeBase, chunk: Chunk, payload: ExtractionPayload, report: ConstructionReport) -> None:
    names: Dict[str, str] = {}
    for ent in payload.entities:
        try:
            eid = kb.add_entity(ent.name, EntityKind.text, ent.description, chunk.id, entity_type=ent.kind_hint or None)
        except EmptyNameError:
            log.warning("chunk %s: skipping entity with empty name", chunk.id)
            continue
        names[normalize_name(ent.name)] = eid

    for rel in payload.relations:
        members: List[str] = []
        for name in rel.members:
            norm = normalize_name(name)
            if not norm:
                continue
            eid = names.get(norm)
            if eid is None:
                existing = kb.find_entity(norm, EntityKind.text)
                if existing is not None:
                    eid = existing.id
                    if chunk.id not in existing.sources:
                        existing.sources.add(chunk.id)
                else:
                    eid = kb.add_entity(norm, EntityKind.text, STUB_DESCRIPTION, chunk.id)
                    report.stub_entities += 1
                names[norm] = eid
            if eid not in members:
                members.append(eid)
        if len(members) < 2:
            report.skipped_relations += 1
            continue
        weight = 1.0 if rel.weight is None else float(rel.weight)
        if not 0.0 <= weight <= 1.0:
            log.warning("chunk %s: clamping relation weight %s into [0, 1]", chunk.id, weight)
            weight = min(1.0, max(0.0, weight))
            report.clamped_weights += 1
        kb.add_hyperedge(members, rel.relation_text or "related", weight, chunk.id)

# ---------------------------------------------------------------------------
# images
# ---------------------------------------------------------------------------

def attach_image(kb: KnowledgeBase, record: ImageRecord, relations: Sequence[DescriptorRelation]) -> Tuple[List[str], List[str]]:
    """
    One image entity (name = image id) plus, per relation, its descriptor
    entities and one hyperedge from the image to them.
    """
    kb.add_image(record)
    description = record.descriptors.caption or f"product image {Path(record.uri).name}"
    image_eid = kb.add_entity(record.id, EntityKind.image, description, record.id)
    entity_ids = [image_eid]
    edge_ids: List[str] = []
    for rel in relations:
        members = [image_eid]
        for name, desc in rel.targets:
            did = kb.add_entity(name, EntityKind.descriptor, desc, record.id)
            if did not in members:
                members.append(did)
            if did not in entity_ids:
                entity_ids.append(did)
        edge_ids.append(kb.add_hyperedge(members, rel.relation_text, 1.0, record.id))
    return entity_ids, edge_ids


async def describe_image(
    blob: ImageBlob, labels: ImageLabels, lambdas: Sequence[int], providers: Providers, config: AppConfig
) -> Tuple[ImageRecord, List[DescriptorRelation]]:
    desc = await extract_all(blob, lambdas, providers, config.construction)
    record = ImageRecord(id=blob.digest, uri=blob.uri, labels=labels, descriptors=desc.descriptors)
    return record, desc.relations + label_relations(labels)


def link_chunks_to_images(kb: KnowledgeBase) -> None:
    """A chunk links every image whose brand it mentions as a word."""
    branded = sorted(
        (img.id, img.labels.brand.strip()) for img in kb.images.values() if img.labels.brand and img.labels.brand.strip()
    )
    for cid in sorted(kb.chunks):
        chunk = kb.chunks[cid]
        linked = set(chunk.image_ids)
        for image_id, brand in branded:
            if mentions_word(chunk.text, brand):
                linked.add(image_id)
        chunk.image_ids = sorted(linked)

# ---------------------------------------------------------------------------
# embeddings
# ---------------------------------------------------------------------------

async def embed_all(kb: KnowledgeBase, blobs: Dict[str, ImageBlob], providers: Providers, concurrency: int = 8) -> None:
    """Embed chunks, entities, relation texts, images, captions and shape texts into the index."""
    sem = asyncio.Semaphore(concurrency)
    jobs: List[Tuple[str, str]] = []                       # (embedding id, text)
    for cid in sorted(kb.chunks):
        jobs.append((f"chunk:{cid}", kb.chunks[cid].text))
    for eid in sorted(kb.entities):
        e = kb.entities[eid]
        jobs.append((f"entity:{eid}", f"{e.name}: {e.description}" if e.description else e.name))
    for hid in sorted(kb.hyperedges):
        jobs.append((f"edge:{hid}", kb.hyperedges[hid].relation_text))
    for iid in sorted(kb.images):
        d = kb.images[iid].descriptors
        if d.caption:
            jobs.append((f"caption:{iid}", d.caption))
        if d.shape is not None and d.shape.text:
            jobs.append((f"shape:{iid}", d.shape.text))

    async def one(text: str):
        async with sem:
            return await providers.embed_text(text)

    vectors = await asyncio.gather(*(one(t) for _, t in jobs))

    async def one_image(blob: ImageBlob):
        async with sem:
            return await providers.embed_image(blob)

    image_ids = sorted(i for i in kb.images if i in blobs)
    image_vectors = await asyncio.gather(*(one_image(blobs[i]) for i in image_ids))

    for (emb_id, _), vec in zip(jobs, vectors):
        kb.index.upsert(emb_id, vec)
    for iid, vec in zip(image_ids, image_vectors):
        kb.index.upsert(f"image:{iid}", vec)

    for cid, c in kb.chunks.items():
        c.embedding_id = f"chunk:{cid}"
    for eid, e in kb.entities.items():
        e.embedding_id = f"entity:{eid}"
    for hid, h in kb.hyperedges.items():
        h.embedding_id = f"edge:{hid}"
    for iid, img in kb.images.items():
        d = img.descriptors
        if f"image:{iid}" in kb.index:
            d.image_embedding_id = f"image:{iid}"
        if f"caption:{iid}" in kb.index:
            d.caption_embedding_id = f"caption:{iid}"
        if f"shape:{iid}" in kb.index:
            d.shape_embedding_id = f"shape:{iid}"

# ---------------------------------------------------------------------------
# the build
# ---------------------------------------------------------------------------

async def build_knowledge(
    spec: CorpusSpec,
    config: AppConfig,
    providers: Providers,
    prompts: Optional[PromptLibrary] = None,
) -> Tuple[KnowledgeBase, ConstructionReport]:
    """
    Chunk documents, extract the text hypergraph, describe and attach images,
    then embed everything. Mutations are applied in document order, then in
    ascending image id, whatever order the parallel work finishes in.
    """
    prompts = prompts or PromptLibrary(config.paths.prompts_dir)
    cons = config.construction
    lambdas = spec.lambdas or cons.lambdas
    size = spec.chunk_size or cons.chunk_size
    overlap = cons.chunk_overlap if spec.chunk_overlap is None else spec.chunk_overlap
    if overlap >= size:
        raise CorpusError(f"chunk_overlap {overlap} must be smaller than chunk_size {size}")

    kb = KnowledgeBase(dimension=config.dimension, lambdas=lambdas)
    report = ConstructionReport(lambdas=list(kb.lambdas))
    sem = asyncio.Semaphore(cons.max_concurrency)

    # documents → chunks
    doc_chunks: List[Chunk] = []
    for doc in spec.docs:
        path = Path(doc)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as e:
            raise CorpusError(f"cannot read document {path}: {e}") from e
        try:
            chunks = chunk_text(path.name, text, size, overlap)
        except EmptyDocumentError:
            log.warning("document %s is empty; skipped", path)
            continue
        report.documents += 1
        doc_chunks.extend(chunks)
    for c in doc_chunks:
        kb.add_chunk(c)

    async def extract(c: Chunk) -> ExtractionPayload:
        async with sem:
            return await extract_text_graph(c, providers, prompts, report)

    payloads = await asyncio.gather(*(extract(c) for c in doc_chunks))
    order = {c.id: i for i, c in enumerate(doc_chunks)}
    report.parse_failures.sort(key=lambda cid: order.get(cid, len(order)))
    for c, payload in zip(doc_chunks, payloads):
        apply_extraction(kb, c, payload, report)
    log.info("extracted %d chunks from %d documents", len(doc_chunks), report.documents)

    # images
    blobs: Dict[str, ImageBlob] = {}
    labels: Dict[str, ImageLabels] = {}
    if spec.images:
        for blob, lab in read_image_manifest(spec.images):
            if blob.digest in blobs:
                log.info("duplicate image %s skipped (%s)", blob.digest, blob.uri)
                report.duplicate_images += 1
                continue
            blobs[blob.digest] = blob
            labels[blob.digest] = lab

    async def describe(image_id: str):
        async with sem:
            return await describe_image(blobs[image_id], labels[image_id], kb.lambdas, providers, config)

    image_ids = sorted(blobs)
    described = await asyncio.gather(*(describe(i) for i in image_ids))
    for record, relations in described:
        attach_image(kb, record, relations)
        if record.descriptors.failed:
            report.optional_failures[record.id] = sorted(record.descriptors.failed)
        report.expected_descriptor_hyperedges += len(relations)
    log.info("attached %d images", len(image_ids))

    # captions feeding text extraction (off by default)
    if cons.captions_into_extraction:
        caption_chunks = [
            Chunk(id=chunk_id_for(f"caption:{iid}", 0), text=kb.images[iid].descriptors.caption or "",
                  doc_id=f"caption:{iid}", offset=0, image_ids=[iid])
            for iid in image_ids if kb.images[iid].descriptors.caption
        ]
        for c in caption_chunks:
            kb.add_chunk(c)
        payloads = await asyncio.gather(*(extract(c) for c in caption_chunks))
        for c, payload in zip(caption_chunks, payloads):
            apply_extraction(kb, c, payload, report)
        report.caption_chunks = len(caption_chunks)

    link_chunks_to_images(kb)
    await embed_all(kb, blobs, providers, cons.max_concurrency)
    kb.check_integrity()

    report.chunks = len(kb.chunks)
    report.images = len(kb.images)
    report.entities = len(kb.entities)
    report.hyperedges = len(kb.hyperedges)
    report.descriptor_hyperedges = sum(1 for h in kb.hyperedges.values() if h.source in kb.images)
    report.text_hyperedges = report.hyperedges - report.descriptor_hyperedges
    report.provider_calls = {
        k: v for k, v in providers.stats.snapshot().items() if isinstance(v, dict)
    }
    report.cache = {"hits": providers.cache.hits, "misses": providers.cache.misses}
    log.info(
        "built knowledge base: %d entities, %d hyperedges (%d descriptor), %d chunks, %d images",
        report.entities, report.hyperedges, report.descriptor_hyperedges, report.chunks, report.images,
    )
    return kb, report


def write_report(kb_dir: str | os.PathLike, report: ConstructionReport) -> Path:
    path = Path(kb_dir) / REPORT_FILE
    path.write_text(json.dumps(report.model_dump(mode="json"), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path
