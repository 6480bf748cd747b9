# hyperrag/retrieval.py
"""
Query-time retrieval.

Text side: top-k entities and hyperedges by embedding, one-hop neighbor
expansion, top-k chunks. Image side: five matching criteria, each ranked
over every stored image, fused with reciprocal-rank fusion.

  i    image embedding cosine
  ii   caption embedding cosine
  iii  average color closeness, 1 - distance / (255·√3)
  iv   shape-text embedding cosine, else class equality
  v    OCR token-set F1
"""
from __future__ import annotations

import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Sequence

import numpy as np

from .config import CRITERIA, LAMBDA_TO_CRITERION, ConstructionConfig, RetrievalConfig
from .descriptors import QueryVectors, embed_description, extract_all
from .errors import EmptyRankingsError, KbNotLoadedError, MissingDescriptorError
from .knowledge import KnowledgeBase
from .models import DescriptorSet, ImageBlob, ImageRecord
from .providers import Providers
from .schemas import ImageMatch, Query, RetrievalResult, ScoredItem
from .utils import set_f1
from .vectors import ScoredHit, quantize, rank_order

log = logging.getLogger("retrieval")

RGB_DIAMETER = 255.0 * math.sqrt(3.0)
RRF_CONSTANT = 60


def criteria_for(lambdas: Iterable[int], requested: Optional[Iterable[str]] = None) -> List[str]:
    """Criteria backed by the enabled extractors; criterion i is always on."""
    backed = {"i"} | {LAMBDA_TO_CRITERION[lam] for lam in lambdas}
    wanted = set(requested) if requested is not None else set(CRITERIA)
    return [c for c in CRITERIA if c in backed and c in wanted]


def lambdas_for(criteria: Iterable[str], built: Iterable[int]) -> List[int]:
    """Extractors a query image needs for ``criteria``; criterion i needs none."""
    wanted = set(criteria)
    return [lam for lam in sorted(set(built)) if LAMBDA_TO_CRITERION[lam] in wanted]


@dataclass
class QueryImage:
    """Descriptors of the query image; computed per query and never stored."""
    descriptors: DescriptorSet
    vectors: QueryVectors = field(default_factory=QueryVectors)


# ───────────────────────── criterion scores ─────────────────────────

def color_score(a: Sequence[int], b: Sequence[int]) -> float:
    d = float(np.linalg.norm(np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)))
    return max(0.0, 1.0 - d / RGB_DIAMETER)


def ocr_score(a: Iterable[str], b: Iterable[str]) -> float:
    sa, sb = set(a), set(b)
    if not sa and not sb:
        return 1.0
    return set_f1(sa, sb)


def score_criterion(criterion: str, query: QueryImage, candidate: ImageRecord, kb: KnowledgeBase) -> float:
    q, c = query.descriptors, candidate.descriptors
    if criterion == "i":
        if query.vectors.image is None or not c.image_embedding_id:
            raise MissingDescriptorError("i", candidate.id)
        return float(kb.index.similarity(query.vectors.image, c.image_embedding_id))
    if criterion == "ii":
        if query.vectors.caption is None or not c.caption_embedding_id:
            raise MissingDescriptorError("ii", candidate.id)
        return float(kb.index.similarity(query.vectors.caption, c.caption_embedding_id))
    if criterion == "iii":
        if q.color is None or c.color is None:
            raise MissingDescriptorError("iii", candidate.id)
        return color_score(q.color.avg_rgb, c.color.avg_rgb)
    if criterion == "iv":
        if q.shape is None or c.shape is None:
            raise MissingDescriptorError("iv", candidate.id)
        if query.vectors.shape is not None and c.shape_embedding_id:
            return float(kb.index.similarity(query.vectors.shape, c.shape_embedding_id))
        return 1.0 if q.shape.shape_class == c.shape.shape_class else 0.0
    if criterion == "v":
        if q.ocr is None or c.ocr is None:
            raise MissingDescriptorError("v", candidate.id)
        return ocr_score(q.ocr.tokens, c.ocr.tokens)
    raise ValueError(f"unknown criterion {criterion!r}")


def criterion_scores(
    query: QueryImage,
    candidate: ImageRecord,
    kb: KnowledgeBase,
    criteria: Sequence[str] = CRITERIA,
    missing: Optional[Dict[str, List[str]]] = None,
) -> Dict[str, float]:
    """Scores for every requested criterion the pair supports; gaps go into ``missing``."""
    out: Dict[str, float] = {}
    for crit in criteria:
        try:
            out[crit] = score_criterion(crit, query, candidate, kb)
        except MissingDescriptorError as e:
            if missing is not None:
                missing.setdefault(crit, []).append(e.image_id)
    return out


# ───────────────────────── fusion ─────────────────────────

def competition_ranks(hits: Sequence[ScoredHit]) -> Dict[str, int]:
    """1-based ranks where equal scores (at 1e-9) share the best rank."""
    ranks: Dict[str, int] = {}
    q = quantize(np.asarray([h.score for h in hits], dtype=np.float64)) if hits else np.zeros(0)
    prev = None
    for pos, (hit, qs) in enumerate(zip(hits, q), start=1):
        if prev is None or qs != prev[0]:
            prev = (qs, pos)
        ranks[hit.id] = prev[1]
    return ranks


def top_hits(scores: Mapping[str, float], k: int, keep_ties: bool = False) -> List[ScoredHit]:
    """Top ``k`` by score, ties by id; with ``keep_ties`` items tied with the k-th score stay in."""
    ids = list(scores)
    if not ids:
        return []
    values = np.asarray([scores[i] for i in ids], dtype=np.float64)
    order = list(rank_order(ids, values))
    if len(order) > k:
        if keep_ties:
            q = quantize(values)
            cutoff = q[order[k - 1]]
            order = [i for i in order if q[i] >= cutoff]
        else:
            order = order[:k]
    return [ScoredHit(ids[i], float(scores[ids[i]])) for i in order]


@dataclass
class FusedHit:
    id: str
    fused: float
    ranks: Dict[str, int]


def fuse(rankings: Mapping[str, Sequence[ScoredHit]], k: int, constant: int = RRF_CONSTANT) -> List[FusedHit]:
    """
    Reciprocal-rank fusion: fused(d) = Σ 1/(constant + rank_c(d)) over the
    criteria whose top-k (rank ≤ k) contains d. Each ranking must already be
    ordered by score descending.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    live = {c: list(h) for c, h in rankings.items() if h}
    if not live:
        raise EmptyRankingsError("no criterion produced a ranking")
    fused: Dict[str, float] = {}
    ranks: Dict[str, Dict[str, int]] = {}
    for crit in sorted(live):
        for doc, rank in competition_ranks(live[crit]).items():
            if rank > k:
                continue
            fused[doc] = fused.get(doc, 0.0) + 1.0 / (constant + rank)
            ranks.setdefault(doc, {})[crit] = rank
    ids = list(fused)
    order = rank_order(ids, np.asarray([fused[i] for i in ids], dtype=np.float64))[:k]
    return [FusedHit(ids[i], fused[ids[i]], dict(sorted(ranks[ids[i]].items()))) for i in order]


# ───────────────────────── retriever ─────────────────────────

class Retriever:
    """Read-only view over a loaded knowledge base; safe to share between queries."""

    def __init__(
        self,
        kb: Optional[KnowledgeBase],
        providers: Providers,
        config: Optional[RetrievalConfig] = None,
        construction: Optional[ConstructionConfig] = None,
    ):
        self.kb = kb
        self.providers = providers
        self.config = config or RetrievalConfig()
        self.construction = construction or ConstructionConfig()
        self.counters: Counter = Counter()

    def _require_kb(self) -> KnowledgeBase:
        if self.kb is None:
            raise KbNotLoadedError("no knowledge base loaded")
        return self.kb

    async def describe_query_image(self, image: ImageBlob, criteria: Sequence[str] = CRITERIA) -> QueryImage:
        """Run only the extractors and embeddings the active criteria read."""
        kb = self._require_kb()
        lams = lambdas_for(criteria, kb.lambdas)
        if lams:
            descriptors = (await extract_all(image, lams, self.providers, self.construction)).descriptors
        else:
            descriptors = DescriptorSet()
        vectors = await embed_description(image, descriptors, self.providers, criteria)
        return QueryImage(descriptors=descriptors, vectors=vectors)

    def rank_images(
        self, query: QueryImage, k: int, criteria: Sequence[str]
    ) -> tuple[List[ImageMatch], Dict[str, List[str]]]:
        kb = self._require_kb()
        missing: Dict[str, List[str]] = {}
        all_scores: Dict[str, Dict[str, float]] = {}
        for iid in sorted(kb.images):
            all_scores[iid] = criterion_scores(query, kb.images[iid], kb, criteria, missing)

        rankings: Dict[str, List[ScoredHit]] = {}
        for crit in criteria:
            per = {iid: s[crit] for iid, s in all_scores.items() if crit in s}
            if per:
                rankings[crit] = top_hits(per, k, keep_ties=True)
        if not rankings:
            return [], missing
        fused = fuse(rankings, k, self.config.rrf_constant)
        matches = [
            ImageMatch(
                id=f.id,
                scores=all_scores[f.id],
                ranks=f.ranks,
                fused=f.fused,
                via=[f"criterion:{c}" for c in f.ranks],
            )
            for f in fused
        ]
        return matches, missing

    async def retrieve(
        self,
        query: Query,
        image: Optional[ImageBlob] = None,
        criteria: Optional[Sequence[str]] = None,
    ) -> RetrievalResult:
        kb = self._require_kb()
        self.counters["retrievals"] += 1
        k = query.k
        qvec = await self.providers.embed_text(query.text)

        result = RetrievalResult()

        # entities and hyperedges, then one hop out from the matched entities
        entity_hits = kb.index.top_k(qvec, k, namespace="entity")
        edge_hits = kb.index.top_k(qvec, k, namespace="edge")
        entities: Dict[str, ScoredItem] = {}
        for h in entity_hits:
            eid = h.id.split(":", 1)[1]
            entities[eid] = ScoredItem(id=eid, score=h.score, via=["entity-embedding"])
        for h in edge_hits:
            hid = h.id.split(":", 1)[1]
            result.hyperedges.append(ScoredItem(id=hid, score=h.score, via=["edge-embedding"]))

        cap = self.config.neighbor_cap
        if len(entities) < cap:
            candidates: Dict[str, float] = {}
            for eid in list(entities):
                for nb in kb.neighbors(eid):
                    if nb in entities or nb in candidates:
                        continue
                    emb = kb.entities[nb].embedding_id
                    sim = kb.index.similarity(qvec, emb) if emb else None
                    candidates[nb] = sim if sim is not None else -1.0
            for nb in top_hits(candidates, cap - len(entities)) if candidates else []:
                entities[nb.id] = ScoredItem(id=nb.id, score=nb.score, via=["neighbor"])
        result.entities = _sorted_items(entities.values())

        # chunks
        for h in kb.index.top_k(qvec, k, namespace="chunk"):
            cid = h.id.split(":", 1)[1]
            result.chunks.append(ScoredItem(id=cid, score=h.score, via=["chunk-embedding"]))

        # image side
        if image is not None:
            active = criteria_for(kb.lambdas, criteria if criteria is not None else query.criteria)
            result.criteria = active
            if active:
                qimg = await self.describe_query_image(image, active)
                result.images, result.skipped = self.rank_images(qimg, k, active)
        elif query.mode == "standard":
            # text-only standard RAG: images by caption similarity to the question
            for h in kb.index.top_k(qvec, k, namespace="caption"):
                iid = h.id.split(":", 1)[1]
                result.images.append(ImageMatch(id=iid, scores={"ii": h.score}, fused=h.score, via=["caption-text"]))
            result.criteria = ["ii"]

        log.debug(
            "retrieved %d entities, %d hyperedges, %d chunks, %d images",
            len(result.entities), len(result.hyperedges), len(result.chunks), len(result.images),
        )
        return result


def _sorted_items(items: Iterable[ScoredItem]) -> List[ScoredItem]:
    items = list(items)
    order = rank_order([i.id for i in items], np.asarray([i.score for i in items], dtype=np.float64))
    return [items[i] for i in order]
