# hyperrag/generation.py
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .config import AppConfig
from .errors import ContextOverflowError
from .knowledge import KnowledgeBase
from .models import ImageBlob, ImageRecord
from .prompting import GENERATE, PromptLibrary
from .providers import Providers
from .retrieval import Retriever
from .schemas import AnswerPayload, Query, RetrievalResult, ScoredItem
from .utils import word_count
from .vectors import rank_order

log = logging.getLogger("retrieval")

GROUPS = ("chunk", "edge", "entity", "image")


@dataclass
class ContextItem:
    group: str
    id: str
    score: float
    text: str


def image_summary(record: ImageRecord) -> str:
    """Descriptor summary of a stored image; no pixels, no image tokens."""
    d = record.descriptors
    parts = [f"image {record.id}"]
    for facet, value in record.labels.present():
        parts.append(f"{facet.replace('_', ' ')} {value}")
    if d.color is not None:
        r, g, b = d.color.avg_rgb
        parts.append(f"color {d.color.named_color} (rgb {r}, {g}, {b})")
    if d.shape is not None:
        parts.append(f"shape {d.shape.shape_class.value} (aspect ratio {d.shape.aspect_ratio:.3f})")
    if d.ocr is not None:
        parts.append("printed text: " + (" ".join(d.ocr.tokens) if d.ocr.tokens else "none"))
    if d.caption:
        parts.append(f"description: {d.caption}")
    return "; ".join(parts)


def _ordered(items: Sequence[ScoredItem]) -> List[ScoredItem]:
    if not items:
        return []
    order = rank_order([i.id for i in items], np.asarray([i.score for i in items], dtype=np.float64))
    return [items[i] for i in order]


def context_items(result: RetrievalResult, kb: KnowledgeBase) -> List[ContextItem]:
    """Chunks, relation texts, entity descriptions, image summaries; each group by score descending."""
    out: List[ContextItem] = []
    for it in _ordered(result.chunks):
        out.append(ContextItem("chunk", it.id, it.score, kb.chunks[it.id].text))
    for it in _ordered(result.hyperedges):
        out.append(ContextItem("edge", it.id, it.score, kb.hyperedges[it.id].relation_text))
    for it in _ordered(result.entities):
        e = kb.entities[it.id]
        out.append(ContextItem("entity", it.id, it.score, f"{e.name}: {e.description}" if e.description else e.name))
    images = [ScoredItem(id=m.id, score=m.fused) for m in result.images]
    for it in _ordered(images):
        out.append(ContextItem("image", it.id, it.score, image_summary(kb.images[it.id])))
    return out


def fit_budget(items: Sequence[ContextItem], budget_words: int) -> Tuple[List[ContextItem], int]:
    """
    Keep the longest prefix that fits ``budget_words``; everything after the
    first item that does not fit is dropped.
    """
    if not items:
        return [], 0
    first = word_count(items[0].text)
    if first > budget_words:
        raise ContextOverflowError(f"top context item alone has {first} words, budget is {budget_words}")
    kept: List[ContextItem] = []
    used = 0
    for item in items:
        n = word_count(item.text)
        if used + n > budget_words:
            break
        kept.append(item)
        used += n
    return kept, len(items) - len(kept)


def caption_items(result: RetrievalResult, kb: KnowledgeBase) -> List[ContextItem]:
    images = [ScoredItem(id=m.id, score=m.fused) for m in result.images]
    out = []
    for it in _ordered(images):
        caption = kb.images[it.id].descriptors.caption
        if caption:
            out.append(ContextItem("image", it.id, it.score, caption))
    return out


async def generate_answer(
    query: Query,
    result: Optional[RetrievalResult],
    kb: Optional[KnowledgeBase],
    providers: Providers,
    prompts: PromptLibrary,
    budget_words: int = 6000,
) -> Tuple[str, int, int]:
    """
    One chat call. Returns (answer, context blocks sent, blocks dropped by
    the budget). The chat model never receives image payloads.
    """
    prompt = prompts.render(GENERATE, mode=query.mode, question=query.text)
    if query.mode == "naive" or result is None or kb is None:
        text = await providers.chat(prompt, [], purpose="generate")
        return text, 0, 0
    items = caption_items(result, kb) if query.mode == "standard" else context_items(result, kb)
    kept, dropped = fit_budget(items, budget_words)
    if dropped:
        log.info("context budget %d words: dropped %d of %d items", budget_words, dropped, len(items))
    text = await providers.chat(prompt, [i.text for i in kept], purpose="generate")
    return text, len(kept), dropped


async def answer(
    query: Query,
    kb: Optional[KnowledgeBase],
    providers: Providers,
    config: AppConfig,
    image: Optional[ImageBlob] = None,
    prompts: Optional[PromptLibrary] = None,
    criteria: Optional[Sequence[str]] = None,
    retriever: Optional[Retriever] = None,
) -> AnswerPayload:
    """Retrieve (unless naive) and generate; the payload carries the retrieval for provenance."""
    prompts = prompts or PromptLibrary(config.paths.prompts_dir)
    result: Optional[RetrievalResult] = None
    if query.mode != "naive":
        retriever = retriever or Retriever(kb, providers, config.retrieval, config.construction)
        result = await retriever.retrieve(query, image=image, criteria=criteria)
    text, sent, dropped = await generate_answer(
        query, result, kb, providers, prompts, config.retrieval.context_budget_words
    )
    return AnswerPayload(
        question=query.text,
        mode=query.mode,
        answer=text,
        context_blocks=sent,
        dropped_blocks=dropped,
        retrieval=result,
    )
