# hyperrag/schemas.py
from __future__ import annotations

from typing import Dict, List, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .config import CRITERIA, Mode, validate_lambdas


class _Loose(BaseModel):
    # model output: tolerate extra keys, keep what we understand
    model_config = ConfigDict(extra="ignore")


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


# ---- Extraction (model output) ----
class ExtractedEntity(_Loose):
    name: str
    kind_hint: str = ""
    description: str = ""


class ExtractedRelation(_Loose):
    members: List[str]
    relation_text: str = ""
    weight: Optional[float] = None


class ExtractionPayload(_Loose):
    entities: List[ExtractedEntity] = Field(default_factory=list)
    relations: List[ExtractedRelation] = Field(default_factory=list)


# ---- Corpus inputs ----
class CorpusSpec(_Strict):
    docs: List[str] = Field(default_factory=list)
    images: Optional[str] = None              # JSONL ingestion manifest
    chunk_size: Optional[int] = Field(default=None, ge=16)
    chunk_overlap: Optional[int] = Field(default=None, ge=0)
    lambdas: Optional[List[int]] = None

    @field_validator("lambdas")
    @classmethod
    def _check_lambdas(cls, v: Optional[List[int]]) -> Optional[List[int]]:
        return validate_lambdas(v) if v is not None else v

    @model_validator(mode="after")
    def _check_overlap(self) -> "CorpusSpec":
        if self.chunk_size is not None and self.chunk_overlap is not None and self.chunk_overlap >= self.chunk_size:
            raise ValueError("chunk_overlap must be smaller than chunk_size")
        return self


class ImageManifestRow(_Strict):
    uri: str
    tobacco_type: Optional[str] = None
    product_type: Optional[str] = None
    brand: Optional[str] = None


# ---- Query / retrieval ----
class Query(_Strict):
    text: str
    image: Optional[str] = None   # path of the query image, if any
    k: int = Field(default=8, ge=1)
    mode: Mode = "nico"
    criteria: List[str] = Field(default_factory=lambda: list(CRITERIA))

    @field_validator("text")
    @classmethod
    def _text_non_empty(cls, v: str) -> str:
        if not v.strip():
            raise ValueError("query text must be non-empty")
        return v


class ScoredItem(_Strict):
    id: str
    score: float
    via: List[str] = Field(default_factory=list)   # provenance: what matched this item


class ImageMatch(_Strict):
    id: str
    scores: Dict[str, float] = Field(default_factory=dict)   # per criterion
    ranks: Dict[str, int] = Field(default_factory=dict)      # per criterion, only where in top-k
    fused: float = 0.0
    via: List[str] = Field(default_factory=list)


class RetrievalResult(_Strict):
    entities: List[ScoredItem] = Field(default_factory=list)
    hyperedges: List[ScoredItem] = Field(default_factory=list)
    chunks: List[ScoredItem] = Field(default_factory=list)
    images: List[ImageMatch] = Field(default_factory=list)
    criteria: List[str] = Field(default_factory=list)                 # active for the image side
    skipped: Dict[str, List[str]] = Field(default_factory=dict)       # criterion -> image ids lacking it


class AnswerPayload(_Strict):
    question: str
    mode: Mode
    answer: str
    context_blocks: int = 0
    dropped_blocks: int = 0
    retrieval: Optional[RetrievalResult] = None


# ---- Construction ----
class ConstructionReport(_Strict):
    documents: int = 0
    chunks: int = 0
    caption_chunks: int = 0
    images: int = 0
    duplicate_images: int = 0
    entities: int = 0
    hyperedges: int = 0
    text_hyperedges: int = 0
    descriptor_hyperedges: int = 0
    expected_descriptor_hyperedges: int = 0
    lambdas: List[int] = Field(default_factory=list)
    repairs: int = 0
    parse_failures: List[str] = Field(default_factory=list)           # chunk ids
    skipped_relations: int = 0
    clamped_weights: int = 0
    stub_entities: int = 0
    optional_failures: Dict[str, List[int]] = Field(default_factory=dict)   # image id -> failed λ
    provider_calls: Dict[str, Dict[str, int]] = Field(default_factory=dict)
    cache: Dict[str, int] = Field(default_factory=dict)


# ---- Evaluation ----
class EvalCase(_Strict):
    id: str
    question: str
    golden_answer: str
    query_image: Optional[str] = None
    tags: List[str] = Field(default_factory=list)

    @field_validator("question", "golden_answer")
    @classmethod
    def _non_empty(cls, v: str) -> str:
        if not v.strip():
            raise ValueError("must be non-empty")
        return v


class CaseResult(_Strict):
    id: str
    prediction: str
    f1: float
    rs: float
    ge: Optional[float] = None    # None when the judge output stayed invalid
    warnings: List[str] = Field(default_factory=list)


class EvalReport(_Strict):
    mode: Mode
    lambdas: List[int]
    k: int
    criteria: List[str]
    cases: List[CaseResult] = Field(default_factory=list)
    mean_f1: float = 0.0
    mean_rs: float = 0.0
    mean_ge: float = 0.0
    invalid_judgements: int = 0


class AblationCell(_Strict):
    lambdas: List[int]
    k: int
    report: EvalReport


class AblationGrid(_Strict):
    mode: Mode
    cells: List[AblationCell] = Field(default_factory=list)
