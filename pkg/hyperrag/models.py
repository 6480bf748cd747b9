# hyperrag/models.py
from __future__ import annotations

import enum
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Set, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_serializer, field_validator, model_validator

from .errors import CorpusError
from .utils import content_hash, normalize_name

# Identity rules: entity = hash(name, kind); chunk = hash(doc_id, offset); image = hash(file bytes)
DESCRIPTION_SEP = "<SEP>"
DESCRIPTION_CAP = 4096
MANIFEST_VERSION = 1


def entity_id_for(name: str, kind: "EntityKind | str") -> str:
    return content_hash(normalize_name(name), EntityKind(kind).value)


def chunk_id_for(doc_id: str, offset: int) -> str:
    return content_hash(doc_id, offset)


def hyperedge_id_for(members: List[str], relation_text: str, source: str) -> str:
    return content_hash("|".join(members), relation_text, source)


# ---- Enums ----
class EntityKind(str, enum.Enum):
    text = "text"
    image = "image"
    descriptor = "descriptor"


class ShapeClass(str, enum.Enum):
    square = "square"
    tall = "tall"
    wide = "wide"


class _Model(BaseModel):
    model_config = ConfigDict(extra="forbid")


# ---- Hypergraph ----
class Entity(_Model):
    id: str
    name: str
    kind: EntityKind
    description: str = ""
    sources: Set[str] = Field(default_factory=set)
    embedding_id: Optional[str] = None
    entity_type: Optional[str] = None  # extractor's kind hint, e.g. "brand"

    @field_validator("name")
    @classmethod
    def _name_non_empty(cls, v: str) -> str:
        if not v:
            raise ValueError("entity name must be non-empty")
        return v

    @field_serializer("sources")
    def _sorted_sources(self, v: Set[str]) -> List[str]:
        return sorted(v)


class Hyperedge(_Model):
    id: str
    members: List[str] = Field(min_length=2)
    relation_text: str
    weight: float = Field(default=1.0, ge=0.0, le=1.0)
    source: str
    embedding_id: Optional[str] = None


class Chunk(_Model):
    id: str
    text: str
    doc_id: str
    offset: int = 0
    embedding_id: Optional[str] = None
    image_ids: List[str] = Field(default_factory=list)

    @field_validator("text")
    @classmethod
    def _text_non_empty(cls, v: str) -> str:
        if not v.strip():
            raise ValueError("chunk text must be non-empty")
        return v


# ---- Image descriptors ----
class ColorDescriptor(_Model):
    avg_rgb: Tuple[int, int, int]
    named_color: str

    @field_validator("avg_rgb")
    @classmethod
    def _rgb_range(cls, v: Tuple[int, int, int]) -> Tuple[int, int, int]:
        if any(c < 0 or c > 255 for c in v):
            raise ValueError("avg_rgb components must lie in 0..255")
        return v


SQUARE_MIN = 0.9
SQUARE_MAX = 1.1


def classify_shape(aspect_ratio: float) -> ShapeClass:
    if SQUARE_MIN <= aspect_ratio <= SQUARE_MAX:
        return ShapeClass.square
    return ShapeClass.wide if aspect_ratio > SQUARE_MAX else ShapeClass.tall


class ShapeDescriptor(_Model):
    shape_class: ShapeClass
    aspect_ratio: float = Field(gt=0)
    text: Optional[str] = None

    @model_validator(mode="after")
    def _class_matches_ratio(self) -> "ShapeDescriptor":
        if classify_shape(self.aspect_ratio) != self.shape_class:
            raise ValueError(f"shape class {self.shape_class.value} inconsistent with ratio {self.aspect_ratio}")
        return self


class OcrDescriptor(_Model):
    tokens: List[str] = Field(default_factory=list)
    confidences: List[float] = Field(default_factory=list)

    @model_validator(mode="after")
    def _aligned(self) -> "OcrDescriptor":
        if len(self.tokens) != len(self.confidences):
            raise ValueError("tokens and confidences must have equal length")
        if any(c < 0.0 or c > 1.0 for c in self.confidences):
            raise ValueError("confidences must lie in [0, 1]")
        return self


class DescriptorSet(_Model):
    color: Optional[ColorDescriptor] = None      # λ1
    shape: Optional[ShapeDescriptor] = None      # λ2
    ocr: Optional[OcrDescriptor] = None          # λ3
    caption: Optional[str] = None                # λ4
    image_embedding_id: Optional[str] = None
    caption_embedding_id: Optional[str] = None
    shape_embedding_id: Optional[str] = None
    failed: List[int] = Field(default_factory=list)  # optional extractors that errored


class ImageLabels(_Model):
    tobacco_type: Optional[str] = None
    product_type: Optional[str] = None
    brand: Optional[str] = None

    def present(self) -> List[Tuple[str, str]]:
        out = []
        for field in ("tobacco_type", "product_type", "brand"):
            v = getattr(self, field)
            if v and v.strip():
                out.append((field, v.strip()))
        return out


class ImageRecord(_Model):
    id: str
    uri: str
    labels: ImageLabels = Field(default_factory=ImageLabels)
    descriptors: DescriptorSet = Field(default_factory=DescriptorSet)


class Manifest(_Model):
    version: int = MANIFEST_VERSION
    dimension: int
    lambdas: List[int] = Field(default_factory=lambda: [1, 2, 3, 4])
    rows: Dict[str, int] = Field(default_factory=dict)


# ---- Runtime image handle ----
@dataclass(frozen=True)
class ImageBlob:
    """Raw image bytes plus their content hash; decoding happens in descriptors."""
    data: bytes
    digest: str
    uri: str = ""

    @classmethod
    def from_bytes(cls, data: bytes, uri: str = "") -> "ImageBlob":
        return cls(data=data, digest=content_hash(data), uri=uri)

    @classmethod
    def from_path(cls, path: str | os.PathLike) -> "ImageBlob":
        try:
            data = Path(path).read_bytes()
        except OSError as e:
            raise CorpusError(f"cannot read image {path}: {e}") from e
        return cls.from_bytes(data, uri=str(path))
