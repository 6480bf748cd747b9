# hyperrag/descriptors.py
"""
Image descriptor extractors.

  λ1 color    average RGB and nearest basic CSS color (native)
  λ2 shape    foreground bounding-box aspect ratio (native), optional model text
  λ3 ocr      normalized tokens from the OCR provider
  λ4 caption  free-text description from the caption provider

``extract_all`` runs the enabled extractors and returns the DescriptorSet plus
one DescriptorRelation per extractor that succeeded.
"""
from __future__ import annotations

import asyncio
import io
import logging
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from PIL import Image, UnidentifiedImageError

from .config import ConstructionConfig
from .errors import DecodeError, ProviderError
from .models import (
    ColorDescriptor,
    DescriptorSet,
    ImageBlob,
    ImageLabels,
    OcrDescriptor,
    ShapeDescriptor,
    classify_shape,
)
from .providers import Providers
from .utils import strip_punct

log = logging.getLogger("descriptors")

ACCEPTED_FORMATS = {"PNG", "JPEG"}

# the 16 basic CSS colors, in the order used to break distance ties
CSS_PALETTE: Tuple[Tuple[str, Tuple[int, int, int]], ...] = (
    ("black", (0, 0, 0)),
    ("silver", (192, 192, 192)),
    ("gray", (128, 128, 128)),
    ("white", (255, 255, 255)),
    ("maroon", (128, 0, 0)),
    ("red", (255, 0, 0)),
    ("purple", (128, 0, 128)),
    ("fuchsia", (255, 0, 255)),
    ("green", (0, 128, 0)),
    ("lime", (0, 255, 0)),
    ("olive", (128, 128, 0)),
    ("yellow", (255, 255, 0)),
    ("navy", (0, 0, 128)),
    ("blue", (0, 0, 255)),
    ("teal", (0, 128, 128)),
    ("aqua", (0, 255, 255)),
)
_PALETTE_RGB = np.asarray([rgb for _, rgb in CSS_PALETTE], dtype=np.int64)

FOREGROUND_THRESHOLD = 32.0
OCR_NONE = "(none)"


@dataclass
class DescriptorRelation:
    """One image-to-descriptor relation: the image plus one or more descriptor values."""
    facet: str                                   # color, shape, ocr, caption, brand, ...
    targets: List[Tuple[str, str]]               # (descriptor entity name, description)
    relation_text: str
    lam: Optional[int] = None                    # None for label relations


@dataclass
class QueryVectors:
    image: Optional[np.ndarray] = None
    caption: Optional[np.ndarray] = None
    shape: Optional[np.ndarray] = None


@dataclass
class ImageDescription:
    descriptors: DescriptorSet
    relations: List[DescriptorRelation] = field(default_factory=list)


# ───────────────────────── decoding ─────────────────────────

def decode_image(image: ImageBlob) -> np.ndarray:
    """RGB pixels as an (H, W, 3) uint8 array; PNG and JPEG only."""
    try:
        with Image.open(io.BytesIO(image.data)) as im:
            if im.format not in ACCEPTED_FORMATS:
                raise DecodeError(f"unsupported image format {im.format!r} ({image.uri or image.digest})")
            pixels = np.asarray(im.convert("RGB"), dtype=np.uint8)
    except (UnidentifiedImageError, OSError, ValueError) as e:
        raise DecodeError(f"cannot decode image {image.uri or image.digest}: {e}") from e
    if pixels.ndim != 3 or pixels.shape[0] == 0 or pixels.shape[1] == 0:
        raise DecodeError(f"image {image.uri or image.digest} has no pixels")
    return pixels

# ───────────────────────── λ1 color ─────────────────────────

def average_rgb(pixels: np.ndarray) -> Tuple[int, int, int]:
    flat = pixels.reshape(-1, 3).astype(np.int64)
    n = flat.shape[0]
    sums = flat.sum(axis=0)
    # integer half-up rounding of sum / n
    avg = (2 * sums + n) // (2 * n)
    return int(avg[0]), int(avg[1]), int(avg[2])


def nearest_color(rgb: Sequence[int]) -> str:
    d = ((_PALETTE_RGB - np.asarray(rgb, dtype=np.int64)) ** 2).sum(axis=1)
    return CSS_PALETTE[int(np.argmin(d))][0]


def color_of(pixels: np.ndarray) -> ColorDescriptor:
    avg = average_rgb(pixels)
    return ColorDescriptor(avg_rgb=avg, named_color=nearest_color(avg))


async def extract_color(image: ImageBlob) -> ColorDescriptor:
    pixels = await asyncio.to_thread(decode_image, image)
    return color_of(pixels)

# ───────────────────────── λ2 shape ─────────────────────────

def border_mode(pixels: np.ndarray) -> np.ndarray:
    """Most frequent color on the 1-pixel border; ties go to the lexicographically smallest."""
    border = np.concatenate([
        pixels[0, :, :], pixels[-1, :, :], pixels[:, 0, :], pixels[:, -1, :]
    ])
    colors, counts = np.unique(border, axis=0, return_counts=True)
    return colors[int(np.argmax(counts))]


def aspect_ratio_of(pixels: np.ndarray) -> float:
    background = border_mode(pixels).astype(np.float64)
    dist = np.sqrt(((pixels.astype(np.float64) - background) ** 2).sum(axis=2))
    mask = dist > FOREGROUND_THRESHOLD
    if not mask.any():
        h, w = pixels.shape[:2]
        return w / h
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    width = int(cols[-1] - cols[0] + 1)
    height = int(rows[-1] - rows[0] + 1)
    return width / height


def shape_of(pixels: np.ndarray, text: Optional[str] = None) -> ShapeDescriptor:
    ratio = aspect_ratio_of(pixels)
    return ShapeDescriptor(shape_class=classify_shape(ratio), aspect_ratio=ratio, text=text)


async def extract_shape(
    image: ImageBlob, providers: Optional[Providers] = None, with_text: bool = False
) -> ShapeDescriptor:
    pixels = await asyncio.to_thread(decode_image, image)
    text: Optional[str] = None
    if with_text and providers is not None:
        try:
            text = await providers.caption(image, focus="shape")
        except ProviderError as e:
            log.warning("shape text unavailable for %s: %s", image.digest, e)
    return shape_of(pixels, text)

# ───────────────────────── λ3 OCR ─────────────────────────

def normalize_ocr(tokens: Iterable[object], confidences: Iterable[object]) -> OcrDescriptor:
    """Lowercase, strip punctuation, drop tokens that become empty; order preserved."""
    out_t: List[str] = []
    out_c: List[float] = []
    for tok, conf in zip(tokens, confidences):
        t = strip_punct(str(tok).lower()).strip()
        if not t:
            continue
        out_t.append(t)
        out_c.append(min(1.0, max(0.0, float(conf))))
    return OcrDescriptor(tokens=out_t, confidences=out_c)


async def extract_ocr(image: ImageBlob, providers: Providers) -> OcrDescriptor:
    await asyncio.to_thread(decode_image, image)
    raw = await providers.ocr(image)
    return normalize_ocr(raw.get("tokens") or [], raw.get("confidences") or [])


def top_tokens(ocr: OcrDescriptor, cap: int) -> List[str]:
    """Distinct tokens by descending confidence, first occurrence wins ties; at most ``cap``."""
    best: Dict[str, Tuple[float, int]] = {}
    for pos, (t, c) in enumerate(zip(ocr.tokens, ocr.confidences)):
        if t not in best or c > best[t][0]:
            best[t] = (c, best[t][1] if t in best else pos)
    ordered = sorted(best.items(), key=lambda kv: (-kv[1][0], kv[1][1]))
    return [t for t, _ in ordered[:cap]]

# ───────────────────────── λ4 caption ─────────────────────────

async def extract_caption(image: ImageBlob, providers: Providers) -> str:
    return await providers.caption(image)

# ───────────────────────── relations ─────────────────────────

def color_relation(c: ColorDescriptor) -> DescriptorRelation:
    r, g, b = c.avg_rgb
    return DescriptorRelation(
        facet="color",
        lam=1,
        targets=[(f"color:{c.named_color}", f"average product color {c.named_color}")],
        relation_text=f"color: the image's average color is {c.named_color} (rgb {r}, {g}, {b})",
    )


def shape_relation(s: ShapeDescriptor) -> DescriptorRelation:
    text = f"shape: the product silhouette is {s.shape_class.value} (aspect ratio {s.aspect_ratio:.3f})"
    if s.text:
        text += f"; {s.text}"
    return DescriptorRelation(
        facet="shape",
        lam=2,
        targets=[(f"shape:{s.shape_class.value}", f"{s.shape_class.value} product silhouette")],
        relation_text=text,
    )


def ocr_relation(o: OcrDescriptor, cap: int) -> DescriptorRelation:
    tokens = top_tokens(o, cap)
    if not tokens:
        return DescriptorRelation(
            facet="ocr", lam=3,
            targets=[(f"ocr:{OCR_NONE}", "no legible text on the product")],
            relation_text="ocr: no legible text on the product",
        )
    return DescriptorRelation(
        facet="ocr",
        lam=3,
        targets=[(f"ocr:{t}", f"printed text '{t}'") for t in tokens],
        relation_text="ocr: printed text reads " + " ".join(tokens),
    )


def caption_relation(image_id: str, caption: str) -> DescriptorRelation:
    return DescriptorRelation(
        facet="caption",
        lam=4,
        targets=[(f"caption:{image_id}", caption)],
        relation_text=f"caption: {caption}",
    )


def label_relations(labels: ImageLabels) -> List[DescriptorRelation]:
    out = []
    for facet, value in labels.present():
        pretty = facet.replace("_", " ")
        out.append(DescriptorRelation(
            facet=facet,
            targets=[(f"{facet}:{value}", f"{pretty} {value}")],
            relation_text=f"{facet}: the product's {pretty} is {value}",
        ))
    return out

# ───────────────────────── all together ─────────────────────────

async def extract_all(
    image: ImageBlob,
    enabled: Iterable[int],
    providers: Providers,
    config: Optional[ConstructionConfig] = None,
) -> ImageDescription:
    """
    Run exactly the enabled extractors. λ1/λ2 errors propagate and abort the
    image; OCR and caption failures leave the descriptor empty and are listed
    in ``DescriptorSet.failed``.
    """
    cfg = config or ConstructionConfig()
    lams = sorted(set(enabled))
    if not lams:
        raise ValueError("at least one extractor must be enabled")

    pixels = await asyncio.to_thread(decode_image, image)
    dset = DescriptorSet()
    relations: List[DescriptorRelation] = []

    if 1 in lams:
        dset.color = color_of(pixels)
        relations.append(color_relation(dset.color))

    if 2 in lams:
        text: Optional[str] = None
        if cfg.shape_text:
            try:
                text = await providers.caption(image, focus="shape")
            except ProviderError as e:
                log.warning("shape text unavailable for %s: %s", image.digest, e)
        dset.shape = shape_of(pixels, text)
        relations.append(shape_relation(dset.shape))

    if 3 in lams:
        try:
            raw = await providers.ocr(image)
            dset.ocr = normalize_ocr(raw.get("tokens") or [], raw.get("confidences") or [])
            relations.append(ocr_relation(dset.ocr, cfg.ocr_token_cap))
        except ProviderError as e:
            log.warning("OCR failed for %s: %s", image.digest, e)
            dset.failed.append(3)

    if 4 in lams:
        try:
            dset.caption = await providers.caption(image)
            relations.append(caption_relation(image.digest, dset.caption))
        except ProviderError as e:
            log.warning("caption failed for %s: %s", image.digest, e)
            dset.failed.append(4)

    return ImageDescription(descriptors=dset, relations=relations)


async def embed_description(
    image: ImageBlob,
    dset: DescriptorSet,
    providers: Providers,
    criteria: Iterable[str] = ("i", "ii", "iv"),
) -> QueryVectors:
    """Image, caption and shape-text vectors for whichever of criteria i, ii and iv are asked for."""
    wanted = set(criteria)
    vecs = QueryVectors()
    if "i" in wanted:
        vecs.image = await providers.embed_image(image)
    if "ii" in wanted and dset.caption:
        vecs.caption = await providers.embed_text(dset.caption)
    if "iv" in wanted and dset.shape is not None and dset.shape.text:
        vecs.shape = await providers.embed_text(dset.shape.text)
    return vecs
