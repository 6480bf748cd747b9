# hyperrag/fixtures.py
"""
Synthetic corpus used for offline runs and the test-suite: eight product
documents, 32 catalog-style PNG images with full labels, canned OCR /
caption / shape outputs for the mock providers, eleven evaluation cases and
a mock-provider config. Output is deterministic.
"""
from __future__ import annotations

import io
import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Tuple

from PIL import Image, ImageDraw

from .models import classify_shape
from .providers import write_fixture_map
from .utils import content_hash

log = logging.getLogger("construction")

CANVAS = (96, 96)
WHITE = (255, 255, 255)

# (brand, product_type, tobacco_type, flavor, rgb, (width, height), ocr tokens)
PRODUCTS: Tuple[Tuple[str, str, str, str, Tuple[int, int, int], Tuple[int, int], Tuple[str, ...]], ...] = (
    ("Zyn", "nicotine pouch", "smokeless", "Cool Mint", (0, 150, 160), (60, 40), ("ZYN", "Cool", "Mint")),
    ("Zyn", "nicotine pouch", "smokeless", "Spearmint", (60, 200, 90), (60, 40), ("ZYN", "Spearmint")),
    ("Zyn", "nicotine pouch", "smokeless", "Peppermint", (20, 90, 200), (60, 40), ("ZYN", "Peppermint")),
    ("Zyn", "nicotine pouch", "smokeless", "Wintergreen", (10, 110, 60), (60, 40), ("ZYN", "Wintergreen")),
    ("Zyn", "nicotine pouch", "smokeless", "Citrus", (250, 200, 20), (60, 40), ("ZYN", "Citrus")),
    ("Zyn", "nicotine pouch", "smokeless", "Coffee", (110, 70, 40), (60, 40), ("ZYN", "Coffee")),
    ("Zyn", "nicotine pouch", "smokeless", "Cinnamon", (200, 40, 30), (60, 40), ("ZYN", "Cinnamon")),
    ("Zyn", "nicotine pouch", "smokeless", "Chill", (170, 210, 240), (48, 48), ("ZYN", "Chill")),
    ("Zyn", "nicotine pouch", "smokeless", "Smooth", (230, 225, 200), (48, 48), ()),
    ("Velo", "nicotine pouch", "smokeless", "Crispy Peppermint", (40, 60, 180), (56, 44), ("VELO", "Crispy", "Peppermint")),
    ("Velo", "nicotine pouch", "smokeless", "Citrus Burst", (255, 170, 0), (56, 44), ("VELO", "Citrus", "Burst")),
    ("Velo", "nicotine pouch", "smokeless", "Ruby Berry", (170, 20, 80), (56, 44), ("VELO", "Ruby", "Berry")),
    ("Velo", "nicotine pouch", "smokeless", "Cool Mint", (80, 190, 200), (56, 44), ("VELO", "Cool", "Mint")),
    ("Velo", "nicotine pouch", "smokeless", "Bright Spearmint", (100, 220, 120), (56, 44), ("VELO", "Bright", "Spearmint")),
    ("Velo", "nicotine pouch", "smokeless", "Black Cherry", (60, 10, 30), (56, 44), ("VELO", "Black", "Cherry")),
    ("Velo", "nicotine pouch", "smokeless", "Wintergreen", (30, 130, 90), (56, 44), ("VELO", "Wintergreen")),
    ("Velo", "nicotine pouch", "smokeless", "Coffee", (140, 90, 60), (46, 46), ("VELO", "Coffee")),
    ("Klint", "nicotine pouch", "smokeless", "Arctic Mint", (120, 170, 230), (50, 40), ("KLINT", "Arctic", "Mint")),
    ("Klint", "nicotine pouch", "smokeless", "Honey Lemon", (240, 220, 80), (50, 40), ("KLINT", "Honey", "Lemon")),
    ("Klint", "nicotine pouch", "smokeless", "Cola", (90, 30, 20), (50, 40), ("KLINT", "Cola")),
    ("Klint", "nicotine pouch", "smokeless", "Freeze", (200, 240, 250), (50, 40), ("KLINT", "Freeze")),
    ("Klint", "nicotine pouch", "smokeless", "Mango", (250, 140, 60), (44, 44), ("KLINT", "Mango")),
    ("Marlboro", "cigarette", "combustible", "Red", (210, 20, 20), (36, 60), ("MARLBORO",)),
    ("Marlboro", "cigarette", "combustible", "Gold", (210, 170, 60), (36, 60), ("MARLBORO", "Gold")),
    ("Marlboro", "cigarette", "combustible", "Menthol", (0, 120, 100), (36, 60), ("MARLBORO", "Menthol")),
    ("Camel", "cigarette", "combustible", "Blue", (30, 70, 150), (36, 60), ("CAMEL", "Blue")),
    ("Camel", "cigarette", "combustible", "Crush Menthol", (20, 100, 140), (36, 60), ("CAMEL", "Crush")),
    ("Juul", "vape", "electronic", "Virginia Tobacco", (150, 110, 70), (16, 64), ("JUUL",)),
    ("Juul", "vape", "electronic", "Menthol", (60, 160, 170), (16, 64), ("JUUL", "Menthol")),
    ("Swisher", "cigar", "combustible", "Grape", (110, 40, 150), (72, 20), ("SWISHER", "Grape")),
    ("Swisher", "cigar", "combustible", "Wine", (120, 20, 50), (72, 20), ("SWISHER", "Wine")),
    ("Swisher", "cigar", "combustible", "Sweet", (180, 140, 100), (72, 20), ()),
)

DOCUMENTS: Tuple[Tuple[str, str], ...] = (
    ("zyn_flavors.txt",
     "Zyn is a nicotine pouch brand sold in round cans. Zyn Cool Mint comes in a teal can. "
     "Zyn Spearmint comes in a light green can. Zyn Peppermint comes in a blue can. "
     "Zyn Wintergreen comes in a dark green can. Zyn Citrus comes in a yellow can. "
     "Zyn Coffee comes in a brown can. Zyn Cinnamon comes in a red can. "
     "Zyn Chill and Zyn Smooth are unflavored options with pale cans. "
     "Each Zyn can holds fifteen white pouches."),
    ("velo_flavors.txt",
     "Velo is a nicotine pouch brand. Velo Crispy Peppermint comes in a navy can. "
     "Velo Citrus Burst comes in an orange can. Velo Ruby Berry comes in a crimson can. "
     "Velo Cool Mint comes in a turquoise can. Velo Bright Spearmint comes in a green can. "
     "Velo Black Cherry comes in a dark maroon can. Velo Wintergreen comes in a green can. "
     "Velo Coffee comes in a brown can."),
    ("klint_flavors.txt",
     "Klint is a nicotine pouch brand from Sweden. Klint Arctic Mint comes in a light blue can. "
     "Klint Honey Lemon comes in a yellow can. Klint Cola comes in a dark brown can. "
     "Klint Freeze comes in an icy white can. Klint Mango comes in an orange can."),
    ("mint_across_products.txt",
     "Mint is the most common flavor across nicotine products. Zyn Cool Mint and Velo Cool Mint "
     "share the same flavor name. Menthol cigarettes such as Marlboro Menthol and Camel Crush "
     "offer a mint sensation in a combustible product. Juul Menthol brings the same flavor to vapes. "
     "Klint Arctic Mint is the strongest mint pouch in this catalog."),
    ("colors_and_flavors.txt",
     "Packaging colors signal flavors. Green and teal packs usually mean mint or wintergreen. "
     "Yellow and orange packs usually mean citrus or fruit. Brown packs usually mean coffee or cola. "
     "Red packs mean cinnamon for pouches but full flavor for Marlboro Red cigarettes. "
     "Blue packs mean peppermint for Zyn and a lighter blend for Camel Blue."),
    ("cigarettes.txt",
     "Marlboro and Camel are cigarette brands. Marlboro Red comes in a red pack. "
     "Marlboro Gold comes in a gold pack. Marlboro Menthol comes in a green pack. "
     "Camel Blue comes in a blue pack. Camel Crush comes in a dark teal pack with a menthol capsule. "
     "Cigarette packs are tall rectangles."),
    ("vapes_and_cigars.txt",
     "Juul is a vape brand with slim devices. Juul Virginia Tobacco uses a tan pod. "
     "Juul Menthol uses a teal pod. Swisher is a cigar brand. Swisher Grape comes in a purple wrap. "
     "Swisher Wine comes in a burgundy wrap. Swisher Sweet comes in a tan wrap. "
     "Cigar wraps are wide and flat."),
    ("pouch_shapes.txt",
     "Nicotine pouch cans are short and wide. Zyn Chill, Zyn Smooth, Velo Coffee and Klint Mango "
     "use square labels. Pouches are smokeless and contain no tobacco leaf. "
     "Velo and Zyn sell most of their flavors in both three and six milligram strengths."),
)

CASES: Tuple[Dict[str, object], ...] = (
    {"id": "q01", "question": "Which flavors does Zyn sell?",
     "golden_answer": "Zyn sells Cool Mint, Spearmint, Peppermint, Wintergreen, Citrus, Coffee, Cinnamon, Chill and Smooth.",
     "tags": ["flavors-per-brand"]},
    {"id": "q02", "question": "Which flavors does Velo sell?",
     "golden_answer": "Velo sells Crispy Peppermint, Citrus Burst, Ruby Berry, Cool Mint, Bright Spearmint, Black Cherry, Wintergreen and Coffee.",
     "tags": ["flavors-per-brand"]},
    {"id": "q03", "question": "Which flavors does Klint sell?",
     "golden_answer": "Klint sells Arctic Mint, Honey Lemon, Cola, Freeze and Mango.",
     "tags": ["flavors-per-brand"]},
    {"id": "q04", "question": "What flavor does a teal Zyn can contain?",
     "golden_answer": "A teal Zyn can contains Cool Mint.", "tags": ["flavor-color"], "image_index": 0},
    {"id": "q05", "question": "What flavor is usually sold in yellow packaging?",
     "golden_answer": "Yellow packaging usually means citrus, such as Zyn Citrus or Klint Honey Lemon.",
     "tags": ["flavor-color"], "image_index": 4},
    {"id": "q06", "question": "What color is the Zyn Coffee can?",
     "golden_answer": "Zyn Coffee comes in a brown can.", "tags": ["flavor-color"], "image_index": 5},
    {"id": "q07", "question": "Which products offer a mint flavor across product types?",
     "golden_answer": "Mint appears in Zyn Cool Mint and Velo Cool Mint pouches, Marlboro Menthol and Camel Crush cigarettes, and Juul Menthol vapes.",
     "tags": ["cross-product-flavor"]},
    {"id": "q08", "question": "Is there a menthol vape and a menthol cigarette?",
     "golden_answer": "Yes, Juul Menthol is a menthol vape and Marlboro Menthol is a menthol cigarette.",
     "tags": ["cross-product-flavor"], "image_index": 28},
    {"id": "q09", "question": "What brand is this product and what flavor is it?",
     "golden_answer": "This is a Velo Ruby Berry nicotine pouch.", "tags": ["flavors-per-brand"], "image_index": 11},
    {"id": "q10", "question": "Which cigar flavors does Swisher offer?",
     "golden_answer": "Swisher offers Grape, Wine and Sweet cigars.",
     "tags": ["cross-product-flavor"], "image_index": 29},
    {"id": "q11", "question": "Which brands sell a wintergreen flavor?",
     "golden_answer": "Zyn Wintergreen and Velo Wintergreen are wintergreen nicotine pouches.",
     "tags": ["cross-product-flavor"], "image_index": 3},
)


@dataclass
class FixturePaths:
    root: Path
    config: Path
    corpus: Path
    cases: Path
    images_manifest: Path
    provider_fixture: Path
    docs: List[Path] = field(default_factory=list)
    images: List[Path] = field(default_factory=list)


def render_product(rgb: Tuple[int, int, int], size: Tuple[int, int]) -> bytes:
    """A filled rectangle of ``size`` centered on a white canvas, as PNG bytes."""
    w, h = size
    im = Image.new("RGB", CANVAS, WHITE)
    x0 = (CANVAS[0] - w) // 2
    y0 = (CANVAS[1] - h) // 2
    ImageDraw.Draw(im).rectangle([x0, y0, x0 + w - 1, y0 + h - 1], fill=rgb)
    buf = io.BytesIO()
    im.save(buf, format="PNG", optimize=False)
    return buf.getvalue()


def _slug(*parts: str) -> str:
    return "_".join(p.lower().replace(" ", "-") for p in parts)


def write_fixture_corpus(out_dir: str | os.PathLike) -> FixturePaths:
    root = Path(out_dir)
    (root / "docs").mkdir(parents=True, exist_ok=True)
    (root / "images").mkdir(parents=True, exist_ok=True)

    docs: List[Path] = []
    for name, text in DOCUMENTS:
        p = root / "docs" / name
        p.write_text(text + "\n", encoding="utf-8")
        docs.append(p)

    fixture: Dict[str, Dict[str, object]] = {"ocr": {}, "caption": {}, "shape": {}}
    manifest_lines: List[str] = []
    images: List[Path] = []
    for n, (brand, product, tobacco, flavor, rgb, size, tokens) in enumerate(PRODUCTS):
        data = render_product(rgb, size)
        digest = content_hash(data)
        rel = f"images/{n:02d}_{_slug(brand, flavor)}.png"
        (root / rel).write_bytes(data)
        images.append(root / rel)
        manifest_lines.append(json.dumps(
            {"uri": rel, "tobacco_type": tobacco, "product_type": product, "brand": brand}, sort_keys=True
        ))
        shape = classify_shape(size[0] / size[1]).value
        fixture["ocr"][digest] = {
            "tokens": list(tokens),
            "confidences": [round(0.99 - 0.04 * i, 2) for i in range(len(tokens))],
        }
        fixture["caption"][digest] = (
            f"A {shape} {brand} {flavor} {product} package on a plain white background."
        )
        fixture["shape"][digest] = f"a {shape} rectangular {product} package, {size[0]} by {size[1]} units, {brand} {flavor}"

    manifest = root / "images.jsonl"
    manifest.write_text("\n".join(manifest_lines) + "\n", encoding="utf-8")
    provider_fixture = root / "provider_fixture.json"
    write_fixture_map(str(provider_fixture), fixture)  # type: ignore[arg-type]

    corpus = root / "corpus.json"
    corpus.write_text(json.dumps({
        "docs": [f"docs/{name}" for name, _ in DOCUMENTS],
        "images": "images.jsonl",
    }, indent=2) + "\n", encoding="utf-8")

    cases = root / "cases.jsonl"
    case_lines = []
    for case in CASES:
        row = {k: v for k, v in case.items() if k != "image_index"}
        if "image_index" in case:
            row["query_image"] = str(images[int(case["image_index"])].relative_to(root))  # type: ignore[arg-type]
        case_lines.append(json.dumps(row, sort_keys=True))
    cases.write_text("\n".join(case_lines) + "\n", encoding="utf-8")

    config = root / "hyperrag.json"
    providers = {
        kind: {"kind": kind, "endpoint": "mock", "model_name": "mock", "dimension": 64}
        for kind in ("chat", "embed_text", "embed_image", "ocr", "caption")
    }
    for kind in ("ocr", "caption"):
        providers[kind]["fixture_path"] = "provider_fixture.json"
    config.write_text(json.dumps({
        "providers": providers,
        "construction": {"chunk_size": 64, "chunk_overlap": 16, "shape_text": True},
        "retrieval": {"k": 8, "mode": "nico"},
    }, indent=2, sort_keys=True) + "\n", encoding="utf-8")

    log.info("wrote fixture corpus to %s (%d documents, %d images)", root, len(docs), len(images))
    return FixturePaths(
        root=root, config=config, corpus=corpus, cases=cases, images_manifest=manifest,
        provider_fixture=provider_fixture, docs=docs, images=images,
    )
