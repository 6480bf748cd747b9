# hyperrag/utils.py
from __future__ import annotations

import hashlib
import re
from typing import Any, Iterable, Set

# =======================
# Content hashing / ids
# =======================

def content_hash(*parts: Any) -> str:
    """
    128-bit content hash rendered as 32 lowercase hex chars.
    bytes are hashed as-is; anything else goes through its str() form.
    """
    h = hashlib.blake2b(digest_size=16)
    for i, p in enumerate(parts):
        if i:
            h.update(b"\x1f")
        h.update(p if isinstance(p, (bytes, bytearray)) else str(p).encode("utf-8"))
    return h.hexdigest()

# =======================
# Text helpers
# =======================

_WS_RE = re.compile(r"\s+")
_PUNCT_RE = re.compile(r"[^\w\s]+", re.UNICODE)


def normalize_name(name: str) -> str:
    """Entity identity form: lowercased, trimmed, inner whitespace collapsed."""
    if not name:
        return ""
    return _WS_RE.sub(" ", name.strip().lower())


def strip_punct(token: str) -> str:
    return _PUNCT_RE.sub("", token)


def word_count(text: str) -> int:
    return len(text.split())


def token_set(text: str) -> Set[str]:
    """Whitespace tokens, lowercased, punctuation stripped, empties dropped."""
    out: Set[str] = set()
    for w in text.split():
        t = strip_punct(w.lower())
        if t:
            out.add(t)
    return out


def set_f1(pred: Iterable[str], gold: Iterable[str]) -> float:
    """Set-overlap F1; 0 when either side is empty or nothing overlaps."""
    p, g = set(pred), set(gold)
    if not p or not g:
        return 0.0
    common = len(p & g)
    if common == 0:
        return 0.0
    precision = common / len(p)
    recall = common / len(g)
    return 2 * precision * recall / (precision + recall)


def estimate_tokens(text: str) -> int:
    return len(text) // 4


def mentions_word(text: str, phrase: str) -> bool:
    if not phrase:
        return False
    return re.search(rf"(?<!\w){re.escape(phrase)}(?!\w)", text, re.I) is not None
