# hyperrag/providers.py
"""
Uniform access to the external models: chat model, text embedder, image
embedder, OCR and captioner. Each kind is served either over JSON-over-HTTP
or by a deterministic in-process mock (endpoint "mock").
"""
from __future__ import annotations

import asyncio
import base64
import json
import logging
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence

import httpx
import numpy as np

from .config import AppConfig, ProviderConfig
from .database import ResponseCache
from .errors import ConfigError, DimensionMismatchError, EmptyInputError, ProviderError, ZeroVectorError
from .models import ImageBlob
from .utils import estimate_tokens, set_f1, token_set

log = logging.getLogger("providers")

MOCK_DIMENSION = 64

# ───────────────────────── Mock embeddings ─────────────────────────

_P1 = np.uint64(0x9E3779B185EBCA87)
_P2 = np.uint64(0xC2B2AE3D27D4EB4F)
_P3 = np.uint64(0x165667B19E3779F9)


def trigram_histogram(data: bytes, dimension: int = MOCK_DIMENSION) -> np.ndarray:
    """
    L2-normalized histogram of hashed byte trigrams.
    Inputs shorter than three bytes hash as a single gram.
    """
    if not data:
        raise EmptyInputError("cannot embed empty input")
    buf = np.frombuffer(data, dtype=np.uint8).astype(np.uint64)
    if buf.size < 3:
        buf = np.concatenate([buf, np.zeros(3 - buf.size, dtype=np.uint64)])
    a, b, c = buf[:-2], buf[1:-1], buf[2:]
    with np.errstate(over="ignore"):
        h = (a + np.uint64(1)) * _P1 ^ (b + np.uint64(1)) * _P2 ^ (c + np.uint64(1)) * _P3
        h ^= h >> np.uint64(29)
        h *= _P1
    bins = (h >> np.uint64(32)) % np.uint64(dimension)
    hist = np.bincount(bins.astype(np.int64), minlength=dimension).astype(np.float64)
    return hist / np.linalg.norm(hist)


def mock_text_bytes(text: str) -> bytes:
    # pad so word boundaries form their own trigrams
    return (" " + " ".join(text.lower().split()) + " ").encode("utf-8")

# ───────────────────────── Fixture maps ─────────────────────────

def load_fixture_map(path: Optional[str]) -> Dict[str, Dict[str, Any]]:
    data: Dict[str, Dict[str, Any]] = {"ocr": {}, "caption": {}, "shape": {}}
    if not path:
        return data
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read provider fixture {path}: {e}") from e
    for section in data:
        data[section].update(raw.get(section) or {})
    return data


def write_fixture_map(path: str, data: Dict[str, Dict[str, Any]]) -> None:
    Path(path).write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")

# ───────────────────────── Call accounting ─────────────────────────

@dataclass
class CallStats:
    calls: Counter = field(default_factory=Counter)        # successful calls per kind
    attempts: Counter = field(default_factory=Counter)     # including retries
    chat_purposes: Counter = field(default_factory=Counter)
    tokens: Counter = field(default_factory=Counter)       # len/4 estimates per kind
    image_payloads: int = 0                                # images handed to the chat model

    def snapshot(self) -> Dict[str, Any]:
        return {
            "calls": dict(sorted(self.calls.items())),
            "attempts": dict(sorted(self.attempts.items())),
            "chat_purposes": dict(sorted(self.chat_purposes.items())),
            "tokens": dict(sorted(self.tokens.items())),
            "image_payloads": self.image_payloads,
        }

# ───────────────────────── Transports ─────────────────────────

def _b64(image: ImageBlob) -> str:
    return base64.b64encode(image.data).decode("ascii")


@dataclass
class HttpReply:
    data: Any
    attempts: int


class HttpClient:
    """JSON-over-HTTP with exponential backoff (base × 2^attempt)."""

    RETRY_STATUS = {408, 429, 500, 502, 503, 504}

    def __init__(
        self,
        config: ProviderConfig,
        stats: CallStats,
        transport: Optional[httpx.AsyncBaseTransport] = None,
        sleep: Callable[[float], Any] = asyncio.sleep,
    ):
        self.config = config
        self.stats = stats
        self._transport = transport
        self._sleep = sleep

    def _headers(self) -> Dict[str, str]:
        key = self.config.api_key()
        return {"Authorization": f"Bearer {key}"} if key else {}

    async def post(self, path: str, body: Dict[str, Any]) -> HttpReply:
        cfg = self.config
        url = cfg.endpoint.rstrip("/") + path
        attempts = 0
        last: str = ""
        for attempt in range(cfg.max_retries + 1):
            attempts += 1
            self.stats.attempts[cfg.kind] += 1
            try:
                async with httpx.AsyncClient(timeout=cfg.timeout, transport=self._transport) as client:
                    r = await client.post(url, json=body, headers=self._headers())
                if r.status_code in self.RETRY_STATUS:
                    last = f"HTTP {r.status_code}"
                elif r.status_code >= 400:
                    raise ProviderError(cfg.kind, "rejected", attempts, f"HTTP {r.status_code}")
                else:
                    try:
                        return HttpReply(r.json(), attempts)
                    except ValueError as e:
                        raise ProviderError(cfg.kind, "protocol", attempts, f"non-JSON response: {e}") from e
            except httpx.HTTPError as e:
                last = f"{type(e).__name__}: {e}"
            if attempt < cfg.max_retries:
                delay = cfg.backoff_base * (2 ** attempt)
                log.warning("%s call to %s failed (%s); retry %d in %.2fs", cfg.kind, url, last, attempt + 1, delay)
                await self._sleep(delay)
        raise ProviderError(cfg.kind, "unreachable", attempts, last)

# ───────────────────────── Mock chat ─────────────────────────

# (purpose, prompt, context_blocks) -> response text, or None to fall back to the default
ChatResponder = Callable[[str, str, Sequence[str]], Optional[str]]


class MockChat:
    """
    Deterministic stand-in for the chat model.
      generate  -> "ANSWER: " + first context block (or the prompt's last line)
      extract   -> capitalized words become entities; sentences with 2+ of them become relations
      judge     -> aspect scores from token overlap of prediction vs gold
    """

    _STOP = {"the", "a", "an", "in", "on", "and", "or", "of", "it", "its", "this", "that", "these",
             "those", "each", "every", "both", "all", "some", "most", "many", "they", "their", "there",
             "with", "for", "from", "by", "as", "at", "to", "is", "are", "was", "were", "be", "while",
             "unlike", "like", "compared", "question", "answer"}

    def __init__(self, responder: Optional[ChatResponder] = None):
        self.responder = responder
        self.requests: List[Dict[str, Any]] = []

    def complete(self, purpose: str, prompt: str, blocks: Sequence[str], image: Optional[ImageBlob]) -> str:
        self.requests.append({"purpose": purpose, "prompt": prompt, "blocks": list(blocks), "image": image is not None})
        if self.responder is not None:
            out = self.responder(purpose, prompt, blocks)
            if out is not None:
                return out
        if purpose in ("extract", "repair"):
            return json.dumps(self.extract(blocks[0] if blocks else ""), sort_keys=True)
        if purpose == "judge":
            prediction, gold = (list(blocks) + ["", ""])[:2]
            return json.dumps(self.judge(prediction, gold), sort_keys=True)
        if blocks:
            return "ANSWER: " + blocks[0]
        lines = [ln for ln in prompt.strip().splitlines() if ln.strip()]
        return "ANSWER: " + (lines[-1] if lines else "")

    def extract(self, text: str) -> Dict[str, Any]:
        entities: Dict[str, Dict[str, str]] = {}
        relations: List[Dict[str, Any]] = []
        for sentence in re.split(r"(?<=[.!?])\s+", text.strip()):
            names: List[str] = []
            for m in re.finditer(r"\b[A-Z][A-Za-z0-9!']+(?:\s+[A-Z][A-Za-z0-9!']+)*", sentence):
                parts = m.group(0).split()
                while parts and parts[0].lower() in self._STOP:
                    parts.pop(0)
                if not parts:
                    continue
                name = " ".join(parts)
                if name not in names:
                    names.append(name)
                entities.setdefault(name, {"name": name, "kind_hint": "name", "description": sentence.strip()})
            if len(names) >= 2:
                relations.append({"members": names, "relation_text": sentence.strip(), "weight": 1.0})
        return {"entities": list(entities.values()), "relations": relations}

    @staticmethod
    def judge(prediction: str, gold: str) -> Dict[str, float]:
        p, g = token_set(prediction), token_set(gold)
        common = len(p & g)
        return {
            "comprehensiveness": round(common / len(g), 6) if g else 0.0,
            "correctness": round(set_f1(p, g), 6),
            "relevance": round(common / len(p), 6) if p else 0.0,
        }

# ───────────────────────── Provider hub ─────────────────────────

class Providers:
    """
    Front door for every model call. Validates inputs, normalizes outputs,
    caches image-keyed responses and keeps call counters.
    """

    def __init__(
        self,
        config: AppConfig,
        cache: Optional[ResponseCache] = None,
        chat_responder: Optional[ChatResponder] = None,
        transport: Optional[httpx.AsyncBaseTransport] = None,
        sleep: Callable[[float], Any] = asyncio.sleep,
    ):
        self.config = config
        self.cache = cache or ResponseCache(config.paths.cache_dir)
        self.stats = CallStats()
        self.mock_chat = MockChat(chat_responder)
        self._http: Dict[str, HttpClient] = {
            kind: HttpClient(pc, self.stats, transport=transport, sleep=sleep)
            for kind, pc in config.providers.items()
            if not pc.is_mock
        }
        self._fixtures: Dict[str, Dict[str, Dict[str, Any]]] = {}

    async def close(self) -> None:
        await self.cache.close()

    def _cfg(self, kind: str) -> ProviderConfig:
        return self.config.provider(kind)

    def _fixture(self, kind: str) -> Dict[str, Dict[str, Any]]:
        if kind not in self._fixtures:
            self._fixtures[kind] = load_fixture_map(self._cfg(kind).fixture_path)
        return self._fixtures[kind]

    def _count(self, kind: str, *texts: str) -> None:
        self.stats.calls[kind] += 1
        self.stats.tokens[kind] += sum(estimate_tokens(t) for t in texts)

    # ---- chat ----

    async def chat(
        self,
        prompt: str,
        context_blocks: Sequence[str] = (),
        image: Optional[ImageBlob] = None,
        *,
        purpose: str = "generate",
    ) -> str:
        cfg = self._cfg("chat")
        if image is not None:
            self.stats.image_payloads += 1
        if cfg.is_mock:
            self.stats.attempts["chat"] += 1
            text = self.mock_chat.complete(purpose, prompt, context_blocks, image)
        else:
            user = prompt if not context_blocks else prompt + "\n\n" + "\n\n".join(context_blocks)
            content: Any = user
            if image is not None:
                content = [
                    {"type": "text", "text": user},
                    {"type": "image_url", "image_url": {"url": f"data:image/png;base64,{_b64(image)}"}},
                ]
            body = {"model": cfg.model_name, "messages": [{"role": "user", "content": content}], "temperature": 0}
            reply = await self._http["chat"].post("/chat/completions", body)
            try:
                text = reply.data["choices"][0]["message"]["content"] or ""
            except (KeyError, IndexError, TypeError) as e:
                raise ProviderError("chat", "protocol", reply.attempts, f"unexpected response shape: {e}") from e
        self._count("chat", prompt, *context_blocks, text)
        self.stats.chat_purposes[purpose] += 1
        return text

    # ---- embeddings ----

    def _check_vector(self, kind: str, values: Any) -> np.ndarray:
        cfg = self._cfg(kind)
        vec = np.asarray(values, dtype=np.float64).ravel()
        if vec.shape[0] != cfg.dimension:
            raise DimensionMismatchError(cfg.dimension, int(vec.shape[0]))
        norm = float(np.linalg.norm(vec))
        if norm == 0.0:
            raise ZeroVectorError(f"{kind} provider returned a zero vector")
        return vec / norm

    async def embed_text(self, text: str) -> np.ndarray:
        if not text or not text.strip():
            raise EmptyInputError("cannot embed empty text")
        cfg = self._cfg("embed_text")
        if cfg.is_mock:
            self.stats.attempts["embed_text"] += 1
            vec = trigram_histogram(mock_text_bytes(text), cfg.dimension)
        else:
            reply = await self._http["embed_text"].post("/embeddings", {"model": cfg.model_name, "input": text})
            vec = self._embedding_from(reply, "embed_text")
        self._count("embed_text", text)
        return self._check_vector("embed_text", vec)

    async def embed_image(self, image: ImageBlob) -> np.ndarray:
        if not image.data:
            raise EmptyInputError("cannot embed empty image")
        cfg = self._cfg("embed_image")

        async def fill() -> List[float]:
            if cfg.is_mock:
                self.stats.attempts["embed_image"] += 1
                vec = trigram_histogram(image.data, cfg.dimension)
            else:
                reply = await self._http["embed_image"].post(
                    "/embeddings",
                    {"model": cfg.model_name, "input": f"data:image/png;base64,{_b64(image)}"},
                )
                vec = self._embedding_from(reply, "embed_image")
            self._count("embed_image")
            return [float(x) for x in self._check_vector("embed_image", vec)]

        values = await self.cache.get_or_fill("embed_image", image.digest, fill)
        return self._check_vector("embed_image", values)

    @staticmethod
    def _embedding_from(reply: HttpReply, kind: str) -> List[float]:
        try:
            return list(reply.data["data"][0]["embedding"])
        except (KeyError, IndexError, TypeError) as e:
            raise ProviderError(kind, "protocol", reply.attempts, f"unexpected embedding response: {e}") from e

    # ---- OCR / caption ----

    async def ocr(self, image: ImageBlob) -> Dict[str, List[Any]]:
        """Raw provider output: {"tokens": [...], "confidences": [...]}; empty when nothing is legible."""
        cfg = self._cfg("ocr")

        async def fill() -> Dict[str, List[Any]]:
            attempts = 1
            if cfg.is_mock:
                self.stats.attempts["ocr"] += 1
                hit = self._fixture("ocr")["ocr"].get(image.digest) or {}
                out = {"tokens": list(hit.get("tokens") or []), "confidences": list(hit.get("confidences") or [])}
            else:
                reply = await self._http["ocr"].post("", {"image_b64": _b64(image)})
                data, attempts = reply.data, reply.attempts
                if not isinstance(data, dict) or not isinstance(data.get("tokens", []), list):
                    raise ProviderError("ocr", "protocol", attempts, "expected {tokens[], confidences[]}")
                out = {"tokens": list(data.get("tokens") or []), "confidences": list(data.get("confidences") or [])}
            if len(out["tokens"]) != len(out["confidences"]):
                raise ProviderError("ocr", "protocol", attempts, "tokens and confidences differ in length")
            self._count("ocr", *[str(t) for t in out["tokens"]])
            return out

        return await self.cache.get_or_fill("ocr", image.digest, fill)

    async def caption(self, image: ImageBlob, focus: str = "caption") -> str:
        """focus "caption" describes the image; focus "shape" describes the object's shape."""
        cfg = self._cfg("caption")
        cache_kind = "caption" if focus == "caption" else f"caption:{focus}"

        async def fill() -> str:
            attempts = 1
            if cfg.is_mock:
                self.stats.attempts["caption"] += 1
                section = "caption" if focus == "caption" else focus
                text = self._fixture("caption").get(section, {}).get(image.digest)
                if text is None:
                    raise ProviderError("caption", "missing_fixture", 1, f"no canned {focus} for {image.digest}")
            else:
                reply = await self._http["caption"].post("", {"image_b64": _b64(image), "focus": focus})
                data, attempts = reply.data, reply.attempts
                text = data.get("caption") if isinstance(data, dict) else None
                if not isinstance(text, str):
                    raise ProviderError("caption", "protocol", attempts, "expected {caption}")
            if not text.strip():
                raise ProviderError("caption", "EmptyCaption", attempts)
            self._count("caption", text)
            return text.strip()

        return await self.cache.get_or_fill(cache_kind, image.digest, fill)
