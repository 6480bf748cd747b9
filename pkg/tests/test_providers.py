import asyncio
import json

import httpx
import numpy as np
import pytest

from hyperrag.config import AppConfig, ProviderConfig, mock_config
from hyperrag.database import ResponseCache
from hyperrag.errors import EmptyInputError, ProviderError
from hyperrag.models import ImageBlob
from hyperrag.providers import MockChat, Providers, load_fixture_map, trigram_histogram, write_fixture_map


def http_config(endpoint="http://models.test", max_retries=2, dimension=4) -> AppConfig:
    cfg = mock_config(dimension=dimension)
    for kind in ("chat", "embed_text"):
        cfg.providers[kind] = ProviderConfig(
            kind=kind, endpoint=endpoint, model_name="m", max_retries=max_retries,
            backoff_base=0.0, api_key_env="HYPERRAG_TEST_KEY", dimension=dimension,
        )
    return cfg


async def test_mock_chat_echoes_first_block(mock_providers):
    out = await mock_providers.chat("prompt", ["first block", "second"], purpose="generate")
    assert out == "ANSWER: first block"
    assert mock_providers.stats.calls["chat"] == 1
    assert mock_providers.stats.chat_purposes["generate"] == 1


async def test_mock_chat_without_context_uses_last_prompt_line(mock_providers):
    out = await mock_providers.chat("instructions\nQuestion:\nwhat is zyn?")
    assert out == "ANSWER: what is zyn?"


def test_mock_extract_heuristic():
    payload = MockChat().extract("The Zyn Cool Mint can is teal. Zyn and Velo compete.")
    names = [e["name"] for e in payload["entities"]]
    assert "Zyn Cool Mint" in names
    assert "The Zyn Cool Mint" not in names
    assert payload["relations"] == [
        {"members": ["Zyn", "Velo"], "relation_text": "Zyn and Velo compete.", "weight": 1.0}
    ]


async def test_mock_embeddings(mock_providers):
    a = await mock_providers.embed_text("mint pouch")
    b = await mock_providers.embed_text("mint pouch")
    assert a.shape == (64,)
    assert np.linalg.norm(a) == pytest.approx(1.0)
    assert float(a @ b) == pytest.approx(1.0)
    near = float(a @ await mock_providers.embed_text("mint flavor pouch"))
    far = float(a @ await mock_providers.embed_text("cigarette carton"))
    assert near > far


async def test_empty_input_rejected(mock_providers):
    with pytest.raises(EmptyInputError):
        await mock_providers.embed_text("   ")
    with pytest.raises(EmptyInputError):
        await mock_providers.embed_image(ImageBlob(data=b"", digest="0"))


def test_trigram_histogram_deterministic():
    assert np.array_equal(trigram_histogram(b"abcdef"), trigram_histogram(b"abcdef"))
    assert trigram_histogram(b"a").shape == (64,)


def test_fixture_map_roundtrip(tmp_path):
    data = {
        "ocr": {"h1": {"tokens": ["a"], "confidences": [0.5]}},
        "caption": {"h1": "a caption"},
        "shape": {"h2": "tall"},
    }
    path = tmp_path / "f.json"
    write_fixture_map(str(path), data)
    assert load_fixture_map(str(path)) == data


async def test_http_chat_and_embeddings(monkeypatch):
    monkeypatch.setenv("HYPERRAG_TEST_KEY", "secret")
    seen = []

    def handler(request: httpx.Request) -> httpx.Response:
        seen.append(request)
        body = json.loads(request.content)
        if request.url.path.endswith("/chat/completions"):
            return httpx.Response(200, json={"choices": [{"message": {"content": "hi " + body["model"]}}]})
        return httpx.Response(200, json={"data": [{"embedding": [3.0, 0.0, 4.0, 0.0]}]})

    p = Providers(http_config(), transport=httpx.MockTransport(handler))
    try:
        assert await p.chat("hello") == "hi m"
        vec = await p.embed_text("hello")
        assert vec.tolist() == pytest.approx([0.6, 0.0, 0.8, 0.0])
        assert seen[0].headers["Authorization"] == "Bearer secret"
    finally:
        await p.close()


async def test_retries_then_unreachable():
    attempts = []

    def handler(request):
        attempts.append(1)
        raise httpx.ConnectError("refused", request=request)

    delays = []

    async def sleep(d):
        delays.append(d)

    cfg = http_config(max_retries=2)
    cfg.providers["chat"].backoff_base = 0.5
    p = Providers(cfg, transport=httpx.MockTransport(handler), sleep=sleep)
    try:
        with pytest.raises(ProviderError) as exc:
            await p.chat("hello")
        assert exc.value.attempts == 3
        assert exc.value.reason == "unreachable"
        assert len(attempts) == 3
        assert delays == [0.5, 1.0]
        assert p.stats.calls["chat"] == 0
    finally:
        await p.close()


async def test_transient_status_recovers():
    codes = iter([503, 429, 200])

    def handler(request):
        code = next(codes)
        if code != 200:
            return httpx.Response(code)
        return httpx.Response(200, json={"choices": [{"message": {"content": "ok"}}]})

    p = Providers(http_config(), transport=httpx.MockTransport(handler))
    try:
        assert await p.chat("x") == "ok"
        assert p.stats.attempts["chat"] == 3
        assert p.stats.calls["chat"] == 1
    finally:
        await p.close()


async def test_client_error_not_retried():
    calls = []

    def handler(request):
        calls.append(1)
        return httpx.Response(401)

    p = Providers(http_config(), transport=httpx.MockTransport(handler))
    try:
        with pytest.raises(ProviderError) as exc:
            await p.chat("x")
        assert exc.value.reason == "rejected"
        assert len(calls) == 1
    finally:
        await p.close()


async def test_malformed_reply_reports_attempts():
    codes = iter([503, 200])

    def handler(request):
        code = next(codes)
        if code != 200:
            return httpx.Response(code)
        return httpx.Response(200, json={"unexpected": True})

    p = Providers(http_config(), transport=httpx.MockTransport(handler))
    try:
        with pytest.raises(ProviderError) as exc:
            await p.chat("x")
        assert exc.value.reason == "protocol"
        assert exc.value.attempts == 2
    finally:
        await p.close()


async def test_cache_persists_across_instances(tmp_path):
    c1 = ResponseCache(str(tmp_path))
    await c1.put("ocr", "abc", {"tokens": ["x"], "confidences": [1.0]})
    await c1.close()
    c2 = ResponseCache(str(tmp_path))
    try:
        assert await c2.get("ocr", "abc") == {"tokens": ["x"], "confidences": [1.0]}
        assert await c2.get("ocr", "nope") is None
    finally:
        await c2.close()


async def test_concurrent_first_use_shares_one_store():
    cache = ResponseCache()
    fills = []

    def filler(key):
        async def fill():
            fills.append(key)
            await asyncio.sleep(0)
            return {"key": key}
        return fill

    async def unreachable():
        raise AssertionError("value should come from the cache")

    keys = [f"k{i}" for i in range(8)]
    try:
        await asyncio.gather(*(cache.get_or_fill("ocr", k, filler(k)) for k in keys))
        for k in keys:
            assert await cache.get_or_fill("ocr", k, unreachable) == {"key": k}
        assert sorted(fills) == keys
        assert cache.hits == 8
    finally:
        await cache.close()
