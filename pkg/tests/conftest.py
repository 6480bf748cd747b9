from __future__ import annotations

import asyncio
import io
from typing import Tuple

import numpy as np
import pytest
from PIL import Image

from hyperrag.config import AppConfig, load_config, mock_config
from hyperrag.construction import build_knowledge, load_corpus_spec
from hyperrag.fixtures import FixturePaths, write_fixture_corpus
from hyperrag.knowledge import KnowledgeBase
from hyperrag.models import ImageBlob
from hyperrag.providers import Providers
from hyperrag.schemas import ConstructionReport


def png_bytes(pixels: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(pixels.astype(np.uint8)).save(buf, format="PNG")
    return buf.getvalue()


def solid_png(rgb, size=(8, 8)) -> bytes:
    w, h = size
    arr = np.zeros((h, w, 3), dtype=np.uint8)
    arr[:, :] = rgb
    return png_bytes(arr)


def blob_of(pixels: np.ndarray) -> ImageBlob:
    return ImageBlob.from_bytes(png_bytes(pixels))


@pytest.fixture(scope="session")
def fixture_corpus(tmp_path_factory) -> FixturePaths:
    return write_fixture_corpus(tmp_path_factory.mktemp("corpus"))


@pytest.fixture(scope="session")
def fixture_config(fixture_corpus) -> AppConfig:
    return load_config(str(fixture_corpus.config))


async def _build(paths: FixturePaths, config: AppConfig) -> Tuple[KnowledgeBase, ConstructionReport]:
    providers = Providers(config)
    try:
        return await build_knowledge(load_corpus_spec(paths.corpus), config, providers)
    finally:
        await providers.close()


@pytest.fixture(scope="session")
def built(fixture_corpus, fixture_config) -> Tuple[KnowledgeBase, ConstructionReport]:
    return asyncio.run(_build(fixture_corpus, fixture_config))


@pytest.fixture(scope="session")
def fixture_kb(built) -> KnowledgeBase:
    return built[0]


@pytest.fixture
async def providers(fixture_config):
    p = Providers(fixture_config)
    yield p
    await p.close()


@pytest.fixture
async def mock_providers():
    p = Providers(mock_config())
    yield p
    await p.close()
