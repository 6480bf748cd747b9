# hyperrag/config.py
from __future__ import annotations

import json
import os
from pathlib import Path
from typing import Dict, List, Literal, Optional

from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from .errors import ConfigError

load_dotenv()

LAMBDAS = (1, 2, 3, 4)
CRITERIA = ("i", "ii", "iii", "iv", "v")
# which retrieval criterion each image extractor feeds; criterion i is always on
LAMBDA_TO_CRITERION = {1: "iii", 2: "iv", 3: "v", 4: "ii"}

ProviderKind = Literal["chat", "embed_text", "embed_image", "ocr", "caption"]
Mode = Literal["naive", "standard", "nico"]


class Settings(BaseSettings):
    # process-level knobs; everything about the pipeline lives in the JSON config
    LOG_LEVEL: str = Field(default="INFO", description="DEBUG|INFO|WARNING|ERROR")
    LOG_FORMAT: str = "%(levelname)s  %(name)s: %(message)s"
    CONFIG_PATH: str = Field(default="hyperrag.json", description="fallback when --config is not given")

    model_config = SettingsConfigDict(env_prefix="HYPERRAG_", env_file=".env", extra="ignore")


settings = Settings()


# ───────────────────────── App config ─────────────────────────

class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ProviderConfig(_Strict):
    kind: ProviderKind
    endpoint: str = "mock"                  # URL or "mock"
    model_name: str = "mock"
    timeout: float = Field(default=30.0, gt=0)
    max_retries: int = Field(default=2, ge=0)
    backoff_base: float = Field(default=0.5, ge=0)   # seconds, doubled per retry
    api_key_env: Optional[str] = None       # name of the env var, never the key
    dimension: int = Field(default=64, ge=1)
    fixture_path: Optional[str] = None      # canned OCR/caption outputs for mocks

    @property
    def is_mock(self) -> bool:
        return self.endpoint == "mock"

    def api_key(self) -> Optional[str]:
        if not self.api_key_env:
            return None
        return os.environ.get(self.api_key_env)


class ConstructionConfig(_Strict):
    chunk_size: int = Field(default=200, ge=16)
    chunk_overlap: int = Field(default=40, ge=0)
    lambdas: List[int] = Field(default_factory=lambda: list(LAMBDAS))
    max_concurrency: int = Field(default=8, ge=1)
    captions_into_extraction: bool = False
    shape_text: bool = False
    ocr_token_cap: int = Field(default=16, ge=1)

    @field_validator("lambdas")
    @classmethod
    def _check_lambdas(cls, v: List[int]) -> List[int]:
        return validate_lambdas(v)

    @model_validator(mode="after")
    def _check_overlap(self) -> "ConstructionConfig":
        if self.chunk_overlap >= self.chunk_size:
            raise ValueError("chunk_overlap must be smaller than chunk_size")
        return self


class RetrievalConfig(_Strict):
    k: int = Field(default=8, ge=1)
    mode: Mode = "nico"
    criteria: List[str] = Field(default_factory=lambda: list(CRITERIA))
    context_budget_words: int = Field(default=6000, ge=1)
    neighbor_cap: int = Field(default=32, ge=1)
    rrf_constant: int = Field(default=60, ge=0)

    @field_validator("criteria")
    @classmethod
    def _check_criteria(cls, v: List[str]) -> List[str]:
        return validate_criteria(v)


class EvaluationConfig(_Strict):
    ablation_subsets: List[List[int]] = Field(default_factory=lambda: [[1], [1, 2], [1, 2, 3], [1, 2, 3, 4]])
    k_values: List[int] = Field(default_factory=lambda: [4, 8])

    @field_validator("ablation_subsets")
    @classmethod
    def _check_subsets(cls, v: List[List[int]]) -> List[List[int]]:
        return [validate_lambdas(s) for s in v]


class PathsConfig(_Strict):
    prompts_dir: Optional[str] = None
    cache_dir: Optional[str] = None


class AppConfig(_Strict):
    providers: Dict[ProviderKind, ProviderConfig] = Field(default_factory=dict)
    construction: ConstructionConfig = Field(default_factory=ConstructionConfig)
    retrieval: RetrievalConfig = Field(default_factory=RetrievalConfig)
    evaluation: EvaluationConfig = Field(default_factory=EvaluationConfig)
    paths: PathsConfig = Field(default_factory=PathsConfig)

    @model_validator(mode="after")
    def _check_providers(self) -> "AppConfig":
        for key, pc in self.providers.items():
            if pc.kind != key:
                raise ValueError(f"provider '{key}' declares kind '{pc.kind}'")
        t, i = self.providers.get("embed_text"), self.providers.get("embed_image")
        if t and i and t.dimension != i.dimension:
            raise ValueError("embed_text and embed_image must share one dimension")
        return self

    def provider(self, kind: str) -> ProviderConfig:
        try:
            return self.providers[kind]  # type: ignore[index]
        except KeyError:
            raise ConfigError(f"provider '{kind}' is not configured") from None

    @property
    def dimension(self) -> int:
        pc = self.providers.get("embed_text") or self.providers.get("embed_image")
        return pc.dimension if pc else 64


def validate_lambdas(v: List[int]) -> List[int]:
    if not v:
        raise ValueError("at least one extractor must be enabled")
    bad = [x for x in v if x not in LAMBDAS]
    if bad:
        raise ValueError(f"unknown extractors: {bad}")
    return sorted(set(v))


def validate_criteria(v: List[str]) -> List[str]:
    bad = [x for x in v if x not in CRITERIA]
    if bad:
        raise ValueError(f"unknown criteria: {bad}")
    return [c for c in CRITERIA if c in v]


def _resolve(base: Path, p: Optional[str]) -> Optional[str]:
    if not p:
        return p
    path = Path(p)
    return str(path if path.is_absolute() else (base / path))


def load_config(path: Optional[str] = None) -> AppConfig:
    """
    Load and validate the JSON app config.
    Discovery: explicit path, else HYPERRAG_CONFIG_PATH / ./hyperrag.json, else ConfigError.
    Relative paths inside the file are resolved against the file's directory.
    """
    cfg_path = Path(path or settings.CONFIG_PATH)
    if not cfg_path.is_file():
        raise ConfigError(f"config file not found: {cfg_path}")
    try:
        raw = json.loads(cfg_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ConfigError(f"config file {cfg_path} is not valid JSON: {e}") from e
    try:
        cfg = AppConfig.model_validate(raw)
    except ValidationError as e:
        raise ConfigError(f"invalid config {cfg_path}: {e}") from e

    base = cfg_path.resolve().parent
    cfg.paths.prompts_dir = _resolve(base, cfg.paths.prompts_dir)
    cfg.paths.cache_dir = _resolve(base, cfg.paths.cache_dir)
    for pc in cfg.providers.values():
        pc.fixture_path = _resolve(base, pc.fixture_path)
    check_paths(cfg)
    return cfg


def check_paths(cfg: AppConfig) -> None:
    if cfg.paths.prompts_dir and not Path(cfg.paths.prompts_dir).is_dir():
        raise ConfigError(f"prompts_dir does not exist: {cfg.paths.prompts_dir}")
    for kind, pc in cfg.providers.items():
        if pc.fixture_path and not Path(pc.fixture_path).is_file():
            raise ConfigError(f"fixture_path for '{kind}' does not exist: {pc.fixture_path}")


def mock_config(fixture_path: Optional[str] = None, dimension: int = 64) -> AppConfig:
    """All-mock configuration used for offline runs and tests."""
    providers = {
        kind: ProviderConfig(
            kind=kind,
            dimension=dimension,
            fixture_path=fixture_path if kind in ("ocr", "caption") else None,
        )
        for kind in ("chat", "embed_text", "embed_image", "ocr", "caption")
    }
    return AppConfig(providers=providers)
