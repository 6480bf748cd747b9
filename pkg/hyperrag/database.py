# hyperrag/database.py
"""Provider response cache: one SQLite table keyed by (kind, content hash)."""
from __future__ import annotations

import asyncio
import json
import logging
from pathlib import Path
from typing import Any, Awaitable, Callable, Dict, Optional

from sqlalchemy import String, Text, event, select
from sqlalchemy.ext.asyncio import AsyncEngine, AsyncSession, async_sessionmaker, create_async_engine
from sqlalchemy.orm import Mapped, declarative_base, mapped_column
from sqlalchemy.pool import StaticPool

for name in ("sqlalchemy.engine", "sqlalchemy.pool"):
    logging.getLogger(name).setLevel(logging.WARNING)

log = logging.getLogger("providers")

Base = declarative_base()

CACHE_FILE = "provider_cache.db"


class CacheEntry(Base):
    __tablename__ = "provider_cache"

    kind: Mapped[str] = mapped_column(String(32), primary_key=True)
    content_hash: Mapped[str] = mapped_column(String(64), primary_key=True)
    payload: Mapped[str] = mapped_column(Text)


def _make_engine(cache_dir: Optional[str]) -> AsyncEngine:
    if cache_dir:
        Path(cache_dir).mkdir(parents=True, exist_ok=True)
        url = f"sqlite+aiosqlite:///{Path(cache_dir) / CACHE_FILE}"
        engine = create_async_engine(url, echo=False, future=True, connect_args={"timeout": 30})
    else:
        # one shared connection, otherwise every checkout sees a fresh empty database
        engine = create_async_engine(
            "sqlite+aiosqlite:///:memory:", echo=False, future=True, poolclass=StaticPool
        )

    def _set_sqlite_pragmas(dbapi_conn, _record):
        try:
            cur = dbapi_conn.cursor()
            cur.execute("PRAGMA synchronous=NORMAL;")
            cur.execute("PRAGMA busy_timeout=30000;")
            cur.close()
        except Exception:
            pass

    event.listen(engine.sync_engine, "connect", _set_sqlite_pragmas)
    return engine


class ResponseCache:
    """
    Async key/value cache for provider outputs (OCR, captions, image embeddings).
    Persistent under ``cache_dir`` when given, in-memory otherwise.
    Check-then-fill runs under a per-key lock so concurrent callers share one
    provider call.
    """

    def __init__(self, cache_dir: Optional[str] = None):
        self.cache_dir = cache_dir
        self._engine: Optional[AsyncEngine] = None
        self._sessions: Optional[async_sessionmaker[AsyncSession]] = None
        self._locks: Dict[tuple, asyncio.Lock] = {}
        self._write_lock = asyncio.Lock()
        self._init_lock = asyncio.Lock()
        self.hits = 0
        self.misses = 0

    async def _ready(self) -> async_sessionmaker[AsyncSession]:
        if self._sessions is not None:
            return self._sessions
        async with self._init_lock:
            if self._sessions is None:
                engine = _make_engine(self.cache_dir)
                async with engine.begin() as conn:
                    await conn.run_sync(Base.metadata.create_all)
                self._engine = engine
                self._sessions = async_sessionmaker(bind=engine, class_=AsyncSession, expire_on_commit=False)
        return self._sessions

    async def get(self, kind: str, content_hash: str) -> Optional[Any]:
        Session = await self._ready()
        async with Session() as session:
            row = (await session.execute(
                select(CacheEntry).where(CacheEntry.kind == kind, CacheEntry.content_hash == content_hash)
            )).scalar_one_or_none()
            return json.loads(row.payload) if row else None

    async def put(self, kind: str, content_hash: str, value: Any) -> None:
        Session = await self._ready()
        async with self._write_lock:
            async with Session() as session:
                await session.merge(CacheEntry(kind=kind, content_hash=content_hash, payload=json.dumps(value)))
                await session.commit()

    async def get_or_fill(self, kind: str, content_hash: str, fill: Callable[[], Awaitable[Any]]) -> Any:
        lock = self._locks.setdefault((kind, content_hash), asyncio.Lock())
        async with lock:
            cached = await self.get(kind, content_hash)
            if cached is not None:
                self.hits += 1
                return cached
            self.misses += 1
            value = await fill()
            await self.put(kind, content_hash, value)
            return value

    async def close(self) -> None:
        if self._engine is not None:
            await self._engine.dispose()
            self._engine = None
            self._sessions = None
