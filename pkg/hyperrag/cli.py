# hyperrag/cli.py
from __future__ import annotations

import argparse
import asyncio
import json
import logging
import logging.config
import sys
from pathlib import Path
from typing import Any, Awaitable, Callable, List, Optional, Sequence

from .config import CRITERIA, AppConfig, load_config, settings, validate_criteria, validate_lambdas
from .construction import build_knowledge, load_corpus_spec, write_report
from .errors import CorpusError, HyperRagError, ProviderError, UsageError
from .evaluation import load_cases, run_ablation, run_eval
from .fixtures import write_fixture_corpus
from .generation import answer
from .knowledge import KnowledgeBase
from .models import ImageBlob
from .prompting import PromptLibrary
from .providers import Providers
from .schemas import Query

log = logging.getLogger("cli")

EXIT_OK = 0
EXIT_USER = 1
EXIT_PROVIDER = 2

CACHE_DIR = "cache"


def configure_logging(level: str) -> None:
    """Console logging on stderr; stdout stays reserved for JSON."""
    level = level.upper()
    logging.config.dictConfig({
        "version": 1,
        "disable_existing_loggers": False,
        "formatters": {"std": {"format": settings.LOG_FORMAT}},
        "handlers": {"console": {"class": "logging.StreamHandler", "formatter": "std", "stream": "ext://sys.stderr"}},
        "root": {"level": level, "handlers": ["console"]},
        "loggers": {
            "httpx":             {"level": "WARNING"},
            "httpcore":          {"level": "WARNING"},
            "sqlalchemy":        {"level": "WARNING"},
            "sqlalchemy.engine": {"level": "WARNING"},
            "sqlalchemy.pool":   {"level": "WARNING"},
            "PIL":               {"level": "WARNING"},
        },
    })


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # type: ignore[override]
        raise UsageError(f"{self.prog}: {message}")


def _int_list(text: str) -> List[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _str_list(text: str) -> List[str]:
    return [x.strip() for x in text.split(",") if x.strip()]


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="hyperrag", description="Multimodal hypergraph retrieval-augmented generation.")
    p.add_argument("--config", help="JSON config (default ./hyperrag.json)")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    b = sub.add_parser("build", help="build a knowledge base from a corpus")
    b.add_argument("--corpus", required=True)
    b.add_argument("--out", required=True)
    b.add_argument("--lambdas", type=_int_list, help="enabled image extractors, e.g. 1,2,3,4")

    q = sub.add_parser("query", help="answer one question")
    q.add_argument("--kb", required=True)
    q.add_argument("--text", required=True)
    q.add_argument("--image")
    q.add_argument("--k", type=int)
    q.add_argument("--mode", choices=["naive", "standard", "nico"])
    q.add_argument("--criteria", type=_str_list, help=f"subset of {','.join(CRITERIA)}")

    e = sub.add_parser("eval", help="evaluate against golden answers")
    e.add_argument("--kb", required=True)
    e.add_argument("--cases", required=True)
    e.add_argument("--mode", choices=["naive", "standard", "nico"])
    e.add_argument("--ablate", action="store_true", help="run the extractor-subset × k grid")
    e.add_argument("--k", type=_int_list, help="k values, e.g. 4,8")
    e.add_argument("--out")

    i = sub.add_parser("inspect", help="knowledge base statistics")
    i.add_argument("--kb", required=True)

    f = sub.add_parser("fixture", help="write the synthetic fixture corpus")
    f.add_argument("--out", required=True)
    return p


def _emit(obj: Any) -> None:
    sys.stdout.write(json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False) + "\n")
    sys.stdout.flush()


def _cache_under(config: AppConfig, kb_dir: str) -> AppConfig:
    """Provider responses persist next to the knowledge base unless a cache_dir is configured."""
    if config.paths.cache_dir is None:
        config.paths.cache_dir = str(Path(kb_dir) / CACHE_DIR)
    return config


async def _with_providers(config: AppConfig, work: Callable[[Providers], Awaitable[Any]]) -> Any:
    providers = Providers(config)
    try:
        return await work(providers)
    finally:
        await providers.close()

# ---- commands ----

def cmd_build(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    _cache_under(config, args.out)
    if not Path(args.corpus).exists():
        raise CorpusError(f"corpus path does not exist: {args.corpus}")
    spec = load_corpus_spec(args.corpus)
    if args.lambdas is not None:
        try:
            spec.lambdas = validate_lambdas(args.lambdas)
        except ValueError as e:
            raise UsageError(f"--lambdas: {e}") from e
    prompts = PromptLibrary(config.paths.prompts_dir)

    async def work(providers: Providers):
        return await build_knowledge(spec, config, providers, prompts)

    kb, report = asyncio.run(_with_providers(config, work))
    kb.save(args.out)
    write_report(args.out, report)
    _emit(report.model_dump(mode="json"))
    return EXIT_OK


def cmd_query(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    kb = KnowledgeBase.load(args.kb)
    _cache_under(config, args.kb)
    image = ImageBlob.from_path(args.image) if args.image else None
    criteria = config.retrieval.criteria
    if args.criteria is not None:
        try:
            criteria = validate_criteria(args.criteria)
        except ValueError as e:
            raise UsageError(f"--criteria: {e}") from e
    if args.k is not None and args.k < 1:
        raise UsageError("--k must be >= 1")
    query = Query(
        text=args.text,
        image=args.image,
        k=args.k or config.retrieval.k,
        mode=args.mode or config.retrieval.mode,
        criteria=criteria,
    )

    async def work(providers: Providers):
        return await answer(query, kb, providers, config, image=image, criteria=criteria)

    payload = asyncio.run(_with_providers(config, work))
    _emit(payload.model_dump(mode="json"))
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    kb = KnowledgeBase.load(args.kb)
    _cache_under(config, args.kb)
    cases = load_cases(args.cases)
    mode = args.mode or config.retrieval.mode
    ks = args.k or (config.evaluation.k_values if args.ablate else [config.retrieval.k])
    if any(k < 1 for k in ks):
        raise UsageError("--k values must be >= 1")

    async def work(providers: Providers):
        if args.ablate:
            return await run_ablation(cases, kb, providers, config, mode=mode, k_values=ks)
        return await run_eval(cases, kb, providers, config, mode=mode, k=ks[0])

    result = asyncio.run(_with_providers(config, work)).model_dump(mode="json")
    if args.out:
        Path(args.out).write_text(json.dumps(result, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    _emit(result)
    return EXIT_OK


def cmd_inspect(args: argparse.Namespace) -> int:
    kb = KnowledgeBase.load(args.kb)
    _emit(kb.stats())
    return EXIT_OK


def cmd_fixture(args: argparse.Namespace) -> int:
    paths = write_fixture_corpus(args.out)
    _emit({
        "root": str(paths.root),
        "config": str(paths.config),
        "corpus": str(paths.corpus),
        "cases": str(paths.cases),
        "documents": len(paths.docs),
        "images": len(paths.images),
    })
    return EXIT_OK


COMMANDS = {
    "build": cmd_build,
    "query": cmd_query,
    "eval": cmd_eval,
    "inspect": cmd_inspect,
    "fixture": cmd_fixture,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as e:
        sys.stderr.write(f"error: {e}\n")
        return EXIT_USER
    configure_logging("DEBUG" if args.verbose else settings.LOG_LEVEL)
    try:
        return COMMANDS[args.command](args)
    except ProviderError as e:
        log.error("%s", e)
        return EXIT_PROVIDER
    except HyperRagError as e:
        log.error("%s", e)
        return EXIT_USER
    except ValueError as e:
        # pydantic validation of flag values
        log.error("%s", e)
        return EXIT_USER


if __name__ == "__main__":
    raise SystemExit(main())
