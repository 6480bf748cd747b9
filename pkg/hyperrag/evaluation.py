# hyperrag/evaluation.py
"""
Evaluation harness: word-level F1, retrieval similarity (RS, embedding
cosine of answer vs golden answer), judge-based generation score (GE) and
the extractor-subset × k ablation grid.
"""
from __future__ import annotations

import asyncio
import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

from pydantic import ValidationError

from .config import AppConfig, Mode
from .errors import ConfigError, CorpusError, EmptyInputError, ParseFailure
from .generation import answer
from .knowledge import KnowledgeBase
from .models import ImageBlob
from .prompting import JUDGE, REPAIR, PromptLibrary
from .providers import Providers
from .retrieval import Retriever, criteria_for
from .schemas import AblationCell, AblationGrid, CaseResult, EvalCase, EvalReport, Query
from .utils import set_f1, token_set

log = logging.getLogger("evaluation")

JUDGE_ASPECTS = ("comprehensiveness", "correctness", "relevance")


def f1_score(prediction: str, gold: str) -> float:
    """Set-of-words F1 after lowercasing and stripping punctuation."""
    return set_f1(token_set(prediction), token_set(gold))


async def retrieval_similarity(prediction: str, gold: str, providers: Providers) -> float:
    if not prediction.strip() or not gold.strip():
        return 0.0
    a = await providers.embed_text(prediction)
    b = await providers.embed_text(gold)
    return min(1.0, max(0.0, float(a @ b)))


# ───────────────────────── judge ─────────────────────────

@dataclass
class JudgeOutcome:
    score: Optional[float]
    repaired: bool = False
    warnings: List[str] = field(default_factory=list)

    @property
    def valid(self) -> bool:
        return self.score is not None


def _is_number(v: Any) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def parse_judgement(raw: str) -> Tuple[float, List[str]]:
    """
    Accepts {"score": x} or any of the aspect keys; values are clamped into
    [0, 1] with a warning each. Mean of what is present.
    """
    text = (raw or "").strip()
    start, end = text.find("{"), text.rfind("}")
    if start < 0 or end <= start:
        raise ParseFailure("no JSON object in judge output")
    try:
        data = json.loads(text[start:end + 1])
    except json.JSONDecodeError as e:
        raise ParseFailure(f"judge output is not JSON: {e}") from e
    if not isinstance(data, dict):
        raise ParseFailure("judge output must be an object")
    keys = [k for k in JUDGE_ASPECTS if k in data] or (["score"] if "score" in data else [])
    if not keys:
        raise ParseFailure("judge output has no score")
    warnings: List[str] = []
    values: List[float] = []
    for key in keys:
        v = data[key]
        if not _is_number(v):
            raise ParseFailure(f"judge {key} is not numeric: {v!r}")
        v = float(v)
        if v < 0.0 or v > 1.0:
            clamped = min(1.0, max(0.0, v))
            warnings.append(f"judge {key} {v} clamped to {clamped}")
            v = clamped
        values.append(v)
    return sum(values) / len(values), warnings


async def generation_eval(
    question: str, prediction: str, gold: str, providers: Providers, prompts: PromptLibrary
) -> JudgeOutcome:
    prompt = prompts.render(JUDGE, question=question)
    raw = await providers.chat(prompt, [prediction, gold], purpose="judge")
    try:
        score, warnings = parse_judgement(raw)
        for w in warnings:
            log.warning(w)
        return JudgeOutcome(score=score, warnings=warnings)
    except ParseFailure as e:
        log.warning("judge output unusable (%s); asking once more", e)
    repair = prompts.render(REPAIR, previous=raw[:2000], keys=JUDGE_ASPECTS) + "\n\n" + prompt
    raw = await providers.chat(repair, [prediction, gold], purpose="judge")
    try:
        score, warnings = parse_judgement(raw)
        for w in warnings:
            log.warning(w)
        return JudgeOutcome(score=score, repaired=True, warnings=warnings)
    except ParseFailure as e:
        log.warning("judge output invalid after repair: %s", e)
        return JudgeOutcome(score=None, repaired=True, warnings=[f"invalid judgement: {e}"])


# ───────────────────────── cases ─────────────────────────

def load_cases(path: str | os.PathLike) -> List[EvalCase]:
    """JSONL, one case per line; query_image paths resolve against the file's directory."""
    p = Path(path)
    try:
        lines = p.read_text(encoding="utf-8").splitlines()
    except OSError as e:
        raise CorpusError(f"cannot read cases file {p}: {e}") from e
    cases: List[EvalCase] = []
    seen = set()
    for n, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            case = EvalCase.model_validate_json(line)
        except ValidationError as e:
            raise CorpusError(f"{p.name} line {n}: {e}") from e
        if case.id in seen:
            raise CorpusError(f"{p.name} line {n}: duplicate case id {case.id}")
        seen.add(case.id)
        if case.query_image and not Path(case.query_image).is_absolute():
            case.query_image = str(p.resolve().parent / case.query_image)
        cases.append(case)
    return cases


def _mean(values: Sequence[float]) -> float:
    return sum(values) / len(values) if values else 0.0


async def run_eval(
    cases: Sequence[EvalCase],
    kb: KnowledgeBase,
    providers: Providers,
    config: AppConfig,
    mode: Mode = "nico",
    k: Optional[int] = None,
    lambdas: Optional[Sequence[int]] = None,
    prompts: Optional[PromptLibrary] = None,
) -> EvalReport:
    """
    Answer and score every case. ``lambdas`` restricts the image criteria to
    the ones those extractors feed; the knowledge base itself is untouched.
    """
    prompts = prompts or PromptLibrary(config.paths.prompts_dir)
    k = k or config.retrieval.k
    lams = sorted(set(lambdas)) if lambdas is not None else list(kb.lambdas)
    missing = [lam for lam in lams if lam not in kb.lambdas]
    if missing:
        raise ConfigError(f"knowledge base was built without extractors {missing}")
    criteria = criteria_for(lams, config.retrieval.criteria)
    retriever = Retriever(kb, providers, config.retrieval, config.construction)
    sem = asyncio.Semaphore(config.construction.max_concurrency)

    async def one(case: EvalCase) -> CaseResult:
        async with sem:
            image = ImageBlob.from_path(case.query_image) if case.query_image else None
            query = Query(text=case.question, image=case.query_image, k=k, mode=mode, criteria=criteria)
            payload = await answer(query, kb, providers, config, image=image, prompts=prompts,
                                   criteria=criteria, retriever=retriever)
            try:
                rs = await retrieval_similarity(payload.answer, case.golden_answer, providers)
            except EmptyInputError:
                rs = 0.0
            judged = await generation_eval(case.question, payload.answer, case.golden_answer, providers, prompts)
            return CaseResult(
                id=case.id,
                prediction=payload.answer,
                f1=f1_score(payload.answer, case.golden_answer),
                rs=rs,
                ge=judged.score,
                warnings=judged.warnings,
            )

    results = await asyncio.gather(*(one(c) for c in cases))
    results = sorted(results, key=lambda r: r.id)
    valid_ge = [r.ge for r in results if r.ge is not None]
    report = EvalReport(
        mode=mode,
        lambdas=lams,
        k=k,
        criteria=criteria,
        cases=results,
        mean_f1=_mean([r.f1 for r in results]),
        mean_rs=_mean([r.rs for r in results]),
        mean_ge=_mean(valid_ge),
        invalid_judgements=len(results) - len(valid_ge),
    )
    log.info("evaluated %d cases (mode %s, λ %s, k %d): F1 %.3f RS %.3f GE %.3f",
             len(results), mode, lams, k, report.mean_f1, report.mean_rs, report.mean_ge)
    return report


async def run_ablation(
    cases: Sequence[EvalCase],
    kb: KnowledgeBase,
    providers: Providers,
    config: AppConfig,
    mode: Mode = "nico",
    lambda_subsets: Optional[Sequence[Sequence[int]]] = None,
    k_values: Optional[Sequence[int]] = None,
    prompts: Optional[PromptLibrary] = None,
) -> AblationGrid:
    """One report per (extractor subset, k) cell, subsets outermost."""
    subsets = [sorted(set(s)) for s in (lambda_subsets or config.evaluation.ablation_subsets)]
    ks = list(k_values or config.evaluation.k_values)
    prompts = prompts or PromptLibrary(config.paths.prompts_dir)
    grid = AblationGrid(mode=mode)
    for subset in subsets:
        for k in ks:
            report = await run_eval(cases, kb, providers, config, mode=mode, k=k, lambdas=subset, prompts=prompts)
            grid.cells.append(AblationCell(lambdas=subset, k=k, report=report))
    return grid
