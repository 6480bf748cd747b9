import random

import pytest

from hyperrag.errors import EmptyRankingsError, KbNotLoadedError
from hyperrag.models import DescriptorSet, ImageBlob
from hyperrag.retrieval import (
    QueryImage,
    Retriever,
    color_score,
    competition_ranks,
    criteria_for,
    criterion_scores,
    fuse,
    lambdas_for,
    ocr_score,
    top_hits,
)
from hyperrag.schemas import Query
from hyperrag.vectors import ScoredHit


def ranking(*pairs):
    return [ScoredHit(i, s) for i, s in pairs]


def test_fuse_rank_one_everywhere_beats_rank_two_everywhere():
    rankings = {c: ranking(("a", 0.9), ("b", 0.8)) for c in ("i", "ii", "iii", "iv", "v")}
    fused = fuse(rankings, 2)
    assert [f.id for f in fused] == ["a", "b"]
    assert fused[0].fused == pytest.approx(5 / 61)
    assert fused[1].fused == pytest.approx(5 / 62)


def test_fuse_breadth_beats_single_first_place():
    rankings = {
        "i": ranking(("solo", 0.99), ("wide", 0.5)),
        "ii": ranking(("x", 0.9), ("wide", 0.8)),
        "iii": ranking(("y", 0.9), ("wide", 0.8)),
    }
    fused = {f.id: f.fused for f in fuse(rankings, 4)}
    assert fused["solo"] == pytest.approx(1 / 61)
    assert fused["wide"] == pytest.approx(3 / 62)
    assert fused["solo"] < fused["wide"]


def oracle(rankings, k, constant=60):
    totals = {}
    for hits in rankings.values():
        for h in hits:
            rank = 1 + sum(1 for o in hits if o.score > h.score)
            if rank <= k:
                totals[h.id] = totals.get(h.id, 0.0) + 1.0 / (constant + rank)
    return totals


def test_fuse_matches_oracle():
    rng = random.Random(9)
    docs = [f"d{i:02d}" for i in range(20)]
    for _ in range(25):
        rankings = {}
        for crit in ("i", "iii", "v"):
            scored = [(d, round(rng.random(), 3)) for d in docs]
            scored.sort(key=lambda p: (-p[1], p[0]))
            rankings[crit] = ranking(*scored)
        everything = fuse(rankings, len(docs))
        assert {f.id: f.fused for f in everything} == pytest.approx(oracle(rankings, len(docs)), abs=1e-12)
        values = [f.fused for f in everything]
        assert values == sorted(values, reverse=True)

        expected = oracle(rankings, 5)
        best = sorted(expected, key=lambda d: (-round(expected[d] / 1e-9), d))[:5]
        top5 = fuse(rankings, 5)
        assert [f.id for f in top5] == best
        assert [f.fused for f in top5] == pytest.approx([expected[d] for d in best], abs=1e-12)


def test_fuse_is_permutation_invariant():
    rankings = {
        "i": ranking(("a", 0.9), ("b", 0.7), ("c", 0.1)),
        "iv": ranking(("c", 1.0), ("a", 0.2)),
        "v": ranking(("b", 0.5), ("c", 0.5)),
    }
    reordered = {c: rankings[c] for c in ("v", "i", "iv")}
    one = [(f.id, f.fused, f.ranks) for f in fuse(rankings, 3)]
    two = [(f.id, f.fused, f.ranks) for f in fuse(reordered, 3)]
    assert one == two


def test_fuse_empty():
    with pytest.raises(EmptyRankingsError):
        fuse({}, 3)
    with pytest.raises(EmptyRankingsError):
        fuse({"i": []}, 3)


def test_competition_ranks_share_ties():
    ranks = competition_ranks(ranking(("a", 1.0), ("b", 1.0), ("c", 0.5)))
    assert ranks == {"a": 1, "b": 1, "c": 3}


def test_top_hits_keeps_ties_at_cutoff():
    scores = {"a": 0.9, "b": 0.5, "c": 0.5, "d": 0.1}
    assert [h.id for h in top_hits(scores, 2)] == ["a", "b"]
    assert [h.id for h in top_hits(scores, 2, keep_ties=True)] == ["a", "b", "c"]


def test_criterion_formulas():
    assert color_score((0, 0, 0), (255, 255, 255)) == pytest.approx(0.0)
    assert color_score((10, 20, 30), (10, 20, 30)) == 1.0
    assert ocr_score(["a", "b"], ["a", "b", "c"]) == pytest.approx(0.8)
    assert ocr_score([], []) == 1.0
    assert ocr_score(["a"], []) == 0.0


def test_criteria_follow_lambdas():
    assert criteria_for([1]) == ["i", "iii"]
    assert criteria_for([1, 2, 3, 4]) == ["i", "ii", "iii", "iv", "v"]
    assert criteria_for([1, 2, 3, 4], ["ii", "v"]) == ["ii", "v"]


def test_query_image_extractors_follow_criteria():
    assert lambdas_for(["i"], [1, 2, 3, 4]) == []
    assert lambdas_for(["i", "iii"], [1, 2, 3, 4]) == [1]
    assert lambdas_for(["ii", "iv", "v"], [1, 2, 3, 4]) == [2, 3, 4]
    assert lambdas_for(["ii", "v"], [1, 3]) == [3]


def test_missing_descriptor_is_reported(fixture_kb):
    candidate = fixture_kb.images[sorted(fixture_kb.images)[0]]
    query = QueryImage(descriptors=DescriptorSet(color=candidate.descriptors.color))
    missing = {}
    scores = criterion_scores(query, candidate, fixture_kb, ["iii", "v"], missing)
    assert scores == {"iii": 1.0}
    assert missing == {"v": [candidate.id]}


def make_retriever(kb, providers, config):
    return Retriever(kb, providers, config.retrieval, config.construction)


async def test_self_retrieval(fixture_corpus, fixture_kb, fixture_config, providers):
    retriever = make_retriever(fixture_kb, providers, fixture_config)
    query = Query(text="what product is this?", k=8)
    for path in fixture_corpus.images:
        blob = ImageBlob.from_path(path)
        result = await retriever.retrieve(query, image=blob)
        top = result.images[0]
        assert top.id == blob.digest, path.name
        assert top.fused == pytest.approx(5 / 61)
        assert top.ranks == {c: 1 for c in ("i", "ii", "iii", "iv", "v")}
        assert all(s == pytest.approx(1.0, abs=1e-5) for s in top.scores.values())
        assert result.skipped == {}
    assert retriever.counters["retrievals"] == len(fixture_corpus.images)


async def test_criteria_subset(fixture_corpus, fixture_kb, fixture_config, providers):
    retriever = make_retriever(fixture_kb, providers, fixture_config)
    blob = ImageBlob.from_path(fixture_corpus.images[3])
    result = await retriever.retrieve(Query(text="which flavor?", k=4), image=blob, criteria=["iii"])
    assert result.criteria == ["iii"]
    assert result.images[0].id == blob.digest
    assert result.images[0].fused == pytest.approx(1 / 61)
    assert len(result.images) <= 4
    assert providers.stats.calls["ocr"] == providers.stats.calls["caption"] == 0
    assert providers.stats.calls["embed_image"] == 0


async def test_text_only_query(fixture_kb, fixture_config, providers):
    retriever = make_retriever(fixture_kb, providers, fixture_config)
    result = await retriever.retrieve(Query(text="Which flavors does Zyn sell?", k=5))
    assert result.images == []
    assert 0 < len(result.chunks) <= 5
    assert len(result.hyperedges) <= 5
    assert len(result.entities) <= fixture_config.retrieval.neighbor_cap
    scores = [c.score for c in result.chunks]
    assert scores == sorted(scores, reverse=True)
    direct = [e for e in result.entities if e.via == ["entity-embedding"]]
    assert len(direct) == 5


async def test_standard_mode_ranks_images_by_caption(fixture_kb, fixture_config, providers):
    retriever = make_retriever(fixture_kb, providers, fixture_config)
    result = await retriever.retrieve(Query(text="a teal can of mint pouches", k=3, mode="standard"))
    assert len(result.images) == 3
    assert result.criteria == ["ii"]
    assert all(m.via == ["caption-text"] for m in result.images)


async def test_k_larger_than_corpus(fixture_corpus, fixture_kb, fixture_config, providers):
    retriever = make_retriever(fixture_kb, providers, fixture_config)
    blob = ImageBlob.from_path(fixture_corpus.images[0])
    result = await retriever.retrieve(Query(text="anything", k=500), image=blob)
    assert len(result.images) == len(fixture_kb.images)
    assert len(result.chunks) == len(fixture_kb.chunks)


async def test_retrieval_is_deterministic(fixture_corpus, fixture_kb, fixture_config, providers):
    retriever = make_retriever(fixture_kb, providers, fixture_config)
    blob = ImageBlob.from_path(fixture_corpus.images[11])
    q = Query(text="What brand is this product?", k=6)
    a = await retriever.retrieve(q, image=blob)
    b = await retriever.retrieve(q, image=blob)
    assert a.model_dump() == b.model_dump()


async def test_no_knowledge_base(mock_providers):
    with pytest.raises(KbNotLoadedError):
        await Retriever(None, mock_providers).retrieve(Query(text="hello"))
