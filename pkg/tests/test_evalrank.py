"""Scoring and ranking metrics checked against brute-force oracles."""

from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from srcsel.evalrank import (
    Ranking,
    best_rank_rho,
    corpus_spans,
    decode_spans,
    encode_spans,
    micro_f1,
    ndcg,
    rrf,
    rrf_scores,
    token_accuracy,
)

# ---------------------------------------------------------------- oracles


def oracle_micro_f1(gold: set, pred: set) -> tuple[float, float, float]:
    """Set-arithmetic definition, written independently of the module."""
    tp = len(gold & pred)
    fp = len(pred - gold)
    fn = len(gold - pred)
    if not gold and not pred:
        return 100.0, 100.0, 100.0
    p = 100.0 * tp / (tp + fp) if tp + fp else 0.0
    r = 100.0 * tp / (tp + fn) if tp + fn else 0.0
    f = 2 * p * r / (p + r) if p + r else 0.0
    return p, r, f


def oracle_ndcg(order: list[str], relevance: dict[str, float]) -> float:
    def dcg(seq):
        return sum(relevance[s] / math.log2(i + 2) for i, s in enumerate(seq))

    ideal = sorted(order, key=lambda s: -relevance[s])
    top = dcg(ideal)
    return 1.0 if top == 0 else dcg(order) / top


# ------------------------------------------------------------- span codec


def test_decode_simple_span():
    assert decode_spans(["B-PER", "I-PER", "O"]) == {(0, 0, 1, "PER")}


def test_decode_adjacent_b_tags():
    assert decode_spans(["B-PER", "B-PER"]) == {(0, 0, 0, "PER"), (0, 1, 1, "PER")}


def test_decode_type_change_splits_span():
    assert decode_spans(["B-PER", "I-LOC"]) == {(0, 0, 0, "PER"), (0, 1, 1, "LOC")}


def test_decode_orphan_i_starts_span():
    assert decode_spans(["O", "I-LOC"]) == {(0, 1, 1, "LOC")}


def test_decode_sentence_index():
    assert decode_spans(["B-PER"], sentence_index=7) == {(7, 0, 0, "PER")}


def test_decode_rejects_bad_tag():
    with pytest.raises(ValueError):
        decode_spans(["B-PER", "X"])


def test_encode_spans_round_trip():
    labels = ["B-PER", "I-PER", "O", "B-LOC"]
    spans = decode_spans(labels)
    assert encode_spans(spans, len(labels)) == labels


def test_corpus_spans_collects_all_sentences():
    spans = corpus_spans([["B-PER"], ["O", "B-LOC"]])
    assert spans == {(0, 0, 0, "PER"), (1, 1, 1, "LOC")}


_span_labels = st.lists(
    st.sampled_from(["O", "B-PER", "I-PER", "B-LOC", "I-LOC"]), min_size=1, max_size=12
)


@given(_span_labels)
def test_decode_encode_identity(labels):
    spans = decode_spans(labels)
    back = encode_spans(spans, len(labels))
    assert decode_spans(back) == spans


# --------------------------------------------------------------- micro F1


def test_micro_f1_known_example():
    gold = {(0, 1, 2, "PER")}
    pred = {(0, 1, 2, "PER"), (0, 4, 5, "LOC")}
    score = micro_f1(gold, pred)
    assert score.precision == pytest.approx(50.0)
    assert score.recall == pytest.approx(100.0)
    assert score.f1 == pytest.approx(200.0 / 3.0)


def test_micro_f1_perfect_and_empty():
    spans = {(0, 0, 0, "PER")}
    assert micro_f1(spans, spans).f1 == pytest.approx(100.0)
    assert micro_f1(set(), set()).f1 == pytest.approx(100.0)


def test_micro_f1_no_overlap_is_zero():
    assert micro_f1({(0, 0, 0, "PER")}, {(0, 1, 1, "PER")}).f1 == 0.0


def test_micro_f1_against_oracle_random(rng):
    universe = [(s, i, i + l, t) for s in range(3) for i in range(5) for l in range(2)
                for t in ("PER", "LOC")]
    for _ in range(300):
        gold = {universe[i] for i in rng.choice(len(universe), size=rng.integers(0, 8))}
        pred = {universe[i] for i in rng.choice(len(universe), size=rng.integers(0, 8))}
        score = micro_f1(gold, pred)
        p, r, f = oracle_micro_f1(gold, pred)
        assert score.precision == pytest.approx(p, abs=1e-9)
        assert score.recall == pytest.approx(r, abs=1e-9)
        assert score.f1 == pytest.approx(f, abs=1e-9)


@given(_span_labels, _span_labels)
def test_micro_f1_precision_recall_swap(gold_labels, pred_labels):
    n = min(len(gold_labels), len(pred_labels))
    gold = decode_spans(gold_labels[:n])
    pred = decode_spans(pred_labels[:n])
    a, b = micro_f1(gold, pred), micro_f1(pred, gold)
    assert a.precision == pytest.approx(b.recall)
    assert a.recall == pytest.approx(b.precision)
    assert a.f1 == pytest.approx(b.f1)


# ---------------------------------------------------------- token accuracy


def test_token_accuracy_values():
    assert token_accuracy(["A", "B"], ["A", "B"]) == pytest.approx(100.0)
    assert token_accuracy(["A", "B"], ["A", "C"]) == pytest.approx(50.0)
    assert token_accuracy(list("ABCDEFGHIJ"), list("ABCDEFGXYZ")) == pytest.approx(70.0)


def test_token_accuracy_length_mismatch_raises():
    with pytest.raises(ValueError):
        token_accuracy(["A"], ["A", "B"])


# ------------------------------------------------------------- rank place


def test_best_rank_examples():
    r = Ranking(target_id="t", measure="m", sources=("b", "a", "c"))
    assert best_rank_rho(r, {"a": 80.0, "b": 70.0, "c": 60.0}) == 2
    agree = Ranking(target_id="t", measure="m", sources=("a", "b", "c"))
    assert best_rank_rho(agree, {"a": 80.0, "b": 70.0, "c": 60.0}) == 1


def test_best_rank_all_equal_is_one():
    r = Ranking(target_id="t", measure="m", sources=("b", "a"))
    assert best_rank_rho(r, {"a": 50.0, "b": 50.0}) == 1


def test_best_rank_tie_counts_earliest_best():
    # two observed bests: the one appearing earliest in the ranking counts
    r = Ranking(target_id="t", measure="m", sources=("c", "a", "b"))
    assert best_rank_rho(r, {"a": 80.0, "b": 80.0, "c": 10.0}) == 2


def test_best_rank_missing_source_raises():
    r = Ranking(target_id="t", measure="m", sources=("a", "b"))
    with pytest.raises(ValueError):
        best_rank_rho(r, {"a": 10.0})


# ------------------------------------------------------------------- NDCG


def _ranking(*sources):
    return Ranking(target_id="t", measure="m", sources=tuple(sources))


def test_ndcg_known_values():
    rel = {"a": 3.0, "b": 1.0, "c": 2.0}
    assert ndcg(_ranking("a", "b", "c"), rel) == pytest.approx(0.9725, abs=1e-3)
    assert ndcg(_ranking("a", "c", "b"), rel) == pytest.approx(1.0)
    assert ndcg(_ranking("b", "a"), {"a": 1.0, "b": 0.0}) == pytest.approx(0.6309, abs=1e-3)


def test_ndcg_all_zero_relevance_is_one():
    assert ndcg(_ranking("a", "b"), {"a": 0.0, "b": 0.0}) == pytest.approx(1.0)


def test_ndcg_negative_relevance_raises():
    with pytest.raises(ValueError):
        ndcg(_ranking("a"), {"a": -1.0})


def test_ndcg_against_oracle_random(rng):
    for _ in range(300):
        n = int(rng.integers(1, 8))
        ids = [f"s{i}" for i in range(n)]
        rel = {s: float(rng.uniform(0, 10)) for s in ids}
        order = list(rng.permutation(ids))
        got = ndcg(_ranking(*order), rel)
        assert got == pytest.approx(oracle_ndcg(order, rel), abs=1e-9)
        assert 0.0 <= got <= 1.0 + 1e-12


@given(st.integers(2, 6), st.randoms(use_true_random=False))
def test_ndcg_sorted_is_optimal(n, rnd):
    ids = [f"s{i}" for i in range(n)]
    rel = {s: rnd.uniform(0, 5) for s in ids}
    best = sorted(ids, key=lambda s: -rel[s])
    shuffled = ids[:]
    rnd.shuffle(shuffled)
    assert ndcg(_ranking(*best), rel) == pytest.approx(1.0)
    assert ndcg(_ranking(*shuffled), rel) <= 1.0 + 1e-12


@given(st.integers(2, 6))
def test_ndcg_relabel_invariance(n):
    ids = [f"s{i}" for i in range(n)]
    rel = {s: float(i) for i, s in enumerate(ids)}
    renamed = {f"x{s}": v for s, v in rel.items()}
    a = ndcg(_ranking(*ids), rel)
    b = ndcg(_ranking(*[f"x{s}" for s in ids]), renamed)
    assert a == pytest.approx(b)


# -------------------------------------------------------------------- RRF


def test_rrf_single_ranking_unchanged():
    r = _ranking("b", "a", "c")
    assert rrf([r]).sources == r.sources


def test_rrf_scores_formula():
    r = _ranking("a", "b")
    scores = rrf_scores([r], k=60)
    assert scores["a"] == pytest.approx(1.0 / 61.0)
    assert scores["b"] == pytest.approx(1.0 / 62.0)


def test_rrf_opposed_pair_breaks_ties_lexicographically():
    r1 = _ranking("a", "b")
    r2 = _ranking("b", "a")
    fused = rrf([r1, r2])
    assert fused.sources == ("a", "b")


def test_rrf_dominant_source_wins():
    rankings = [_ranking("a", "b", "c"), _ranking("a", "c", "b"), _ranking("b", "a", "c")]
    assert rrf(rankings).sources[0] == "a"


def test_rrf_mismatched_source_sets_raise():
    with pytest.raises(ValueError):
        rrf([_ranking("a", "b"), _ranking("a", "c")])


@settings(max_examples=30)
@given(st.permutations(list("abcde")), st.permutations(list("abcde")))
def test_rrf_input_order_invariance(p1, p2):
    r1, r2 = _ranking(*p1), _ranking(*p2)
    assert rrf([r1, r2]).sources == rrf([r2, r1]).sources
