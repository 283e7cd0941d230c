"""Scoring and ranking-quality metrics.

Span-level micro F1 and token accuracy score tagger output; best-rank
position (rho), NDCG, and reciprocal rank fusion score how well a
similarity measure ranks candidate source datasets.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

# A span is (sentence index, start token, end token inclusive, type).
Span = tuple[int, int, int, str]


@dataclass(frozen=True)
class Score:
    """Percentages in [0, 100]. For token-accuracy tasks all three fields
    carry the accuracy value."""

    precision: float
    recall: float
    f1: float
    metric: str = "span"


@dataclass(frozen=True)
class Ranking:
    """Candidate sources for one target, closest first."""

    target_id: str
    measure: str
    sources: tuple[str, ...]

    def __post_init__(self):
        if len(set(self.sources)) != len(self.sources):
            raise ValueError(f"ranking for {self.target_id} contains duplicate sources")


def _check_bio_tag(tag: str, position: int) -> None:
    if tag == "O" or ((tag.startswith("B-") or tag.startswith("I-")) and len(tag) > 2):
        return
    raise ValueError(f"invalid BIO tag {tag!r} at position {position}")


def decode_spans(labels: list[str] | tuple[str, ...], sentence_index: int = 0) -> set[Span]:
    """Decode a BIO label sequence into typed spans.

    Maximal B-I runs of one type become spans. An I- tag that does not
    continue a span of the same type opens a new span (same repair rule
    the corpus parser applies).
    """
    spans: set[Span] = set()
    start = -1
    current = ""
    for i, tag in enumerate(labels):
        _check_bio_tag(tag, i)
        if tag.startswith("B-"):
            if current:
                spans.add((sentence_index, start, i - 1, current))
            current, start = tag[2:], i
        elif tag.startswith("I-"):
            if tag[2:] != current:
                # orphan or type-switching I-: treat as span start
                if current:
                    spans.add((sentence_index, start, i - 1, current))
                current, start = tag[2:], i
        else:
            if current:
                spans.add((sentence_index, start, i - 1, current))
            current = ""
    if current:
        spans.add((sentence_index, start, len(labels) - 1, current))
    return spans


def encode_spans(spans: set[Span], length: int, sentence_index: int = 0) -> list[str]:
    """Encode non-overlapping spans for one sentence back into BIO labels."""
    labels = ["O"] * length
    for sent, start, end, kind in sorted(spans):
        if sent != sentence_index:
            continue
        if not (0 <= start <= end < length):
            raise ValueError(f"span ({start}, {end}) out of bounds for length {length}")
        if any(labels[i] != "O" for i in range(start, end + 1)):
            raise ValueError(f"span ({start}, {end}, {kind}) overlaps another span")
        labels[start] = f"B-{kind}"
        for i in range(start + 1, end + 1):
            labels[i] = f"I-{kind}"
    return labels


def corpus_spans(label_seqs: list[list[str]] | list[tuple[str, ...]]) -> set[Span]:
    """Decode every sentence of a corpus into one span set."""
    spans: set[Span] = set()
    for idx, labels in enumerate(label_seqs):
        spans |= decode_spans(labels, sentence_index=idx)
    return spans


def micro_f1(gold: set[Span], pred: set[Span]) -> Score:
    """Exact-match span precision/recall/F1 in percent.

    Both sets empty counts as perfect vacuous agreement (100/100/100);
    empty predictions against non-empty gold give precision 0.
    """
    if not gold and not pred:
        return Score(100.0, 100.0, 100.0)
    matched = len(gold & pred)
    precision = 100.0 * matched / len(pred) if pred else 0.0
    recall = 100.0 * matched / len(gold) if gold else 0.0
    f1 = 0.0 if precision + recall == 0 else 2 * precision * recall / (precision + recall)
    return Score(precision, recall, f1)


def token_accuracy(gold: list[str], pred: list[str]) -> float:
    """Percent of positions where the tags agree."""
    if len(gold) != len(pred):
        raise ValueError(f"tag sequences differ in length: {len(gold)} vs {len(pred)}")
    if not gold:
        raise ValueError("cannot score empty tag sequences")
    return 100.0 * sum(g == p for g, p in zip(gold, pred)) / len(gold)


def best_rank_rho(ranking: Ranking, observed: dict[str, float]) -> int:
    """1-based position of the best-performing source in the ranking.

    Ties in observed value resolve to the best (minimal) position.
    """
    missing = [s for s in ranking.sources if s not in observed]
    if missing:
        raise ValueError(f"no observed value for sources: {', '.join(sorted(missing))}")
    if not ranking.sources:
        raise ValueError("cannot rank an empty source list")
    best = max(observed[s] for s in ranking.sources)
    for pos, source in enumerate(ranking.sources, start=1):
        if observed[source] == best:
            return pos
    raise AssertionError("unreachable")


def ndcg(ranking: Ranking, relevance: dict[str, float]) -> float:
    """Normalized discounted cumulative gain of the ranking, in [0, 1].

    DCG = sum over positions i of rel(i) / log2(i + 1); normalized by the
    DCG of the relevance-descending ordering. All-zero relevance is
    defined as 1.0.
    """
    missing = [s for s in ranking.sources if s not in relevance]
    if missing:
        raise ValueError(f"no relevance value for sources: {', '.join(sorted(missing))}")
    values = [relevance[s] for s in ranking.sources]
    if any(v < 0 for v in values):
        raise ValueError("relevance values must be non-negative")
    dcg = sum(v / math.log2(i + 1) for i, v in enumerate(values, start=1))
    ideal = sum(v / math.log2(i + 1) for i, v in enumerate(sorted(values, reverse=True), start=1))
    if ideal == 0:
        return 1.0
    return dcg / ideal


def rrf_scores(rankings: list[Ranking], k: int = 60) -> dict[str, float]:
    """Reciprocal-rank-fusion score per source: sum of 1/(k + rank)."""
    if not rankings:
        raise ValueError("rrf needs at least one ranking")
    base = set(rankings[0].sources)
    for r in rankings[1:]:
        if set(r.sources) != base:
            raise ValueError(
                f"rankings cover different sources: {sorted(base)} vs {sorted(r.sources)}"
            )
    scores = {s: 0.0 for s in base}
    for r in rankings:
        for pos, source in enumerate(r.sources, start=1):
            scores[source] += 1.0 / (k + pos)
    return scores


def rrf(rankings: list[Ranking], k: int = 60) -> Ranking:
    """Fuse rankings over the same sources; ties order lexicographically."""
    scores = rrf_scores(rankings, k=k)
    fused = tuple(sorted(scores, key=lambda s: (-scores[s], s)))
    return Ranking(
        target_id=rankings[0].target_id,
        measure="+".join(r.measure for r in rankings),
        sources=fused,
    )
