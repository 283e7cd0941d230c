"""Similarity and distance measures between a source and a target dataset.

Corpus-based measures work from the datasets alone; the model-based
measures (text embedding, task embedding, model similarity) need trained
single-task models and are delegated to a context object supplied by the
model-similarity module.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Protocol, Sequence

import numpy as np

from .corpus import Dataset, TermDistribution, annotated_vocabulary, term_distribution, vocabulary
from .errors import ConfigError, DependencyError, ParseError
from .ngram import KneserNeyLM, perplexity

VOCAB_OVERLAP = "vocab_overlap"
ANNOT_OVERLAP = "annot_overlap"
DATASET_SIZE = "dataset_size"
TERM_DIST_JSD = "term_dist_jsd"
LM_PERPLEXITY = "lm_perplexity"
TEXT_EMB = "text_emb"
TASK_EMB = "task_emb"
MODEL_SIM = "model_sim"

CORPUS_MEASURES = (VOCAB_OVERLAP, ANNOT_OVERLAP, DATASET_SIZE, TERM_DIST_JSD, LM_PERPLEXITY)
MODEL_MEASURES = (TEXT_EMB, TASK_EMB, MODEL_SIM)
ALL_MEASURES = CORPUS_MEASURES + MODEL_MEASURES

HIGHER_IS_CLOSER = "higher_is_closer"
LOWER_IS_CLOSER = "lower_is_closer"

# Task-embedding scores come from reciprocal rank fusion, which rewards
# top ranks, so that measure reads higher-is-closer unlike the other
# model-based distances.
POLARITY = {
    VOCAB_OVERLAP: HIGHER_IS_CLOSER,
    ANNOT_OVERLAP: HIGHER_IS_CLOSER,
    DATASET_SIZE: HIGHER_IS_CLOSER,
    TERM_DIST_JSD: LOWER_IS_CLOSER,
    LM_PERPLEXITY: LOWER_IS_CLOSER,
    TEXT_EMB: LOWER_IS_CLOSER,
    TASK_EMB: HIGHER_IS_CLOSER,
    MODEL_SIM: LOWER_IS_CLOSER,
}


@dataclass(frozen=True)
class DistanceRecord:
    measure: str
    source_id: str
    target_id: str
    value: float
    polarity: str

    def __post_init__(self):
        if not math.isfinite(self.value):
            raise ValueError(
                f"{self.measure}({self.source_id} -> {self.target_id}): non-finite value"
            )
        if self.polarity not in (HIGHER_IS_CLOSER, LOWER_IS_CLOSER):
            raise ValueError(f"unknown polarity {self.polarity!r}")


def vocab_overlap(source: Dataset, target: Dataset) -> float:
    """Percent of the target train vocabulary covered by the source
    train vocabulary. Asymmetric."""
    v_t = vocabulary(target)
    if not v_t:
        raise ValueError(f"target {target.id} has an empty vocabulary")
    v_s = vocabulary(source)
    return 100.0 * len(v_t & v_s) / len(v_t)


def annotation_overlap(source: Dataset, target: Dataset) -> float:
    """Like vocab_overlap but restricted to annotated (non-O) tokens."""
    a_t = annotated_vocabulary(target)
    if not a_t:
        raise ValueError(f"target {target.id} has no annotated tokens")
    a_s = annotated_vocabulary(source)
    return 100.0 * len(a_t & a_s) / len(a_t)


def dataset_size(source: Dataset) -> int:
    """Number of train sentences; larger sources rank closer."""
    return len(source.train)


def jsd(p: TermDistribution, q: TermDistribution) -> float:
    """Base-2 Jensen-Shannon divergence over the union support, in [0,1]."""

    def kl_to_mid(d: TermDistribution) -> float:
        total = 0.0
        for term, prob in d.items():
            if prob > 0:
                mid = 0.5 * (p.get(term, 0.0) + q.get(term, 0.0))
                total += prob * math.log2(prob / mid)
        return total

    return max(0.0, 0.5 * kl_to_mid(p) + 0.5 * kl_to_mid(q))


def train_kn_lm(source: Dataset, order: int = 5) -> KneserNeyLM:
    """5-gram interpolated Kneser-Ney model over the source train split."""
    texts = [[t.text for t in sent] for sent in source.train]
    if not texts:
        raise ValueError(f"dataset {source.id}: cannot train a language model on empty train")
    return KneserNeyLM.train(texts, order=order)


def lm_perplexity(lm: KneserNeyLM, target: Dataset, split: str = "train") -> float:
    """Perplexity of the source-trained model on the target text."""
    texts = [[t.text for t in sent] for sent in target.split(split)]
    if not texts:
        raise ValueError(f"dataset {target.id}: {split} split is empty")
    return perplexity(lm, texts)


def cosine_distance(u: np.ndarray | Sequence[float], v: np.ndarray | Sequence[float]) -> float:
    """1 minus cosine similarity, in [0, 2]."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if u.shape != v.shape:
        raise ValueError(f"dimension mismatch: {u.shape} vs {v.shape}")
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu == 0.0 or nv == 0.0:
        raise ValueError("cosine distance undefined for a zero vector")
    return 1.0 - float(np.dot(u, v)) / (nu * nv)


class MeasureContext(Protocol):
    """Provider of model-based measure values (see model_sim)."""

    def values_for_target(
        self, measure: str, target: Dataset, sources: Sequence[Dataset]
    ) -> Mapping[str, float]: ...


def distance_matrix(
    datasets: Sequence[Dataset],
    measure: str,
    context: MeasureContext | None = None,
    perplexity_split: str = "train",
) -> list[DistanceRecord]:
    """One record per ordered (source, target) pair, source != target,
    sorted by (source id, target id)."""
    if measure not in ALL_MEASURES:
        raise ConfigError(f"unknown measure {measure!r} (known: {', '.join(ALL_MEASURES)})")
    if len(datasets) < 2:
        raise ConfigError("distance matrix needs at least 2 datasets")
    ids = [d.id for d in datasets]
    if len(set(ids)) != len(ids):
        raise ConfigError("dataset ids are not unique")
    ordered = sorted(datasets, key=lambda d: d.id)
    polarity = POLARITY[measure]
    records: list[DistanceRecord] = []

    if measure in MODEL_MEASURES:
        if context is None:
            raise DependencyError(
                f"measure {measure} needs trained single-task models; "
                "run `observe --train-singles` first"
            )
        for target in ordered:
            sources = [d for d in ordered if d.id != target.id]
            try:
                values = context.values_for_target(measure, target, sources)
            except Exception as exc:
                raise type(exc)(f"{measure} for target {target.id}: {exc}") from exc
            for source in sources:
                records.append(
                    DistanceRecord(measure, source.id, target.id, float(values[source.id]), polarity)
                )
        records.sort(key=lambda r: (r.source_id, r.target_id))
        return records

    term_dists: dict[str, TermDistribution] = {}
    lms: dict[str, KneserNeyLM] = {}
    if measure == TERM_DIST_JSD:
        term_dists = {d.id: term_distribution(d) for d in ordered}
    if measure == LM_PERPLEXITY:
        lms = {d.id: train_kn_lm(d) for d in ordered}

    for source in ordered:
        for target in ordered:
            if source.id == target.id:
                continue
            try:
                if measure == VOCAB_OVERLAP:
                    value = vocab_overlap(source, target)
                elif measure == ANNOT_OVERLAP:
                    value = annotation_overlap(source, target)
                elif measure == DATASET_SIZE:
                    value = float(dataset_size(source))
                elif measure == TERM_DIST_JSD:
                    value = jsd(term_dists[source.id], term_dists[target.id])
                else:
                    value = lm_perplexity(lms[source.id], target, split=perplexity_split)
            except Exception as exc:
                raise type(exc)(f"{measure}({source.id} -> {target.id}): {exc}") from exc
            records.append(DistanceRecord(measure, source.id, target.id, float(value), polarity))
    return records


DISTANCE_HEADER = ("measure", "source", "target", "value", "polarity")


def write_distances(records: Iterable[DistanceRecord], path: str | Path) -> None:
    """Long-form CSV, values at 6 decimal places, deterministic order."""
    rows = sorted(records, key=lambda r: (r.measure, r.source_id, r.target_id))
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(DISTANCE_HEADER)
        for r in rows:
            writer.writerow([r.measure, r.source_id, r.target_id, f"{r.value:.6f}", r.polarity])


def read_distances(path: str | Path) -> list[DistanceRecord]:
    path = Path(path)
    if not path.exists():
        raise DependencyError(f"distance file not found: {path}; run `measure` first")
    with path.open("r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != list(DISTANCE_HEADER):
            raise ParseError(f"{path}: unexpected header {header!r}")
        records = []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != 5:
                raise ParseError(f"{path}:{lineno}: expected 5 columns, got {len(row)}")
            measure, source, target, value, polarity = row
            try:
                records.append(DistanceRecord(measure, source, target, float(value), polarity))
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: {exc}") from None
    return records
