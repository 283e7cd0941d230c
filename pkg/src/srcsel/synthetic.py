"""Deterministic synthetic fixtures.

Two families: rule-tagged corpora (tag decided by word identity) that a
small tagger can learn essentially perfectly, and a meta-suite of
engineered distances and transfer gains for exercising the predictors
end to end. Gains in the meta-suite follow gain = 2 - 2*distance and a
source set realizes the sum of its members' pair gains; both rules are
an engineered test harness, not a claim about real transfer.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import Dataset, Sentence, Token, apply_split_fallback, serialize_conll
from .measures import LOWER_IS_CLOSER, DistanceRecord
from .transfer import DOMAIN_ADAPT, TransferObservation, make_observation

CITIES = ("london", "paris", "tokyo", "berlin", "madrid", "oslo")
FILLERS = (
    "the", "man", "saw", "dog", "walked", "to", "house", "old",
    "big", "tree", "river", "under", "near", "red", "blue", "bird",
)
NOUNS = ("man", "dog", "house", "tree", "river", "bird")
VERBS = ("saw", "walked", "runs", "flies")
DETS = ("the", "a", "an")

SYNTH_MEASURE = "synth_dist"


def _ner_label(word: str, cities: tuple[str, ...]) -> str:
    return "B-LOC" if word in cities else "O"


def ner_sentences(
    n_sentences: int,
    seed: int,
    cities: tuple[str, ...] = CITIES,
    fillers: tuple[str, ...] = FILLERS,
    city_rate: float = 0.8,
) -> list[Sentence]:
    """Random word sequences; any city word is a single-token LOC span."""
    rng = np.random.default_rng(seed)
    sentences = []
    for _ in range(n_sentences):
        length = int(rng.integers(5, 10))
        words = [fillers[int(k)] for k in rng.integers(0, len(fillers), size=length)]
        if rng.random() < city_rate:
            pos = int(rng.integers(0, length))
            words[pos] = cities[int(rng.integers(0, len(cities)))]
        sentences.append(tuple(Token(w, _ner_label(w, cities)) for w in words))
    return sentences


def pos_sentences(n_sentences: int, seed: int) -> list[Sentence]:
    """Determiner-noun-verb patterns tagged by word class (no O tag)."""
    rng = np.random.default_rng(seed)
    tagged = {w: "DET" for w in DETS}
    tagged.update({w: "NOUN" for w in NOUNS + CITIES})
    tagged.update({w: "VERB" for w in VERBS})
    words = sorted(tagged)
    sentences = []
    for _ in range(n_sentences):
        length = int(rng.integers(4, 9))
        chosen = [words[int(k)] for k in rng.integers(0, len(words), size=length)]
        sentences.append(tuple(Token(w, tagged[w]) for w in chosen))
    return sentences


def as_dataset(dataset_id: str, task: str, domain: str, sentences: list[Sentence]) -> Dataset:
    train, dev, test = apply_split_fallback(sentences)
    labels = frozenset(t.label for s in sentences for t in s)
    return Dataset(
        id=dataset_id, task=task, domain=domain, label_set=labels,
        train=train, dev=dev, test=test,
    )


def dense_ner_sentences(
    n_sentences: int, seed: int, cities: tuple[str, ...] = CITIES
) -> list[Sentence]:
    """Like ner_sentences but with exactly two city mentions planted per
    sentence, so span-level learning signal is dense from epoch one."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n_sentences):
        length = int(rng.integers(6, 10))
        words = [FILLERS[int(k)] for k in rng.integers(0, len(FILLERS), size=length)]
        for pos in rng.choice(length, size=2, replace=False):
            words[int(pos)] = cities[int(rng.integers(0, len(cities)))]
        out.append(tuple(Token(w, _ner_label(w, cities)) for w in words))
    return out


def separable_dataset(dataset_id: str = "synth", seed: int = 7, n_sentences: int = 60) -> Dataset:
    """Tag is a deterministic function of the word, so a tagger with
    word-identity features can reach near-perfect train F1."""
    return as_dataset(dataset_id, "NER", "synth", dense_ner_sentences(n_sentences, seed))


def related_ner_pair(seed: int = 11) -> tuple[Dataset, Dataset]:
    """(source, target): a large source covering all entity words and a
    small target whose train split only ever sees the first three, so
    pretraining on the source genuinely helps on the target test."""
    source = as_dataset("src_rel", "NER", "news", dense_ner_sentences(80, seed))
    head = dense_ner_sentences(30, seed + 1, cities=CITIES[:3])
    tail = dense_ner_sentences(8, seed + 2, cities=CITIES)
    train, dev, _ = apply_split_fallback(head)
    target = Dataset(
        id="tgt_rel", task="NER", domain="news",
        label_set=frozenset({"O", "B-LOC"}),
        train=train, dev=dev, test=tuple(tail),
    )
    return source, target


def disjoint_ner_pair(seed: int = 23) -> tuple[Dataset, Dataset]:
    """Two NER datasets with fully disjoint vocabularies."""
    cities_b = tuple(f"city{i}x" for i in range(6))
    fillers_b = tuple(f"word{i}y" for i in range(16))
    a = as_dataset("disj_a", "NER", "doma", ner_sentences(40, seed))
    b = as_dataset(
        "disj_b", "NER", "domb", ner_sentences(40, seed + 1, cities=cities_b, fillers=fillers_b)
    )
    return a, b


def overlap_ladder(seed: int = 5) -> tuple[Dataset, list[Dataset]]:
    """A target plus four sources whose vocabulary overlap with the
    target strictly decreases: ~80/60/40/20 percent of target words."""
    target_words = [f"t{i}" for i in range(8)] + ["london", "paris"]
    rng = np.random.default_rng(seed)

    def build(dataset_id: str, words: list[str], offset: int) -> Dataset:
        local = np.random.default_rng(seed + offset)
        sentences = []
        for _ in range(20):
            length = int(local.integers(5, 9))
            chosen = [words[int(k)] for k in local.integers(0, len(words), size=length)]
            sentences.append(
                tuple(Token(w, _ner_label(w, ("london", "paris"))) for w in chosen)
            )
        return as_dataset(dataset_id, "NER", dataset_id, sentences)

    del rng
    target = build("ladder_t", target_words, 0)
    shared_counts = (8, 6, 4, 2)
    sources = []
    for rank, n_shared in enumerate(shared_counts):
        words = target_words[:n_shared] + [f"s{rank}_{i}" for i in range(10 - n_shared)]
        sources.append(build(f"ladder_s{rank}", words, rank + 1))
    return target, sources


def write_corpus_files(datasets: list[Dataset], out_dir: str | Path) -> Path:
    """Write CoNLL files plus a manifest for a list of datasets; returns
    the manifest path. Splits are written explicitly so loading is exact."""
    import json

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    lines = []
    for ds in datasets:
        for split in ("train", "dev", "test"):
            path = out_dir / f"{ds.id}.{split}.conll"
            path.write_text(serialize_conll(ds.split(split)), encoding="utf-8")
        lines.append(
            json.dumps(
                {
                    "id": ds.id,
                    "task": ds.task,
                    "domain": ds.domain,
                    "train_path": f"{ds.id}.train.conll",
                    "dev_path": f"{ds.id}.dev.conll",
                    "test_path": f"{ds.id}.test.conll",
                },
                sort_keys=False,
            )
        )
    manifest = out_dir / "manifest.jsonl"
    manifest.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return manifest


def tiny_suite() -> list[Dataset]:
    """The bundled demo corpora: three related/unrelated NER domains and
    one POS dataset for cross-task runs."""
    news = as_dataset("ner_news", "NER", "news", ner_sentences(60, 101))
    web_cities = CITIES[:4] + ("dublin", "vienna")
    web = as_dataset("ner_web", "NER", "web", ner_sentences(50, 202, cities=web_cities))
    sci_cities = tuple(f"gene{i}q" for i in range(6))
    sci_fillers = tuple(f"term{i}z" for i in range(16))
    sci = as_dataset(
        "ner_sci", "NER", "sci", ner_sentences(50, 303, cities=sci_cities, fillers=sci_fillers)
    )
    pos = as_dataset("pos_news", "POS", "news", pos_sentences(40, 404))
    return [news, web, sci, pos]


# ---------------------------------------------------------------------------
# Meta-suite: engineered distances and gains for the predictor pipeline.

_MIXED_VARIANTS = {
    "a": (0.2, 0.4, 0.6, 0.9, 1.1, 1.4, 1.6, 1.8),
    "b": (0.1, 0.3, 0.5, 0.6, 1.0, 1.1, 1.5, 1.7),
    "c": (0.15, 0.25, 0.35, 0.45, 0.55, 0.95, 1.45, 1.75),
}
_MIXED_TARGETS = (
    ("mt1", "a"), ("mt2", "b"), ("mt3", "c"),
    ("mt4", "a"), ("mt5", "b"), ("mt6", "c"),
)
_NEGATIVE_DISTANCES = (1.3, 1.4, 1.5, 1.6, 1.7, 1.8, 1.9, 2.0)
_BASE_F1 = 70.0
_SUITE_SEED = 0


def suite_gain(distance: float) -> float:
    """The generating rule of the meta-suite: gain falls linearly with
    distance and crosses the theta=0.5 class boundaries at d=0.75/1.25."""
    return 2.0 - 2.0 * distance


@dataclass
class MetaSuite:
    """Distances and pair observations over synthetic sources/targets.

    No corpora exist behind these ids; the suite feeds the predictor and
    evaluation layers directly. Set gains are additive in the members'
    pair gains by construction.
    """

    targets: tuple[str, ...]
    sources: tuple[str, ...]
    distances: list[DistanceRecord]
    observations: list[TransferObservation]
    pair_gain: dict[tuple[str, str], float]
    true_positive: dict[str, tuple[str, ...]]
    theta: float = 0.5

    def set_observation(self, source_ids, target_id: str) -> TransferObservation:
        """The multi-source observation a real harness would produce for
        this set, under the suite's additive-gain rule."""
        total = sum(self.pair_gain[(s, target_id)] for s in source_ids)
        return make_observation(
            DOMAIN_ADAPT, tuple(sorted(source_ids)), target_id, _SUITE_SEED,
            _BASE_F1, _BASE_F1 + total,
        )

    def observations_for_selections(self, selections: dict[str, list[str]]):
        """Set observations for every non-empty, non-singleton selection
        (pairs are already in the base observation list)."""
        extra = []
        for target_id in sorted(selections):
            chosen = tuple(sorted(selections[target_id]))
            if len(chosen) >= 2:
                extra.append(self.set_observation(chosen, target_id))
        return extra


def _build_suite(target_specs: list[tuple[str, tuple[float, ...]]], theta: float) -> MetaSuite:
    sources = tuple(f"src{i + 1}" for i in range(8))
    distances: list[DistanceRecord] = []
    observations: list[TransferObservation] = []
    pair_gain: dict[tuple[str, str], float] = {}
    true_positive: dict[str, tuple[str, ...]] = {}
    for target_id, dists in target_specs:
        positives = []
        for sid, d in zip(sources, dists):
            g = suite_gain(d)
            pair_gain[(sid, target_id)] = round(g, 4)
            distances.append(DistanceRecord(SYNTH_MEASURE, sid, target_id, d, LOWER_IS_CLOSER))
            observations.append(
                make_observation(
                    DOMAIN_ADAPT, (sid,), target_id, _SUITE_SEED, _BASE_F1, _BASE_F1 + g
                )
            )
            if g >= theta:
                positives.append(sid)
        true_positive[target_id] = tuple(positives)
    return MetaSuite(
        targets=tuple(t for t, _ in target_specs),
        sources=sources,
        distances=distances,
        observations=observations,
        pair_gain=pair_gain,
        true_positive=true_positive,
        theta=theta,
    )


def meta_suite(kind: str = "mixed", theta: float = 0.5) -> MetaSuite:
    """kind="mixed": 6 targets, 8 sources each, 3-5 truly Positive at
    theta=0.5, with wide class gaps so an RBF classifier can recover the
    exact Positive set. kind="all_negative": every pair gain <= -theta."""
    if kind == "mixed":
        specs = [(t, _MIXED_VARIANTS[v]) for t, v in _MIXED_TARGETS]
    elif kind == "all_negative":
        specs = [(f"nt{i + 1}", _NEGATIVE_DISTANCES) for i in range(4)]
    else:
        raise ValueError(f"unknown meta-suite kind {kind!r}")
    return _build_suite(specs, theta)
