"""CoNLL-style dataset parsing, validation, splits, and corpus statistics.

A dataset couples a task (NER, POS, TIME, or any other tag scheme) with a
domain and three splits of labeled sentences. Files are one token per
line, final column is the label, blank line ends a sentence.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable

from .errors import ConfigError, ParseError

TermDistribution = dict[str, float]


@dataclass(frozen=True)
class Token:
    text: str
    label: str


Sentence = tuple[Token, ...]


@dataclass(frozen=True)
class Dataset:
    id: str
    task: str
    domain: str
    label_set: frozenset[str]
    train: tuple[Sentence, ...]
    dev: tuple[Sentence, ...]
    test: tuple[Sentence, ...]

    def split(self, name: str) -> tuple[Sentence, ...]:
        if name not in ("train", "dev", "test"):
            raise ValueError(f"unknown split {name!r}")
        return getattr(self, name)


def is_span_label_set(labels: Iterable[str]) -> bool:
    """True when the tags form a BIO scheme (span task); POS-style tag
    sets without O/B-/I- structure are scored by token accuracy."""
    tags = list(labels)
    return bool(tags) and all(
        t == "O" or ((t.startswith("B-") or t.startswith("I-")) and len(t) > 2) for t in tags
    )


def repair_bio(labels: list[str]) -> list[str]:
    """Turn any I-X that does not continue a B-X/I-X run into B-X."""
    fixed = list(labels)
    prev = "O"
    for i, tag in enumerate(fixed):
        if tag.startswith("I-") and prev not in (f"B-{tag[2:]}", f"I-{tag[2:]}"):
            fixed[i] = f"B-{tag[2:]}"
        prev = fixed[i]
    return fixed


def parse_conll(raw: bytes | str, strict_bio: bool = False) -> list[Sentence]:
    """Parse CoNLL text into sentences.

    Columns split on tabs when present, otherwise on whitespace runs; the
    last column is the label and the first is the token. -DOCSTART- lines
    are ignored. Orphan I- tags are repaired to B- unless strict_bio.
    """
    if isinstance(raw, bytes):
        try:
            text = raw.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ParseError(f"input is not valid UTF-8: {exc}") from None
    else:
        text = raw

    sentences: list[Sentence] = []
    tokens: list[Token] = []
    token_lines: list[int] = []

    def finish() -> None:
        if not tokens:
            return
        labels = [t.label for t in tokens]
        repaired = repair_bio(labels)
        if strict_bio and repaired != labels:
            bad = next(i for i in range(len(labels)) if labels[i] != repaired[i])
            raise ParseError(
                f"line {token_lines[bad]}: orphan tag {labels[bad]!r} (strict BIO mode)"
            )
        sentences.append(tuple(replace(t, label=l) for t, l in zip(tokens, repaired)))
        tokens.clear()
        token_lines.clear()

    for lineno, line in enumerate(text.split("\n"), start=1):
        line = line.rstrip("\r")
        if not line.strip():
            finish()
            continue
        if line.startswith("-DOCSTART-"):
            continue
        parts = line.split("\t") if "\t" in line else line.split()
        if len(parts) < 2:
            raise ParseError(f"line {lineno}: expected token and label columns, got {line!r}")
        text_col, label = parts[0].strip(), parts[-1].strip()
        if not text_col:
            raise ParseError(f"line {lineno}: empty token text")
        if not label:
            raise ParseError(f"line {lineno}: empty label")
        tokens.append(Token(text=text_col, label=label))
        token_lines.append(lineno)
    finish()
    return sentences


def serialize_conll(sentences: Iterable[Sentence]) -> str:
    """Inverse of parse_conll: token<TAB>label lines, blank line between
    sentences."""
    blocks = ["\n".join(f"{t.text}\t{t.label}" for t in sent) for sent in sentences]
    return "\n\n".join(blocks) + ("\n" if blocks else "")


def apply_split_fallback(
    train: list[Sentence] | tuple[Sentence, ...],
    dev: list[Sentence] | tuple[Sentence, ...] | None = None,
    test: list[Sentence] | tuple[Sentence, ...] | None = None,
) -> tuple[tuple[Sentence, ...], tuple[Sentence, ...], tuple[Sentence, ...]]:
    """Fill missing dev/test splits by carving the tail of the train split.

    Missing test takes the last 20% of train (sentence-count floor,
    minimum 1); missing dev then takes the last 10% of what remains.
    Order is preserved and the pieces are disjoint and exhaustive.
    """
    train = tuple(train)
    if dev is not None and test is not None:
        return train, tuple(dev), tuple(test)
    if len(train) < 10:
        raise ConfigError(
            f"need at least 10 training sentences to carve missing splits, got {len(train)}"
        )
    if test is None:
        n_test = max(1, int(len(train) * 0.2))
        train, test = train[:-n_test], train[-n_test:]
    else:
        test = tuple(test)
    if dev is None:
        n_dev = max(1, int(len(train) * 0.1))
        if n_dev >= len(train):
            raise ConfigError(f"too few sentences to carve a dev split from {len(train)}")
        train, dev = train[:-n_dev], train[-n_dev:]
    else:
        dev = tuple(dev)
    if not train or not dev or not test:
        raise ConfigError("split fallback produced an empty split")
    return train, dev, test


def vocabulary(dataset: Dataset, splits: tuple[str, ...] = ("train",)) -> set[str]:
    """Distinct token texts over the selected splits (default train only)."""
    return {t.text for name in splits for sent in dataset.split(name) for t in sent}


def annotated_vocabulary(dataset: Dataset) -> set[str]:
    """Distinct train-split token texts whose label is not O. For tag
    schemes without O every token counts as annotated."""
    return {t.text for sent in dataset.train for t in sent if t.label != "O"}


def term_distribution(dataset: Dataset) -> TermDistribution:
    """Relative frequency of each term over the train split."""
    counts: dict[str, int] = {}
    total = 0
    for sent in dataset.train:
        for tok in sent:
            counts[tok.text] = counts.get(tok.text, 0) + 1
            total += 1
    if total == 0:
        raise ConfigError(f"dataset {dataset.id}: train split is empty")
    return {term: n / total for term, n in sorted(counts.items())}


@dataclass(frozen=True)
class ManifestEntry:
    id: str
    task: str
    domain: str
    train_path: str
    dev_path: str | None = None
    test_path: str | None = None


def read_manifest(path: str | Path) -> list[ManifestEntry]:
    """Read a line-delimited (JSONL) manifest of dataset records."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"manifest not found: {path}")
    entries: list[ManifestEntry] = []
    seen: set[str] = set()
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            raw = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}:{lineno}: invalid manifest record: {exc}") from None
        for field in ("id", "task", "domain", "train_path"):
            if field not in raw:
                raise ParseError(f"{path}:{lineno}: manifest record missing field {field!r}")
        entry = ManifestEntry(
            id=str(raw["id"]),
            task=str(raw["task"]),
            domain=str(raw["domain"]),
            train_path=str(raw["train_path"]),
            dev_path=str(raw["dev_path"]) if raw.get("dev_path") else None,
            test_path=str(raw["test_path"]) if raw.get("test_path") else None,
        )
        if entry.id in seen:
            raise ParseError(f"{path}:{lineno}: duplicate dataset id {entry.id!r}")
        seen.add(entry.id)
        entries.append(entry)
    return entries


def _lowercase_sentences(sentences: tuple[Sentence, ...]) -> tuple[Sentence, ...]:
    return tuple(
        tuple(replace(t, text=t.text.lower()) for t in sent) for sent in sentences
    )


def load_dataset(
    entry: ManifestEntry,
    base_dir: str | Path,
    lowercase: bool = False,
    strict_bio: bool = False,
) -> Dataset:
    """Load and validate one dataset; missing dev/test fall back to tail
    slices of train."""
    base = Path(base_dir)

    def read_split(rel: str | None, name: str) -> list[Sentence] | None:
        if rel is None:
            return None
        p = base / rel
        if not p.exists():
            raise ConfigError(f"dataset {entry.id}: {name} file not found: {p}")
        try:
            return parse_conll(p.read_bytes(), strict_bio=strict_bio)
        except ParseError as exc:
            raise ParseError(f"dataset {entry.id}: {p}: {exc}") from None

    train = read_split(entry.train_path, "train")
    dev = read_split(entry.dev_path, "dev")
    test = read_split(entry.test_path, "test")
    if not train:
        raise ConfigError(f"dataset {entry.id}: train split is empty")
    train, dev, test = apply_split_fallback(train, dev, test)
    if lowercase:
        train, dev, test = (
            _lowercase_sentences(train),
            _lowercase_sentences(dev),
            _lowercase_sentences(test),
        )
    for name, split in (("train", train), ("dev", dev), ("test", test)):
        if not split:
            raise ConfigError(f"dataset {entry.id}: {name} split is empty")
    labels = frozenset(t.label for s in (train + dev + test) for t in s)
    return Dataset(
        id=entry.id,
        task=entry.task,
        domain=entry.domain,
        label_set=labels,
        train=train,
        dev=dev,
        test=test,
    )


def load_manifest(
    path: str | Path, lowercase: bool = False, strict_bio: bool = False
) -> list[Dataset]:
    """Load every dataset in a manifest; paths resolve relative to the
    manifest file."""
    path = Path(path)
    entries = read_manifest(path)
    return [
        load_dataset(e, path.parent, lowercase=lowercase, strict_bio=strict_bio)
        for e in entries
    ]


def dataset_summary(dataset: Dataset) -> dict[str, object]:
    """Counts used by the ingest report."""
    return {
        "id": dataset.id,
        "task": dataset.task,
        "domain": dataset.domain,
        "n_labels": len(dataset.label_set),
        "train_sentences": len(dataset.train),
        "dev_sentences": len(dataset.dev),
        "test_sentences": len(dataset.test),
    }
