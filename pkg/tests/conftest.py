"""Shared fixtures and helpers for the test suite."""

from __future__ import annotations

import numpy as np
import pytest

from srcsel.corpus import Dataset, Token, apply_split_fallback


def sent(*pairs: tuple[str, str]) -> tuple[Token, ...]:
    return tuple(Token(text=t, label=l) for t, l in pairs)


def make_dataset(
    id: str,
    sentences,
    task: str = "ner",
    domain: str = "test",
    label_set: frozenset[str] | None = None,
) -> Dataset:
    """Dataset with explicit equal splits (train = dev = test) unless the
    sentence list is long enough to carve: here we just reuse the same
    sentences for all three splits, which keeps small fixtures simple."""
    sentences = tuple(sentences)
    if label_set is None:
        label_set = frozenset(tok.label for s in sentences for tok in s)
    return Dataset(
        id=id,
        task=task,
        domain=domain,
        label_set=label_set,
        train=sentences,
        dev=sentences,
        test=sentences,
    )


def carved_dataset(id: str, sentences, task: str = "ner", domain: str = "test") -> Dataset:
    """Dataset with the standard missing-split carving applied."""
    train, dev, test = apply_split_fallback(tuple(sentences))
    label_set = frozenset(tok.label for s in sentences for tok in s)
    return Dataset(
        id=id, task=task, domain=domain, label_set=label_set, train=train, dev=dev, test=test
    )


def pytest_configure(config):
    config._criterion_lines = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "_criterion_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)


@pytest.fixture
def criterion(request):
    """Records one pass/fail verdict line, echoed in the run summary."""

    def record(num: int, name: str, ok: bool, detail: str) -> None:
        line = f"criterion {num} ({name}): {'PASS' if ok else 'FAIL'} [{detail}]"
        print(line)
        request.config._criterion_lines.append(line)
        assert ok, line

    return record


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(12345)


@pytest.fixture
def ner_a() -> Dataset:
    return make_dataset(
        "ner_a",
        [
            sent(("anna", "B-PER"), ("visits", "O"), ("london", "B-LOC")),
            sent(("bob", "B-PER"), ("smith", "I-PER"), ("left", "O")),
            sent(("the", "O"), ("city", "O"), ("sleeps", "O")),
        ],
    )


@pytest.fixture
def ner_b() -> Dataset:
    return make_dataset(
        "ner_b",
        [
            sent(("anna", "B-PER"), ("left", "O"), ("paris", "B-LOC")),
            sent(("old", "O"), ("roads", "O"), ("wind", "O")),
        ],
    )


@pytest.fixture
def pos_a() -> Dataset:
    return make_dataset(
        "pos_a",
        [
            sent(("the", "DET"), ("cat", "NOUN"), ("sleeps", "VERB")),
            sent(("a", "DET"), ("dog", "NOUN"), ("runs", "VERB")),
        ],
        task="pos",
    )
