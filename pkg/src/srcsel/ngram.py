"""Interpolated Kneser-Ney n-gram language model.

Desk-scale variant with a single fixed discount at every order. Lower
orders use continuation counts (distinct left extensions), except grams
starting with the begin symbol, which keep raw windowed counts; the
unigram level interpolates with a uniform distribution over the
vocabulary plus the unknown symbol. Every conditional therefore sums to
one exactly, by construction.
"""

from __future__ import annotations

import math
from typing import Iterable, Sequence

BOS = "<s>"
EOS = "</s>"
UNK = "<unk>"


class KneserNeyLM:
    def __init__(
        self,
        order: int,
        discount: float,
        vocab: frozenset[str],
        counts: list[dict[tuple[str, ...], int]],
        context_stats: list[dict[tuple[str, ...], tuple[int, int]]],
    ):
        self.order = order
        self.discount = discount
        self.vocab = vocab
        # counts[k] maps a k-gram tuple to its (possibly adjusted) count;
        # context_stats[k] maps a (k-1)-length context to (total, n_kinds).
        self._counts = counts
        self._ctx = context_stats

    @classmethod
    def train(
        cls,
        sentences: Iterable[Sequence[str]],
        order: int = 5,
        discount: float = 0.75,
    ) -> "KneserNeyLM":
        if order < 1:
            raise ValueError(f"order must be >= 1, got {order}")
        if not 0.0 < discount < 1.0:
            raise ValueError(f"discount must be in (0, 1), got {discount}")
        sents = [list(s) for s in sentences]
        if not sents or all(len(s) == 0 for s in sents):
            raise ValueError("cannot train a language model on an empty corpus")
        vocab = frozenset(w for s in sents for w in s) | {EOS, UNK}

        # raw windowed counts per level, each level padded with its own
        # begin symbols so begin-initial grams have natural frequencies
        raw: list[dict[tuple[str, ...], int]] = [dict() for _ in range(order + 1)]
        for k in range(1, order + 1):
            table = raw[k]
            for s in sents:
                padded = [BOS] * (k - 1) + s + [EOS]
                for i in range(k - 1, len(padded)):
                    gram = tuple(padded[i - k + 1 : i + 1])
                    table[gram] = table.get(gram, 0) + 1

        # counts: top level raw; below, continuation counts except for
        # begin-initial grams
        counts: list[dict[tuple[str, ...], int]] = [dict() for _ in range(order + 1)]
        counts[order] = raw[order]
        for k in range(order - 1, 0, -1):
            continuation: dict[tuple[str, ...], set[str]] = {}
            for gram in counts[k + 1]:
                suffix = gram[1:]
                continuation.setdefault(suffix, set()).add(gram[0])
            table: dict[tuple[str, ...], int] = {}
            for gram in raw[k]:
                if gram[0] == BOS:
                    table[gram] = raw[k][gram]
                else:
                    table[gram] = len(continuation.get(gram, ()))
            counts[k] = {g: c for g, c in table.items() if c > 0}

        context_stats: list[dict[tuple[str, ...], tuple[int, int]]] = [
            dict() for _ in range(order + 1)
        ]
        for k in range(1, order + 1):
            stats: dict[tuple[str, ...], list[int]] = {}
            for gram, c in counts[k].items():
                entry = stats.setdefault(gram[:-1], [0, 0])
                entry[0] += c
                entry[1] += 1
            context_stats[k] = {ctx: (tot, kinds) for ctx, (tot, kinds) in stats.items()}

        return cls(order, discount, vocab, counts, context_stats)

    def _prob(self, level: int, ctx: tuple[str, ...], word: str) -> float:
        if level == 1:
            uniform = 1.0 / len(self.vocab)
            stats = self._ctx[1].get(())
            if stats is None:
                return uniform
            total, kinds = stats
            c = self._counts[1].get((word,), 0)
            return max(c - self.discount, 0.0) / total + (
                self.discount * kinds / total
            ) * uniform
        stats = self._ctx[level].get(ctx)
        if stats is None:
            return self._prob(level - 1, ctx[1:], word)
        total, kinds = stats
        c = self._counts[level].get(ctx + (word,), 0)
        lower = self._prob(level - 1, ctx[1:], word)
        return max(c - self.discount, 0.0) / total + (
            self.discount * kinds / total
        ) * lower

    def _map_word(self, word: str) -> str:
        return word if word in self.vocab else UNK

    def logprob(self, word: str, context: Sequence[str] = ()) -> float:
        """Natural-log conditional probability of one word.

        Contexts shorter than order-1 are scored at the matching lower
        order; out-of-vocabulary symbols map to the unknown token.
        """
        if word == BOS:
            raise ValueError("the begin symbol is context only and cannot be scored")
        ctx = tuple(context)[-(self.order - 1) :] if self.order > 1 else ()
        ctx = tuple(w if (w == BOS or w in self.vocab) else UNK for w in ctx)
        return math.log(self._prob(len(ctx) + 1, ctx, self._map_word(word)))


def sentence_logprobs(lm, tokens: Sequence[str]) -> list[float]:
    """Per-event natural-log probabilities of one sentence: every token,
    then the end symbol, each conditioned on the padded history."""
    padded = [BOS] * (lm.order - 1) + list(tokens) + [EOS]
    out = []
    for i in range(lm.order - 1, len(padded)):
        ctx = tuple(padded[i - lm.order + 1 : i])
        out.append(lm.logprob(padded[i], ctx))
    return out


def perplexity(lm, sentences: Iterable[Sequence[str]]) -> float:
    """exp of the negative mean log probability per scored event (tokens
    plus one end symbol per sentence)."""
    total = 0.0
    n = 0
    for tokens in sentences:
        lps = sentence_logprobs(lm, tokens)
        total += sum(lps)
        n += len(lps)
    if n == 0:
        raise ValueError("cannot compute perplexity of an empty corpus")
    return math.exp(-total / n)
