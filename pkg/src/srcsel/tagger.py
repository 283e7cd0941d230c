"""Desk-scale neural sequence tagger.

Hashed sparse indicator features feed one ReLU hidden layer (the "last
layer" used for model similarity) and a swappable softmax head. Training
is seeded per-sentence SGD with early stopping on dev F1 and a
best-snapshot guarantee. Every operation is a pure function of its
inputs and seed.
"""

from __future__ import annotations

import json
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .corpus import Dataset, Sentence, is_span_label_set
from .errors import ConfigError, ParseError
from .evalrank import Score, corpus_spans, micro_f1
from .util import derive_seed, round_sig

PAD = "<pad>"
N_FEATS = 8
DEFAULT_HASH_DIM = 2048
DEFAULT_HIDDEN_DIM = 32


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.1
    max_epochs: int = 100
    patience: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.max_epochs < 1:
            raise ConfigError(f"max_epochs must be >= 1, got {self.max_epochs}")
        if self.patience < 1:
            raise ConfigError(f"patience must be >= 1, got {self.patience}")


def token_features(texts: Sequence[str], i: int) -> list[str]:
    """The 8 indicator strings for token i: identity, lowercase, 3-char
    prefix/suffix, and the four window neighbors (padded at boundaries)."""
    w = texts[i]

    def neighbor(offset: int) -> str:
        j = i + offset
        return texts[j] if 0 <= j < len(texts) else PAD

    return [
        f"w={w}",
        f"lw={w.lower()}",
        f"p3={w[:3]}",
        f"s3={w[-3:]}",
        f"w@-2={neighbor(-2)}",
        f"w@-1={neighbor(-1)}",
        f"w@+1={neighbor(+1)}",
        f"w@+2={neighbor(+2)}",
    ]


def hashed_features(texts: Sequence[str], hash_dim: int) -> np.ndarray:
    """(n_tokens, 8) int32 matrix of hashed feature indices.

    crc32 keeps indices stable across processes, unlike the builtin
    salted hash().
    """
    idx = np.empty((len(texts), N_FEATS), dtype=np.int32)
    for i in range(len(texts)):
        for j, feat in enumerate(token_features(texts, i)):
            idx[i, j] = zlib.crc32(feat.encode("utf-8")) % hash_dim
    return idx


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    expd = np.exp(shifted)
    return expd / expd.sum(axis=1, keepdims=True)


class TaggerModel:
    def __init__(
        self,
        labels: Sequence[str],
        w_hidden: np.ndarray,
        w_out: np.ndarray,
        b_out: np.ndarray,
        seed: int,
        model_id: str,
        train_log: list[dict] | None = None,
    ):
        self.labels = tuple(labels)
        self.w_hidden = np.asarray(w_hidden, dtype=float)
        self.w_out = np.asarray(w_out, dtype=float)
        self.b_out = np.asarray(b_out, dtype=float)
        self.seed = int(seed)
        self.model_id = model_id
        self.train_log = list(train_log or [])
        if self.w_hidden.shape[1] != self.w_out.shape[0]:
            raise ValueError("hidden and output weight shapes disagree")
        if self.w_out.shape[1] != len(self.labels) or self.b_out.shape != (len(self.labels),):
            raise ValueError("head shape does not match the label set")

    @property
    def hash_dim(self) -> int:
        return self.w_hidden.shape[0]

    @property
    def hidden_dim(self) -> int:
        return self.w_hidden.shape[1]

    @classmethod
    def init_random(
        cls,
        labels: Sequence[str],
        seed: int,
        hash_dim: int = DEFAULT_HASH_DIM,
        hidden_dim: int = DEFAULT_HIDDEN_DIM,
        model_id: str = "",
    ) -> "TaggerModel":
        if not labels:
            raise ConfigError("cannot build a tagger with an empty label set")
        labels = tuple(sorted(set(labels)))
        rng = np.random.default_rng(derive_seed(seed, "init"))
        w_hidden = rng.normal(0.0, 0.1, size=(hash_dim, hidden_dim))
        w_out = rng.normal(0.0, 0.1, size=(hidden_dim, len(labels)))
        b_out = np.zeros(len(labels))
        return cls(labels, w_hidden, w_out, b_out, seed, model_id)

    def copy(self, model_id: str | None = None) -> "TaggerModel":
        return TaggerModel(
            self.labels,
            self.w_hidden.copy(),
            self.w_out.copy(),
            self.b_out.copy(),
            self.seed,
            self.model_id if model_id is None else model_id,
            [dict(e) for e in self.train_log],
        )

    def forward(self, idx: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(pre-activation, hidden, softmax probs) for hashed indices."""
        pre = self.w_hidden[idx].sum(axis=1)
        hidden = np.maximum(pre, 0.0)
        probs = _softmax(hidden @ self.w_out + self.b_out)
        return pre, hidden, probs

    def hidden_activations(self, texts: Sequence[str]) -> np.ndarray:
        _, hidden, _ = self.forward(hashed_features(texts, self.hash_dim))
        return hidden

    def predict(self, sentences: Iterable[Sentence]) -> list[list[str]]:
        out = []
        for sent in sentences:
            idx = hashed_features([t.text for t in sent], self.hash_dim)
            _, _, probs = self.forward(idx)
            out.append([self.labels[k] for k in probs.argmax(axis=1)])
        return out

    def save(self, path: str | Path) -> None:
        """Self-describing JSON snapshot, weights at 12 significant digits."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        payload = {
            "format": "tagger-model-v1",
            "hash_dim": self.hash_dim,
            "hidden_dim": self.hidden_dim,
            "labels": list(self.labels),
            "seed": self.seed,
            "model_id": self.model_id,
            "w_hidden": [[round_sig(x) for x in row] for row in self.w_hidden],
            "w_out": [[round_sig(x) for x in row] for row in self.w_out],
            "b_out": [round_sig(x) for x in self.b_out],
            "train_log": self.train_log,
        }
        path.write_text(json.dumps(payload) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "TaggerModel":
        path = Path(path)
        try:
            payload = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ParseError(f"cannot read model file {path}: {exc}") from None
        if payload.get("format") != "tagger-model-v1":
            raise ParseError(f"{path}: not a tagger model file")
        return cls(
            payload["labels"],
            np.array(payload["w_hidden"], dtype=float),
            np.array(payload["w_out"], dtype=float),
            np.array(payload["b_out"], dtype=float),
            payload["seed"],
            payload["model_id"],
            payload["train_log"],
        )


def is_span_model(model: TaggerModel) -> bool:
    return is_span_label_set(model.labels)


def evaluate(model: TaggerModel, sentences: Sequence[Sentence]) -> Score:
    """Span micro-F1 for BIO label sets, token accuracy otherwise."""
    if not sentences:
        raise ConfigError("cannot evaluate on an empty split")
    gold = [[t.label for t in sent] for sent in sentences]
    pred = model.predict(sentences)
    if is_span_model(model):
        return micro_f1(corpus_spans(gold), corpus_spans(pred))
    total = sum(len(g) for g in gold)
    hits = sum(g == p for gs, ps in zip(gold, pred) for g, p in zip(gs, ps))
    acc = 100.0 * hits / total
    return Score(acc, acc, acc, metric="accuracy")


def _prepare(sentences: Sequence[Sentence], model: TaggerModel) -> list[tuple[np.ndarray, np.ndarray]]:
    label_index = {lab: k for k, lab in enumerate(model.labels)}
    prepared = []
    for sent in sentences:
        texts = [t.text for t in sent]
        try:
            gold = np.array([label_index[t.label] for t in sent], dtype=np.int64)
        except KeyError as exc:
            raise ConfigError(f"label {exc} not in the model's label set") from None
        prepared.append((hashed_features(texts, model.hash_dim), gold))
    return prepared


def _sentence_step(model: TaggerModel, idx: np.ndarray, gold: np.ndarray, lr: float) -> None:
    n = idx.shape[0]
    pre, hidden, probs = model.forward(idx)
    grad_logits = probs
    grad_logits[np.arange(n), gold] -= 1.0
    grad_logits /= n
    grad_w_out = hidden.T @ grad_logits
    grad_b = grad_logits.sum(axis=0)
    grad_hidden = grad_logits @ model.w_out.T
    grad_pre = grad_hidden * (pre > 0.0)
    model.w_out -= lr * grad_w_out
    model.b_out -= lr * grad_b
    np.add.at(model.w_hidden, idx.ravel(), -lr * np.repeat(grad_pre, N_FEATS, axis=0))


def loss_and_gradients(
    model: TaggerModel, sentences: Sequence[Sentence]
) -> tuple[float, dict[str, np.ndarray]]:
    """Mean cross-entropy over all tokens and its analytic gradients.

    Shares the forward pass with training; used by the finite-difference
    gradient check.
    """
    prepared = _prepare(sentences, model)
    n_total = sum(g.shape[0] for _, g in prepared)
    if n_total == 0:
        raise ConfigError("no tokens to compute a loss on")
    loss = 0.0
    grads = {
        "w_hidden": np.zeros_like(model.w_hidden),
        "w_out": np.zeros_like(model.w_out),
        "b_out": np.zeros_like(model.b_out),
    }
    for idx, gold in prepared:
        n = idx.shape[0]
        pre, hidden, probs = model.forward(idx)
        loss += -np.log(probs[np.arange(n), gold]).sum()
        grad_logits = probs.copy()
        grad_logits[np.arange(n), gold] -= 1.0
        grads["w_out"] += hidden.T @ grad_logits
        grads["b_out"] += grad_logits.sum(axis=0)
        grad_pre = (grad_logits @ model.w_out.T) * (pre > 0.0)
        np.add.at(grads["w_hidden"], idx.ravel(), np.repeat(grad_pre, N_FEATS, axis=0))
    for key in grads:
        grads[key] /= n_total
    return loss / n_total, grads


def _train_loop(
    model: TaggerModel,
    train_sents: Sequence[Sentence],
    dev_sents: Sequence[Sentence],
    config: TrainConfig,
) -> TaggerModel:
    """SGD with early stopping: stop after `patience` consecutive epochs
    without strict dev-F1 improvement; return the best snapshot."""
    prepared = _prepare(train_sents, model)
    rng = np.random.default_rng(derive_seed(config.seed, "shuffle", model.model_id))
    log: list[dict] = []

    best_f1 = evaluate(model, dev_sents).f1
    best_state = (model.w_hidden.copy(), model.w_out.copy(), model.b_out.copy())
    log.append({"epoch": 0, "dev_f1": best_f1, "improved": True})
    streak = 0
    for epoch in range(1, config.max_epochs + 1):
        for si in rng.permutation(len(prepared)):
            idx, gold = prepared[si]
            _sentence_step(model, idx, gold, config.learning_rate)
        dev_f1 = evaluate(model, dev_sents).f1
        improved = dev_f1 > best_f1
        if improved:
            best_f1 = dev_f1
            best_state = (model.w_hidden.copy(), model.w_out.copy(), model.b_out.copy())
            streak = 0
        else:
            streak += 1
        log.append({"epoch": epoch, "dev_f1": dev_f1, "improved": improved})
        if streak >= config.patience:
            break
    model.w_hidden, model.w_out, model.b_out = best_state
    model.train_log = log
    return model


def _interleave(parts: list[tuple[Sentence, ...]]) -> tuple[Sentence, ...]:
    out: list[Sentence] = []
    for i in range(max(len(p) for p in parts)):
        for p in parts:
            if i < len(p):
                out.append(p[i])
    return tuple(out)


def train_multi(
    sources: Sequence[Dataset],
    config: TrainConfig,
    hash_dim: int = DEFAULT_HASH_DIM,
    hidden_dim: int = DEFAULT_HIDDEN_DIM,
) -> TaggerModel | None:
    """Train one model on the round-robin combination of the sources.

    An empty source list returns None, the "no transfer" sentinel.
    """
    if not sources:
        return None
    ordered = sorted(sources, key=lambda d: d.id)
    label_sets = {d.id: d.label_set for d in ordered}
    first = ordered[0].label_set
    mismatched = sorted(i for i, ls in label_sets.items() if ls != first)
    if mismatched:
        raise ConfigError(
            "sources must share one label set for combined training; "
            f"differing: {', '.join(mismatched)}"
        )
    for d in ordered:
        if not d.train or not d.dev:
            raise ConfigError(f"dataset {d.id}: train and dev splits must be non-empty")
    joined = "+".join(d.id for d in ordered)
    model = TaggerModel.init_random(
        sorted(first),
        seed=derive_seed(config.seed, "model", joined),
        hash_dim=hash_dim,
        hidden_dim=hidden_dim,
        model_id=f"{joined}@s{config.seed}",
    )
    train_sents = _interleave([d.train for d in ordered])
    dev_sents = _interleave([d.dev for d in ordered])
    return _train_loop(model, train_sents, dev_sents, config)


def train(
    dataset: Dataset,
    config: TrainConfig,
    hash_dim: int = DEFAULT_HASH_DIM,
    hidden_dim: int = DEFAULT_HIDDEN_DIM,
) -> TaggerModel:
    """Single-task training (one-source combination)."""
    model = train_multi([dataset], config, hash_dim=hash_dim, hidden_dim=hidden_dim)
    assert model is not None
    return model


def _check_labels(model: TaggerModel, target: Dataset, op: str) -> None:
    if frozenset(model.labels) != target.label_set:
        missing = sorted(target.label_set - set(model.labels))
        extra = sorted(set(model.labels) - target.label_set)
        raise ConfigError(
            f"{op}: label sets differ between model {model.model_id} and {target.id}; "
            f"missing from model: {missing or 'none'}; extra in model: {extra or 'none'}"
        )


def fine_tune(model: TaggerModel, target: Dataset, config: TrainConfig) -> TaggerModel:
    """Continue training from the model's weights on the target data."""
    _check_labels(model, target, "fine_tune")
    tuned = model.copy(model_id=f"{model.model_id}>ft:{target.id}@s{config.seed}")
    return _train_loop(tuned, target.train, target.dev, config)


def swap_head(model: TaggerModel, new_label_set: Iterable[str], seed: int) -> TaggerModel:
    """Keep the hidden layer, replace the softmax head for a new label set."""
    labels = tuple(sorted(set(new_label_set)))
    if not labels:
        raise ConfigError("swap_head: new label set is empty")
    rng = np.random.default_rng(derive_seed(seed, "head"))
    w_out = rng.normal(0.0, 0.1, size=(model.hidden_dim, len(labels)))
    b_out = np.zeros(len(labels))
    return TaggerModel(
        labels,
        model.w_hidden.copy(),
        w_out,
        b_out,
        seed,
        f"{model.model_id}>head@s{seed}",
    )


def zero_shot_apply(model: TaggerModel, target: Dataset) -> Score:
    """Evaluate the unmodified model on the target test split."""
    _check_labels(model, target, "zero_shot_apply")
    return evaluate(model, target.test)
