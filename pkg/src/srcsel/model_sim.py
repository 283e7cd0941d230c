"""Model-based similarity measures.

Aligns the last-layer feature spaces of two taggers on the target text
with orthogonal Procrustes and scores dissimilarity as how far the map
lies from the identity. Also builds mean-feature text embeddings and
diagonal-Fisher task embeddings fused by reciprocal rank.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .corpus import Dataset
from .errors import ConfigError, DependencyError, ParseError
from .evalrank import Ranking, rrf_scores
from .measures import MODEL_SIM, TASK_EMB, TEXT_EMB, cosine_distance
from .tagger import TaggerModel, hashed_features
from .util import fmt_sig


@dataclass
class FeatureMatrix:
    """Last-layer activations, one row per token of one dataset's train
    split in file order."""

    model_id: str
    dataset_id: str
    values: np.ndarray

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def d(self) -> int:
        return self.values.shape[1]


@dataclass
class AlignmentMap:
    """Linear map W taking source feature rows toward target features."""

    w: np.ndarray
    residual: float
    source_model_id: str
    target_model_id: str
    method: str = "orthogonal"


def extract_features(model: TaggerModel, dataset: Dataset) -> FeatureMatrix:
    """Hidden-layer activation of every train token, sentence by sentence."""
    if not dataset.train:
        raise ConfigError(f"dataset {dataset.id}: no train sentences to extract features from")
    rows = [
        model.hidden_activations([t.text for t in sent]) for sent in dataset.train
    ]
    values = np.vstack(rows)
    if not np.all(np.isfinite(values)):
        raise ValueError(f"non-finite feature values from model {model.model_id}")
    if values.shape[0] < values.shape[1]:
        warnings.warn(
            f"feature matrix for {dataset.id} has fewer rows ({values.shape[0]}) than "
            f"dimensions ({values.shape[1]}); alignment may be underdetermined"
        )
    return FeatureMatrix(model.model_id, dataset.id, values)


def save_features(fm: FeatureMatrix, path: str | Path) -> None:
    """Text format: header `model_id dataset_id n d`, then n rows of d
    space-separated decimals at 12 significant digits."""
    for name, value in (("model_id", fm.model_id), ("dataset_id", fm.dataset_id)):
        if " " in value or "\n" in value:
            raise ValueError(f"{name} {value!r} must not contain whitespace")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [f"{fm.model_id} {fm.dataset_id} {fm.n} {fm.d}"]
    lines.extend(" ".join(fmt_sig(x) for x in row) for row in fm.values)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_features(path: str | Path) -> FeatureMatrix:
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise ParseError(f"cannot read feature matrix {path}: {exc}") from None
    if not lines:
        raise ParseError(f"{path}: empty feature matrix file")
    header = lines[0].split(" ")
    if len(header) != 4:
        raise ParseError(f"{path}: malformed header {lines[0]!r}")
    model_id, dataset_id, n_str, d_str = header
    try:
        n, d = int(n_str), int(d_str)
        values = np.array(
            [[float(x) for x in line.split(" ")] for line in lines[1 : n + 1]], dtype=float
        )
    except ValueError as exc:
        raise ParseError(f"{path}: {exc}") from None
    if values.shape != (n, d):
        raise ParseError(f"{path}: expected {n}x{d} values, got {values.shape}")
    return FeatureMatrix(model_id, dataset_id, values)


def _fix_svd_signs(u: np.ndarray, vt: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Make each left singular vector's largest-magnitude entry positive
    so the SVD (and thus W) is reproducible."""
    for j in range(u.shape[1]):
        i = int(np.abs(u[:, j]).argmax())
        if u[i, j] < 0:
            u[:, j] = -u[:, j]
            vt[j, :] = -vt[j, :]
    return u, vt


def procrustes_align(
    f_src: FeatureMatrix,
    f_tgt: FeatureMatrix,
    method: str = "orthogonal",
    center: bool = False,
) -> AlignmentMap:
    """W minimizing ||F_src W^T - F_tgt||_F.

    Default is the orthogonal (Schonemann) solution W = U V^T from the
    SVD of F_tgt^T F_src; method="least_squares" gives the unconstrained
    linear map for comparison. Centering is off by default because the
    distance compares W to the identity.
    """
    if f_src.dataset_id != f_tgt.dataset_id:
        raise ValueError(
            f"feature matrices built on different datasets: "
            f"{f_src.dataset_id!r} vs {f_tgt.dataset_id!r}"
        )
    if f_src.values.shape != f_tgt.values.shape:
        raise ValueError(
            f"feature shape mismatch: {f_src.values.shape} vs {f_tgt.values.shape}"
        )
    a = f_src.values.astype(float)
    b = f_tgt.values.astype(float)
    if center:
        a = a - a.mean(axis=0)
        b = b - b.mean(axis=0)
    if method == "orthogonal":
        u, _, vt = np.linalg.svd(b.T @ a)
        u, vt = _fix_svd_signs(u, vt)
        w = u @ vt
    elif method == "least_squares":
        x, *_ = np.linalg.lstsq(a, b, rcond=None)
        w = x.T
    else:
        raise ConfigError(f"unknown alignment method {method!r}")
    residual = float(np.linalg.norm(a @ w.T - b))
    return AlignmentMap(w, residual, f_src.model_id, f_tgt.model_id, method=method)


def model_distance(alignment: AlignmentMap) -> float:
    """Frobenius norm of W minus the identity; 0 means the spaces already
    agree."""
    w = alignment.w
    return float(np.linalg.norm(w - np.eye(w.shape[0])))


def text_embedding(model: TaggerModel, dataset: Dataset) -> np.ndarray:
    """Column mean of the feature matrix: one vector per (model, text)."""
    return extract_features(model, dataset).values.mean(axis=0)


@dataclass
class TaskEmbedding:
    """Diagonal empirical Fisher of the gold-label log-likelihood,
    grouped into a hidden-weights block and a label-count-independent
    output block."""

    blocks: dict[str, np.ndarray]


def task_embedding(model: TaggerModel, dataset: Dataset) -> TaskEmbedding:
    if not dataset.train:
        raise ConfigError(f"dataset {dataset.id}: no train sentences for a task embedding")
    label_index = {lab: k for k, lab in enumerate(model.labels)}
    fisher_hidden = np.zeros_like(model.w_hidden)
    fisher_out = np.zeros_like(model.w_out)
    fisher_bias = np.zeros_like(model.b_out)
    n_tokens = 0
    for sent in dataset.train:
        texts = [t.text for t in sent]
        try:
            gold = np.array([label_index[t.label] for t in sent], dtype=np.int64)
        except KeyError as exc:
            raise ConfigError(
                f"dataset {dataset.id} label {exc} not in model {model.model_id}'s head"
            ) from None
        idx = hashed_features(texts, model.hash_dim)
        pre, hidden, probs = model.forward(idx)
        g = probs
        g[np.arange(len(sent)), gold] -= 1.0
        fisher_out += (hidden**2).T @ (g**2)
        fisher_bias += (g**2).sum(axis=0)
        g_pre = (g @ model.w_out.T) * (pre > 0.0)
        for t in range(len(sent)):
            rows, counts = np.unique(idx[t], return_counts=True)
            # a feature hashed into the same bucket twice doubles the
            # gradient of that row, so the square scales by count^2
            fisher_hidden[rows] += (counts[:, None].astype(float) ** 2) * (g_pre[t] ** 2)[None, :]
        n_tokens += len(sent)
    fisher_hidden /= n_tokens
    fisher_out /= n_tokens
    fisher_bias /= n_tokens
    output_block = np.concatenate([fisher_out.sum(axis=1), [fisher_bias.sum()]])
    return TaskEmbedding(blocks={"hidden": fisher_hidden.ravel(), "output": output_block})


def task_embedding_scores(
    target_emb: TaskEmbedding,
    source_embs: Mapping[str, TaskEmbedding],
    target_id: str = "",
    k: int = 60,
) -> dict[str, float]:
    """Fused similarity score per source: rank sources by per-block
    cosine distance to the target, then reciprocal-rank-fuse the block
    rankings. Higher score = closer."""
    if not source_embs:
        raise ValueError("no source embeddings to score")
    block_names = sorted(target_emb.blocks)
    for sid, emb in source_embs.items():
        if sorted(emb.blocks) != block_names:
            raise ValueError(
                f"source {sid} has blocks {sorted(emb.blocks)}, target has {block_names}"
            )
    rankings = []
    for name in block_names:
        dists = {
            sid: cosine_distance(emb.blocks[name], target_emb.blocks[name])
            for sid, emb in source_embs.items()
        }
        ordered = tuple(sorted(dists, key=lambda s: (dists[s], s)))
        rankings.append(Ranking(target_id=target_id, measure=f"block:{name}", sources=ordered))
    return rrf_scores(rankings, k=k)


class SimilarityContext:
    """Serves model-based measure values to the distance matrix, caching
    feature matrices and task embeddings per dataset pair."""

    def __init__(self, models: Mapping[str, TaggerModel], datasets: Mapping[str, Dataset]):
        self._models = dict(models)
        self._datasets = dict(datasets)
        self._features: dict[tuple[str, str], FeatureMatrix] = {}
        self._task_embs: dict[str, TaskEmbedding] = {}

    def model(self, dataset_id: str) -> TaggerModel:
        if dataset_id not in self._models:
            raise DependencyError(
                f"no single-task model for dataset {dataset_id}; "
                "run `observe --train-singles` first"
            )
        return self._models[dataset_id]

    def features(self, model_dataset_id: str, text_dataset_id: str) -> FeatureMatrix:
        key = (model_dataset_id, text_dataset_id)
        if key not in self._features:
            self._features[key] = extract_features(
                self.model(model_dataset_id), self._datasets[text_dataset_id]
            )
        return self._features[key]

    def task_emb(self, dataset_id: str) -> TaskEmbedding:
        if dataset_id not in self._task_embs:
            self._task_embs[dataset_id] = task_embedding(
                self.model(dataset_id), self._datasets[dataset_id]
            )
        return self._task_embs[dataset_id]

    def values_for_target(
        self, measure: str, target: Dataset, sources: Sequence[Dataset]
    ) -> dict[str, float]:
        if measure == MODEL_SIM:
            f_t = self.features(target.id, target.id)
            return {
                s.id: model_distance(procrustes_align(self.features(s.id, target.id), f_t))
                for s in sources
            }
        if measure == TEXT_EMB:
            # the target's own model embeds both texts so the vectors
            # live in one feature space
            m_t = self.model(target.id)
            e_t = text_embedding(m_t, self._datasets[target.id])
            return {
                s.id: cosine_distance(text_embedding(m_t, self._datasets[s.id]), e_t)
                for s in sources
            }
        if measure == TASK_EMB:
            return task_embedding_scores(
                self.task_emb(target.id),
                {s.id: self.task_emb(s.id) for s in sources},
                target_id=target.id,
            )
        raise ConfigError(f"unknown model-based measure {measure!r}")
