"""Meta-prediction: from distance values to transfer decisions.

Gains are classed Positive/Neutral/Negative around a threshold theta.
Predictors learn from observed pair transfers (one sample per
source/target pair, features = distance values) and either classify the
expected gain or regress it; the selection rule keeps sources predicted
Positive (classifiers) or with predicted gain >= theta (regressors),
which may legitimately be the empty set. Top-n rankings are the static
baselines.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy.optimize import minimize

from .errors import ConfigError, MissingObservationError, ParseError
from .measures import HIGHER_IS_CLOSER, DistanceRecord
from .svm import SVR, BinarySVC, rbf_kernel
from .transfer import TransferObservation, obs_key

POSITIVE = "positive"
NEUTRAL = "neutral"
NEGATIVE = "negative"
CLASS_ORDER = (NEGATIVE, NEUTRAL, POSITIVE)

PREDICTOR_KINDS = ("svm_c", "svm_r", "knn", "logreg", "linreg")
CLASSIFIER_KINDS = ("svm_c", "knn", "logreg")
REGRESSOR_KINDS = ("svm_r", "linreg")


def classify_gain(g: float, theta: float = 0.5) -> str:
    """Positive iff g >= theta, Negative iff g <= -theta, else Neutral."""
    if theta <= 0:
        raise ValueError(f"theta must be > 0, got {theta}")
    if g >= theta:
        return POSITIVE
    if g <= -theta:
        return NEGATIVE
    return NEUTRAL


@dataclass(frozen=True)
class MetaSample:
    x: tuple[float, ...]
    y_gain: float
    y_class: str
    source_id: str
    target_id: str
    setting: str


@dataclass(frozen=True)
class HyperParams:
    theta: float = 0.5
    svm_c: float = 1.0
    svr_epsilon: float = 0.1
    knn_k: int = 5
    logreg_c: float = 1.0
    svm_tol: float = 1e-3

    def __post_init__(self):
        if self.theta <= 0:
            raise ConfigError(f"theta must be > 0, got {self.theta}")
        if self.svm_c <= 0 or self.logreg_c <= 0:
            raise ConfigError("regularization constants must be > 0")
        if self.knn_k < 1:
            raise ConfigError(f"knn_k must be >= 1, got {self.knn_k}")


def features_for_target(
    records: Sequence[DistanceRecord], measures: Sequence[str], target_id: str
) -> dict[str, np.ndarray]:
    """Per-source feature vectors (one distance value per measure, in
    measure order) for one target."""
    table: dict[tuple[str, str], float] = {}
    sources: set[str] = set()
    for r in records:
        if r.target_id == target_id and r.measure in measures:
            table[(r.measure, r.source_id)] = r.value
            sources.add(r.source_id)
    out: dict[str, np.ndarray] = {}
    for sid in sorted(sources):
        missing = [m for m in measures if (m, sid) not in table]
        if missing:
            raise ConfigError(
                f"no {', '.join(missing)} value for pair ({sid} -> {target_id})"
            )
        out[sid] = np.array([table[(m, sid)] for m in measures], dtype=float)
    return out


def build_samples(
    observations: Sequence[TransferObservation],
    records: Sequence[DistanceRecord],
    measures: Sequence[str],
    setting: str,
    theta: float = 0.5,
) -> list[MetaSample]:
    """One sample per (source, target) pair of the setting: features are
    the pair's distance values, the regression target is the mean
    gain_abs over seeds."""
    gains: dict[tuple[str, str], list[float]] = {}
    for obs in observations:
        if obs.setting == setting and len(obs.source_ids) == 1:
            gains.setdefault((obs.source_ids[0], obs.target_id), []).append(obs.gain_abs)
    samples: list[MetaSample] = []
    per_target: dict[str, dict[str, np.ndarray]] = {}
    for source_id, target_id in sorted(gains):
        if target_id not in per_target:
            per_target[target_id] = features_for_target(records, measures, target_id)
        feats = per_target[target_id]
        if source_id not in feats:
            raise ConfigError(
                f"no distance values for observed pair ({source_id} -> {target_id})"
            )
        mean_gain = sum(gains[(source_id, target_id)]) / len(gains[(source_id, target_id)])
        samples.append(
            MetaSample(
                x=tuple(float(v) for v in feats[source_id]),
                y_gain=mean_gain,
                y_class=classify_gain(mean_gain, theta),
                source_id=source_id,
                target_id=target_id,
                setting=setting,
            )
        )
    return samples


def topn_select(records: Sequence[DistanceRecord], n: int) -> list[str]:
    """The n closest sources under the measure's polarity, in rank
    order; ties break lexicographically; n beyond the candidate count
    returns everything (the All baseline)."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    rows = list(records)
    if not rows:
        raise ValueError("no distance records to rank")
    measures = {r.measure for r in rows}
    targets = {r.target_id for r in rows}
    if len(measures) != 1 or len(targets) != 1:
        raise ValueError(
            f"topn_select needs records of one measure and one target, "
            f"got measures={sorted(measures)} targets={sorted(targets)}"
        )
    polarity = rows[0].polarity
    if polarity == HIGHER_IS_CLOSER:
        rows.sort(key=lambda r: (-r.value, r.source_id))
    else:
        rows.sort(key=lambda r: (r.value, r.source_id))
    return [r.source_id for r in rows[:n]]


def ranking_from_records(records: Sequence[DistanceRecord]):
    """Full closest-first ordering of one target's records (a Ranking)."""
    from .evalrank import Ranking

    order = topn_select(records, len(records))
    return Ranking(
        target_id=records[0].target_id, measure=records[0].measure, sources=tuple(order)
    )


def _standardize_stats(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mean = x.mean(axis=0)
    scale = x.std(axis=0)
    scale = np.where(scale == 0.0, 1.0, scale)
    return mean, scale


def _rbf_gamma(xs: np.ndarray) -> float:
    var = float(xs.var())
    if var == 0.0:
        return 1.0
    return 1.0 / (xs.shape[1] * var)


class GainPredictor:
    """A fitted meta-predictor. Self-describing: knows its kind, theta,
    feature measures, standardization stats, and parameters."""

    def __init__(
        self,
        kind: str,
        theta: float,
        measures: tuple[str, ...],
        mean: np.ndarray,
        scale: np.ndarray,
        params: dict,
    ):
        if kind not in PREDICTOR_KINDS:
            raise ConfigError(f"unknown predictor kind {kind!r}")
        self.kind = kind
        self.theta = theta
        self.measures = measures
        self.mean = np.asarray(mean, dtype=float)
        self.scale = np.asarray(scale, dtype=float)
        self.params = params

    @property
    def is_classifier(self) -> bool:
        return self.kind in CLASSIFIER_KINDS

    @property
    def is_constant(self) -> bool:
        return "constant" in self.params

    def predict(self, x: Sequence[float]) -> str | float:
        x = np.asarray(x, dtype=float)
        if x.shape != self.mean.shape:
            raise ValueError(
                f"feature dimension mismatch: got {x.shape}, expected {self.mean.shape}"
            )
        xs = (x - self.mean) / self.scale
        if self.is_constant:
            return self.params["constant"]
        return getattr(self, f"_predict_{self.kind}")(xs)

    def _predict_svm_c(self, xs: np.ndarray) -> str:
        votes: Counter[str] = Counter()
        margins: dict[str, float] = {c: 0.0 for c in self.params["classes"]}
        for machine in self.params["machines"]:
            k = rbf_kernel(xs[None, :], np.array(machine["sv"]), self.params["gamma"])
            value = float((k @ np.array(machine["coef"]))[0] - machine["rho"])
            winner = machine["pos"] if value > 0 else machine["neg"]
            votes[winner] += 1
            margins[winner] += abs(value)
        best = max(
            self.params["classes"],
            key=lambda c: (votes[c], margins[c], -CLASS_ORDER.index(c)),
        )
        return best

    def _predict_svm_r(self, xs: np.ndarray) -> float:
        k = rbf_kernel(xs[None, :], np.array(self.params["sv"]), self.params["gamma"])
        return float((k @ np.array(self.params["beta"]))[0] - self.params["rho"])

    def _predict_knn(self, xs: np.ndarray) -> str:
        train = np.array(self.params["x"])
        labels = self.params["labels"]
        k = min(self.params["k"], len(labels))
        dists = ((train - xs[None, :]) ** 2).sum(axis=1)
        order = np.argsort(dists, kind="stable")[:k]
        votes: Counter[str] = Counter(labels[i] for i in order)
        first_pos = {}
        for rank, i in enumerate(order):
            first_pos.setdefault(labels[i], rank)
        return max(votes, key=lambda c: (votes[c], -first_pos[c]))

    def _predict_logreg(self, xs: np.ndarray) -> str:
        w = np.array(self.params["w"])
        b = np.array(self.params["b"])
        logits = xs @ w + b
        return self.params["classes"][int(logits.argmax())]

    def _predict_linreg(self, xs: np.ndarray) -> float:
        return float(np.dot(self.params["coef"], xs) + self.params["intercept"])

    def to_dict(self) -> dict:
        return {
            "format": "gain-predictor-v1",
            "kind": self.kind,
            "theta": self.theta,
            "measures": list(self.measures),
            "mean": self.mean.tolist(),
            "scale": self.scale.tolist(),
            "params": self.params,
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "GainPredictor":
        if payload.get("format") != "gain-predictor-v1":
            raise ParseError("not a gain predictor record")
        return cls(
            kind=payload["kind"],
            theta=payload["theta"],
            measures=tuple(payload["measures"]),
            mean=np.array(payload["mean"], dtype=float),
            scale=np.array(payload["scale"], dtype=float),
            params=payload["params"],
        )

    def save(self, path: str | Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict()) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "GainPredictor":
        path = Path(path)
        try:
            return cls.from_dict(json.loads(path.read_text(encoding="utf-8")))
        except (OSError, json.JSONDecodeError) as exc:
            raise ParseError(f"cannot read predictor file {path}: {exc}") from None


def _fit_svm_c(xs, classes_present, y_class, hyper):
    gamma = _rbf_gamma(xs)
    machines = []
    for a_idx in range(len(classes_present)):
        for b_idx in range(a_idx + 1, len(classes_present)):
            neg_cls, pos_cls = classes_present[a_idx], classes_present[b_idx]
            mask = np.array([c in (neg_cls, pos_cls) for c in y_class])
            sub_x = xs[mask]
            sub_y = np.array([1.0 if c == pos_cls else -1.0 for c in np.array(y_class)[mask]])
            svc = BinarySVC(c=hyper.svm_c, gamma=gamma, tol=hyper.svm_tol).fit(sub_x, sub_y)
            machines.append(
                {
                    "pos": pos_cls,
                    "neg": neg_cls,
                    "sv": svc.x.tolist(),
                    "coef": svc.coef.tolist(),
                    "rho": svc.rho,
                }
            )
    return {"classes": list(classes_present), "machines": machines, "gamma": gamma}


def _fit_logreg(xs, classes_present, y_class, hyper):
    n, m = xs.shape
    k = len(classes_present)
    index = {c: i for i, c in enumerate(classes_present)}
    y_idx = np.array([index[c] for c in y_class])
    onehot = np.zeros((n, k))
    onehot[np.arange(n), y_idx] = 1.0

    def objective(flat):
        w = flat[: m * k].reshape(m, k)
        b = flat[m * k :]
        logits = xs @ w + b
        logits -= logits.max(axis=1, keepdims=True)
        logz = np.log(np.exp(logits).sum(axis=1))
        nll = -(logits[np.arange(n), y_idx] - logz).sum()
        probs = np.exp(logits - logz[:, None])
        grad_logits = probs - onehot
        grad_w = xs.T @ grad_logits + w / hyper.logreg_c
        grad_b = grad_logits.sum(axis=0)
        value = nll + 0.5 / hyper.logreg_c * float((w**2).sum())
        return value, np.concatenate([grad_w.ravel(), grad_b])

    result = minimize(
        objective,
        np.zeros(m * k + k),
        jac=True,
        method="L-BFGS-B",
        options={"maxiter": 2000, "ftol": 1e-12, "gtol": 1e-10},
    )
    w = result.x[: m * k].reshape(m, k)
    b = result.x[m * k :]
    return {"classes": list(classes_present), "w": w.tolist(), "b": b.tolist()}


def fit(
    kind: str,
    samples: Sequence[MetaSample],
    hyper: HyperParams = HyperParams(),
    measures: tuple[str, ...] = (),
) -> GainPredictor:
    """Train a predictor on meta samples; features are standardized with
    stats stored in the predictor. Single-class classification data
    yields a constant predictor (flagged via params)."""
    if kind not in PREDICTOR_KINDS:
        raise ConfigError(f"unknown predictor kind {kind!r}; valid: {PREDICTOR_KINDS}")
    if len(samples) < 2:
        raise ConfigError(f"need at least 2 samples to fit, got {len(samples)}")
    x = np.array([s.x for s in samples], dtype=float)
    if x.ndim != 2:
        raise ConfigError("samples have inconsistent feature dimensions")
    if np.isnan(x).any() or not np.all(np.isfinite(x)):
        raise ConfigError("feature matrix contains NaN or infinite values")
    y_gain = np.array([s.y_gain for s in samples], dtype=float)
    y_class = [s.y_class for s in samples]
    mean, scale = _standardize_stats(x)
    xs = (x - mean) / scale

    if kind in CLASSIFIER_KINDS:
        classes_present = tuple(c for c in CLASS_ORDER if c in set(y_class))
        if len(classes_present) == 1:
            params = {"constant": classes_present[0]}
            return GainPredictor(kind, hyper.theta, tuple(measures), mean, scale, params)
        if kind == "svm_c":
            params = _fit_svm_c(xs, classes_present, y_class, hyper)
        elif kind == "logreg":
            params = _fit_logreg(xs, classes_present, y_class, hyper)
        else:
            params = {"x": xs.tolist(), "labels": list(y_class), "k": hyper.knn_k}
    elif kind == "svm_r":
        gamma = _rbf_gamma(xs)
        svr = SVR(c=hyper.svm_c, epsilon=hyper.svr_epsilon, gamma=gamma, tol=hyper.svm_tol).fit(
            xs, y_gain
        )
        params = {
            "sv": svr.x.tolist(),
            "beta": svr.beta.tolist(),
            "rho": svr.rho,
            "gamma": gamma,
            "epsilon": hyper.svr_epsilon,
        }
    else:
        design = np.column_stack([xs, np.ones(len(xs))])
        coef, *_ = np.linalg.lstsq(design, y_gain, rcond=None)
        params = {"coef": coef[:-1].tolist(), "intercept": float(coef[-1])}
    return GainPredictor(kind, hyper.theta, tuple(measures), mean, scale, params)


def predict_gain(predictor: GainPredictor, x: Sequence[float]) -> str | float:
    return predictor.predict(x)


def select_set(
    predictor: GainPredictor, records: Sequence[DistanceRecord], target_id: str
) -> tuple[list[str], dict[str, str | float]]:
    """Sources worth transferring from, per the predictor: classifiers
    keep Positive predictions, regressors keep predicted gain >= theta.
    Returns (sorted selection, prediction per candidate); the selection
    may be empty, meaning no transfer is recommended."""
    feats = features_for_target(records, predictor.measures, target_id)
    if not feats:
        raise ConfigError(f"no distance records for target {target_id}")
    predictions: dict[str, str | float] = {}
    selected: list[str] = []
    for sid in sorted(feats):
        pred = predictor.predict(feats[sid])
        predictions[sid] = pred
        if predictor.is_classifier:
            if pred == POSITIVE:
                selected.append(sid)
        else:
            if float(pred) >= predictor.theta:
                selected.append(sid)
    return selected, predictions


def evaluate_selection(
    selections: Mapping[str, Sequence[str]],
    observations: Sequence[TransferObservation],
    setting: str,
) -> dict:
    """Mean realized gain of the selected sets across targets. The
    realized gain of a set is the seed-mean gain_abs of its multi-source
    observation; an empty selection contributes 0. Raises a
    MissingObservationError naming every set that was never observed."""
    by_set: dict[tuple[str, tuple[str, ...], str], list[float]] = {}
    for obs in observations:
        if obs.setting == setting:
            by_set.setdefault(
                (setting, tuple(sorted(obs.source_ids)), obs.target_id), []
            ).append(obs.gain_abs)
    per_target: dict[str, float] = {}
    missing: list[tuple[str, tuple[str, ...], str]] = []
    for target_id in sorted(selections):
        chosen = tuple(sorted(selections[target_id]))
        if not chosen:
            per_target[target_id] = 0.0
            continue
        key = (setting, chosen, target_id)
        if key not in by_set:
            missing.append(key)
            continue
        vals = by_set[key]
        per_target[target_id] = sum(vals) / len(vals)
    if missing:
        raise MissingObservationError(missing)
    if not per_target:
        raise ConfigError("no targets to evaluate")
    mean_gain = sum(per_target.values()) / len(per_target)
    mean_size = sum(len(v) for v in selections.values()) / len(selections)
    return {
        "setting": setting,
        "mean_gain": mean_gain,
        "mean_set_size": mean_size,
        "per_target": per_target,
    }
