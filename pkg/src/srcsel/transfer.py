"""Transfer experiments across dataset pairs, seeds, and settings.

Three transfer settings: apply a source model unchanged (zero shot),
fine-tune it on the target (domain adaptation), or swap its head and
fine-tune (cross task). Each observation pairs the transferred F1 with
the single-task F1 under the same seed; single-task runs are logged as
their own rows. F1 values are quantized to 4 decimals when an
observation is built so the log is a lossless record.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .corpus import Dataset
from .errors import ConfigError, ParseError
from .tagger import (
    TaggerModel,
    TrainConfig,
    evaluate,
    fine_tune,
    swap_head,
    train_multi,
    zero_shot_apply,
)
from .util import derive_seed

ZERO_SHOT = "zero_shot"
DOMAIN_ADAPT = "domain_adapt"
CROSS_TASK = "cross_task"
SINGLE_TASK = "single_task"

TRANSFER_SETTINGS = (ZERO_SHOT, DOMAIN_ADAPT, CROSS_TASK)


@dataclass(frozen=True)
class TransferObservation:
    setting: str
    source_ids: tuple[str, ...]
    target_id: str
    seed: int
    f1_single: float
    f1_transfer: float
    gain_abs: float
    gain_rel: float | None


def gain(f1_single: float, f1_transfer: float) -> tuple[float, float | None]:
    """Absolute gain in F1 points and relative gain in percent; the
    relative value is undefined (None) when the single-task F1 is 0."""
    for name, v in (("f1_single", f1_single), ("f1_transfer", f1_transfer)):
        if not 0.0 <= v <= 100.0:
            raise ValueError(f"{name} must be in [0, 100], got {v}")
    gain_abs = f1_transfer - f1_single
    gain_rel = 100.0 * gain_abs / f1_single if f1_single > 0 else None
    return gain_abs, gain_rel


def make_observation(
    setting: str,
    source_ids: Sequence[str],
    target_id: str,
    seed: int,
    f1_single: float,
    f1_transfer: float,
) -> TransferObservation:
    """Quantizes the F1 values to 4 decimals and derives the gains from
    the quantized values, so stored and recomputed gains match exactly."""
    f1_single = round(float(f1_single), 4)
    f1_transfer = round(float(f1_transfer), 4)
    gain_abs, gain_rel = gain(f1_single, f1_transfer)
    return TransferObservation(
        setting=setting,
        source_ids=tuple(sorted(source_ids)),
        target_id=target_id,
        seed=int(seed),
        f1_single=f1_single,
        f1_transfer=f1_transfer,
        gain_abs=round(gain_abs, 4),
        gain_rel=round(gain_rel, 4) if gain_rel is not None else None,
    )


def obs_key(obs: TransferObservation) -> tuple[str, tuple[str, ...], str, int]:
    return (obs.setting, tuple(sorted(obs.source_ids)), obs.target_id, obs.seed)


def compatible(
    setting: str,
    source: Dataset,
    target: Dataset,
    cross_task_targets: tuple[str, ...] | None = None,
) -> tuple[bool, str]:
    """Whether the pair may run under the setting, with a reason when not."""
    if setting in (ZERO_SHOT, DOMAIN_ADAPT):
        if source.task != target.task:
            return False, f"tasks differ ({source.task} vs {target.task})"
        if source.label_set != target.label_set:
            return False, "label sets differ"
        return True, ""
    if setting == CROSS_TASK:
        if source.task == target.task:
            return False, f"same task ({source.task}); cross-task needs different tasks"
        if cross_task_targets is not None and target.task not in cross_task_targets:
            return False, f"target task {target.task} not in the cross-task target filter"
        return True, ""
    raise ConfigError(f"unknown setting {setting!r}")


@dataclass(frozen=True)
class ExperimentPlan:
    settings: tuple[str, ...]
    seeds: tuple[int, ...]
    cross_task_targets: tuple[str, ...] | None = None

    def __post_init__(self):
        unknown = [s for s in self.settings if s not in TRANSFER_SETTINGS]
        if unknown:
            raise ConfigError(
                f"unknown settings {unknown}; valid: {', '.join(TRANSFER_SETTINGS)}"
            )
        if not self.seeds:
            raise ConfigError("plan needs at least one seed")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("plan seeds must be distinct")


class TransferRunner:
    """Trains and caches models so repeated observations are cheap; an
    optional model directory persists single-task models across runs."""

    def __init__(
        self,
        datasets: Sequence[Dataset],
        base_config: TrainConfig = TrainConfig(),
        model_dir: str | Path | None = None,
    ):
        ids = [d.id for d in datasets]
        if len(set(ids)) != len(ids):
            raise ConfigError("dataset ids are not unique")
        self.datasets = {d.id: d for d in datasets}
        self.base_config = base_config
        self.model_dir = Path(model_dir) if model_dir is not None else None
        self._singles: dict[tuple[str, int], TaggerModel] = {}
        self._single_f1: dict[tuple[str, int], float] = {}

    def _config(self, seed: int) -> TrainConfig:
        return TrainConfig(
            learning_rate=self.base_config.learning_rate,
            max_epochs=self.base_config.max_epochs,
            patience=self.base_config.patience,
            seed=seed,
        )

    def dataset(self, dataset_id: str) -> Dataset:
        if dataset_id not in self.datasets:
            raise ConfigError(f"unknown dataset id {dataset_id!r}")
        return self.datasets[dataset_id]

    def single_model(self, dataset_id: str, seed: int) -> TaggerModel:
        key = (dataset_id, seed)
        if key in self._singles:
            return self._singles[key]
        path = None
        if self.model_dir is not None:
            path = self.model_dir / f"{dataset_id}@s{seed}.json"
            if path.exists():
                model = TaggerModel.load(path)
                self._singles[key] = model
                return model
        model = train_multi([self.dataset(dataset_id)], self._config(seed))
        assert model is not None
        if path is not None:
            model.save(path)
        self._singles[key] = model
        return model

    def single_f1(self, dataset_id: str, seed: int) -> float:
        key = (dataset_id, seed)
        if key not in self._single_f1:
            model = self.single_model(dataset_id, seed)
            self._single_f1[key] = evaluate(model, self.dataset(dataset_id).test).f1
        return self._single_f1[key]

    def observe_single(self, dataset_id: str, seed: int) -> TransferObservation:
        f1 = self.single_f1(dataset_id, seed)
        return make_observation(SINGLE_TASK, (), dataset_id, seed, f1, f1)

    def observe_set(
        self, setting: str, source_ids: Sequence[str], target_id: str, seed: int
    ) -> TransferObservation:
        """One transfer run: train on the (multi-)source combination,
        transfer to the target per the setting, score on target test."""
        if setting not in TRANSFER_SETTINGS:
            raise ConfigError(f"unknown setting {setting!r}")
        if not source_ids:
            raise ConfigError("observe_set needs at least one source")
        sources = [self.dataset(s) for s in sorted(source_ids)]
        target = self.dataset(target_id)
        if target_id in {s.id for s in sources}:
            raise ConfigError(f"target {target_id} cannot be one of its own sources")
        if len(sources) == 1:
            model = self.single_model(sources[0].id, seed)
        else:
            model = train_multi(sources, self._config(seed))
            assert model is not None
        if setting == ZERO_SHOT:
            f1_transfer = zero_shot_apply(model, target).f1
        elif setting == DOMAIN_ADAPT:
            tuned = fine_tune(model, target, self._config(seed))
            f1_transfer = evaluate(tuned, target.test).f1
        else:
            swap_seed = derive_seed(seed, "head", model.model_id, target.id)
            swapped = swap_head(model, target.label_set, swap_seed)
            tuned = fine_tune(swapped, target, self._config(seed))
            f1_transfer = evaluate(tuned, target.test).f1
        f1_single = self.single_f1(target_id, seed)
        return make_observation(setting, [s.id for s in sources], target_id, seed, f1_single, f1_transfer)

    def run_plan(
        self,
        plan: ExperimentPlan,
        existing: set[tuple[str, tuple[str, ...], str, int]] = frozenset(),
        on_observation=None,
    ) -> tuple[list[TransferObservation], list[str]]:
        """All compatible (setting, source, target, seed) pair runs plus
        single-task rows for every dataset; incompatible pairs are
        recorded in the returned skip list, self pairs are excluded by
        definition. Keys already in `existing` are not recomputed."""
        observations: list[TransferObservation] = []
        skips: list[str] = []

        def emit(obs: TransferObservation) -> None:
            observations.append(obs)
            if on_observation is not None:
                on_observation(obs)

        ids = sorted(self.datasets)
        for dataset_id in ids:
            for seed in plan.seeds:
                if (SINGLE_TASK, (), dataset_id, seed) in existing:
                    continue
                emit(self.observe_single(dataset_id, seed))
        for setting in sorted(set(plan.settings)):
            for source_id in ids:
                for target_id in ids:
                    if source_id == target_id:
                        continue
                    ok, reason = compatible(
                        setting,
                        self.datasets[source_id],
                        self.datasets[target_id],
                        plan.cross_task_targets,
                    )
                    if not ok:
                        skips.append(f"{setting}: {source_id} -> {target_id}: {reason}")
                        continue
                    for seed in plan.seeds:
                        if (setting, (source_id,), target_id, seed) in existing:
                            continue
                        emit(self.observe_set(setting, [source_id], target_id, seed))
        return observations, skips


def aggregate(
    observations: Sequence[TransferObservation],
    group_keys: tuple[str, ...] = ("setting",),
) -> list[dict]:
    """Per-group min/mean/max of both gains plus positive/negative
    counts. Undefined relative gains are excluded from the rel stats."""
    valid_keys = {"setting", "target_id", "seed"}
    bad = [k for k in group_keys if k not in valid_keys]
    if bad:
        raise ConfigError(f"cannot group by {bad}; valid keys: {sorted(valid_keys)}")
    groups: dict[tuple, list[TransferObservation]] = {}
    for obs in observations:
        key = tuple(getattr(obs, k) for k in group_keys)
        groups.setdefault(key, []).append(obs)
    rows: list[dict] = []
    for key in sorted(groups):
        members = groups[key]
        abs_vals = [o.gain_abs for o in members]
        rel_vals = [o.gain_rel for o in members if o.gain_rel is not None]
        row: dict = dict(zip(group_keys, key))
        row.update(
            n=len(members),
            gain_abs_min=min(abs_vals),
            gain_abs_mean=sum(abs_vals) / len(abs_vals),
            gain_abs_max=max(abs_vals),
            gain_rel_min=min(rel_vals) if rel_vals else None,
            gain_rel_mean=sum(rel_vals) / len(rel_vals) if rel_vals else None,
            gain_rel_max=max(rel_vals) if rel_vals else None,
            n_positive=sum(v > 0 for v in abs_vals),
            n_negative=sum(v < 0 for v in abs_vals),
        )
        rows.append(row)
    return rows


def format_observation(obs: TransferObservation) -> str:
    sources = ", ".join(json.dumps(s) for s in obs.source_ids)
    rel = f"{obs.gain_rel:.4f}" if obs.gain_rel is not None else "null"
    return (
        f'{{"setting": {json.dumps(obs.setting)}, "source_ids": [{sources}], '
        f'"target_id": {json.dumps(obs.target_id)}, "seed": {obs.seed}, '
        f'"f1_single": {obs.f1_single:.4f}, "f1_transfer": {obs.f1_transfer:.4f}, '
        f'"gain_abs": {obs.gain_abs:.4f}, "gain_rel": {rel}}}'
    )


def write_observations(
    observations: Iterable[TransferObservation], path: str | Path, append: bool = False
) -> None:
    """Line-delimited log, floats at 4 decimal places, sorted by
    (setting, sources, target, seed) unless appending."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    rows = list(observations)
    if not append:
        rows = sorted(rows, key=obs_key)
    mode = "a" if append else "w"
    with path.open(mode, encoding="utf-8") as fh:
        for obs in rows:
            fh.write(format_observation(obs) + "\n")


def read_observations(path: str | Path) -> list[TransferObservation]:
    path = Path(path)
    if not path.exists():
        raise ParseError(f"observation log not found: {path}")
    out: list[TransferObservation] = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            raw = json.loads(line)
            obs = TransferObservation(
                setting=raw["setting"],
                source_ids=tuple(raw["source_ids"]),
                target_id=raw["target_id"],
                seed=int(raw["seed"]),
                f1_single=float(raw["f1_single"]),
                f1_transfer=float(raw["f1_transfer"]),
                gain_abs=float(raw["gain_abs"]),
                gain_rel=float(raw["gain_rel"]) if raw["gain_rel"] is not None else None,
            )
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"{path}:{lineno}: bad observation record: {exc}") from None
        out.append(obs)
    return out


def check_observations(observations: Sequence[TransferObservation]) -> None:
    """Independent bookkeeping pass: stored gains must equal gains
    recomputed from the stored F1 values."""
    for obs in observations:
        expect_abs, expect_rel = gain(obs.f1_single, obs.f1_transfer)
        if round(expect_abs, 4) != obs.gain_abs:
            raise ValueError(f"{obs_key(obs)}: stored gain_abs {obs.gain_abs} inconsistent")
        expect_rel = round(expect_rel, 4) if expect_rel is not None else None
        if expect_rel != obs.gain_rel:
            raise ValueError(f"{obs_key(obs)}: stored gain_rel {obs.gain_rel} inconsistent")
