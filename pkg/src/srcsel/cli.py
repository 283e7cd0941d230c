"""Stage-wise command-line pipeline.

corpora -> distances -> observations -> predictors -> selections -> reports

Each stage reads its inputs from, and writes its outputs to, files under
one output directory, so every stage can be rerun or audited on its own.
Diagnostics go to stderr; data only ever goes to files. One top-level
--seed determines every downstream random choice.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path
from statistics import fmean
from typing import Iterator, Sequence

from . import corpus, measures, model_sim, predict, transfer
from .errors import (
    ConfigError,
    DependencyError,
    MissingObservationError,
    ParseError,
    PipelineError,
)
from .evalrank import Ranking, best_rank_rho, ndcg, rrf, rrf_scores
from .predict import HyperParams, PREDICTOR_KINDS
from .tagger import TaggerModel, TrainConfig

log = logging.getLogger("srcsel")

LOCK_NAME = ".lock"
DIST_DIR = "distances"
MODEL_DIR = "models"
FEATURE_DIR = "features"
PRED_DIR = "predictors"
OBS_FILE = "observations.jsonl"
DATASETS_FILE = "datasets.csv"
SELECTIONS_FILE = "selections.csv"
RANK_REPORT_FILE = "rank_report.csv"
RANK_SUMMARY_FILE = "rank_summary.csv"
REPORT_FILE = "report.txt"
PLOT_FILE = "plot_data.csv"

_DEFAULTS: dict = {
    "manifest": None,
    "out": "srcsel_out",
    "seed": 0,
    "n_seeds": 1,
    "theta": 0.5,
    "measures": (),
    "settings": (),
    "kinds": (),
    "lowercase": False,
    "strict_bio": False,
    "pooled": False,
    "train_singles": False,
    "sets_from": None,
    "cross_task_targets": (),
    "relevance": "f1",
    "perp_split": "train",
    "learning_rate": 0.1,
    "max_epochs": 100,
    "patience": 5,
    "svm_c": 1.0,
    "svr_epsilon": 0.1,
    "knn_k": 5,
    "logreg_c": 1.0,
}


@dataclass(frozen=True)
class RunConfig:
    """Fully resolved options for one command invocation."""

    command: str
    manifest: Path | None
    out: Path
    seed: int
    n_seeds: int
    theta: float
    measures: tuple[str, ...]
    measures_explicit: bool
    settings: tuple[str, ...]
    kinds: tuple[str, ...]
    lowercase: bool
    strict_bio: bool
    pooled: bool
    train_singles: bool
    sets_from: Path | None
    cross_task_targets: tuple[str, ...] | None
    relevance: str
    perp_split: str
    train: TrainConfig
    hyper: HyperParams

    def seeds(self) -> tuple[int, ...]:
        return tuple(self.seed + i for i in range(self.n_seeds))


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    opt = common.add_argument
    opt("--config", type=Path, help="JSON file supplying defaults for any option")
    opt("--manifest", type=Path, help="JSONL manifest of datasets")
    opt("--out", type=Path, help="output directory (default srcsel_out)")
    opt("--seed", type=int, help="base random seed (default 0)")
    opt("--seeds", type=int, dest="n_seeds", metavar="N", help="number of seeds (default 1)")
    opt("--theta", type=float, help="gain class threshold (default 0.5)")
    opt("--measures", help="comma-separated measure names (default: all)")
    opt("--settings", help="comma-separated transfer settings (default: all)")
    opt("--kinds", help="comma-separated predictor kinds (default: all)")
    opt("--lowercase", action="store_const", const=True, help="lowercase all tokens")
    opt("--strict-bio", action="store_const", const=True, help="reject malformed BIO instead of repairing")
    opt("--pooled", action="store_const", const=True, help="pool all targets when fitting/selecting")
    opt("--train-singles", action="store_const", const=True, help="observe: only train single-task models")
    opt("--sets-from", type=Path, help="observe: only run the source sets listed in this file")
    opt("--cross-task-targets", help="restrict cross-task transfer to these target tasks")
    opt("--relevance", choices=("f1", "gain"), help="eval-rank NDCG relevance (default f1)")
    opt("--perp-split", choices=("train", "dev", "test"), help="target split scored by the LM measure")
    opt("--learning-rate", type=float, help="tagger learning rate")
    opt("--max-epochs", type=int, help="tagger epoch cap")
    opt("--patience", type=int, help="tagger early-stopping patience")
    opt("--svm-c", type=float, help="SVM regularization C")
    opt("--svr-epsilon", type=float, help="SVR epsilon tube width")
    opt("--knn-k", type=int, help="kNN neighbor count")
    opt("--logreg-c", type=float, help="logistic regression inverse regularization")

    parser = argparse.ArgumentParser(
        prog="srcsel",
        description="Select transfer sources for sequence labeling via similarity measures and learned gain predictors.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, text in (
        ("ingest", "validate the manifest and summarize each dataset"),
        ("measure", "compute pairwise distance matrices, one file per measure"),
        ("observe", "run transfer experiments and log observations"),
        ("fit", "fit gain predictors from observations and distances"),
        ("select", "predict source sets per target with fitted predictors"),
        ("eval-rank", "score measure rankings against observations (rho, NDCG)"),
        ("report", "write the human-readable report and plot data"),
    ):
        sub.add_parser(name, parents=[common], help=text, description=text)
    return parser


def _as_tuple(value) -> tuple[str, ...]:
    if value is None:
        return ()
    if isinstance(value, str):
        parts = [p.strip() for p in value.split(",")]
    else:
        parts = [str(p) for p in value]
    return tuple(p for p in parts if p)


def _check_subset(names: tuple[str, ...], allowed: Sequence[str], what: str) -> tuple[str, ...]:
    unknown = sorted(set(names) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown {what}: {', '.join(unknown)} (choose from {', '.join(allowed)})")
    return names


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Defaults, then config-file values, then explicitly passed flags."""
    merged = dict(_DEFAULTS)
    if args.config is not None:
        if not args.config.is_file():
            raise ConfigError(f"config file not found: {args.config}")
        try:
            loaded = json.loads(args.config.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {args.config}: {exc}") from None
        if not isinstance(loaded, dict):
            raise ConfigError(f"config file {args.config} must hold a JSON object")
        unknown = sorted(set(loaded) - set(_DEFAULTS))
        if unknown:
            raise ConfigError(f"config file {args.config}: unknown keys {', '.join(unknown)}")
        merged.update(loaded)
    for key in _DEFAULTS:
        value = getattr(args, key, None)
        if value is not None:
            merged[key] = value

    measure_names = _check_subset(
        _as_tuple(merged["measures"]), measures.ALL_MEASURES, "measures"
    )
    setting_names = _check_subset(
        _as_tuple(merged["settings"]), transfer.TRANSFER_SETTINGS, "settings"
    )
    kind_names = _check_subset(_as_tuple(merged["kinds"]), PREDICTOR_KINDS, "predictor kinds")
    cross_targets = _as_tuple(merged["cross_task_targets"])
    if int(merged["n_seeds"]) < 1:
        raise ConfigError("--seeds must be at least 1")

    train = TrainConfig(
        learning_rate=float(merged["learning_rate"]),
        max_epochs=int(merged["max_epochs"]),
        patience=int(merged["patience"]),
        seed=int(merged["seed"]),
    )
    hyper = HyperParams(
        theta=float(merged["theta"]),
        svm_c=float(merged["svm_c"]),
        svr_epsilon=float(merged["svr_epsilon"]),
        knn_k=int(merged["knn_k"]),
        logreg_c=float(merged["logreg_c"]),
    )
    return RunConfig(
        command=args.command,
        manifest=Path(merged["manifest"]) if merged["manifest"] else None,
        out=Path(merged["out"]),
        seed=int(merged["seed"]),
        n_seeds=int(merged["n_seeds"]),
        theta=float(merged["theta"]),
        measures=measure_names or measures.ALL_MEASURES,
        measures_explicit=bool(measure_names),
        settings=setting_names or transfer.TRANSFER_SETTINGS,
        kinds=kind_names or PREDICTOR_KINDS,
        lowercase=bool(merged["lowercase"]),
        strict_bio=bool(merged["strict_bio"]),
        pooled=bool(merged["pooled"]),
        train_singles=bool(merged["train_singles"]),
        sets_from=Path(merged["sets_from"]) if merged["sets_from"] else None,
        cross_task_targets=cross_targets or None,
        relevance=str(merged["relevance"]),
        perp_split=str(merged["perp_split"]),
        train=train,
        hyper=hyper,
    )


@contextmanager
def _output_lock(out_dir: Path) -> Iterator[None]:
    lock = out_dir / LOCK_NAME
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise ConfigError(
            f"output directory {out_dir} is locked by another run (remove {lock} if stale)"
        ) from None
    try:
        os.write(fd, f"{os.getpid()}\n".encode())
        os.close(fd)
        yield
    finally:
        lock.unlink(missing_ok=True)


def _load_datasets(cfg: RunConfig) -> list[corpus.Dataset]:
    if cfg.manifest is None:
        raise ConfigError(f"`{cfg.command}` requires --manifest")
    if not cfg.manifest.is_file():
        raise ConfigError(f"manifest not found: {cfg.manifest}")
    datasets = corpus.load_manifest(cfg.manifest, lowercase=cfg.lowercase, strict_bio=cfg.strict_bio)
    if not datasets:
        raise ConfigError(f"manifest {cfg.manifest} lists no datasets")
    return sorted(datasets, key=lambda d: d.id)


def _read_observations(cfg: RunConfig) -> list[transfer.TransferObservation]:
    path = cfg.out / OBS_FILE
    if not path.is_file():
        raise DependencyError(f"{path} not found; run `observe` first")
    return transfer.read_observations(path)


def _read_all_distances(cfg: RunConfig) -> list[measures.DistanceRecord]:
    records: list[measures.DistanceRecord] = []
    for name in cfg.measures:
        path = cfg.out / DIST_DIR / f"{name}.csv"
        if not path.is_file():
            raise DependencyError(f"{path} not found; run `measure` first")
        records.extend(measures.read_distances(path))
    return records


def _write_csv(path: Path, header: Sequence[str], rows: Sequence[Sequence]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def cmd_ingest(cfg: RunConfig) -> None:
    datasets = _load_datasets(cfg)
    header = ("id", "task", "domain", "n_labels", "train_sentences", "dev_sentences", "test_sentences")
    rows = []
    for ds in datasets:
        summary = corpus.dataset_summary(ds)
        rows.append(tuple(summary[key] for key in header))
    path = cfg.out / DATASETS_FILE
    _write_csv(path, header, rows)
    log.info("validated %d datasets -> %s", len(datasets), path)


def cmd_measure(cfg: RunConfig) -> None:
    datasets = _load_datasets(cfg)
    dist_dir = cfg.out / DIST_DIR
    dist_dir.mkdir(parents=True, exist_ok=True)
    context = None
    if any(m in measures.MODEL_MEASURES for m in cfg.measures):
        seed0 = cfg.seeds()[0]
        models: dict[str, TaggerModel] = {}
        missing = []
        for ds in datasets:
            path = cfg.out / MODEL_DIR / f"{ds.id}@s{seed0}.json"
            if path.is_file():
                models[ds.id] = TaggerModel.load(path)
            else:
                missing.append(ds.id)
        if missing:
            raise DependencyError(
                f"no trained model for {', '.join(missing)} (seed {seed0}); "
                "run `observe --train-singles` first"
            )
        context = model_sim.SimilarityContext(models=models, datasets={d.id: d for d in datasets})
    for name in cfg.measures:
        records = measures.distance_matrix(
            datasets, name, context=context, perplexity_split=cfg.perp_split
        )
        path = dist_dir / f"{name}.csv"
        measures.write_distances(records, path)
        log.info("%s: %d pairs -> %s", name, len(records), path)


def _read_sets_file(path: Path) -> list[tuple[str, str, tuple[str, ...]]]:
    """Accepts either select's selections.csv or plain rows of
    setting,target,src1;src2. Empty source sets are skipped."""
    if not path.is_file():
        raise ConfigError(f"sets file not found: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [row for row in csv.reader(fh) if row and any(cell.strip() for cell in row)]
    if not rows:
        return []
    if rows[0][0].strip() == "setting":
        header, rows = rows[0], rows[1:]
        with_kind = len(header) >= 2 and header[1].strip() == "kind"
    else:
        with_kind = len(rows[0]) >= 4
    entries = set()
    for row in rows:
        cells = [c.strip() for c in row]
        try:
            if with_kind:
                setting, target, raw = cells[0], cells[2], cells[3]
            else:
                setting, target, raw = cells[0], cells[1], cells[2]
        except IndexError:
            raise ParseError(f"{path}: malformed row {row!r}") from None
        if setting not in transfer.TRANSFER_SETTINGS:
            raise ParseError(f"{path}: unknown setting {setting!r} in row {row!r}")
        sources = tuple(sorted({s.strip() for s in raw.split(";") if s.strip()}))
        if sources:
            entries.add((setting, target, sources))
    return sorted(entries)


def cmd_observe(cfg: RunConfig) -> None:
    datasets = _load_datasets(cfg)
    model_dir = cfg.out / MODEL_DIR
    runner = transfer.TransferRunner(datasets, base_config=cfg.train, model_dir=model_dir)
    obs_path = cfg.out / OBS_FILE
    existing = set()
    if obs_path.is_file():
        existing = {transfer.obs_key(o) for o in transfer.read_observations(obs_path)}
    appended = 0

    with open(obs_path, "a", encoding="utf-8") as fh:

        def emit(obs: transfer.TransferObservation) -> None:
            nonlocal appended
            key = transfer.obs_key(obs)
            if key in existing:
                return
            existing.add(key)
            fh.write(transfer.format_observation(obs) + "\n")
            fh.flush()
            appended += 1

        if cfg.sets_from is not None:
            for setting, target, sources in _read_sets_file(cfg.sets_from):
                for seed in cfg.seeds():
                    if (transfer.SINGLE_TASK, (), target, seed) not in existing:
                        emit(runner.observe_single(target, seed))
                    if (setting, sources, target, seed) not in existing:
                        emit(runner.observe_set(setting, sources, target, seed))
        elif cfg.train_singles:
            for ds in datasets:
                for seed in cfg.seeds():
                    if (transfer.SINGLE_TASK, (), ds.id, seed) not in existing:
                        emit(runner.observe_single(ds.id, seed))
        else:
            plan = transfer.ExperimentPlan(
                settings=tuple(sorted(cfg.settings)),
                seeds=cfg.seeds(),
                cross_task_targets=cfg.cross_task_targets,
            )
            _, skips = runner.run_plan(plan, existing=frozenset(existing), on_observation=emit)
            for reason in skips:
                log.info("skip %s", reason)

    rewritten = transfer.read_observations(obs_path)
    transfer.write_observations(rewritten, obs_path)
    log.info("observations: %d rows (%d new) -> %s", len(rewritten), appended, obs_path)

    feature_dir = cfg.out / FEATURE_DIR
    feature_dir.mkdir(parents=True, exist_ok=True)
    seed0 = cfg.seeds()[0]
    for ds in datasets:
        if not (model_dir / f"{ds.id}@s{seed0}.json").is_file():
            continue
        model = runner.single_model(ds.id, seed0)
        matrix = model_sim.extract_features(model, ds)
        model_sim.save_features(matrix, feature_dir / f"{ds.id}@s{seed0}.features.txt")
    log.info("feature matrices -> %s", feature_dir)


def _predictor_path(cfg: RunConfig, setting: str, kind: str, label: str) -> Path:
    return cfg.out / PRED_DIR / f"{setting}__{kind}__{label}.json"


def cmd_fit(cfg: RunConfig) -> None:
    observations = _read_observations(cfg)
    records = _read_all_distances(cfg)
    pred_dir = cfg.out / PRED_DIR
    pred_dir.mkdir(parents=True, exist_ok=True)
    for setting in sorted(cfg.settings):
        samples = predict.build_samples(
            observations, records, cfg.measures, setting, theta=cfg.theta
        )
        if not samples:
            log.info("%s: no singleton observations, nothing to fit", setting)
            continue
        targets = sorted({s.target_id for s in samples})
        written = 0
        for kind in sorted(cfg.kinds):
            if cfg.pooled:
                predictor = predict.fit(kind, samples, hyper=cfg.hyper, measures=cfg.measures)
                predictor.save(_predictor_path(cfg, setting, kind, "pooled"))
                written += 1
                continue
            for target in targets:
                fold = [s for s in samples if s.target_id != target]
                if len(fold) < 2:
                    log.info("%s/%s: too few samples to hold out %s", setting, kind, target)
                    continue
                predictor = predict.fit(kind, fold, hyper=cfg.hyper, measures=cfg.measures)
                predictor.save(_predictor_path(cfg, setting, kind, target))
                written += 1
        log.info("%s: %d samples over %d targets, %d predictors -> %s",
                 setting, len(samples), len(targets), written, pred_dir)


def _load_predictor(cfg: RunConfig, setting: str, kind: str, target: str) -> predict.GainPredictor:
    if not cfg.pooled:
        path = _predictor_path(cfg, setting, kind, target)
        if path.is_file():
            return predict.GainPredictor.load(path)
        pooled = _predictor_path(cfg, setting, kind, "pooled")
        if pooled.is_file():
            log.info("%s/%s: no held-out predictor for %s, using pooled", setting, kind, target)
            return predict.GainPredictor.load(pooled)
        raise DependencyError(f"no predictor at {path}; run `fit` first")
    path = _predictor_path(cfg, setting, kind, "pooled")
    if not path.is_file():
        raise DependencyError(f"no predictor at {path}; run `fit --pooled` first")
    return predict.GainPredictor.load(path)


def cmd_select(cfg: RunConfig) -> None:
    datasets = _load_datasets(cfg)
    by_id = {d.id: d for d in datasets}
    records = _read_all_distances(cfg)
    rows = []
    for setting in sorted(cfg.settings):
        have_any = any((cfg.out / PRED_DIR).glob(f"{setting}__*.json"))
        if not have_any:
            log.info("%s: no predictors on disk, skipping", setting)
            continue
        for target in sorted(by_id):
            compat = [
                sid
                for sid in sorted(by_id)
                if sid != target
                and transfer.compatible(setting, by_id[sid], by_id[target], cfg.cross_task_targets)[0]
            ]
            if not compat:
                continue
            sub = [r for r in records if r.target_id == target and r.source_id in compat]
            for kind in sorted(cfg.kinds):
                predictor = _load_predictor(cfg, setting, kind, target)
                selected, _ = predict.select_set(predictor, sub, target)
                rows.append((setting, kind, target, ";".join(selected)))
    rows.sort()
    path = cfg.out / SELECTIONS_FILE
    _write_csv(path, ("setting", "kind", "target", "sources"), rows)
    empty = sum(1 for r in rows if not r[3])
    log.info("selections: %d rows (%d empty sets) -> %s", len(rows), empty, path)


def _observed_singleton_stats(
    observations: Sequence[transfer.TransferObservation], setting: str, target: str
) -> tuple[dict[str, float], dict[str, float]]:
    """Seed-mean transferred F1 and absolute gain per single source."""
    f1s: dict[str, list[float]] = {}
    gains: dict[str, list[float]] = {}
    for obs in observations:
        if obs.setting == setting and obs.target_id == target and len(obs.source_ids) == 1:
            sid = obs.source_ids[0]
            f1s.setdefault(sid, []).append(obs.f1_transfer)
            gains.setdefault(sid, []).append(obs.gain_abs)
    return (
        {sid: fmean(vals) for sid, vals in f1s.items()},
        {sid: fmean(vals) for sid, vals in gains.items()},
    )


def _rankings_by_target(records: list[measures.DistanceRecord]) -> dict[str, Ranking]:
    grouped: dict[str, list[measures.DistanceRecord]] = {}
    for rec in records:
        grouped.setdefault(rec.target_id, []).append(rec)
    return {t: predict.ranking_from_records(rs) for t, rs in sorted(grouped.items())}


def cmd_eval_rank(cfg: RunConfig) -> None:
    observations = _read_observations(cfg)
    dist_dir = cfg.out / DIST_DIR
    if cfg.measures_explicit:
        names = list(cfg.measures)
    else:
        names = sorted(p.stem for p in dist_dir.glob("*.csv"))
    if not names:
        raise DependencyError(f"no distance files under {dist_dir}; run `measure` first")
    per_measure: dict[str, dict[str, Ranking]] = {}
    values: dict[tuple[str, str, str], float] = {}
    for name in names:
        path = dist_dir / f"{name}.csv"
        if not path.is_file():
            raise DependencyError(f"{path} not found; run `measure` first")
        records = measures.read_distances(path)
        per_measure[name] = _rankings_by_target(records)
        for rec in records:
            values[(name, rec.target_id, rec.source_id)] = rec.value

    report_rows = []
    for name in sorted(per_measure):
        for target, ranking in per_measure[name].items():
            for pos, sid in enumerate(ranking.sources, start=1):
                report_rows.append(
                    (name, target, pos, sid, f"{values[(name, target, sid)]:.6f}")
                )

    # Fused ranking across measures wherever every measure ranks the same
    # source set for a target.
    fused: dict[str, Ranking] = {}
    if len(per_measure) >= 2:
        shared = set.intersection(*(set(r) for r in per_measure.values()))
        for target in sorted(shared):
            group = [per_measure[name][target] for name in sorted(per_measure)]
            pools = {frozenset(r.sources) for r in group}
            if len(pools) != 1:
                continue
            fused[target] = rrf(group)
            scores = rrf_scores(group)
            for pos, sid in enumerate(fused[target].sources, start=1):
                report_rows.append(("rrf", target, pos, sid, f"{scores[sid]:.6f}"))

    report_rows.sort(key=lambda r: (r[0], r[1], r[2]))
    report_path = cfg.out / RANK_REPORT_FILE
    _write_csv(report_path, ("measure", "target", "rank", "source", "distance_value"), report_rows)

    summary_rows = []
    for name in sorted(per_measure) + (["rrf"] if fused else []):
        rankings = fused if name == "rrf" else per_measure[name]
        for setting in sorted(cfg.settings):
            rhos: list[float] = []
            ndcgs: list[float] = []
            for target, ranking in rankings.items():
                f1_map, gain_map = _observed_singleton_stats(observations, setting, target)
                kept = tuple(s for s in ranking.sources if s in f1_map)
                if len(kept) < 2:
                    continue
                sub = Ranking(target_id=target, measure=ranking.measure, sources=kept)
                rhos.append(float(best_rank_rho(sub, {s: f1_map[s] for s in kept})))
                if cfg.relevance == "gain":
                    floor = min(gain_map[s] for s in kept)
                    rel = {s: gain_map[s] - floor for s in kept}
                else:
                    rel = {s: f1_map[s] for s in kept}
                ndcgs.append(ndcg(sub, rel))
            if rhos:
                summary_rows.append((name, setting, f"{fmean(rhos):.4f}", f"{fmean(ndcgs):.4f}"))
    summary_path = cfg.out / RANK_SUMMARY_FILE
    _write_csv(summary_path, ("measure", "setting", "avg_rho", "avg_ndcg"), summary_rows)
    log.info("rank report: %d rows -> %s", len(report_rows), report_path)
    log.info("rank summary: %d rows -> %s", len(summary_rows), summary_path)


def _read_selections(path: Path) -> list[tuple[str, str, str, tuple[str, ...]]]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != list(("setting", "kind", "target", "sources")):
            raise ParseError(f"{path}: unexpected header {header!r}")
        out = []
        for row in reader:
            if len(row) != 4:
                raise ParseError(f"{path}: malformed row {row!r}")
            sources = tuple(s for s in row[3].split(";") if s)
            out.append((row[0], row[1], row[2], sources))
    return out


def cmd_report(cfg: RunConfig) -> None:
    observations = _read_observations(cfg)
    lines = ["transfer report", f"observations: {len(observations)} rows", ""]

    for setting in sorted(cfg.settings):
        subset = [o for o in observations if o.setting == setting]
        if not subset:
            lines.append(f"[{setting}] no observations")
            lines.append("")
            continue
        row = transfer.aggregate(subset, group_keys=("setting",))[0]
        lines.append(
            f"[{setting}] rows {row['n']}, gain_abs mean {row['gain_abs_mean']:+.4f} "
            f"(min {row['gain_abs_min']:+.4f}, max {row['gain_abs_max']:+.4f}), "
            f"positive {row['n_positive']}, negative {row['n_negative']}"
        )
        lines.append("")

    sel_path = cfg.out / SELECTIONS_FILE
    if sel_path.is_file():
        selections = _read_selections(sel_path)
        groups: dict[tuple[str, str], dict[str, tuple[str, ...]]] = {}
        for setting, kind, target, sources in selections:
            groups.setdefault((setting, kind), {})[target] = sources
        for (setting, kind) in sorted(groups):
            if setting not in cfg.settings or kind not in cfg.kinds:
                continue
            chosen = groups[(setting, kind)]
            lines.append(f"[selection {setting}/{kind}]")
            try:
                result = predict.evaluate_selection(
                    {t: list(s) for t, s in chosen.items()}, observations, setting
                )
            except MissingObservationError as exc:
                lines.append(f"  not yet evaluable: {exc}")
                lines.append(f"  hint: srcsel observe --sets-from {sel_path} --manifest <manifest>")
                for target in sorted(chosen):
                    picked = ";".join(chosen[target]) if chosen[target] else "no transfer recommended"
                    lines.append(f"  {target}: {picked}")
                lines.append("")
                continue
            for target in sorted(chosen):
                if chosen[target]:
                    lines.append(
                        f"  {target}: {';'.join(chosen[target])} "
                        f"realized_gain={result['per_target'][target]:+.4f}"
                    )
                else:
                    lines.append(f"  {target}: no transfer recommended")
            lines.append(
                f"  mean realized gain {result['mean_gain']:+.4f}, "
                f"mean set size {result['mean_set_size']:.2f}"
            )
            lines.append("")
    else:
        lines.append("no selections.csv yet; run `select` for per-target recommendations")
        lines.append("")

    report_path = cfg.out / REPORT_FILE
    report_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    log.info("report -> %s", report_path)

    dist_dir = cfg.out / DIST_DIR
    if dist_dir.is_dir():
        plot_rows = []
        for path in sorted(dist_dir.glob("*.csv")):
            for rec in measures.read_distances(path):
                for setting in sorted(cfg.settings):
                    _, gain_map = _observed_singleton_stats(observations, setting, rec.target_id)
                    if rec.source_id in gain_map:
                        plot_rows.append(
                            (
                                rec.measure,
                                setting,
                                rec.source_id,
                                rec.target_id,
                                f"{rec.value:.6f}",
                                f"{gain_map[rec.source_id]:+.4f}",
                            )
                        )
        plot_path = cfg.out / PLOT_FILE
        _write_csv(
            plot_path, ("measure", "setting", "source", "target", "distance", "gain_abs"), plot_rows
        )
        log.info("plot data: %d rows -> %s", len(plot_rows), plot_path)


_COMMANDS = {
    "ingest": cmd_ingest,
    "measure": cmd_measure,
    "observe": cmd_observe,
    "fit": cmd_fit,
    "select": cmd_select,
    "eval-rank": cmd_eval_rank,
    "report": cmd_report,
}


def main(argv: Sequence[str] | None = None) -> int:
    logging.basicConfig(stream=sys.stderr, level=logging.INFO, format="%(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve_config(args)
        cfg.out.mkdir(parents=True, exist_ok=True)
        with _output_lock(cfg.out):
            _COMMANDS[cfg.command](cfg)
    except PipelineError as exc:
        log.error("error: %s", exc)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
