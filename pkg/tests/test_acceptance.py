"""Acceptance gate: one test per release criterion.

Every test records exactly one verdict line, echoed in the terminal
summary, so a log scan shows which criteria hold. Oracles here are
written from the defining formulas and share no code with the package.
"""

import math
from pathlib import Path
from time import perf_counter

import numpy as np

from srcsel import measures, predict, synthetic, transfer
from srcsel.cli import main
from srcsel.corpus import repair_bio
from srcsel.evalrank import Ranking, corpus_spans, micro_f1, ndcg
from srcsel.measures import LOWER_IS_CLOSER, DistanceRecord, write_distances
from srcsel.model_sim import FeatureMatrix, procrustes_align
from srcsel.ngram import KneserNeyLM, perplexity
from srcsel.predict import NEGATIVE, NEUTRAL, POSITIVE, classify_gain
from srcsel.tagger import TaggerModel, TrainConfig, evaluate, loss_and_gradients, train
from srcsel.transfer import DOMAIN_ADAPT, make_observation, write_observations

TINY = Path(__file__).resolve().parents[1] / "data" / "tiny" / "manifest.jsonl"


# ------------------------------------------------------------ criterion 1


def test_criterion_1_procrustes_recovery(criterion):
    start = perf_counter()
    rng = np.random.default_rng(42)
    worst_residual = worst_orth = worst_identity = 0.0
    for _ in range(100):
        f = rng.normal(size=(200, 8))
        q, _ = np.linalg.qr(rng.normal(size=(8, 8)))
        src = FeatureMatrix(model_id="src", dataset_id="d", values=f)
        tgt = FeatureMatrix(model_id="tgt", dataset_id="d", values=f @ q)
        alignment = procrustes_align(src, tgt)
        worst_residual = max(worst_residual, alignment.residual)
        orth = float(np.abs(alignment.w.T @ alignment.w - np.eye(8)).max())
        worst_orth = max(worst_orth, orth)
        same = procrustes_align(src, src)
        worst_identity = max(worst_identity, float(np.linalg.norm(same.w - np.eye(8))))
    elapsed = perf_counter() - start
    ok = (
        worst_residual < 1e-6
        and worst_orth < 1e-8
        and worst_identity < 1e-9
        and elapsed < 10.0
    )
    criterion(
        1,
        "procrustes recovery",
        ok,
        f"residual<={worst_residual:.2e}, |WtW-I|<={worst_orth:.2e}, "
        f"|W-I|self<={worst_identity:.2e}, {elapsed:.1f}s",
    )


# ------------------------------------------------------------ criterion 2


def _ref_decode(labels, sent_idx):
    spans = set()
    start = kind = None
    for i, tag in enumerate(labels):
        if tag.startswith("B-") or (tag.startswith("I-") and kind != tag[2:]):
            if start is not None:
                spans.add((sent_idx, start, i, kind))
            start, kind = i, tag[2:]
        elif tag == "O":
            if start is not None:
                spans.add((sent_idx, start, i, kind))
            start = kind = None
    if start is not None:
        spans.add((sent_idx, start, len(labels), kind))
    return spans


def _ref_prf(gold, pred):
    if not gold and not pred:
        return 100.0, 100.0, 100.0
    tp = len(gold & pred)
    p = 100.0 * tp / len(pred) if pred else 0.0
    r = 100.0 * tp / len(gold) if gold else 0.0
    f = 0.0 if p + r == 0 else 2 * p * r / (p + r)
    return p, r, f


def _ref_ndcg(ordered_rel):
    if all(v == 0 for v in ordered_rel):
        return 1.0
    dcg = sum(v / math.log2(i + 1) for i, v in enumerate(ordered_rel, start=1))
    ideal = sum(
        v / math.log2(i + 1) for i, v in enumerate(sorted(ordered_rel, reverse=True), start=1)
    )
    return dcg / ideal


def test_criterion_2_metric_oracles(criterion):
    rng = np.random.default_rng(7)
    tags = ("O", "O", "B-X", "I-X", "B-Y", "I-Y")
    worst_f1 = 0.0
    for _ in range(1000):
        n_sents = int(rng.integers(1, 4))
        gold_seqs, pred_seqs = [], []
        for _ in range(n_sents):
            length = int(rng.integers(1, 11))
            gold_seqs.append(repair_bio([tags[k] for k in rng.integers(0, 6, size=length)]))
            pred_seqs.append(repair_bio([tags[k] for k in rng.integers(0, 6, size=length)]))
        score = micro_f1(corpus_spans(gold_seqs), corpus_spans(pred_seqs))
        gold_ref = set().union(*(_ref_decode(s, i) for i, s in enumerate(gold_seqs)))
        pred_ref = set().union(*(_ref_decode(s, i) for i, s in enumerate(pred_seqs)))
        p, r, f = _ref_prf(gold_ref, pred_ref)
        worst_f1 = max(
            worst_f1, abs(score.precision - p), abs(score.recall - r), abs(score.f1 - f)
        )

    worst_ndcg = 0.0
    for trial in range(1000):
        m = int(rng.integers(2, 9))
        items = [f"i{j}" for j in range(m)]
        order = [items[k] for k in rng.permutation(m)]
        if trial % 50 == 0:
            rel = {it: 0.0 for it in items}
        else:
            rel = {it: float(np.round(rng.uniform(0, 5), 3)) for it in items}
            for it in items:
                if rng.uniform() < 0.3:
                    rel[it] = 0.0
        ranking = Ranking(target_id="t", measure="m", sources=tuple(order))
        got = ndcg(ranking, rel)
        want = _ref_ndcg([rel[it] for it in order])
        worst_ndcg = max(worst_ndcg, abs(got - want))

    boundary = [classify_gain(g) for g in (-0.6, -0.5, -0.4, 0.0, 0.4, 0.5, 0.6)]
    expected = [NEGATIVE, NEGATIVE, NEUTRAL, NEUTRAL, NEUTRAL, POSITIVE, POSITIVE]
    ok = worst_f1 <= 1e-9 and worst_ndcg <= 1e-9 and boundary == expected
    criterion(
        2,
        "metric oracles",
        ok,
        f"f1 max err {worst_f1:.1e}, ndcg max err {worst_ndcg:.1e}, "
        f"boundary {'exact' if boundary == expected else boundary}",
    )


# ------------------------------------------------------------ criterion 3


def test_criterion_3_lm_sanity(criterion):
    rng = np.random.default_rng(11)
    words = [f"w{i}" for i in range(8)]
    sentences = [
        [words[int(k)] for k in rng.integers(0, 8, size=int(rng.integers(3, 11)))]
        for _ in range(30)
    ]
    lm = KneserNeyLM.train(sentences, order=5, discount=0.75)
    pool = words + ["zzq", "xfm"]  # includes out-of-vocabulary context words
    worst_sum = 0.0
    for _ in range(100):
        ctx = [pool[int(k)] for k in rng.integers(0, len(pool), size=4)]
        total = sum(math.exp(lm.logprob(w, ctx)) for w in lm.vocab)
        worst_sum = max(worst_sum, abs(total - 1.0))

    wins = 0
    for trial in range(100):
        local = np.random.default_rng(1000 + trial)
        own = [
            [f"a{int(k)}" for k in local.integers(0, 6, size=int(local.integers(3, 9)))]
            for _ in range(12)
        ]
        other = [
            [f"b{int(k)}" for k in local.integers(0, 6, size=int(local.integers(3, 9)))]
            for _ in range(12)
        ]
        trial_lm = KneserNeyLM.train(own, order=5, discount=0.75)
        if perplexity(trial_lm, own) < perplexity(trial_lm, other):
            wins += 1
    ok = worst_sum <= 1e-6 and wins >= 95
    criterion(3, "lm sanity", ok, f"normalization err<={worst_sum:.1e}, self<disjoint {wins}/100")


# ------------------------------------------------------------ criterion 4


def test_criterion_4_tagger_gradients_and_learning(criterion):
    sentences = synthetic.dense_ner_sentences(8, seed=3)
    labels = sorted({tok.label for sent in sentences for tok in sent})
    model = TaggerModel.init_random(labels, seed=5, hash_dim=128, hidden_dim=8)
    _, grads = loss_and_gradients(model, sentences)
    arrays = {"w_hidden": model.w_hidden, "w_out": model.w_out, "b_out": model.b_out}
    sizes = [(name, arr.size) for name, arr in arrays.items()]
    total = sum(s for _, s in sizes)
    rng = np.random.default_rng(17)
    h = 1e-5
    worst_rel = 0.0
    for flat in rng.integers(0, total, size=50):
        flat = int(flat)
        for name, size in sizes:
            if flat < size:
                break
            flat -= size
        arr = arrays[name]
        idx = np.unravel_index(flat, arr.shape)
        orig = arr[idx]
        arr[idx] = orig + h
        up, _ = loss_and_gradients(model, sentences)
        arr[idx] = orig - h
        down, _ = loss_and_gradients(model, sentences)
        arr[idx] = orig
        fd = (up - down) / (2 * h)
        analytic = float(grads[name][idx])
        rel = abs(analytic - fd) / max(abs(analytic) + abs(fd), 1e-8)
        worst_rel = max(worst_rel, rel)

    start = perf_counter()
    dataset = synthetic.separable_dataset()
    trained = train(dataset, TrainConfig(max_epochs=100))
    train_f1 = evaluate(trained, dataset.train).f1
    elapsed = perf_counter() - start
    ok = worst_rel <= 1e-4 and train_f1 >= 99.0 and elapsed < 60.0
    criterion(
        4,
        "tagger gradients and learning",
        ok,
        f"grad rel err<={worst_rel:.1e}, train F1 {train_f1:.1f}, {elapsed:.1f}s",
    )


# ------------------------------------------------------------ criterion 5


def _loto_selections(suite, kind):
    samples = predict.build_samples(
        suite.observations, suite.distances, (synthetic.SYNTH_MEASURE,), DOMAIN_ADAPT
    )
    selections = {}
    for target in suite.targets:
        fold = [s for s in samples if s.target_id != target]
        predictor = predict.fit(kind, fold, measures=(synthetic.SYNTH_MEASURE,))
        records = [r for r in suite.distances if r.target_id == target]
        selections[target], _ = predict.select_set(predictor, records, target)
    return selections


def test_criterion_5_selection_beats_static_rankings(criterion):
    start = perf_counter()
    suite = synthetic.meta_suite("mixed")
    selections = _loto_selections(suite, "svm_c")
    exact = all(
        tuple(sorted(selections[t])) == tuple(sorted(suite.true_positive[t]))
        for t in suite.targets
    )
    svm_obs = suite.observations + suite.observations_for_selections(selections)
    svm = predict.evaluate_selection(selections, svm_obs, DOMAIN_ADAPT)

    top1 = {
        t: predict.topn_select([r for r in suite.distances if r.target_id == t], 1)
        for t in suite.targets
    }
    top1_result = predict.evaluate_selection(top1, suite.observations, DOMAIN_ADAPT)

    everything = {t: list(suite.sources) for t in suite.targets}
    all_obs = suite.observations + suite.observations_for_selections(everything)
    all_result = predict.evaluate_selection(everything, all_obs, DOMAIN_ADAPT)

    elapsed = perf_counter() - start
    ok = (
        exact
        and svm["mean_gain"] >= top1_result["mean_gain"]
        and svm["mean_gain"] >= all_result["mean_gain"]
        and elapsed < 300.0
    )
    criterion(
        5,
        "learned selection beats static rankings",
        ok,
        f"svm {svm['mean_gain']:+.4f} vs top1 {top1_result['mean_gain']:+.4f} "
        f"vs all {all_result['mean_gain']:+.4f}, exact positives {exact}, {elapsed:.1f}s",
    )


# ------------------------------------------------------------ criterion 6


def test_criterion_6_all_negative_gives_empty_sets(criterion):
    suite = synthetic.meta_suite("all_negative")
    means = {}
    empty = True
    for kind in ("svm_c", "svm_r"):
        selections = _loto_selections(suite, kind)
        empty = empty and all(not chosen for chosen in selections.values())
        result = predict.evaluate_selection(selections, suite.observations, DOMAIN_ADAPT)
        means[kind] = result["mean_gain"]
    ok = empty and all(m == 0.0 for m in means.values())
    criterion(
        6,
        "all-negative fixture selects nothing",
        ok,
        f"all empty {empty}, mean gains {means['svm_c']:+.1f}/{means['svm_r']:+.1f}",
    )


# ------------------------------------------------------------ criterion 7


def test_criterion_7_rank_evaluation_separates_measures(criterion, tmp_path):
    target, sources = synthetic.overlap_ladder()
    matrix = measures.distance_matrix([target] + sources, "vocab_overlap")
    toward = [r for r in matrix if r.target_id == target.id]
    out = tmp_path / "out"
    write_distances(toward, out / "distances" / "vocab_overlap.csv")
    reversed_polarity = [
        DistanceRecord("dummy", r.source_id, r.target_id, r.value, LOWER_IS_CLOSER)
        for r in toward
    ]
    write_distances(reversed_polarity, out / "distances" / "dummy.csv")

    # fabricated outcomes: gain strictly follows vocabulary overlap
    by_overlap = sorted(toward, key=lambda r: -r.value)
    observations = [
        make_observation(DOMAIN_ADAPT, (r.source_id,), target.id, 0, 70.0, 70.0 + gain)
        for r, gain in zip(by_overlap, (4.0, 3.0, 2.0, 1.0))
    ]
    write_observations(observations, out / "observations.jsonl")

    assert main(["eval-rank", "--out", str(out), "--settings", "domain_adapt"]) == 0
    rows = (out / "rank_summary.csv").read_text(encoding="utf-8").strip().split("\n")[1:]
    summary = {}
    for row in rows:
        name, _, rho, score = row.split(",")
        summary[name] = (float(rho), float(score))
    ok = (
        summary["vocab_overlap"] == (1.0, 1.0)
        and summary["dummy"][0] > summary["vocab_overlap"][0]
    )
    criterion(
        7,
        "rank evaluation separates measures",
        ok,
        f"vocab_overlap rho/ndcg {summary['vocab_overlap']}, dummy rho {summary['dummy'][0]}",
    )


# ------------------------------------------------------------ criterion 8


def _full_run(out: Path) -> None:
    base = ("--manifest", str(TINY), "--out", str(out), "--seed", "0")
    fast = ("--max-epochs", "3", "--patience", "2")
    named = ("--measures", ",".join(measures.ALL_MEASURES))
    scoped = ("--settings", "domain_adapt")
    assert main(["ingest", *base]) == 0
    assert main(["observe", *base, *scoped, *fast]) == 0
    assert main(["measure", *base, *named]) == 0
    assert main(["fit", *base, *scoped, *named]) == 0
    assert main(["select", *base, *scoped, *named]) == 0
    assert main(["eval-rank", *base, *scoped, *named]) == 0


def test_criterion_8_pipeline_determinism(criterion, tmp_path):
    first, second = tmp_path / "run1", tmp_path / "run2"
    _full_run(first)
    _full_run(second)
    compared = []
    diffs = []
    names = ["datasets.csv", "observations.jsonl", "selections.csv",
             "rank_report.csv", "rank_summary.csv"]
    names += sorted(f"distances/{p.name}" for p in (first / "distances").glob("*.csv"))
    assert sorted(p.name for p in (first / "distances").glob("*.csv")) == sorted(
        p.name for p in (second / "distances").glob("*.csv")
    )
    for name in names:
        compared.append(name)
        if (first / name).read_bytes() != (second / name).read_bytes():
            diffs.append(name)
    ok = not diffs and len(compared) == 5 + len(measures.ALL_MEASURES)
    criterion(
        8,
        "pipeline determinism",
        ok,
        f"{len(compared)} files byte-compared, diffs: {diffs or 'none'}",
    )
