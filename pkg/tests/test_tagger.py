"""Surrogate tagger: features, gradients, training behavior, transfer ops."""

from __future__ import annotations

import dataclasses

import numpy as np
import pytest

from srcsel.errors import ConfigError, ParseError
from srcsel.synthetic import dense_ner_sentences, ner_sentences, separable_dataset
from srcsel.tagger import (
    N_FEATS,
    PAD,
    TaggerModel,
    TrainConfig,
    evaluate,
    fine_tune,
    hashed_features,
    is_span_model,
    loss_and_gradients,
    swap_head,
    token_features,
    train,
    train_multi,
    zero_shot_apply,
)

from conftest import make_dataset, sent


def small_model(labels=("B-LOC", "O"), seed=3, hash_dim=64, hidden_dim=6):
    return TaggerModel.init_random(labels, seed=seed, hash_dim=hash_dim, hidden_dim=hidden_dim)


def quick_dataset(n=24, seed=9):
    from srcsel.synthetic import as_dataset

    return as_dataset("quick", "ner", "synthetic", dense_ner_sentences(n, seed=seed))


# ---------------------------------------------------------------- features


def test_token_features_count_and_padding():
    feats = token_features(["only"], 0)
    assert len(feats) == N_FEATS
    assert f"w@-1={PAD}" in feats and f"w@+2={PAD}" in feats


def test_token_features_window():
    feats = token_features(["a", "b", "c"], 1)
    assert "w@-1=a" in feats and "w@+1=c" in feats and "w=b" in feats


def test_hashed_features_shape_range_determinism():
    texts = ["anna", "visits", "london"]
    idx = hashed_features(texts, 128)
    assert idx.shape == (3, N_FEATS)
    assert idx.min() >= 0 and idx.max() < 128
    assert np.array_equal(idx, hashed_features(texts, 128))


# ------------------------------------------------------------------- model


def test_init_random_deterministic_and_sorted_labels():
    a = TaggerModel.init_random(["O", "B-X"], seed=1, hash_dim=32, hidden_dim=4)
    b = TaggerModel.init_random(["B-X", "O", "B-X"], seed=1, hash_dim=32, hidden_dim=4)
    assert a.labels == b.labels == ("B-X", "O")
    assert np.array_equal(a.w_hidden, b.w_hidden)
    c = TaggerModel.init_random(["O", "B-X"], seed=2, hash_dim=32, hidden_dim=4)
    assert not np.array_equal(a.w_hidden, c.w_hidden)


def test_init_random_empty_labels_raises():
    with pytest.raises(ConfigError):
        TaggerModel.init_random([], seed=0)


def test_forward_probabilities_normalized():
    model = small_model()
    idx = hashed_features(["one", "two", "three"], model.hash_dim)
    _, hidden, probs = model.forward(idx)
    assert np.all(hidden >= 0.0)
    assert np.allclose(probs.sum(axis=1), 1.0, atol=1e-12)
    assert np.all(probs >= 0.0)


def test_predict_labels_come_from_model():
    model = small_model()
    preds = model.predict([sent(("a", "O"), ("b", "O")), sent(("c", "O"))])
    assert [len(p) for p in preds] == [2, 1]
    assert all(l in model.labels for p in preds for l in p)


def test_save_load_round_trip(tmp_path):
    model = small_model()
    path = tmp_path / "m.json"
    model.save(path)
    loaded = TaggerModel.load(path)
    assert loaded.labels == model.labels
    assert loaded.model_id == model.model_id
    assert np.allclose(loaded.w_hidden, model.w_hidden, rtol=1e-11, atol=0)
    sents = [sent(("anna", "O"), ("went", "O"), ("north", "O"))]
    assert loaded.predict(sents) == model.predict(sents)


def test_load_rejects_non_model_file(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{}", encoding="utf-8")
    with pytest.raises(ParseError):
        TaggerModel.load(path)
    path.write_text("not json", encoding="utf-8")
    with pytest.raises(ParseError):
        TaggerModel.load(path)


def test_is_span_model():
    assert is_span_model(small_model(("B-LOC", "I-LOC", "O")))
    assert not is_span_model(small_model(("DET", "NOUN", "VERB")))


# --------------------------------------------------------------- gradients


def test_gradients_match_finite_differences(rng):
    model = small_model(("B-LOC", "I-LOC", "O"))
    sents = [
        sent(("mount", "B-LOC"), ("hood", "I-LOC"), ("rises", "O")),
        sent(("we", "O"), ("left", "O"), ("oslo", "B-LOC")),
    ]
    loss, grads = loss_and_gradients(model, sents)
    assert np.isfinite(loss) and loss > 0
    h = 1e-5
    for name in ("w_hidden", "w_out", "b_out"):
        arr = getattr(model, name)
        flat = arr.reshape(-1)
        coords = rng.choice(flat.size, size=min(10, flat.size), replace=False)
        for c in coords:
            orig = flat[c]
            flat[c] = orig + h
            up, _ = loss_and_gradients(model, sents)
            flat[c] = orig - h
            down, _ = loss_and_gradients(model, sents)
            flat[c] = orig
            numeric = (up - down) / (2 * h)
            analytic = grads[name].reshape(-1)[c]
            denom = max(abs(numeric), abs(analytic), 1e-8)
            assert abs(numeric - analytic) / denom < 1e-4, (name, c)


# ---------------------------------------------------------------- training


def _cfg(**kw):
    base = dict(learning_rate=0.1, max_epochs=5, patience=5, seed=0)
    base.update(kw)
    return TrainConfig(**base)


def test_train_deterministic():
    ds = quick_dataset()
    a = train(ds, _cfg(max_epochs=3), hash_dim=256, hidden_dim=8)
    b = train(ds, _cfg(max_epochs=3), hash_dim=256, hidden_dim=8)
    assert np.array_equal(a.w_hidden, b.w_hidden)
    assert np.array_equal(a.w_out, b.w_out)
    assert a.train_log == b.train_log


def test_train_seed_changes_outcome():
    ds = quick_dataset()
    a = train(ds, _cfg(max_epochs=3, seed=0), hash_dim=256, hidden_dim=8)
    b = train(ds, _cfg(max_epochs=3, seed=1), hash_dim=256, hidden_dim=8)
    assert not np.array_equal(a.w_hidden, b.w_hidden)


def test_train_learns_separable_data():
    ds = separable_dataset()
    model = train(ds, TrainConfig(max_epochs=20))
    assert evaluate(model, ds.train).f1 >= 99.0


def test_train_returned_model_never_below_initial_dev():
    ds = quick_dataset()
    model = train(ds, _cfg(max_epochs=4), hash_dim=256, hidden_dim=8)
    final = evaluate(model, ds.dev).f1
    assert final >= model.train_log[0]["dev_f1"] - 1e-9
    assert model.train_log[0]["epoch"] == 0
    assert len(model.train_log) <= 5


def test_train_early_stopping_respects_patience():
    ds = quick_dataset()
    model = train(ds, _cfg(max_epochs=50, patience=2), hash_dim=128, hidden_dim=4)
    log = model.train_log
    # either it ran out of epochs or the last `patience` epochs show no improvement
    if log[-1]["epoch"] < 50:
        assert all(not e["improved"] for e in log[-2:])


def test_train_multi_empty_returns_none():
    assert train_multi([], _cfg()) is None


def test_train_multi_single_source_equals_train():
    ds = quick_dataset()
    a = train(ds, _cfg(max_epochs=2), hash_dim=128, hidden_dim=4)
    b = train_multi([ds], _cfg(max_epochs=2), hash_dim=128, hidden_dim=4)
    assert np.array_equal(a.w_hidden, b.w_hidden)
    assert a.model_id == b.model_id


def test_train_multi_mixed_label_sets_raise():
    ner = quick_dataset()
    pos = make_dataset(
        "pos_x",
        [sent(("the", "DET"), ("cat", "NOUN")) for _ in range(12)],
        task="pos",
    )
    with pytest.raises(ConfigError) as err:
        train_multi([ner, pos], _cfg())
    assert "label set" in str(err.value)


def test_train_multi_rejects_empty_dev():
    ds = quick_dataset()
    broken = dataclasses.replace(ds, dev=())
    with pytest.raises(ConfigError):
        train_multi([broken], _cfg())


def test_train_multi_order_insensitive():
    a = quick_dataset(seed=1)
    b = dataclasses.replace(quick_dataset(seed=2), id="quick2")
    m1 = train_multi([a, b], _cfg(max_epochs=2), hash_dim=128, hidden_dim=4)
    m2 = train_multi([b, a], _cfg(max_epochs=2), hash_dim=128, hidden_dim=4)
    assert np.array_equal(m1.w_hidden, m2.w_hidden)
    assert m1.model_id == m2.model_id


# ---------------------------------------------------------------- transfer


def test_fine_tune_own_data_keeps_dev_score():
    ds = quick_dataset()
    base = train(ds, _cfg(max_epochs=4), hash_dim=256, hidden_dim=8)
    before = evaluate(base, ds.dev).f1
    tuned = fine_tune(base, ds, _cfg(max_epochs=4, seed=7))
    after = evaluate(tuned, ds.dev).f1
    # the tuned model starts from `base` as its epoch-0 snapshot
    assert after >= before - 1e-9
    assert tuned.model_id != base.model_id


def test_fine_tune_label_mismatch_raises():
    model = small_model(("B-PER", "O"))
    ds = quick_dataset()
    with pytest.raises(ConfigError) as err:
        fine_tune(model, ds, _cfg())
    assert "label sets differ" in str(err.value)


def test_swap_head_keeps_hidden_layer():
    model = small_model(("B-LOC", "O"), hidden_dim=6)
    swapped = swap_head(model, ["NOUN", "DET", "VERB"], seed=5)
    assert np.array_equal(swapped.w_hidden, model.w_hidden)
    assert swapped.labels == ("DET", "NOUN", "VERB")
    assert swapped.w_out.shape == (6, 3)
    assert np.all(swapped.b_out == 0.0)


def test_swap_head_rerandomizes_output():
    model = small_model(("A", "B", "C"), hidden_dim=6)
    swapped = swap_head(model, ("A", "B", "C"), seed=5)
    assert not np.array_equal(swapped.w_out, model.w_out)


def test_swap_head_empty_labels_raises():
    with pytest.raises(ConfigError):
        swap_head(small_model(), [], seed=0)


def test_zero_shot_apply_matches_direct_evaluation():
    ds = quick_dataset()
    model = train(ds, _cfg(max_epochs=2), hash_dim=128, hidden_dim=4)
    assert zero_shot_apply(model, ds) == evaluate(model, ds.test)


def test_zero_shot_apply_label_mismatch_raises():
    with pytest.raises(ConfigError):
        zero_shot_apply(small_model(("B-PER", "O")), quick_dataset())


# -------------------------------------------------------------- evaluation


def test_evaluate_span_vs_accuracy_metric():
    ner = quick_dataset()
    span_model = TaggerModel.init_random(sorted(ner.label_set), seed=0, hash_dim=64, hidden_dim=4)
    assert evaluate(span_model, ner.test).metric == "span"
    pos_model = small_model(("DET", "NOUN"))
    score = evaluate(pos_model, [sent(("the", "DET"), ("cat", "NOUN"))])
    assert score.metric == "accuracy"
    assert score.precision == score.recall == score.f1


def test_evaluate_empty_split_raises():
    with pytest.raises(ConfigError):
        evaluate(small_model(), [])


def test_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(learning_rate=0.0)
    with pytest.raises(ConfigError):
        TrainConfig(max_epochs=0)
    with pytest.raises(ConfigError):
        TrainConfig(patience=0)
