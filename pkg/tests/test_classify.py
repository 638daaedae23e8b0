import json
import sys
import textwrap

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from flashstereo.classify import (
    CHROMA_FEATURES,
    FEATURE_NAMES,
    BaselineModel,
    Hyperparams,
    PatchDataset,
    chroma_ablation,
    evaluate,
    featurize,
    featurize_many,
    filter_detections,
    load_classifier,
    logistic_loss_and_grad,
    metrics_from_predictions,
    predict,
    sigmoid,
    train,
)
from flashstereo.detect import PATCH_HALF, PATCH_SIZE, Detection
from flashstereo.errors import ConfigError, DataError, InsufficientDataError, TrainingError
from flashstereo.geometry import EquirectDims
from flashstereo.sim import ArtifactSpec, RigGroundTruth, SceneRenderer, SwarmScenario, make_patch_corpus

IDX = {n: i for i, n in enumerate(FEATURE_NAMES)}


def clutter_scene(seed, frames):
    sc = SwarmScenario(n_fireflies=40, trains_per_firefly=0, train_gap_frames=30, duration_frames=frames, seed=seed)
    art = ArtifactSpec(clutter_count=4, static_spots=6, ambient_floor=10.0)
    return SceneRenderer(sc, RigGroundTruth(delta_k=5), art, EquirectDims.from_height(256))


@pytest.fixture(scope="module")
def corpus():
    return make_patch_corpus(clutter_scene(1, 60), n_per_class=200, seed=1)


@pytest.fixture(scope="module")
def model(corpus):
    return train(corpus.split(0.2, 0)[0], Hyperparams(epochs=1500))


def blob_patch(peak=200.0, color=(0.9, 1.0, 0.35), background=0.0):
    yy, xx = np.mgrid[:PATCH_SIZE, :PATCH_SIZE] - PATCH_HALF
    g = background + peak * np.exp(-(xx**2 + yy**2) / (2 * 1.5**2))
    return np.clip(np.rint(g[..., None] * np.array(color)), 0, 255).astype(np.uint8)


# -- features --------------------------------------------------------------------


def test_feature_vector_length():
    assert featurize(blob_patch()).shape == (len(FEATURE_NAMES),)


def test_isolated_blob_features():
    f = featurize(blob_patch())
    assert f[IDX["clutter_count"]] == 0
    assert f[IDX["contrast_5_10"]] > 5
    assert f[IDX["chroma_g"]] > 0


def test_noise_patch_features():
    px = np.random.default_rng(0).integers(0, 256, (PATCH_SIZE, PATCH_SIZE, 3)).astype(np.uint8)
    f = featurize(px)
    assert f[IDX["clutter_count"]] > 10
    for name in ("contrast_5_10", "contrast_10_20", "contrast_20_32"):
        assert f[IDX[name]] == pytest.approx(1.0, abs=0.1)


def test_uniform_patch_features():
    f = featurize(np.full((PATCH_SIZE, PATCH_SIZE, 3), 90, np.uint8))
    for name in ("contrast_5_10", "contrast_10_20", "contrast_20_32"):
        assert f[IDX[name]] == pytest.approx(1.0)
    assert f[IDX["chroma_g"]] == 0.0
    assert f[IDX["clutter_count"]] == 0


def test_grayscale_patch_accepted():
    g = blob_patch()[..., 0]
    np.testing.assert_allclose(featurize(g), featurize(np.repeat(g[..., None], 3, axis=2)))


def test_featurize_rejects_wrong_size():
    with pytest.raises(DataError):
        featurize_many(np.zeros((2, 30, 30, 3)))


# -- loss and training -------------------------------------------------------------


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 40), d=st.integers(1, 8), l2=st.floats(0, 1))
def test_gradient_matches_finite_differences(seed, n, d, l2):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, d))
    y = rng.integers(0, 2, n).astype(float)
    sw = rng.uniform(0.1, 3.0, n)
    w = rng.normal(size=d)
    b = float(rng.normal())
    _, gw, gb = logistic_loss_and_grad(w, b, X, y, sw, l2)
    h = 1e-6
    num = np.zeros(d)
    for j in range(d):
        e = np.zeros(d)
        e[j] = h
        num[j] = (logistic_loss_and_grad(w + e, b, X, y, sw, l2)[0] - logistic_loss_and_grad(w - e, b, X, y, sw, l2)[0]) / (2 * h)
        assert abs(num[j] - gw[j]) <= 1e-5 * max(1.0, abs(gw[j]))
    nb = (logistic_loss_and_grad(w, b + h, X, y, sw, l2)[0] - logistic_loss_and_grad(w, b - h, X, y, sw, l2)[0]) / (2 * h)
    assert abs(nb - gb) <= 1e-5 * max(1.0, abs(gb))


def test_sigmoid_stable():
    np.testing.assert_allclose(sigmoid(np.array([-1000.0, 0.0, 1000.0])), [0.0, 0.5, 1.0])


def toy_dataset(n=60, seed=0):
    """Two informative features; the rest constant (dropped as zero-variance)."""
    rng = np.random.default_rng(seed)
    y = np.repeat([0, 1], n // 2)
    X = np.zeros((n, len(FEATURE_NAMES)))
    X[:, 0] = rng.normal(size=n) + 4 * y
    X[:, 1] = rng.normal(size=n) - 4 * y
    ds = PatchDataset(np.zeros((n, PATCH_SIZE, PATCH_SIZE, 3), np.uint8), y)
    return ds, X


def test_separable_toy_set_fits_perfectly():
    ds, X = toy_dataset()
    m = train(ds, Hyperparams(epochs=500), X=X)
    assert m.feature_names == FEATURE_NAMES[:2]
    z = (X[:, :2] - m.mean) / m.std @ m.weights + m.bias
    assert np.all((z > 0) == (ds.labels == 1))


def test_standardized_training_features():
    ds, X = toy_dataset(seed=1)
    m = train(ds, Hyperparams(epochs=10), X=X)
    Z = (X[:, :2] - m.mean) / m.std
    assert np.abs(Z.mean(axis=0)).max() < 1e-8
    np.testing.assert_allclose(Z.std(axis=0), 1.0, atol=1e-8)
    assert np.all(m.std > 0)


def test_loss_non_increasing_with_small_step():
    ds, X = toy_dataset(seed=2)
    m = train(ds, Hyperparams(epochs=300, learning_rate=0.1), X=X)
    assert np.all(np.diff(m.loss_history) <= 1e-12)


def test_training_is_deterministic():
    ds, X = toy_dataset(seed=3)
    a = train(ds, Hyperparams(epochs=50, seed=7), X=X)
    b = train(ds, Hyperparams(epochs=50, seed=7), X=X)
    assert a.to_dict() == b.to_dict()


def test_single_class_rejected():
    ds, X = toy_dataset()
    one = PatchDataset(ds.pixels[:30], ds.labels[:30])
    with pytest.raises(InsufficientDataError):
        train(one, X=X[:30])


def test_divergence_reported():
    ds, X = toy_dataset()
    with pytest.raises(TrainingError, match="learning_rate"):
        train(ds, Hyperparams(epochs=50, learning_rate=1e308), X=X)


def test_untrained_model_cannot_predict():
    with pytest.raises(TrainingError):
        BaselineModel().predict_proba(blob_patch()[None])


# -- on a rendered corpus -----------------------------------------------------------


def test_corpus_patches_are_centered(corpus):
    g = corpus.pixels.astype(float) @ np.array([0.299, 0.587, 0.114])
    assert np.all(g[:, PATCH_HALF, PATCH_HALF] >= g.reshape(len(g), -1).max(axis=1))
    assert corpus.labels.sum() == 200 and (1 - corpus.labels).sum() == 200


def test_validation_quality(corpus, model):
    val = corpus.split(0.2, 0)[1]
    assert evaluate(model, val).f1 >= 0.9


def test_permuted_labels_give_chance(corpus):
    rng = np.random.default_rng(0)
    shuffled = PatchDataset(corpus.pixels, rng.permutation(corpus.labels))
    tr, va = shuffled.split(0.3, 1)
    rep = evaluate(train(tr, Hyperparams(epochs=1000)), va)
    assert abs(rep.accuracy - 0.5) <= 0.1


def test_most_confident_flash(corpus, model):
    p = model.predict_proba(corpus.pixels)
    best = int(np.argmax(np.where(corpus.labels == 1, p, -1)))
    assert p[best] > 0.5


def test_zero_patch_is_artifact(model):
    prob, label = predict(model, np.zeros((PATCH_SIZE, PATCH_SIZE, 3), np.uint8))
    assert label == 0 and prob < 0.5


def test_predict_is_pure(corpus, model):
    a = model.predict_proba(corpus.pixels[:20])
    b = model.predict_proba(corpus.pixels[:20])
    assert a.tobytes() == b.tobytes()


def test_constant_offset_after_refit(corpus, model):
    base = model.predict_proba(corpus.pixels) >= 0.5
    for c in (5, 10, 20):
        shifted = np.clip(corpus.pixels.astype(int) + c, 0, 255).astype(np.uint8)
        refit = model.refit_standardization(shifted)
        # features that scale with brightness are re-centered on the shifted data
        assert np.mean((refit.predict_proba(shifted) >= 0.5) == base) >= 0.95


def test_model_json_round_trip(tmp_path, model, corpus):
    path = tmp_path / "m.json"
    model.save(path)
    loaded = load_classifier(path)
    assert loaded.predict_proba(corpus.pixels[:10]).tobytes() == model.predict_proba(corpus.pixels[:10]).tobytes()
    d = json.loads(path.read_text())
    assert d["format"] == "flashstereo-logreg" and d["version"] == 1


def test_chroma_ablation_keys(corpus):
    tr, va = corpus.split(0.2, 0)
    out = chroma_ablation(tr, va, Hyperparams(epochs=200))
    assert set(out) == {"with_chroma", "without_chroma"}
    for rep in out.values():
        assert 0.0 <= rep["f1"] <= 1.0
        assert sum(map(sum, rep["confusion"])) == len(va)


def test_chroma_features_can_be_excluded(corpus):
    tr = corpus.split(0.2, 0)[0]
    feats = [n for n in FEATURE_NAMES if n not in CHROMA_FEATURES]
    m = train(tr, Hyperparams(epochs=10), features=feats)
    assert not set(m.feature_names) & set(CHROMA_FEATURES)


# -- loading ---------------------------------------------------------------------


def test_load_errors(tmp_path):
    with pytest.raises(ConfigError):
        load_classifier(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{\n oops")
    with pytest.raises(ConfigError, match="line 2"):
        load_classifier(bad)
    other = tmp_path / "other.json"
    other.write_text(json.dumps({"format": "onnx"}))
    with pytest.raises(ConfigError, match="unknown model format"):
        load_classifier(other)
    old = tmp_path / "old.json"
    old.write_text(json.dumps({"format": "flashstereo-logreg", "version": 99}))
    with pytest.raises(ConfigError):
        load_classifier(old)


def test_entrypoint_model(tmp_path, monkeypatch):
    (tmp_path / "brightness_model.py").write_text(textwrap.dedent("""
        import numpy as np

        class Model:
            def __init__(self, scale):
                self.scale = scale

            def predict_proba(self, pixels):
                return np.clip(pixels[:, 32, 32, 1] / self.scale, 0, 1)

        def load(path):
            return Model(float(open(path).read()))
    """))
    (tmp_path / "w.txt").write_text("255")
    (tmp_path / "model.json").write_text(json.dumps(
        {"format": "python-entrypoint", "entrypoint": "brightness_model:load", "weights": "w.txt"}))
    monkeypatch.syspath_prepend(str(tmp_path))
    m = load_classifier(tmp_path / "model.json")
    assert m.predict_proba(blob_patch()[None])[0] == pytest.approx(200 / 255, abs=0.01)
    sys.modules.pop("brightness_model", None)


# -- filtering and evaluation ----------------------------------------------------------


class FixedModel:
    """predict_proba returns the green value at the patch center / 255."""

    def predict_proba(self, pixels):
        return pixels[:, PATCH_HALF, PATCH_HALF, 1] / 255.0


def frame_with_spots(values):
    f = np.zeros((100, 200, 3), np.uint8)
    for i, v in enumerate(values):
        f[50, 20 + 40 * i] = v
    return f


def spot_dets(k, n):
    return [Detection(frame=k, w=20.0 + 40 * i, h=50.0, theta=0.0, phi=0.0) for i in range(n)]


def test_filter_empty():
    assert filter_detections([], {}, FixedModel(), 0.5) == []


def test_filter_min_prob_zero_keeps_all():
    dets = spot_dets(0, 3)
    out = filter_detections(dets, {0: frame_with_spots([50, 150, 250])}, FixedModel(), 0.0)
    assert [(d.w, d.h) for d in out] == [(d.w, d.h) for d in dets]
    np.testing.assert_allclose([d.prob for d in out], [50 / 255, 150 / 255, 250 / 255])


def test_filter_missing_frame_named():
    with pytest.raises(DataError, match="frame 7"):
        filter_detections(spot_dets(7, 1), {0: frame_with_spots([1])}, FixedModel(), 0.5)


def test_filter_shared_peak_scored_once():
    f = np.zeros((100, 200, 3), np.uint8)
    f[50, 100] = 200
    f[50, 85] = 90  # within the bright spot's patch, so its patch re-centers there
    dets = [Detection(frame=0, w=85.0, h=50.0, theta=0.0, phi=0.0),
            Detection(frame=0, w=100.0, h=50.0, theta=0.0, phi=0.0),
            Detection(frame=0, w=110.0, h=50.0, theta=0.0, phi=0.0)]
    out = filter_detections(dets, {0: f}, FixedModel())
    np.testing.assert_allclose([d.prob for d in out], [0.0, 200 / 255, 0.0])


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), p1=st.floats(0, 1), p2=st.floats(0, 1))
def test_filter_monotone_per_frame(seed, p1, p2):
    rng = np.random.default_rng(seed)
    frames, dets = {}, []
    for k in range(4):
        vals = rng.integers(1, 256, int(rng.integers(0, 5)))
        frames[k] = frame_with_spots(vals)
        dets += spot_dets(k, len(vals))
    lo, hi = sorted((p1, p2))
    a = filter_detections(dets, frames, FixedModel(), lo)
    b = filter_detections(dets, frames, FixedModel(), hi)
    for k in range(4):
        n_all = sum(d.frame == k for d in dets)
        n_lo = sum(d.frame == k for d in a)
        n_hi = sum(d.frame == k for d in b)
        assert n_hi <= n_lo <= n_all
    assert {(d.frame, d.w) for d in b} <= {(d.frame, d.w) for d in a}


class ConstModel:
    def __init__(self, p):
        self.p = p

    def predict_proba(self, pixels):
        return np.full(len(pixels), self.p)


def test_evaluate_perfect_predictor():
    labels = np.array([1, 0, 1, 1, 0, 0, 1, 0, 1, 1])
    px = np.zeros((10, PATCH_SIZE, PATCH_SIZE, 3), np.uint8)
    px[:, PATCH_HALF, PATCH_HALF, 1] = labels * 255
    rep = evaluate(FixedModel(), PatchDataset(px, labels))
    assert rep.accuracy == 1.0 and rep.f1 == 1.0
    assert rep.confusion == [[4, 0], [0, 6]]


def test_evaluate_constant_predictor():
    labels = np.array([1] * 7 + [0] * 3)
    ds = PatchDataset(np.zeros((10, PATCH_SIZE, PATCH_SIZE, 3), np.uint8), labels)
    assert evaluate(ConstModel(0.9), ds).accuracy == pytest.approx(0.7)
    assert evaluate(ConstModel(0.1), ds).accuracy == pytest.approx(0.3)


def test_evaluate_empty():
    with pytest.raises(DataError):
        evaluate(ConstModel(0.5), PatchDataset(np.zeros((0, PATCH_SIZE, PATCH_SIZE, 3), np.uint8), np.zeros(0)))


@settings(max_examples=100, deadline=None)
@given(y=st.lists(st.integers(0, 1), min_size=1, max_size=50), seed=st.integers(0, 2**32 - 1))
def test_metrics_match_brute_force(y, seed):
    y = np.array(y)
    pred = np.random.default_rng(seed).integers(0, 2, len(y))
    m = metrics_from_predictions(y, pred)
    tp = fp = tn = fn = 0
    for t, p in zip(y, pred):
        if t and p:
            tp += 1
        elif t:
            fn += 1
        elif p:
            fp += 1
        else:
            tn += 1
    assert m["confusion"] == [[tn, fp], [fn, tp]]
    assert sum(map(sum, m["confusion"])) == len(y)
    assert m["accuracy"] == (tp + tn) / len(y)
    assert m["precision"] == (tp / (tp + fp) if tp + fp else 0.0)
    assert m["recall"] == (tp / (tp + fn) if tp + fn else 0.0)
    for k in ("accuracy", "precision", "recall", "f1"):
        assert 0.0 <= m[k] <= 1.0


def test_roc_endpoints():
    labels = np.array([0, 1, 0, 1])
    px = np.zeros((4, PATCH_SIZE, PATCH_SIZE, 3), np.uint8)
    px[:, PATCH_HALF, PATCH_HALF, 1] = [10, 200, 120, 90]
    roc = evaluate(FixedModel(), PatchDataset(px, labels)).roc
    assert roc[0][1:] == (0.0, 0.0)
    assert roc[-1][1:] == (1.0, 1.0)
