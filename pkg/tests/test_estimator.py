import numpy as np
import pytest
from sklearn.base import clone

from swinsight import datapipe
from swinsight.errors import ShapeError
from swinsight.estimator import TSNE, ImagePreprocessor, SwinClassifier

TINY = {"image_size": 8, "patch_size": 2, "embed_dim": 8, "depths": (1, 1), "num_heads": (2, 2), "window_size": 2}


def stripes(n, seed=0):
    """Class 1 gets high-frequency vertical stripes, class 0 is flat."""
    rng = np.random.default_rng(seed)
    y = np.arange(n) % 2
    X = np.tile(rng.random((n, 3, 1, 1)) * 0.2 + 0.4, (1, 1, 8, 8))
    X[y == 1, :, :, ::2] += 0.4
    return X, np.where(y == 1, "cgi", "real")


def test_params_and_clone():
    clf = SwinClassifier(epochs=3, learning_rate=1e-3, model_overrides=TINY)
    assert clf.get_params()["epochs"] == 3
    c2 = clone(clf)
    assert c2.get_params() == clf.get_params() and not hasattr(c2, "model_")
    assert clone(TSNE(perplexity=5)).perplexity == 5


def test_fit_predict_and_reproducible():
    X, y = stripes(32)
    clf = SwinClassifier(epochs=15, learning_rate=3e-3, batch_size=8, model_overrides=TINY).fit(X, y)
    assert list(clf.classes_) == ["cgi", "real"]
    proba = clf.predict_proba(X)
    np.testing.assert_allclose(proba.sum(1), 1, atol=1e-6)
    assert clf.score(X, y) >= 0.9
    assert len(clf.trace_) == 15
    assert clf.transform(X).shape == (32, 16)
    margin = clf.decision_function(X)
    np.testing.assert_array_equal(margin > 0, proba[:, 1] > 0.5)
    again = clone(clf).fit(X, y)
    np.testing.assert_array_equal(again.predict_proba(X), proba)


def test_classifier_input_checks():
    X, y = stripes(4)
    clf = SwinClassifier(epochs=1, model_overrides=TINY)
    with pytest.raises(ValueError, match="two classes"):
        clf.fit(X, ["a"] * 4)
    with pytest.raises(ShapeError):
        clf.fit(X[:, :2], y)
    with pytest.raises(ShapeError):
        clf.fit(np.zeros((4, 3, 16, 16)), y)
    with pytest.raises(ValueError):
        SwinClassifier(preset="nope").fit(X, y)


def test_image_preprocessor_matches_pipeline():
    rng = np.random.default_rng(0)
    X = rng.random((2, 3, 10, 6))
    out = ImagePreprocessor(size=4).fit_transform(X)
    assert out.shape == (2, 3, 4, 4)
    np.testing.assert_allclose(out[1], datapipe.normalize(datapipe.resize_bilinear(X[1], 4)))
    raw = ImagePreprocessor(size=10, normalize=False).fit_transform(rng.random((1, 3, 10, 10)))
    assert raw.min() >= 0 and raw.max() <= 1


def test_tsne_estimator():
    rng = np.random.default_rng(1)
    X = np.vstack([rng.standard_normal((10, 4)), rng.standard_normal((10, 4)) + 10])
    t = TSNE(perplexity=5, n_iter=300, random_state=2)
    Y = t.fit_transform(X)
    assert Y.shape == (20, 2) and t.n_iter_ == 300 and len(t.cost_trace_) == 300
    assert t.kl_divergence_ == t.cost_trace_[-1]
    np.testing.assert_array_equal(Y, TSNE(perplexity=5, n_iter=300, random_state=2).fit_transform(X))
