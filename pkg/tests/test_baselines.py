import numpy as np
import pytest

from earlysd.baselines import (
    BASELINE_NAMES,
    knn_predict,
    logreg_predict,
    mlp_predict,
    rf_like_predict,
    run_baseline,
)
from earlysd.errors import ConfigError
from earlysd.graph import stratified_split
from conftest import make_user


def separable(seed=0, n=60, gap=2.0):
    rng = np.random.default_rng(seed)
    y = np.array([i % 2 for i in range(n)])
    x = rng.normal(0.0, 0.5, size=(n, 6)) + gap * y[:, None]
    return x, y


class TestKnn:
    def test_memorizes_training_set(self):
        x, y = separable()
        pred = knn_predict(x, y, x, k=1)
        np.testing.assert_array_equal(pred, y)

    def test_separable_generalizes(self):
        x, y = separable()
        xt, yt = separable(seed=1)
        assert (knn_predict(x, y, xt, k=5) == yt).mean() == 1.0


class TestLogreg:
    def test_separable(self):
        x, y = separable()
        xt, yt = separable(seed=1)
        assert (logreg_predict(x, y, xt, seed=0) == yt).mean() == 1.0

    def test_outputs_binary(self):
        x, y = separable(gap=0.1)
        pred = logreg_predict(x, y, x, seed=0)
        assert set(np.unique(pred)) <= {0, 1}


class TestForestAndMlp:
    def test_rf_separable(self):
        x, y = separable()
        xt, yt = separable(seed=1)
        assert (rf_like_predict(x, y, xt, seed=0) == yt).mean() >= 0.95

    def test_mlp_separable(self):
        x, y = separable()
        xt, yt = separable(seed=1)
        assert (mlp_predict(x, y, xt, seed=0) == yt).mean() >= 0.95


@pytest.fixture(scope="module")
def setup():
    users = [make_user(f"u{i:02d}", 70 if i % 2 == 0 else 40, seed=i)
             for i in range(40)]
    rng = np.random.default_rng(0)
    labels = np.array([1 if i % 2 == 0 else 0 for i in range(40)])
    feats = rng.normal(0, 0.5, (40, 5)) + 2.0 * labels[:, None]
    split = stratified_split(users, (0.6, 0.2, 0.2), seed=0)
    return feats, labels, [u.id for u in users], split


class TestRunBaseline:
    @pytest.mark.parametrize("name", BASELINE_NAMES)
    def test_each_runs(self, setup, name):
        feats, labels, ids, split = setup
        m = run_baseline(name, feats, labels, ids, split, seed=0)
        assert 0.0 <= m.acc <= 1.0

    def test_ml_best_takes_max_accuracy(self, setup):
        feats, labels, ids, split = setup
        best = run_baseline("ml-best", feats, labels, ids, split, seed=0)
        members = [run_baseline(n, feats, labels, ids, split, seed=0)
                   for n in ("knn", "logreg", "rf_like")]
        assert best.acc == max(m.acc for m in members)

    def test_unknown_name(self, setup):
        feats, labels, ids, split = setup
        with pytest.raises(ConfigError):
            run_baseline("svm", feats, labels, ids, split, seed=0)

    def test_deterministic(self, setup):
        feats, labels, ids, split = setup
        a = run_baseline("mlp", feats, labels, ids, split, seed=3)
        b = run_baseline("mlp", feats, labels, ids, split, seed=3)
        assert a == b
