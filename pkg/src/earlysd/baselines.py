"""Flat-feature baseline classifiers.

Deliberately small self-contained implementations (no ML dependency):
k-nearest-neighbors, logistic regression, a bagged depth-limited tree
ensemble, and a 2-layer MLP on the shared numeric core. The ml_best
meta-baseline returns whichever of the first three scores highest
accuracy, mirroring the strongest-classical-baseline convention.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, DomainError
from .detector import MetricsReport, metrics_from_predictions
from .nn import Adam, FfnLayer, cross_entropy

BASELINE_NAMES = ("knn", "logreg", "rf_like", "mlp")


def _standardize(train_x, other_x):
    mu = train_x.mean(axis=0)
    sd = train_x.std(axis=0)
    sd[sd < 1e-12] = 1.0
    return (train_x - mu) / sd, (other_x - mu) / sd


def knn_predict(train_x, train_y, test_x, k: int = 5):
    tx, ex = _standardize(train_x, test_x)
    k = min(k, tx.shape[0])
    preds = np.empty(ex.shape[0], dtype=np.int64)
    d2 = (ex**2).sum(1)[:, None] - 2 * ex @ tx.T + (tx**2).sum(1)[None, :]
    for i in range(ex.shape[0]):
        order = np.argsort(d2[i], kind="stable")[:k]
        votes = train_y[order]
        pos = int(votes.sum())
        if 2 * pos == k:
            preds[i] = votes[0]  # tie: defer to the nearest neighbor
        else:
            preds[i] = int(2 * pos > k)
    return preds


def logreg_predict(train_x, train_y, test_x, epochs=400, lr=0.05, l2=1e-3,
                   seed=0):
    tx, ex = _standardize(train_x, test_x)
    rng = np.random.default_rng(seed)
    w = rng.normal(0.0, 0.01, size=tx.shape[1])
    b = 0.0
    n = tx.shape[0]
    for _ in range(epochs):
        z = tx @ w + b
        p = 1.0 / (1.0 + np.exp(-np.clip(z, -30, 30)))
        g = (p - train_y) / n
        w -= lr * (tx.T @ g + l2 * w)
        b -= lr * float(g.sum())
    z = ex @ w + b
    return (z > 0).astype(np.int64)


class _Tree:
    """Depth-limited CART on gini impurity with quantile thresholds."""

    def __init__(self, max_depth, min_leaf, n_feature_sub, rng):
        self.max_depth = max_depth
        self.min_leaf = min_leaf
        self.n_feature_sub = n_feature_sub
        self.rng = rng
        self.nodes = []  # (feature, threshold, left, right) or ("leaf", label)

    def fit(self, x, y):
        self._grow(x, y, 0)
        return self

    def _grow(self, x, y, depth):
        node_id = len(self.nodes)
        self.nodes.append(None)
        pos = int(y.sum())
        if depth >= self.max_depth or y.size < 2 * self.min_leaf \
                or pos == 0 or pos == y.size:
            self.nodes[node_id] = ("leaf", int(2 * pos >= y.size))
            return node_id
        feats = self.rng.choice(x.shape[1], size=self.n_feature_sub, replace=False)
        best = None
        parent_gini = self._gini(y)
        for f in sorted(feats):
            col = x[:, f]
            for q in (0.25, 0.5, 0.75):
                thr = float(np.quantile(col, q))
                left = col <= thr
                nl = int(left.sum())
                if nl < self.min_leaf or y.size - nl < self.min_leaf:
                    continue
                g = (nl * self._gini(y[left])
                     + (y.size - nl) * self._gini(y[~left])) / y.size
                gain = parent_gini - g
                if best is None or gain > best[0] + 1e-12:
                    best = (gain, f, thr)
        if best is None or best[0] <= 1e-12:
            self.nodes[node_id] = ("leaf", int(2 * pos >= y.size))
            return node_id
        _, f, thr = best
        mask = x[:, f] <= thr
        left = self._grow(x[mask], y[mask], depth + 1)
        right = self._grow(x[~mask], y[~mask], depth + 1)
        self.nodes[node_id] = (f, thr, left, right)
        return node_id

    @staticmethod
    def _gini(y):
        if y.size == 0:
            return 0.0
        p = y.mean()
        return 2.0 * p * (1.0 - p)

    def predict_one(self, row):
        node = self.nodes[0]
        while node[0] != "leaf":
            f, thr, left, right = node
            node = self.nodes[left] if row[f] <= thr else self.nodes[right]
        return node[1]


def rf_like_predict(train_x, train_y, test_x, n_trees=25, max_depth=5, seed=0):
    rng = np.random.default_rng(seed)
    n, d = train_x.shape
    sub = max(1, int(np.sqrt(d)))
    trees = []
    for _ in range(n_trees):
        boot = rng.integers(0, n, size=n)
        trees.append(_Tree(max_depth, 2, sub, rng).fit(train_x[boot], train_y[boot]))
    votes = np.zeros(test_x.shape[0])
    for t in trees:
        votes += np.asarray([t.predict_one(row) for row in test_x])
    return (2 * votes >= n_trees).astype(np.int64)


def mlp_predict(train_x, train_y, test_x, hidden=64, epochs=200, lr=1e-2, seed=0):
    tx, ex = _standardize(train_x, test_x)
    rng = np.random.default_rng(seed)
    l1 = FfnLayer(tx.shape[1], hidden, "relu", rng)
    l2 = FfnLayer(hidden, 2, "identity", rng)
    optimizer = Adam(l1.params + l2.params, lr=lr)
    y = train_y.astype(np.int64)
    for _ in range(epochs):
        optimizer.zero_grad()
        logits = l2.forward(l1.forward(tx))
        _, dlogits = cross_entropy(logits, y)
        l1.backward(l2.backward(dlogits))
        optimizer.step()
    return l2.forward(l1.forward(ex)).argmax(axis=1)


_PREDICTORS = {
    "knn": lambda tr_x, tr_y, te_x, seed: knn_predict(tr_x, tr_y, te_x),
    "logreg": lambda tr_x, tr_y, te_x, seed: logreg_predict(tr_x, tr_y, te_x, seed=seed),
    "rf_like": lambda tr_x, tr_y, te_x, seed: rf_like_predict(tr_x, tr_y, te_x, seed=seed),
    "mlp": lambda tr_x, tr_y, te_x, seed: mlp_predict(tr_x, tr_y, te_x, seed=seed),
}


def run_baseline(name: str, features, labels, user_ids, split,
                 seed: int = 0) -> MetricsReport:
    """Train the named baseline on the split's train users, score test.

    `features` is the flat matrix over all users in `user_ids` order;
    `ml-best` returns the best-accuracy member of {knn, logreg, rf_like}.
    """
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    pos = {uid: i for i, uid in enumerate(user_ids)}
    tr = np.asarray(sorted(pos[u] for u in split.train), dtype=np.int64)
    te = np.asarray(sorted(pos[u] for u in split.test), dtype=np.int64)
    if tr.size == 0 or te.size == 0:
        raise DomainError("empty train or test split")

    if name == "ml-best":
        best = None
        for candidate in ("knn", "logreg", "rf_like"):
            report = run_baseline(candidate, features, labels, user_ids, split, seed)
            if best is None or report.acc > best.acc:
                best = report
        return best
    if name not in _PREDICTORS:
        raise ConfigError(f"unknown baseline {name!r}")
    preds = _PREDICTORS[name](features[tr], labels[tr], features[te], seed)
    return metrics_from_predictions(labels[te], preds)
