"""The end-to-end detector: embedding init, hetero encoder, MLP head.

Training is transductive: message passing sees the whole refined graph,
but only training users contribute to the loss. Augmented u-u edge
weights are recomputed from the spline blend module every epoch, and
the classification loss back-propagates through those weights, so the
blend parameter is trained end to end.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DomainError, TrainingError
from .graph import BinaryLabel, EdgeOrigin, HeteroSocialGraph
from .augment import _topic_matrix
from .nn import (
    Adam,
    ConvStructure,
    FfnLayer,
    HeteroConvLayer,
    KanEdgeModule,
    cross_entropy,
    load_checkpoint,
    save_checkpoint,
)


@dataclass
class ModelConfig:
    hidden: int = 64
    dropout: float = 0.2
    lr: float = 1e-3
    epochs: int = 300
    patience: int = 30
    aggregation: str = "sum"
    modality_mask: str = "PCTSI"
    homogeneous: bool = False
    seed: int = 0

    def validate(self):
        if not self.modality_mask or any(m not in "PCTSI" for m in self.modality_mask):
            raise ConfigError(f"bad modality mask {self.modality_mask!r}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout outside [0, 1)")
        return self


@dataclass(frozen=True)
class MetricsReport:
    tp: int
    tn: int
    fp: int
    fn: int

    @property
    def acc(self):
        total = self.tp + self.tn + self.fp + self.fn
        return (self.tp + self.tn) / total if total else 0.0

    @property
    def pre(self):
        return self.tp / (self.tp + self.fp) if self.tp + self.fp else 0.0

    @property
    def rec(self):
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else 0.0

    @property
    def f1(self):
        p, r = self.pre, self.rec
        return 2 * p * r / (p + r) if p + r else 0.0

    # Macro-averaged variants (positive and negative class averaged),
    # emitted alongside since published averaging conventions vary.
    @property
    def macro_pre(self):
        neg = self.tn / (self.tn + self.fn) if self.tn + self.fn else 0.0
        return 0.5 * (self.pre + neg)

    @property
    def macro_rec(self):
        neg = self.tn / (self.tn + self.fp) if self.tn + self.fp else 0.0
        return 0.5 * (self.rec + neg)

    @property
    def macro_f1(self):
        p_neg = self.tn / (self.tn + self.fn) if self.tn + self.fn else 0.0
        r_neg = self.tn / (self.tn + self.fp) if self.tn + self.fp else 0.0
        f_neg = 2 * p_neg * r_neg / (p_neg + r_neg) if p_neg + r_neg else 0.0
        return 0.5 * (self.f1 + f_neg)

    def to_dict(self):
        return {
            "tp": self.tp, "tn": self.tn, "fp": self.fp, "fn": self.fn,
            "acc": self.acc, "pre": self.pre, "rec": self.rec, "f1": self.f1,
            "macro_pre": self.macro_pre, "macro_rec": self.macro_rec,
            "macro_f1": self.macro_f1,
        }


def metrics_from_predictions(y_true, y_pred) -> MetricsReport:
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.size == 0:
        raise DomainError("empty evaluation set")
    tp = int(np.sum((y_pred == 1) & (y_true == 1)))
    tn = int(np.sum((y_pred == 0) & (y_true == 0)))
    fp = int(np.sum((y_pred == 1) & (y_true == 0)))
    fn = int(np.sum((y_pred == 0) & (y_true == 1)))
    return MetricsReport(tp, tn, fp, fn)


class EarlySdModel:
    """Hetero encoder (2 conv layers) + 2-layer MLP head + blend module."""

    def __init__(self, feat_dim: int, d_t: int, config: ModelConfig,
                 rng: np.random.Generator | None = None):
        config.validate()
        rng = rng or np.random.default_rng(config.seed)
        h = config.hidden
        self.config = config
        self.feat_dim, self.d_t = feat_dim, d_t
        self.ffn_u = FfnLayer(feat_dim, h, "relu", rng)
        self.ffn_t = FfnLayer(d_t, h, "relu", rng)
        self.conv1 = HeteroConvLayer(h, h, h, config.aggregation, rng)
        self.conv2 = HeteroConvLayer(h, h, h, config.aggregation, rng)
        if config.homogeneous:
            # Collapse the relations: one shared message map per layer.
            self.conv1.f_ut = self.conv1.f_uu
            self.conv2.f_ut = self.conv2.f_uu
        self.head1 = FfnLayer(h, h, "relu", rng)
        self.head2 = FfnLayer(h, 2, "identity", rng)
        self.kan = KanEdgeModule(rng=rng)
        self.feat_mu = np.zeros(feat_dim)
        self.feat_sd = np.ones(feat_dim)
        self._cache = None

    @property
    def params(self):
        seen, out = set(), []
        for layer in (self.ffn_u, self.ffn_t, self.conv1, self.conv2,
                      self.head1, self.head2, self.kan):
            for p in layer.params:
                if id(p) not in seen:
                    seen.add(id(p))
                    out.append(p)
        return out

    # -- forward / backward -------------------------------------------------
    def edge_weights(self, edge_info):
        """Per-stored-edge weights; augmented ones go through the blend."""
        w = edge_info["base"].copy()
        sel = edge_info["blend_idx"]
        if sel.size:
            alpha = self.kan.forward(edge_info["sim_f"], edge_info["sim_t"])
            blended = alpha * edge_info["sim_f"] + (1.0 - alpha) * edge_info["sim_t"]
            w[sel] = np.clip(blended, 0.0, 1.0)
            inside = (blended > 0.0) & (blended < 1.0)
            self._blend_cache = (sel, inside)
        else:
            self._blend_cache = None
        return w

    def normalize(self, x):
        return (x - self.feat_mu) / self.feat_sd

    def forward(self, x_user, x_topic, structure: ConvStructure,
                dropout_rng: np.random.Generator | None = None):
        h_u0 = self.ffn_u.forward(x_user)
        h_t0 = self.ffn_t.forward(x_topic)
        c1 = self.conv1.forward(h_u0, h_t0, structure)
        h1 = np.maximum(c1, 0.0)
        m1 = self._dropout_mask(h1.shape, dropout_rng)
        c2 = self.conv2.forward(h1 * m1, h_t0, structure)
        h2 = np.maximum(c2, 0.0)
        m2 = self._dropout_mask(h2.shape, dropout_rng)
        z1 = self.head1.forward(h2 * m2)
        logits = self.head2.forward(z1)
        self._cache = (c1, m1, c2, m2)
        return logits

    def _dropout_mask(self, shape, rng):
        if rng is None or self.config.dropout == 0.0:
            return np.ones(shape)
        keep = 1.0 - self.config.dropout
        return (rng.uniform(size=shape) < keep) / keep

    def backward(self, dlogits, edge_info):
        c1, m1, c2, m2 = self._cache
        dz1 = self.head2.backward(dlogits)
        dh2d = self.head1.backward(dz1)
        dc2 = dh2d * m2 * (c2 > 0.0)
        dh1d, dh_t0_a, dw2 = self.conv2.backward(dc2)
        dc1 = dh1d * m1 * (c1 > 0.0)
        dh_u0, dh_t0_b, dw1 = self.conv1.backward(dc1)
        self.ffn_u.backward(dh_u0)
        self.ffn_t.backward(dh_t0_a + dh_t0_b)
        if self._blend_cache is not None:
            sel, inside = self._blend_cache
            dw = (dw1 + dw2)[sel]
            dalpha = dw * inside * (edge_info["sim_f"] - edge_info["sim_t"])
            self.kan.backward(dalpha)

    # -- persistence --------------------------------------------------------
    def state_arrays(self):
        return {
            "ffn_u.weight": self.ffn_u.weight.values,
            "ffn_u.bias": self.ffn_u.bias.values,
            "ffn_t.weight": self.ffn_t.weight.values,
            "ffn_t.bias": self.ffn_t.bias.values,
            "conv1.f_uu": self.conv1.f_uu.values,
            "conv1.f_ut": self.conv1.f_ut.values,
            "conv2.f_uu": self.conv2.f_uu.values,
            "conv2.f_ut": self.conv2.f_ut.values,
            "head1.weight": self.head1.weight.values,
            "head1.bias": self.head1.bias.values,
            "head2.weight": self.head2.weight.values,
            "head2.bias": self.head2.bias.values,
            "kan.coef_f": self.kan.coef_f.values,
            "kan.coef_t": self.kan.coef_t.values,
            "kan.bias": self.kan.bias.values,
            "feat_mu": self.feat_mu,
            "feat_sd": self.feat_sd,
        }

    def save(self, path):
        cfg = self.config
        save_checkpoint(path, self.state_arrays(), hyper={
            "hidden": cfg.hidden, "dropout": cfg.dropout, "lr": cfg.lr,
            "aggregation": cfg.aggregation, "modality_mask": cfg.modality_mask,
            "homogeneous": cfg.homogeneous, "seed": cfg.seed,
            "feat_dim": self.feat_dim, "d_t": self.d_t,
        })

    @classmethod
    def load(cls, path, config: ModelConfig):
        arrays = load_checkpoint(path)
        model = cls(arrays["ffn_u.weight"].shape[0],
                    arrays["ffn_t.weight"].shape[0], config)
        for name, arr in arrays.items():
            if name == "feat_mu":
                model.feat_mu = arr
            elif name == "feat_sd":
                model.feat_sd = arr
            else:
                layer_name, param_name = name.split(".")
                layer = getattr(model, layer_name)
                getattr(layer, param_name).values[...] = arr
        return model


def init_embeddings(graph: HeteroSocialGraph, model: EarlySdModel,
                    modality_mask: str | None = None):
    """Initial user/topic embeddings from the masked feature blocks."""
    mask = model.config.modality_mask if modality_mask is None else modality_mask
    if not mask:
        raise ConfigError("modality mask is empty")
    x_user = model.normalize(features_matrix(graph, mask))
    x_topic = _topic_matrix(graph)
    return model.ffn_u.forward(x_user), model.ffn_t.forward(x_topic)


def features_matrix(graph: HeteroSocialGraph, mask: str):
    return np.stack([u.feature_vector(mask) for u in graph.users])


def _edge_info(graph: HeteroSocialGraph):
    base = np.asarray([e.weight for e in graph.uu_edges], dtype=np.float64)
    blend_idx, sim_f, sim_t = [], [], []
    for k, e in enumerate(graph.uu_edges):
        if e.origin is EdgeOrigin.AUGMENTED and e.sim_f is not None \
                and e.sim_t is not None:
            blend_idx.append(k)
            sim_f.append(e.sim_f)
            sim_t.append(e.sim_t)
    return {
        "base": base,
        "blend_idx": np.asarray(blend_idx, dtype=np.int64),
        "sim_f": np.asarray(sim_f, dtype=np.float64),
        "sim_t": np.asarray(sim_t, dtype=np.float64),
    }


def _binary_targets(graph):
    return np.asarray([1 if u.binary_label is BinaryLabel.POSITIVE else 0
                       for u in graph.users], dtype=np.int64)


def _fit_normalizer(model, x):
    model.feat_mu = x.mean(axis=0)
    sd = x.std(axis=0)
    sd[sd < 1e-12] = 1.0
    model.feat_sd = sd


@dataclass
class TrainingLog:
    epochs: list = field(default_factory=list)  # (epoch, loss, val_f1, val_acc)
    best_epoch: int = -1
    stopped_early: bool = False


def train_earlysd(graph: HeteroSocialGraph, split, config: ModelConfig):
    """Fit the detector; returns (model, TrainingLog).

    Early-stops on validation F1 with the configured patience and
    restores the best snapshot. Deterministic per seed.
    """
    config.validate()
    rng = np.random.default_rng(config.seed)
    x_raw = features_matrix(graph, config.modality_mask)
    x_topic = _topic_matrix(graph)
    model = EarlySdModel(x_raw.shape[1], x_topic.shape[1], config, rng)
    _fit_normalizer(model, x_raw)
    x_user = model.normalize(x_raw)

    structure = ConvStructure.from_graph(graph)
    edge_info = _edge_info(graph)
    y = _binary_targets(graph)
    idx_of = graph.user_index
    train_idx = np.asarray(sorted(idx_of[u] for u in split.train), dtype=np.int64)
    val_idx = np.asarray(sorted(idx_of[u] for u in split.val), dtype=np.int64)
    if train_idx.size == 0 or val_idx.size == 0:
        raise TrainingError("empty train or validation split")

    optimizer = Adam(model.params, lr=config.lr)
    drop_rng = np.random.default_rng(config.seed + 1)
    log = TrainingLog()
    best_f1, best_state, patience_left = -1.0, None, config.patience

    for epoch in range(config.epochs):
        structure.set_uu_weights(model.edge_weights(edge_info))
        optimizer.zero_grad()
        logits = model.forward(x_user, x_topic, structure, drop_rng)
        loss, dl_full = cross_entropy(logits[train_idx], y[train_idx])
        if not np.isfinite(loss):
            raise TrainingError("loss diverged", epoch=epoch)
        dlogits = np.zeros_like(logits)
        dlogits[train_idx] = dl_full
        model.backward(dlogits, edge_info)
        optimizer.step()

        val_metrics = evaluate(model, graph, split.val, _precomputed=(
            x_user, x_topic, structure, edge_info))
        log.epochs.append((epoch, loss, val_metrics.f1, val_metrics.acc))
        if val_metrics.f1 > best_f1 + 1e-12:
            best_f1 = val_metrics.f1
            best_state = {k: v.copy() for k, v in model.state_arrays().items()}
            log.best_epoch = epoch
            patience_left = config.patience
        else:
            patience_left -= 1
            if patience_left <= 0:
                log.stopped_early = True
                break

    if best_state is not None:
        current = model.state_arrays()
        for k, v in best_state.items():
            current[k][...] = v
    return model, log


def evaluate(model: EarlySdModel, graph: HeteroSocialGraph, user_ids,
             _precomputed=None) -> MetricsReport:
    """Positive-class confusion metrics over the given users."""
    ids = sorted(user_ids)
    if not ids:
        raise DomainError("empty evaluation set")
    if _precomputed is None:
        x_user = model.normalize(features_matrix(graph, model.config.modality_mask))
        x_topic = _topic_matrix(graph)
        structure = ConvStructure.from_graph(graph)
        edge_info = _edge_info(graph)
    else:
        x_user, x_topic, structure, edge_info = _precomputed
    structure.set_uu_weights(model.edge_weights(edge_info))
    logits = model.forward(x_user, x_topic, structure, dropout_rng=None)
    pred = logits.argmax(axis=1)
    y = _binary_targets(graph)
    sel = np.asarray([graph.user_index[u] for u in ids], dtype=np.int64)
    return metrics_from_predictions(y[sel], pred[sel])
