"""Graph refinement: similarity-based u-u edges, topic-set expansion,
and u-t link prediction.

Refinement is monotone -- given edges are never removed, reweighted or
downgraded -- and idempotent: per-node admission caps count previously
augmented edges, so a second pass with the same config adds nothing.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import AugmentError, ConfigError, TrainingError
from .graph import (
    EdgeOrigin,
    HeteroSocialGraph,
    TopicNode,
    TopicOrigin,
    UtEdge,
    UuEdge,
)
from .enhancer import TopicLexicon, canonical_topic
from .nn import (
    Adam,
    ConvStructure,
    FfnLayer,
    HeteroConvLayer,
    bce,
    cosine_rows,
    cosine_rows_backward,
    sigmoid,
)


@dataclass
class AugmentConfig:
    tau_uu: float = 0.8
    theta_ut: float = 0.5
    max_new_uu_per_node: int = 10
    ut_top_k: int | None = 5
    negative_ratio: int = 1
    lp_epochs: int = 60
    lp_hidden: int = 64
    lp_lr: float = 5e-3
    lp_holdout: float = 0.1
    candidate_limit: int = 2_000_000
    blocking: bool = False
    blocking_dims: int = 8
    seed: int = 0

    def validate(self):
        if not 0.0 < self.tau_uu < 1.0:
            raise ConfigError(f"tau_uu {self.tau_uu} outside (0, 1)")
        if not 0.0 <= self.theta_ut <= 1.0:
            raise ConfigError(f"theta_ut {self.theta_ut} outside [0, 1]")
        if self.max_new_uu_per_node < 0 or self.negative_ratio < 1:
            raise ConfigError("caps/ratios out of range")
        return self


def standardized_features(users, mask: str = "PCTSI"):
    """Z-scored per-column feature matrix; constant columns drop to 0."""
    x = np.stack([u.feature_vector(mask) for u in users])
    mu = x.mean(axis=0)
    sd = x.std(axis=0)
    sd[sd < 1e-12] = 1.0
    return (x - mu) / sd


# ---------------------------------------------------------------------------
# u-u augmentation

def uu_augment(graph: HeteroSocialGraph, kan, enhancer,
               config: AugmentConfig) -> HeteroSocialGraph:
    """Admit user pairs whose blended similarity clears tau_uu.

    s_uv = alpha * sim_f + (1 - alpha) * sim_t with alpha produced per
    pair by the spline module from (sim_f, sim_t); pairs where either
    user has no topics fall back to alpha = 1. Candidates are all pairs
    unless the quadratic guard trips, in which case a feature-bucket
    blocking strategy must be enabled explicitly.
    """
    config.validate()
    n = graph.N
    if n < 2:
        return graph
    n_pairs = n * (n - 1) // 2
    if n_pairs > config.candidate_limit and not config.blocking:
        raise AugmentError(
            f"{n_pairs} candidate pairs exceed the limit; enable the "
            "blocking strategy for graphs this size")

    feats = standardized_features(graph.users)
    norms = np.linalg.norm(feats, axis=1)
    norms[norms < 1e-12] = 1.0
    unit = feats / norms[:, None]
    sim_f_mat = np.clip(unit @ unit.T, -1.0, 1.0)

    topic_sets = [u.topics for u in graph.users]
    if hasattr(enhancer, "similarity_matrix"):
        sim_t_mat = enhancer.similarity_matrix(topic_sets)
    else:
        sim_t_mat = np.full((n, n), np.nan)
        for i in range(n):
            for j in range(i + 1, n):
                if topic_sets[i] and topic_sets[j]:
                    sim_t_mat[i, j] = sim_t_mat[j, i] = enhancer.topic_similarity(
                        topic_sets[i], topic_sets[j])

    if config.blocking and n_pairs > config.candidate_limit:
        iu, jv = _blocked_pairs(feats, config.blocking_dims)
    else:
        iu, jv = np.triu_indices(n, k=1)

    existing = {(e.u, e.v) for e in graph.uu_edges}
    ids = [u.id for u in graph.users]

    sf = sim_f_mat[iu, jv]
    st = sim_t_mat[iu, jv]
    no_topics = np.isnan(st)
    st_safe = np.where(no_topics, 0.0, st)
    alpha = kan.forward(sf, st_safe)
    alpha = np.where(no_topics, 1.0, alpha)
    score = alpha * sf + (1.0 - alpha) * st_safe

    keep = score >= config.tau_uu
    order = np.argsort(-score[keep], kind="stable")
    cand = list(zip(iu[keep][order], jv[keep][order], score[keep][order],
                    sf[keep][order], st_safe[keep][order], no_topics[keep][order]))

    # Cap counters include already-augmented edges so reruns are no-ops.
    budget = {u.id: config.max_new_uu_per_node for u in graph.users}
    for e in graph.uu_edges:
        if e.origin is EdgeOrigin.AUGMENTED:
            budget[e.u] -= 1
            budget[e.v] -= 1

    new_edges = list(graph.uu_edges)
    for i, j, s, f, t, nt in cand:
        a, b = ids[i], ids[j]
        if a > b:
            a, b = b, a
        if (a, b) in existing:
            continue
        if budget[a] <= 0 or budget[b] <= 0:
            continue
        new_edges.append(UuEdge(a, b, float(min(max(s, 0.0), 1.0)),
                                EdgeOrigin.AUGMENTED,
                                sim_f=float(f), sim_t=None if nt else float(t)))
        existing.add((a, b))
        budget[a] -= 1
        budget[b] -= 1
    return graph.with_edges(uu_edges=new_edges)


def _blocked_pairs(feats, dims):
    # Bucket by the sign pattern of the highest-variance feature columns;
    # candidates are restricted to same-bucket pairs.
    var_order = np.argsort(-feats.var(axis=0))[:dims]
    signature = (feats[:, var_order] > 0).astype(np.int8)
    buckets: dict[bytes, list[int]] = {}
    for i, row in enumerate(signature):
        buckets.setdefault(row.tobytes(), []).append(i)
    iu, jv = [], []
    for members in buckets.values():
        for a in range(len(members)):
            for b in range(a + 1, len(members)):
                iu.append(members[a])
                jv.append(members[b])
    return np.asarray(iu, dtype=np.int64), np.asarray(jv, dtype=np.int64)


# ---------------------------------------------------------------------------
# Topic-set expansion

def expand_topic_set(graph: HeteroSocialGraph, enhancer) -> HeteroSocialGraph:
    """Run topic extraction on each user's content.

    Known topics found in content gain augmented u-t edges; novel names
    become expanded topic nodes with enhancer embeddings.
    """
    lexicon = TopicLexicon.from_names(t.name for t in graph.topics)
    canon_to_id = {canonical_topic(t.name): t.id for t in graph.topics}

    new_topics = list(graph.topics)
    new_edges = list(graph.ut_edges)
    edge_set = {(e.user, e.topic) for e in graph.ut_edges}
    pending: dict[str, set[str]] = {}  # novel canonical name -> users

    for user in graph.users:
        if not user.content:
            continue
        for name in sorted(enhancer.extract_topics(user.content, lexicon)):
            canon = canonical_topic(name)
            if canon in canon_to_id:
                key = (user.id, canon_to_id[canon])
                if key not in edge_set:
                    new_edges.append(UtEdge(*key, EdgeOrigin.AUGMENTED))
                    edge_set.add(key)
            else:
                pending.setdefault(canon, set()).add(user.id)

    next_idx = len(new_topics)
    for canon in sorted(pending):
        tid = f"x{next_idx:04d}"
        next_idx += 1
        new_topics.append(TopicNode(id=tid, name=canon,
                                    origin=TopicOrigin.EXPANDED,
                                    embedding=enhancer.embed_topic(canon)))
        for uid in sorted(pending[canon]):
            new_edges.append(UtEdge(uid, tid, EdgeOrigin.AUGMENTED))

    return graph.with_edges(ut_edges=new_edges, topics=new_topics)


# ---------------------------------------------------------------------------
# u-t link prediction

class LinkPredictor:
    """Bipartite edge scorer: hetero conv embeddings + cosine/sigmoid head."""

    def __init__(self, feat_dim: int, topic_dim: int, hidden: int,
                 rng: np.random.Generator):
        self.ffn_u = FfnLayer(feat_dim, hidden, "relu", rng)
        self.ffn_t = FfnLayer(topic_dim, hidden, "relu", rng)
        self.conv_u = HeteroConvLayer(hidden, hidden, hidden, "degree_mean", rng)
        self.conv_t = HeteroConvLayer(hidden, hidden, hidden, "degree_mean", rng)
        self.self_u = FfnLayer(hidden, hidden, "identity", rng)
        self.self_t = FfnLayer(hidden, hidden, "identity", rng)
        self.trained = False
        self.holdout_auc = None
        self.final_loss = None
        self._embeddings = None

    @property
    def params(self):
        layers = (self.ffn_u, self.ffn_t, self.conv_u, self.conv_t,
                  self.self_u, self.self_t)
        return [p for layer in layers for p in layer.params]

    def forward(self, x_user, x_topic, st_user: ConvStructure,
                st_topic: ConvStructure):
        h_u0 = self.ffn_u.forward(x_user)
        h_t0 = self.ffn_t.forward(x_topic)
        # One propagation round per side plus a self term; the reversed
        # structure treats topics as the aggregating side.
        h_u = self.self_u.forward(h_u0) + self.conv_u.forward(h_u0, h_t0, st_user)
        h_t = self.self_t.forward(h_t0) + self.conv_t.forward(h_t0, h_u0, st_topic)
        return h_u, h_t

    def backward(self, dh_u, dh_t):
        dh_t0_a = self.self_t.backward(dh_t)
        dh_t0_b, dh_u0_b, _ = self.conv_t.backward(dh_t)
        dh_u0_a = self.self_u.backward(dh_u)
        dh_u0_c, dh_t0_c, _ = self.conv_u.backward(dh_u)
        self.ffn_u.backward(dh_u0_a + dh_u0_b + dh_u0_c)
        self.ffn_t.backward(dh_t0_a + dh_t0_b + dh_t0_c)

    def score_matrix(self, h_u, h_t):
        """sigma(cos(h_u, h_t)) for every user/topic pair."""
        nu = np.linalg.norm(h_u, axis=1)
        nt = np.linalg.norm(h_t, axis=1)
        nu[nu < 1e-12] = 1.0
        nt[nt < 1e-12] = 1.0
        cos = (h_u / nu[:, None]) @ (h_t / nt[:, None]).T
        return sigmoid(np.clip(cos, -1.0, 1.0))


def _lp_structures(graph, train_edges):
    uidx, tidx = graph.user_index, graph.topic_index
    ut_u = np.asarray([uidx[e.user] for e in train_edges], dtype=np.int64)
    ut_t = np.asarray([tidx[e.topic] for e in train_edges], dtype=np.int64)
    st_user = ConvStructure.empty(graph.N, len(graph.topics))
    st_user.ut_user, st_user.ut_topic = ut_u, ut_t
    # Reversed roles: topics aggregate from their users.
    st_topic = ConvStructure.empty(len(graph.topics), graph.N)
    st_topic.ut_user, st_topic.ut_topic = ut_t, ut_u
    return st_user, st_topic


def _sample_negatives(rng, n_users, n_topics, k, positive_set):
    out = []
    guard = 0
    while len(out) < k and guard < 50 * k + 100:
        u = int(rng.integers(n_users))
        t = int(rng.integers(n_topics))
        guard += 1
        if (u, t) not in positive_set:
            out.append((u, t))
    return out


def _auc(pos_scores, neg_scores):
    pos = np.asarray(pos_scores)
    neg = np.asarray(neg_scores)
    if pos.size == 0 or neg.size == 0:
        return float("nan")
    wins = (pos[:, None] > neg[None, :]).sum() + 0.5 * (pos[:, None] == neg[None, :]).sum()
    return float(wins) / (pos.size * neg.size)


def train_link_predictor(graph: HeteroSocialGraph,
                         config: AugmentConfig) -> LinkPredictor:
    """Fit the bipartite scorer on given u-t edges.

    Positives are the given edges (10% held out for AUC reporting);
    negatives are uniform non-edges resampled every epoch. Message
    passing only sees training positives, so holdout scores are honest.
    """
    config.validate()
    given = [e for e in graph.ut_edges if e.origin is EdgeOrigin.GIVEN]
    if not given:
        raise TrainingError("link prediction needs at least one given u-t edge")
    rng = np.random.default_rng(config.seed)

    order = rng.permutation(len(given))
    n_hold = max(1, int(round(config.lp_holdout * len(given)))) \
        if len(given) >= 10 else 0
    holdout = [given[i] for i in order[:n_hold]]
    train = [given[i] for i in order[n_hold:]]
    if not train:
        train, holdout = holdout, []

    x_user = standardized_features(graph.users)
    x_topic = _topic_matrix(graph)
    model = LinkPredictor(x_user.shape[1], x_topic.shape[1], config.lp_hidden, rng)
    st_user, st_topic = _lp_structures(graph, train)

    uidx, tidx = graph.user_index, graph.topic_index
    pos_pairs = [(uidx[e.user], tidx[e.topic]) for e in train]
    pos_set = {(uidx[e.user], tidx[e.topic]) for e in given}
    optimizer = Adam(model.params, lr=config.lp_lr)

    loss = float("nan")
    for _ in range(config.lp_epochs):
        negs = _sample_negatives(rng, graph.N, len(graph.topics),
                                 config.negative_ratio * len(pos_pairs), pos_set)
        pairs = pos_pairs + negs
        y = np.concatenate([np.ones(len(pos_pairs)), np.zeros(len(negs))])
        ui = np.asarray([p[0] for p in pairs])
        ti = np.asarray([p[1] for p in pairs])

        optimizer.zero_grad()
        h_u, h_t = model.forward(x_user, x_topic, st_user, st_topic)
        cos, cache = cosine_rows(h_u[ui], h_t[ti])
        prob = sigmoid(cos)
        loss, dprob = bce(prob, y)
        dcos = dprob * prob * (1.0 - prob)
        d_hu_rows, d_ht_rows = cosine_rows_backward(dcos, cache)
        dh_u = np.zeros_like(h_u)
        dh_t = np.zeros_like(h_t)
        np.add.at(dh_u, ui, d_hu_rows)
        np.add.at(dh_t, ti, d_ht_rows)
        model.backward(dh_u, dh_t)
        optimizer.step()

    model.final_loss = loss
    h_u, h_t = model.forward(x_user, x_topic, st_user, st_topic)
    model._embeddings = (h_u, h_t)
    if holdout:
        scores = model.score_matrix(h_u, h_t)
        hold_pairs = [(uidx[e.user], tidx[e.topic]) for e in holdout]
        neg_pairs = _sample_negatives(rng, graph.N, len(graph.topics),
                                      len(hold_pairs), pos_set)
        model.holdout_auc = _auc([scores[p] for p in hold_pairs],
                                 [scores[p] for p in neg_pairs])
    model.trained = True
    return model


def _topic_matrix(graph):
    from .enhancer import StubEnhancer

    dims = {t.embedding.shape[0] for t in graph.topics if t.embedding is not None}
    d_t = dims.pop() if len(dims) == 1 else 64
    stub = StubEnhancer(d_t=d_t)
    rows = []
    for t in graph.topics:
        rows.append(t.embedding if t.embedding is not None
                    else stub.embed_topic(t.name))
    return np.stack(rows)


def ut_augment(graph: HeteroSocialGraph, predictor: LinkPredictor,
               config: AugmentConfig) -> HeteroSocialGraph:
    """Admit user-topic non-edges scored above theta_ut (top-k capped)."""
    config.validate()
    if not predictor.trained:
        raise TrainingError("link predictor must be trained before scoring")
    h_u, h_t = predictor._embeddings
    scores = predictor.score_matrix(h_u, h_t)
    existing = {(e.user, e.topic) for e in graph.ut_edges}
    new_edges = list(graph.ut_edges)
    for i, user in enumerate(graph.users):
        row = scores[i]
        candidates = [(float(row[j]), graph.topics[j].id)
                      for j in range(len(graph.topics))
                      if row[j] >= config.theta_ut
                      and (user.id, graph.topics[j].id) not in existing]
        candidates.sort(key=lambda x: (-x[0], x[1]))
        if config.ut_top_k is not None:
            candidates = candidates[:config.ut_top_k]
        for _, tid in candidates:
            new_edges.append(UtEdge(user.id, tid, EdgeOrigin.AUGMENTED))
    return graph.with_edges(ut_edges=new_edges)
