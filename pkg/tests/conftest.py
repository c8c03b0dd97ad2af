import numpy as np
import pytest

from earlysd.graph import TopicNode, UserRecord, UtEdge, build_graph
from earlysd.synth import CohortConfig, generate_cohort


def make_user(uid, score, *, topics=(), content=(), seed=0, **overrides):
    """Small valid UserRecord with deterministic filler features."""
    rng = np.random.default_rng(seed)
    kw = dict(
        features_p=rng.uniform(1, 5, size=10),
        features_c=np.array([120.0, 150.0, 0.5]),
        features_t=np.array([40.0, 100.0, 30.0, 25.0]),
        features_s=np.array([80.0, 30.0, 0.4]),
        features_i=np.array([500.0, 60.0, 90.0]),
    )
    kw.update(overrides)
    return UserRecord(id=uid, score=score, content=list(content),
                      topics=set(topics), **kw)


def make_topics(names):
    return [TopicNode(id=f"t{i:04d}", name=n) for i, n in enumerate(names)]


def tiny_graph(n_users=6, n_topics=4, seed=0):
    """Users alternate labels; each user links to two topics."""
    topics = make_topics([f"topic {i}" for i in range(n_topics)])
    users, ut = [], []
    for i in range(n_users):
        score = 40 if i % 2 == 0 else 70
        tids = {topics[i % n_topics].id, topics[(i + 1) % n_topics].id}
        users.append(make_user(f"u{i:02d}", score, topics=tids, seed=seed + i))
        ut += [UtEdge(f"u{i:02d}", t) for t in sorted(tids)]
    return build_graph(users, topics, (), ut)


@pytest.fixture(scope="session")
def default_cohort():
    return generate_cohort(CohortConfig(seed=11))


@pytest.fixture(scope="session")
def default_graph(default_cohort):
    users, topics, ut_edges, _ = default_cohort
    return build_graph(users, topics, (), ut_edges)
