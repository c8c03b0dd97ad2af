import numpy as np
import pytest

from earlysd.detector import (
    EarlySdModel,
    MetricsReport,
    ModelConfig,
    evaluate,
    init_embeddings,
    metrics_from_predictions,
    train_earlysd,
)
from earlysd.errors import ConfigError, DomainError, TrainingError
from earlysd.graph import UtEdge, build_graph, stratified_split
from conftest import make_topics, make_user

SMALL = ModelConfig(hidden=16, epochs=60, patience=20, dropout=0.1, lr=5e-3)


def separable_cohort(seed=0, n=40):
    """Two feature clusters aligned with the binary label."""
    rng = np.random.default_rng(seed)
    topics = make_topics([f"topic {i}" for i in range(6)])
    users, ut = [], []
    for i in range(n):
        pos = i % 2 == 0
        feats = np.clip(rng.normal(3.0 + (1.2 if pos else -1.2), 0.4, 10),
                        0.1, 6.0)
        tset = {f"t{rng.integers(0, 3) if pos else rng.integers(3, 6):04d}"}
        u = make_user(f"u{i:02d}", 70 if pos else 40, topics=tset,
                      features_p=feats, seed=seed * 100 + i)
        users.append(u)
        ut += [UtEdge(u.id, t) for t in sorted(tset)]
    return build_graph(users, topics, (), ut)


@pytest.fixture(scope="module")
def trained():
    graph = separable_cohort()
    split = stratified_split(graph.users, (0.6, 0.2, 0.2), seed=0)
    cfg = ModelConfig(**{**SMALL.__dict__, "seed": 0})
    model, log = train_earlysd(graph, split, cfg)
    return graph, split, cfg, model, log


class TestMetrics:
    def test_hand_example(self):
        # TP=3 FP=1 FN=2 TN=4: ACC=7/10, PRE=3/4, REC=3/5, F1=2/3
        m = MetricsReport(tp=3, tn=4, fp=1, fn=2)
        assert m.acc == pytest.approx(0.7)
        assert m.pre == pytest.approx(0.75)
        assert m.rec == pytest.approx(0.6)
        assert m.f1 == pytest.approx(2 / 3)

    def test_all_correct(self):
        m = metrics_from_predictions([1, 0, 1, 0], [1, 0, 1, 0])
        assert (m.acc, m.pre, m.rec, m.f1) == (1.0, 1.0, 1.0, 1.0)

    def test_all_negative_predictions(self):
        m = metrics_from_predictions([1, 1, 0], [0, 0, 0])
        assert m.rec == 0.0 and m.f1 == 0.0 and m.pre == 0.0
        assert m.acc == pytest.approx(1 / 3)

    def test_counts_consistent(self):
        y = np.array([1, 0, 1, 1, 0, 0, 1, 0])
        p = np.array([1, 1, 0, 1, 0, 1, 1, 0])
        m = metrics_from_predictions(y, p)
        assert m.tp + m.tn + m.fp + m.fn == len(y)
        assert m.to_dict()["acc"] == m.acc

    def test_macro_averages_balanced_perfect(self):
        m = metrics_from_predictions([1, 0], [1, 0])
        assert m.macro_f1 == 1.0 and m.macro_pre == 1.0 and m.macro_rec == 1.0

    def test_empty_rejected(self):
        with pytest.raises(DomainError):
            metrics_from_predictions([], [])


class TestModelConfig:
    def test_empty_mask_rejected(self):
        with pytest.raises(ConfigError):
            ModelConfig(modality_mask="").validate()

    def test_unknown_modality_rejected(self):
        with pytest.raises(ConfigError):
            ModelConfig(modality_mask="PX").validate()

    def test_bad_dropout(self):
        with pytest.raises(ConfigError):
            ModelConfig(dropout=1.0).validate()


class TestTraining:
    def test_learns_separable_cohort(self, trained):
        graph, split, _, model, _ = trained
        assert evaluate(model, graph, split.test).acc >= 0.75

    def test_log_shape(self, trained):
        _, _, _, _, log = trained
        assert log.epochs
        assert log.best_epoch >= 0
        epochs = [e for e, *_ in log.epochs]
        assert epochs == list(range(len(epochs)))

    def test_deterministic(self, trained):
        graph, split, cfg, model, _ = trained
        model2, _ = train_earlysd(graph, split, cfg)
        assert evaluate(model, graph, split.test) == \
            evaluate(model2, graph, split.test)

    def test_seed_changes_model(self, trained):
        graph, split, cfg, model, _ = trained
        cfg2 = ModelConfig(**{**cfg.__dict__, "seed": 1})
        model2, _ = train_earlysd(graph, split, cfg2)
        assert not np.array_equal(model.head2.weight.values,
                                  model2.head2.weight.values)

    def test_empty_split_rejected(self, trained):
        graph, split, cfg, _, _ = trained

        class Empty:
            train = split.train
            val = frozenset()
        with pytest.raises(TrainingError):
            train_earlysd(graph, Empty(), cfg)

    def test_homogeneous_ties_relation_maps(self):
        graph = separable_cohort(seed=2, n=20)
        split = stratified_split(graph.users, (0.6, 0.2, 0.2), seed=2)
        cfg = ModelConfig(**{**SMALL.__dict__, "epochs": 5, "homogeneous": True})
        model, _ = train_earlysd(graph, split, cfg)
        assert model.conv1.f_ut is model.conv1.f_uu
        np.testing.assert_array_equal(model.conv1.f_ut.values,
                                      model.conv1.f_uu.values)

    def test_modality_mask_shrinks_input(self):
        graph = separable_cohort(seed=3, n=20)
        split = stratified_split(graph.users, (0.6, 0.2, 0.2), seed=3)
        cfg = ModelConfig(**{**SMALL.__dict__, "epochs": 3, "modality_mask": "P"})
        model, _ = train_earlysd(graph, split, cfg)
        assert model.feat_dim == 10


class TestEvaluate:
    def test_empty_eval_set(self, trained):
        graph, _, _, model, _ = trained
        with pytest.raises(DomainError):
            evaluate(model, graph, [])

    def test_subset_consistent_with_full(self, trained):
        graph, split, _, model, _ = trained
        full = evaluate(model, graph, [u.id for u in graph.users])
        parts = [evaluate(model, graph, p) for p in split.parts()]
        assert full.tp == sum(m.tp for m in parts)
        assert full.fp == sum(m.fp for m in parts)


class TestPersistence:
    def test_round_trip_identical_metrics(self, trained, tmp_path):
        graph, split, cfg, model, _ = trained
        path = tmp_path / "model.esd"
        model.save(path)
        loaded = EarlySdModel.load(path, cfg)
        assert evaluate(loaded, graph, split.test) == \
            evaluate(model, graph, split.test)

    def test_sidecar_written(self, trained, tmp_path):
        _, _, _, model, _ = trained
        path = tmp_path / "model.esd"
        model.save(path)
        sidecar = path.with_suffix(".toml").read_text(encoding="utf-8")
        assert "modality_mask" in sidecar


class TestInitEmbeddings:
    def test_shapes(self, trained):
        graph, _, cfg, model, _ = trained
        h_u, h_t = init_embeddings(graph, model)
        assert h_u.shape == (graph.N, cfg.hidden)
        assert h_t.shape == (len(graph.topics), cfg.hidden)

    def test_empty_mask_rejected(self, trained):
        graph, _, _, model, _ = trained
        with pytest.raises(ConfigError):
            init_embeddings(graph, model, modality_mask="")
