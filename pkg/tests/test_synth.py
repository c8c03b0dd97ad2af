from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from earlysd.errors import CalibrationError, ConfigError
from earlysd.graph import Label
from earlysd.stats import anova_oneway, jsd
from earlysd.synth import (
    GROUPS,
    PAIRS,
    CohortConfig,
    calibrate_topic_divergence,
    generate_cohort,
    load_cohort_config,
    plant_signal,
    save_cohort,
)

LABEL_OF_GROUP = {"non_sfva": Label.NON_SFVA, "sfva": Label.SFVA,
                  "potential_sfva": Label.POTENTIAL_SFVA}


class TestGenerateCohort:
    def test_group_counts(self, default_cohort):
        users, _, _, _ = default_cohort
        counts = Counter(u.label for u in users)
        assert counts[Label.NON_SFVA] == 259
        assert counts[Label.SFVA] == 134
        assert counts[Label.POTENTIAL_SFVA] == 75

    def test_score_bounds_exact(self, default_cohort):
        users, _, _, _ = default_cohort
        cfg = CohortConfig()
        for g in GROUPS:
            lab = LABEL_OF_GROUP[g]
            scores = [u.score for u in users if u.label is lab]
            stat = cfg.score_stats[g]
            assert min(scores) >= stat.lo and max(scores) <= stat.hi

    def test_score_means_near_target(self, default_cohort):
        users, _, _, _ = default_cohort
        cfg = CohortConfig()
        for g in GROUPS:
            lab = LABEL_OF_GROUP[g]
            scores = [u.score for u in users if u.label is lab]
            assert abs(np.mean(scores) - cfg.score_stats[g].mean) <= 1.5

    def test_content_bounds(self, default_cohort):
        users, _, _, _ = default_cohort
        cfg = CohortConfig()
        channel_idx = {"posts": 0, "stories": 1, "comments": 2}
        for g in GROUPS:
            lab = LABEL_OF_GROUP[g]
            for channel, idx in channel_idx.items():
                stat = cfg.content_stats[channel][g]
                vals = [u.features_t[idx] for u in users if u.label is lab]
                assert min(vals) >= stat.lo and max(vals) <= stat.hi

    def test_determinism_byte_identical(self, tmp_path):
        cfg = CohortConfig(seed=5)
        for d in ("a", "b"):
            users, topics, ut, truth = generate_cohort(cfg)
            save_cohort(users, topics, ut, truth, tmp_path / d)
        for name in ("users.csv", "topics.csv", "ut_edges.csv",
                     "content.jsonl", "ground_truth.csv"):
            assert (tmp_path / "a" / name).read_bytes() == \
                (tmp_path / "b" / name).read_bytes()

    def test_empirical_jsd_near_targets(self, default_cohort):
        users, topics, ut_edges, _ = default_cohort
        cfg = CohortConfig()
        pos = {t.id: i for i, t in enumerate(topics)}
        hist = {g: np.zeros(len(topics)) for g in GROUPS}
        label_of = {u.id: u.label for u in users}
        group_of_label = {v: k for k, v in LABEL_OF_GROUP.items()}
        for e in ut_edges:
            hist[group_of_label[label_of[e.user]]][pos[e.topic]] += 1
        for pair in PAIRS:
            a, b = (hist[g] / hist[g].sum() for g in pair)
            # empirical histograms carry sampling noise on top of the
            # calibrated latent targets
            assert abs(jsd(a, b) - cfg.jsd_targets[pair]) <= 0.08

    def test_invalid_signal_rejected(self):
        with pytest.raises(ConfigError):
            CohortConfig(signal_strength=1.5).validate()

    @given(st.integers(0, 99))
    @settings(max_examples=12, deadline=None)
    def test_hard_bounds_over_seeds(self, seed):
        users, _, _, _ = generate_cohort(CohortConfig(seed=seed))
        cfg = CohortConfig()
        for g in GROUPS:
            lab = LABEL_OF_GROUP[g]
            scores = [u.score for u in users if u.label is lab]
            stat = cfg.score_stats[g]
            assert min(scores) >= stat.lo and max(scores) <= stat.hi
            for channel, idx in (("posts", 0), ("stories", 1), ("comments", 2)):
                cs = cfg.content_stats[channel][g]
                vals = [u.features_t[idx] for u in users if u.label is lab]
                assert min(vals) >= cs.lo and max(vals) <= cs.hi


class TestCalibration:
    def test_default_targets(self):
        cfg = CohortConfig()
        dists = calibrate_topic_divergence(cfg.jsd_targets, 317, seed=0)
        for (a, b), target in cfg.jsd_targets.items():
            assert jsd(dists[a], dists[b]) == pytest.approx(target, abs=0.03)
        for g in GROUPS:
            assert dists[g].sum() == pytest.approx(1.0, abs=1e-9)

    def test_zero_targets_identical(self):
        targets = {pair: 0.0 for pair in PAIRS}
        dists = calibrate_topic_divergence(targets, 50, seed=1)
        np.testing.assert_allclose(dists["non_sfva"], dists["sfva"], atol=1e-12)
        np.testing.assert_allclose(dists["non_sfva"], dists["potential_sfva"],
                                   atol=1e-12)

    def test_unit_targets_disjoint(self):
        targets = {pair: 1.0 for pair in PAIRS}
        dists = calibrate_topic_divergence(targets, 30, seed=2)
        for a, b in PAIRS:
            overlap = np.minimum(dists[a], dists[b]).sum()
            assert overlap == pytest.approx(0.0, abs=1e-12)

    def test_deterministic(self):
        cfg = CohortConfig()
        d1 = calibrate_topic_divergence(cfg.jsd_targets, 100, seed=7)
        d2 = calibrate_topic_divergence(cfg.jsd_targets, 100, seed=7)
        for g in GROUPS:
            np.testing.assert_array_equal(d1[g], d2[g])

    def test_too_few_topics_fails(self):
        targets = {pair: 1.0 for pair in PAIRS}
        with pytest.raises((CalibrationError, ConfigError)):
            calibrate_topic_divergence(targets, 2, seed=0)


class TestPlantSignal:
    def test_strength_zero_identity(self, default_cohort):
        users, _, _, _ = default_cohort
        out = plant_signal(users, 0.0)
        assert out == list(users)

    def test_bidir_direction(self):
        users, _, _, _ = generate_cohort(CohortConfig(seed=21))
        pos = [u.features_c[2] for u in users if u.binary_label.value == "positive"]
        neg = [u.features_c[2] for u in users if u.binary_label.value == "negative"]
        assert np.mean(pos) > np.mean(neg)

    def test_age_anova_significant(self, default_cohort):
        users, _, _, _ = default_cohort
        by_label = {}
        for u in users:
            by_label.setdefault(u.label, []).append(float(u.features_p[0]))
        r = anova_oneway(list(by_label.values()))
        assert r.p_value < 0.05

    def test_null_signal_features_label_free(self):
        # at s=0 the planted shifts vanish; group means stay close
        users, _, _, _ = generate_cohort(CohortConfig(seed=31,
                                                      signal_strength=0.0))
        pos = [u.features_p[9] for u in users if u.binary_label.value == "positive"]
        neg = [u.features_p[9] for u in users if u.binary_label.value == "negative"]
        assert abs(np.mean(pos) - np.mean(neg)) < 4.0


class TestConfigFile:
    def test_load_round_trip(self, tmp_path):
        path = tmp_path / "synth.toml"
        path.write_text("signal_strength = 0.5\nseed = 9\n"
                        "topic_rate = 12.0\n", encoding="utf-8")
        cfg = load_cohort_config(path)
        assert cfg.signal_strength == 0.5
        assert cfg.seed == 9
        assert cfg.topic_rate == 12.0

    def test_bad_value_rejected(self, tmp_path):
        path = tmp_path / "synth.toml"
        path.write_text("signal_strength = 2.0\n", encoding="utf-8")
        with pytest.raises(ConfigError):
            load_cohort_config(path)
