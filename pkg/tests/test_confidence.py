import numpy as np
import pytest

from querygate.confidence import (
    ConfidenceSet,
    ConfidenceUntrainable,
    GateConfig,
    confidence_map,
    passes_mask,
    record_confidence_example,
    train_confidence_model,
)


def _separated_set(rng, n_pos=30, n_neg=20):
    conf = ConfidenceSet()
    for _ in range(n_pos):
        record_confidence_example(conf, rng.normal((0, 0), 0.5, 2), "labeled")
    for i in range(n_neg):
        outcome = "refused" if i % 2 == 0 else "masked"
        record_confidence_example(conf, rng.normal((4, 4), 0.5, 2), outcome)
    return conf


class TestConfidenceSet:
    def test_labeled_counts_positive(self):
        conf = ConfidenceSet()
        record_confidence_example(conf, np.zeros(2), "labeled", pixel_id=3)
        assert conf.positives == 1 and conf.negatives == 0
        assert conf.examples[0].y == 1

    def test_refused_counts_negative(self):
        conf = ConfidenceSet()
        record_confidence_example(conf, np.zeros(2), "refused")
        assert conf.negatives == 1
        assert conf.examples[0].y == -1

    def test_masked_counts_negative(self):
        conf = ConfidenceSet()
        record_confidence_example(conf, np.zeros(2), "masked")
        assert conf.negatives == 1

    def test_unknown_outcome_rejected(self):
        with pytest.raises(ValueError, match="unknown outcome"):
            record_confidence_example(ConfidenceSet(), np.zeros(2), "skipped")


class TestConfidenceModel:
    def test_positives_only_untrainable(self):
        conf = ConfidenceSet()
        rng = np.random.default_rng(0)
        for _ in range(10):
            record_confidence_example(conf, rng.normal(size=2), "labeled")
        with pytest.raises(ConfidenceUntrainable):
            train_confidence_model(conf)

    def test_separated_clusters_ranked_correctly(self):
        rng = np.random.default_rng(1)
        conf = _separated_set(rng)
        model = train_confidence_model(conf, seed=2)
        p = model.probabilities(conf.features())
        y = conf.labels()
        assert (p[y > 0] > 0.5).all()
        assert (p[y < 0] < 0.5).all()

    def test_retraining_deterministic(self):
        rng = np.random.default_rng(3)
        conf = _separated_set(rng)
        a = train_confidence_model(conf, seed=5)
        b = train_confidence_model(conf, seed=5)
        assert a.sigma == b.sigma
        assert a.calibration.A == b.calibration.A
        probe = rng.normal(2, 2, size=(10, 2))
        np.testing.assert_array_equal(a.probabilities(probe), b.probabilities(probe))

    def test_map_values_open_interval_and_order_free(self):
        rng = np.random.default_rng(4)
        model = train_confidence_model(_separated_set(rng), seed=1)
        cands = rng.normal(2, 3, size=(50, 2))
        p = confidence_map(model, cands)
        assert (p > 0).all() and (p < 1).all()
        np.testing.assert_array_equal(p[::-1], confidence_map(model, cands[::-1]))

    def test_probabilities_monotone_in_decision(self):
        rng = np.random.default_rng(5)
        model = train_confidence_model(_separated_set(rng), seed=1)
        cands = rng.normal(2, 3, size=(50, 2))
        decisions = model.svm.decision(cands)
        p = model.probabilities(cands)
        assert model.calibration.A < 0
        order = np.argsort(decisions)
        assert (np.diff(p[order]) >= 0).all()


class TestGate:
    def test_above_threshold_passes(self):
        assert passes_mask(0.61, GateConfig(theta=0.6)) is True

    def test_equality_hidden(self):
        assert passes_mask(0.60, GateConfig(theta=0.6)) is False

    def test_default_threshold(self):
        assert GateConfig().theta == 0.6

    def test_threshold_bounds(self):
        with pytest.raises(ValueError):
            GateConfig(theta=0.0)
        with pytest.raises(ValueError):
            GateConfig(theta=1.0)

    def test_partition_no_third_state(self):
        gate = GateConfig(theta=0.6)
        rng = np.random.default_rng(6)
        p = rng.random(100)
        shown = np.array([passes_mask(v, gate) for v in p])
        assert ((p > 0.6) == shown).all()
