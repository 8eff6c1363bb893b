import numpy as np
import pytest

from querygate.confidence import OUTCOME_LABELED, OUTCOME_MASKED, OUTCOME_REFUSED
from querygate.engine import (
    EngineConfig,
    EngineError,
    Session,
    SnapshotError,
    assemble_batch,
    export_query_log_csv,
    init_session,
    persist_session,
    resume_session,
    run_iteration,
    run_session,
)
from querygate.features import MorphConfig, build_feature_stack
from querygate.oracle import make_fallible_oracle, make_ground_truth_oracle, FallibleOracleConfig
from querygate.raster import LabelMap, SceneSpec, generate_synthetic_scene


@pytest.fixture(scope="module")
def small_scene():
    spec = SceneSpec.with_default_spectra(24, 24, omega=3, granularity=8, seed=21)
    raster, labels = generate_synthetic_scene(spec)
    stack = build_feature_stack(raster, MorphConfig((1,)))
    return stack, labels


def fast_config(**overrides) -> EngineConfig:
    base = dict(heuristic="mclu", gated=True, batch_size=5, seeds_per_class=3,
                max_iterations=3, cv_main=False, sigma_grid=(0.5, 2.0), cv_folds=2)
    base.update(overrides)
    return EngineConfig(**base)


class TestInitSession:
    def test_seed_counts(self, small_scene):
        stack, labels = small_scene
        s = init_session(stack, fast_config(), ground_truth=labels, seed=1)
        assert len(s.labeled_ids) == 9  # 3 classes x 3 seeds
        assert len(s.conf_set) == 9
        assert s.conf_set.positives == 9

    def test_five_per_class_nine_classes_gives_45(self):
        spec = SceneSpec.with_default_spectra(48, 48, omega=9, granularity=8, seed=3)
        raster, labels = generate_synthetic_scene(spec)
        stack = build_feature_stack(raster, MorphConfig((1,)))
        s = init_session(stack, fast_config(seeds_per_class=5), ground_truth=labels, seed=1)
        assert len(s.labeled_ids) == 45

    def test_ten_per_class_seven_classes_gives_70(self):
        spec = SceneSpec.with_default_spectra(48, 48, omega=7, granularity=8, seed=4)
        raster, labels = generate_synthetic_scene(spec)
        stack = build_feature_stack(raster, MorphConfig((1,)))
        s = init_session(stack, fast_config(seeds_per_class=10), ground_truth=labels, seed=1)
        assert len(s.labeled_ids) == 70

    def test_seeds_positive_in_confidence_and_out_of_pool(self, small_scene):
        stack, labels = small_scene
        s = init_session(stack, fast_config(), ground_truth=labels, seed=2)
        pool = set(int(p) for p in s.pool_ids)
        for example, pid in zip(s.conf_set.examples, s.labeled_ids):
            assert example.y == 1
            assert pid not in pool
        assert len(s.pool_ids) == 24 * 24 - 9

    def test_missing_class_rejected(self, small_scene):
        stack, _ = small_scene
        labels = LabelMap(np.ones((24, 24), dtype=np.uint16), omega=2)  # class 2 absent
        with pytest.raises(EngineError, match="class 2"):
            init_session(stack, fast_config(), ground_truth=labels, seed=1)

    def test_explicit_seeds(self, small_scene):
        stack, _ = small_scene
        seeds = [(0, 1), (30, 2), (60, 3), (90, 1), (120, 2), (150, 3)]
        s = init_session(stack, fast_config(), seeds=seeds)
        assert s.omega == 3
        assert len(s.labeled_ids) == 6

    def test_duplicate_explicit_seeds_rejected(self, small_scene):
        stack, _ = small_scene
        with pytest.raises(EngineError, match="duplicate"):
            init_session(stack, fast_config(), seeds=[(5, 1), (5, 2)])


class ScriptedOracle:
    """Maps pixel id -> answer; anything unlisted gets class 1."""

    def __init__(self, script: dict, default=1):
        self.script = script
        self.default = default
        self.asked: list[int] = []

    def __call__(self, pixel_id: int):
        self.asked.append(pixel_id)
        return self.script.get(pixel_id, self.default)


class TestAssembleBatch:
    def _session(self, small_scene, theta=0.6, m=2) -> Session:
        stack, labels = small_scene
        return init_session(
            stack, fast_config(batch_size=m, theta=theta), ground_truth=labels, seed=3
        )

    def test_hand_traced_walk(self, small_scene):
        """Ranking (a,b,c,d), confidences (0.7, 0.5, 0.9, 0.8), oracle refuses a,
        labels c as 2 and d as 1, theta 0.6, batch 2."""
        s = self._session(small_scene)
        a, b, c, d = (int(p) for p in s.pool_ids[:4])
        conf = np.zeros(s.n_pixels)
        conf[[a, b, c, d]] = [0.7, 0.5, 0.9, 0.8]
        oracle = ScriptedOracle({a: None, c: 2, d: 1})
        batch = assemble_batch(
            s, np.array([a, b, c, d]), conf, {a: 1.0, b: 2.0, c: 3.0, d: 4.0}, oracle
        )
        assert batch == [(c, 2), (d, 1)]
        tail = s.conf_set.examples[-4:]
        assert [(e.pixel_id, e.y) for e in tail] == [(a, -1), (b, -1), (c, 1), (d, 1)]
        assert [r.outcome for r in s.query_log] == ["refused", "masked", "labeled", "labeled"]
        assert [r.pixel_id for r in s.query_log] == [a, b, c, d]
        assert oracle.asked == [a, c, d]  # b never reached the oracle
        assert a in s.excluded and b in s.masked

    def test_gate_inactive_first_m_selected(self, small_scene):
        s = self._session(small_scene, m=3)
        ids = [int(p) for p in s.pool_ids[:5]]
        conf = np.ones(s.n_pixels)
        oracle = ScriptedOracle({})
        batch = assemble_batch(s, np.array(ids), conf, {}, oracle)
        assert [pid for pid, _ in batch] == ids[:3]

    def test_excluded_pixel_skipped_without_duplicate_negative(self, small_scene):
        s = self._session(small_scene)
        a, b, c = (int(p) for p in s.pool_ids[:3])
        conf = np.ones(s.n_pixels)
        oracle = ScriptedOracle({a: None})
        assemble_batch(s, np.array([a, b, c]), conf, {}, oracle)
        negatives_before = s.conf_set.negatives
        oracle2 = ScriptedOracle({})
        assemble_batch(s, np.array([a, b, c]), conf, {}, oracle2)
        assert s.conf_set.negatives == negatives_before
        assert a not in oracle2.asked

    def test_masked_pixel_not_remasked(self, small_scene):
        s = self._session(small_scene, m=1)
        a, b = (int(p) for p in s.pool_ids[:2])
        conf = np.zeros(s.n_pixels)
        conf[b] = 1.0
        oracle = ScriptedOracle({})
        assemble_batch(s, np.array([a, b]), conf, {}, oracle)
        n_neg = s.conf_set.negatives
        assemble_batch(s, np.array([a, b]), conf, {}, oracle)
        assert s.conf_set.negatives == n_neg  # a already holds its one negative


class TestRunIteration:
    def test_infallible_oracle_exact_batch(self, small_scene):
        stack, labels = small_scene
        s = init_session(stack, fast_config(), ground_truth=labels, seed=5)
        run_iteration(s, make_ground_truth_oracle(labels))
        stats = s.history[-1]
        assert stats.labeled == 5
        assert stats.refused == 0
        assert s.epsilon == 2

    def test_first_iteration_bypasses_gate(self, small_scene):
        stack, labels = small_scene
        s = init_session(stack, fast_config(), ground_truth=labels, seed=6)
        run_iteration(s, make_ground_truth_oracle(labels))
        assert all(r.confidence == 1.0 for r in s.query_log)
        assert s.history[-1].masked == 0

    def test_growth_and_disjointness_invariants(self, small_scene):
        stack, labels = small_scene
        oracle = make_fallible_oracle(
            labels, FallibleOracleConfig(1, 1.0, 0.1, seed=9)
        )
        s = init_session(stack, fast_config(max_iterations=3), ground_truth=labels, seed=7)
        pool_size = len(s.pool_ids)
        labeled_size = len(s.labeled_ids)
        while not s.stopping_met():
            run_iteration(s, oracle)
            stats = s.history[-1]
            assert len(s.labeled_ids) == labeled_size + stats.labeled
            assert len(s.pool_ids) == pool_size - stats.labeled
            assert len(s.labeled_ids) <= len(s.conf_set)
            pool_size, labeled_size = len(s.pool_ids), len(s.labeled_ids)

    def test_replay_identical_log(self, small_scene):
        stack, labels = small_scene
        def play():
            oracle = make_fallible_oracle(labels, FallibleOracleConfig(1, 1.0, 0.1, seed=4))
            s = run_session(stack, fast_config(max_iterations=2), oracle,
                            ground_truth=labels, seed=11)
            return [(r.pixel_id, r.outcome, r.label, r.score, r.confidence)
                    for r in s.query_log]
        assert play() == play()

    def test_no_pixel_presented_twice(self, small_scene):
        stack, labels = small_scene
        oracle = make_fallible_oracle(labels, FallibleOracleConfig(1, 1.0, 0.2, seed=2))
        s = run_session(stack, fast_config(max_iterations=3), oracle,
                        ground_truth=labels, seed=13)
        presented = [r.pixel_id for r in s.query_log if r.outcome != OUTCOME_MASKED]
        assert len(presented) == len(set(presented))

    def test_effort_accounting(self, small_scene):
        stack, labels = small_scene
        oracle = make_fallible_oracle(labels, FallibleOracleConfig(1, 1.0, 0.2, seed=3))
        s = run_session(stack, fast_config(max_iterations=2), oracle,
                        ground_truth=labels, seed=17)
        by = {OUTCOME_LABELED: 0, OUTCOME_REFUSED: 0, OUTCOME_MASKED: 0}
        for r in s.query_log:
            by[r.outcome] += 1
        assert s.effort == s.seed_count + by[OUTCOME_LABELED] + by[OUTCOME_REFUSED]

    def test_stopping_rule_guard(self, small_scene):
        stack, labels = small_scene
        s = init_session(stack, fast_config(max_iterations=1), ground_truth=labels, seed=19)
        run_iteration(s, make_ground_truth_oracle(labels))
        with pytest.raises(EngineError, match="stopping"):
            run_iteration(s, make_ground_truth_oracle(labels))

    def test_rs_heuristic_runs(self, small_scene):
        stack, labels = small_scene
        s = run_session(stack, fast_config(heuristic="rs", gated=False, max_iterations=2),
                        make_ground_truth_oracle(labels), ground_truth=labels, seed=23)
        assert len(s.labeled_ids) == 9 + 10

    def test_neqb_heuristic_runs(self, small_scene):
        stack, labels = small_scene
        cfg = fast_config(heuristic="neqb", max_iterations=1, committee_size=3,
                          committee_fraction=0.8)
        s = run_session(stack, cfg, make_ground_truth_oracle(labels),
                        ground_truth=labels, seed=29)
        assert s.history[-1].labeled == 5


class TestPersistence:
    def _run(self, small_scene, iterations=1, seed=31):
        stack, labels = small_scene
        oracle = make_fallible_oracle(labels, FallibleOracleConfig(1, 1.0, 0.1, seed=1))
        s = init_session(stack, fast_config(max_iterations=3), ground_truth=labels, seed=seed)
        for _ in range(iterations):
            run_iteration(s, oracle)
        return s, oracle

    def test_round_trip_structural_identity(self, small_scene, tmp_path):
        s, _ = self._run(small_scene)
        persist_session(s, tmp_path / "s.snap")
        back = resume_session(tmp_path / "s.snap")
        assert back.epsilon == s.epsilon
        assert back.labeled_ids == s.labeled_ids
        assert back.labeled_classes == s.labeled_classes
        assert back.excluded == s.excluded
        assert back.masked == s.masked
        assert len(back.conf_set) == len(s.conf_set)
        assert [e.y for e in back.conf_set.examples] == [e.y for e in s.conf_set.examples]
        np.testing.assert_array_equal(back.pool_ids, s.pool_ids)
        np.testing.assert_array_equal(back.feature_matrix, s.feature_matrix)
        assert [r.__dict__ for r in back.query_log] == [r.__dict__ for r in s.query_log]
        assert back.config == s.config

    def test_resume_continue_matches_uninterrupted(self, small_scene, tmp_path):
        stack, labels = small_scene
        s1, oracle = self._run(small_scene, iterations=1, seed=37)
        persist_session(s1, tmp_path / "mid.snap")
        resumed = resume_session(tmp_path / "mid.snap")
        run_iteration(resumed, oracle)

        full, _ = self._run(small_scene, iterations=2, seed=37)
        assert [r.__dict__ for r in resumed.query_log] == [r.__dict__ for r in full.query_log]

    def test_tampered_snapshot_rejected(self, small_scene, tmp_path):
        s, _ = self._run(small_scene)
        persist_session(s, tmp_path / "s.snap")
        raw = bytearray((tmp_path / "s.snap").read_bytes())
        raw[-1] ^= 0x01
        (tmp_path / "s.snap").write_bytes(bytes(raw))
        with pytest.raises(SnapshotError, match="checksum"):
            resume_session(tmp_path / "s.snap")

    def test_snapshot_bytes_deterministic(self, small_scene, tmp_path):
        s, _ = self._run(small_scene)
        persist_session(s, tmp_path / "a.snap")
        persist_session(s, tmp_path / "b.snap")
        assert (tmp_path / "a.snap").read_bytes() == (tmp_path / "b.snap").read_bytes()

    def test_query_log_csv(self, small_scene, tmp_path):
        s, _ = self._run(small_scene)
        export_query_log_csv(s, tmp_path / "q.csv")
        lines = (tmp_path / "q.csv").read_text().strip().splitlines()
        assert lines[0] == "iteration,order,pixel_x,pixel_y,score,confidence,outcome,label"
        assert len(lines) == 1 + len(s.query_log)
