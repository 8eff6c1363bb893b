import threading

import numpy as np
import pytest

from querygate.oracle import (
    DuplicateAnswerError,
    FallibleOracleConfig,
    InteractiveBridge,
    OracleError,
    StaleQueryError,
    answer_fallible,
    answer_ground_truth,
    make_fallible_oracle,
)
from querygate.raster import LabelMap, SceneSpec, generate_synthetic_scene


def _label_map(grid):
    arr = np.asarray(grid, dtype=np.uint16)
    return LabelMap(arr, omega=int(arr.max()) if arr.max() > 0 else 1)


class TestGroundTruthOracle:
    def test_labeled_pixel_returns_class(self):
        lm = _label_map([[1, 2], [3, 3]])
        assert answer_ground_truth(lm, x=1, y=0) == 2

    def test_unlabeled_returns_unknown(self):
        lm = _label_map([[0, 2], [3, 3]])
        assert answer_ground_truth(lm, x=0, y=0) is None

    def test_pure_function(self):
        lm = _label_map([[1, 2], [3, 3]])
        assert all(answer_ground_truth(lm, 0, 1) == 3 for _ in range(5))

    def test_out_of_bounds(self):
        lm = _label_map([[1]])
        with pytest.raises(OracleError, match="out of bounds"):
            answer_ground_truth(lm, 5, 0)


class TestFallibleOracle:
    def test_homogeneous_window_answers(self):
        lm = _label_map(np.full((5, 5), 2))
        cfg = FallibleOracleConfig(window=1, purity=1.0, refusal=0.0, seed=0)
        assert answer_fallible(lm, 2, 2, cfg) == 2

    def test_one_differing_neighbor_refused_at_full_purity(self):
        grid = np.full((5, 5), 2)
        grid[2, 3] = 1
        cfg = FallibleOracleConfig(window=1, purity=1.0, refusal=0.0, seed=0)
        assert answer_fallible(_label_map(grid), 2, 2, cfg) is None

    def test_purity_fraction_boundary(self):
        # 6 of 9 window pixels share the modal label: 6/9 >= 0.6 answers
        grid = np.full((3, 3), 1)
        grid[0, 0] = grid[0, 1] = grid[0, 2] = 2
        cfg = FallibleOracleConfig(window=1, purity=0.6, refusal=0.0, seed=0)
        assert answer_fallible(_label_map(grid), 1, 1, cfg) == 1
        # 5 of 9: refused
        grid[1, 0] = 2
        assert answer_fallible(_label_map(grid), 1, 1, cfg) is None

    def test_unlabeled_pixel_always_refused(self):
        grid = np.full((3, 3), 1)
        grid[1, 1] = 0
        cfg = FallibleOracleConfig(window=1, purity=0.1, refusal=0.0, seed=0)
        assert answer_fallible(_label_map(grid), 1, 1, cfg) is None

    def test_deterministic_without_random_refusal(self):
        rng = np.random.default_rng(0)
        grid = rng.integers(1, 4, size=(8, 8)).astype(np.uint16)
        lm = LabelMap(grid, omega=3)
        cfg = FallibleOracleConfig(window=1, purity=0.7, refusal=0.0, seed=1)
        answers = [answer_fallible(lm, x, y, cfg) for y in range(8) for x in range(8)]
        again = [answer_fallible(lm, x, y, cfg) for y in range(8) for x in range(8)]
        assert answers == again

    def test_refusal_independent_of_query_order(self):
        lm = _label_map(np.full((6, 6), 1))
        cfg = FallibleOracleConfig(window=1, purity=1.0, refusal=0.5, seed=42)
        forward = [answer_fallible(lm, x, y, cfg) for y in range(6) for x in range(6)]
        backward = [answer_fallible(lm, x, y, cfg)
                    for y in reversed(range(6)) for x in reversed(range(6))]
        assert forward == backward[::-1]

    def test_refusal_rate_matches_boundary_scan(self):
        spec = SceneSpec.with_default_spectra(48, 48, omega=4, granularity=12, seed=3)
        _, lm = generate_synthetic_scene(spec)
        cfg = FallibleOracleConfig(window=1, purity=1.0, refusal=0.0, seed=0)
        oracle = make_fallible_oracle(lm, cfg)
        refused = sum(oracle(pid) is None for pid in range(48 * 48))
        # brute-force: a pixel is refused iff some window neighbor differs
        grid = lm.labels
        expected = 0
        for y in range(48):
            for x in range(48):
                block = grid[max(0, y - 1):y + 2, max(0, x - 1):x + 2]
                expected += int((block != grid[y, x]).any())
        assert refused == expected

    def test_personas(self):
        analyst = FallibleOracleConfig.persona("trained_analyst", seed=1)
        assert (analyst.window, analyst.purity, analyst.refusal) == (1, 1.0, 0.05)
        novice = FallibleOracleConfig.persona("novice", seed=1)
        assert (novice.window, novice.purity, novice.refusal) == (1, 0.8, 0.15)
        with pytest.raises(ValueError, match="unknown persona"):
            FallibleOracleConfig.persona("wizard")


class TestInteractiveBridge:
    def test_answer_forwarded_once(self):
        bridge = InteractiveBridge(timeout=5.0)
        result = {}

        def engine():
            result["answer"] = bridge.ask(17)

        t = threading.Thread(target=engine)
        t.start()
        while bridge.current_query is None:
            pass
        bridge.submit(17, 3)
        t.join(timeout=5)
        assert result["answer"] == 3

    def test_duplicate_submission_rejected(self):
        bridge = InteractiveBridge(timeout=5.0)
        t = threading.Thread(target=lambda: bridge.ask(5))
        t.start()
        while bridge.current_query is None:
            pass
        bridge.submit(5, None)
        t.join(timeout=5)
        with pytest.raises(DuplicateAnswerError):
            bridge.submit(5, 2)

    def test_stale_pixel_rejected(self):
        bridge = InteractiveBridge(timeout=5.0)
        t = threading.Thread(target=lambda: bridge.ask(5))
        t.start()
        while bridge.current_query is None:
            pass
        with pytest.raises(StaleQueryError):
            bridge.submit(99, 1)
        bridge.submit(5, 1)
        t.join(timeout=5)

    def test_no_outstanding_query(self):
        bridge = InteractiveBridge()
        with pytest.raises(StaleQueryError):
            bridge.submit(1, 1)
