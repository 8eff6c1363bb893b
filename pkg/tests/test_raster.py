import json

import numpy as np
import pytest

from querygate.raster import (
    ContainerError,
    LabelMap,
    Raster,
    SceneSpec,
    generate_synthetic_scene,
    load_label_map,
    load_raster,
    store_label_map,
    store_raster,
)


class TestRasterContainer:
    def test_round_trip_identity(self, tmp_path):
        values = np.array([[[1.0, 2.0], [3.0, 4.0]]], dtype=np.float32)
        store_raster(Raster(values), tmp_path / "r")
        back = load_raster(tmp_path / "r")
        assert back.values.dtype == np.float32
        np.testing.assert_array_equal(back.values, values)

    def test_round_trip_bit_exact_random(self, tmp_path):
        rng = np.random.default_rng(7)
        values = rng.normal(size=(3, 5, 4)).astype(np.float32)
        store_raster(Raster(values), tmp_path / "r")
        back = load_raster(tmp_path / "r")
        assert back.values.tobytes() == values.tobytes()

    def test_header_payload_size_mismatch(self, tmp_path):
        values = np.zeros((3, 2, 2), dtype=np.float32)
        store_raster(Raster(values), tmp_path / "r")
        sidecar = json.loads((tmp_path / "r.json").read_text())
        sidecar["bands"] = 4  # header now disagrees with the payload
        (tmp_path / "r.json").write_text(json.dumps(sidecar))
        with pytest.raises(ContainerError, match="size mismatch"):
            load_raster(tmp_path / "r")

    def test_missing_file(self, tmp_path):
        with pytest.raises(ContainerError, match="missing"):
            load_raster(tmp_path / "nope")

    def test_nonfinite_rejected_with_position(self, tmp_path):
        values = np.zeros((2, 3, 4), dtype=np.float32)
        store_raster(Raster(values), tmp_path / "r")
        raw = np.frombuffer((tmp_path / "r.bin").read_bytes(), dtype="<f4").copy()
        raw[12 + 5] = np.nan  # band 1, row 1, col 1
        (tmp_path / "r.bin").write_bytes(raw.tobytes())
        with pytest.raises(ContainerError, match="band=1 row=1 col=1"):
            load_raster(tmp_path / "r")

    def test_dimension_arithmetic(self, tmp_path):
        rng = np.random.default_rng(0)
        values = rng.normal(size=(4, 347, 329)).astype(np.float32)
        store_raster(Raster(values), tmp_path / "big")
        back = load_raster(tmp_path / "big")
        assert back.values.size == 456_652

    def test_accepts_sidecar_or_bin_path(self, tmp_path):
        values = np.ones((1, 2, 2), dtype=np.float32)
        store_raster(Raster(values), tmp_path / "r")
        np.testing.assert_array_equal(load_raster(tmp_path / "r.json").values, values)
        np.testing.assert_array_equal(load_raster(tmp_path / "r.bin").values, values)


class TestLabelMapContainer:
    def test_all_zero_grid_valid(self, tmp_path):
        lm = LabelMap(np.zeros((4, 4), dtype=np.uint16), omega=3)
        store_label_map(lm, tmp_path / "l")
        back = load_label_map(tmp_path / "l", omega=3)
        assert back.labels.sum() == 0

    def test_label_equal_omega_valid(self):
        labels = np.full((2, 2), 5, dtype=np.uint16)
        lm = LabelMap(labels, omega=5)
        assert lm.omega == 5

    def test_label_above_omega_rejected_at_pixel(self):
        labels = np.zeros((3, 3), dtype=np.uint16)
        labels[2, 1] = 6
        with pytest.raises(ContainerError, match="row=2 col=1"):
            LabelMap(labels, omega=5)

    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(3)
        labels = rng.integers(0, 4, size=(6, 5)).astype(np.uint16)
        store_label_map(LabelMap(labels, omega=3), tmp_path / "l")
        back = load_label_map(tmp_path / "l", omega=3)
        np.testing.assert_array_equal(back.labels, labels)


def _flood_regions(labels: np.ndarray) -> int:
    """Count maximal 4-connected same-label regions by flood fill."""
    h, w = labels.shape
    seen = np.zeros_like(labels, dtype=bool)
    regions = 0
    for sy in range(h):
        for sx in range(w):
            if seen[sy, sx]:
                continue
            regions += 1
            stack = [(sy, sx)]
            seen[sy, sx] = True
            value = labels[sy, sx]
            while stack:
                y, x = stack.pop()
                for dy, dx in ((-1, 0), (1, 0), (0, -1), (0, 1)):
                    ny, nx = y + dy, x + dx
                    if 0 <= ny < h and 0 <= nx < w and not seen[ny, nx] \
                            and labels[ny, nx] == value:
                        seen[ny, nx] = True
                        stack.append((ny, nx))
    return regions


class TestSyntheticScene:
    def test_single_class_constant(self):
        spec = SceneSpec.with_default_spectra(16, 16, omega=1, bands=2, granularity=8, seed=5)
        _, labels = generate_synthetic_scene(spec)
        assert (labels.labels == 1).all()

    def test_same_seed_bit_identical(self):
        spec = SceneSpec.with_default_spectra(32, 24, omega=4, granularity=9, seed=42)
        r1, l1 = generate_synthetic_scene(spec)
        r2, l2 = generate_synthetic_scene(spec)
        assert r1.values.tobytes() == r2.values.tobytes()
        assert l1.labels.tobytes() == l2.labels.tobytes()

    def test_every_class_present_and_regions_connected(self):
        spec = SceneSpec.with_default_spectra(96, 96, omega=5, granularity=24, seed=11)
        _, labels = generate_synthetic_scene(spec)
        present = set(np.unique(labels.labels))
        assert present == {1, 2, 3, 4, 5}
        # every pixel belongs to a 4-connected region; the number of such
        # regions cannot exceed the number of seed sites (16 here)
        assert _flood_regions(labels.labels) <= 16

    def test_raster_and_labels_dimensions_match(self):
        spec = SceneSpec.with_default_spectra(20, 30, omega=3, granularity=7, seed=2)
        raster, labels = generate_synthetic_scene(spec)
        assert (raster.height, raster.width) == (30, 20)
        assert (labels.height, labels.width) == (30, 20)

    def test_spec_validation(self):
        with pytest.raises(ValueError, match="standard deviations"):
            SceneSpec(8, 8, 1, 1, 4, ((0.0,),), ((0.0,),), 0.1, 0)
        with pytest.raises(ValueError, match="one spectrum"):
            SceneSpec(8, 8, 2, 1, 4, ((0.0,),), ((1.0,),), 0.1, 0)

    def test_spec_dict_round_trip(self):
        spec = SceneSpec.with_default_spectra(8, 8, omega=3, granularity=4, seed=9)
        assert SceneSpec.from_dict(spec.to_dict()) == spec
