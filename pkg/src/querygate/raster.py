"""Bit-exact raster containers and synthetic labeled scenes.

A stored grid is a pair of files sharing one base name: ``<base>.json``, a
small sidecar describing the payload, and ``<base>.bin``, the raw samples.
Multiband payloads are band-sequential (all of band 0, then band 1, ...),
row-major within each band. Image samples are IEEE-754 binary32
little-endian; label samples are uint16 little-endian with 0 reserved for
"unlabeled".
"""

from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass
from pathlib import Path

import numpy as np

RASTER_DTYPE = "f32le"
LABEL_DTYPE = "u16le"
LAYOUT = "band-sequential"

# 4-neighborhood in fixed order; region growth must be reproducible.
_NEIGHBORS = ((-1, 0), (1, 0), (0, -1), (0, 1))


class ContainerError(ValueError):
    """A container pair is missing, inconsistent, or holds invalid values."""


def _flat_to_band_row_col(index: int, height: int, width: int) -> tuple[int, int, int]:
    band, rest = divmod(index, height * width)
    row, col = divmod(rest, width)
    return band, row, col


def _check_finite(values: np.ndarray, height: int, width: int) -> None:
    finite = np.isfinite(values)
    if not finite.all():
        flat = int(np.argmax(~finite.ravel()))
        band, row, col = _flat_to_band_row_col(flat, height, width)
        raise ContainerError(
            f"non-finite value at band={band} row={row} col={col}"
        )


@dataclass
class Raster:
    """Multiband image grid; ``values`` indexed (band, row, col), float32."""

    values: np.ndarray

    def __post_init__(self) -> None:
        self.values = np.ascontiguousarray(self.values, dtype=np.float32)
        if self.values.ndim != 3 or min(self.values.shape) < 1:
            raise ContainerError("raster values must be a (bands, height, width) grid")
        _check_finite(self.values, self.height, self.width)

    @property
    def bands(self) -> int:
        return self.values.shape[0]

    @property
    def height(self) -> int:
        return self.values.shape[1]

    @property
    def width(self) -> int:
        return self.values.shape[2]

    def pixel_matrix(self) -> np.ndarray:
        """Pixels as rows: shape (height*width, bands), float64."""
        return (
            self.values.astype(np.float64)
            .reshape(self.bands, -1)
            .T.copy()
        )


@dataclass
class LabelMap:
    """Integer class grid paired with a raster; 0 means unlabeled."""

    labels: np.ndarray
    omega: int

    def __post_init__(self) -> None:
        self.labels = np.ascontiguousarray(self.labels, dtype=np.uint16)
        if self.labels.ndim != 2 or min(self.labels.shape) < 1:
            raise ContainerError("label map must be a (height, width) grid")
        if self.omega < 1:
            raise ContainerError("class count must be >= 1")
        too_big = self.labels > self.omega
        if too_big.any():
            flat = int(np.argmax(too_big.ravel()))
            row, col = divmod(flat, self.width)
            raise ContainerError(
                f"label {int(self.labels[row, col])} exceeds class count "
                f"{self.omega} at row={row} col={col}"
            )

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]


def _base_path(path: str | Path) -> Path:
    path = Path(path)
    if path.suffix in (".json", ".bin"):
        return path.with_suffix("")
    return path


def _write_container(base: Path, payload: bytes, header: dict) -> None:
    base = _base_path(base)
    base.parent.mkdir(parents=True, exist_ok=True)
    base.with_suffix(".json").write_text(
        json.dumps(header, sort_keys=True, separators=(",", ":")) + "\n"
    )
    base.with_suffix(".bin").write_bytes(payload)


def _read_container(path: str | Path, expect_dtype: str) -> tuple[dict, bytes]:
    base = _base_path(path)
    sidecar = base.with_suffix(".json")
    payload_path = base.with_suffix(".bin")
    if not sidecar.exists():
        raise ContainerError(f"missing sidecar {sidecar}")
    if not payload_path.exists():
        raise ContainerError(f"missing payload {payload_path}")
    header = json.loads(sidecar.read_text())
    for key in ("width", "height", "bands", "dtype", "layout"):
        if key not in header:
            raise ContainerError(f"sidecar missing field {key!r}")
    if header["dtype"] != expect_dtype:
        raise ContainerError(
            f"expected dtype {expect_dtype!r}, sidecar says {header['dtype']!r}"
        )
    if header["layout"] != LAYOUT:
        raise ContainerError(f"unsupported layout {header['layout']!r}")
    payload = payload_path.read_bytes()
    item = 4 if expect_dtype == RASTER_DTYPE else 2
    expected = header["width"] * header["height"] * header["bands"] * item
    if len(payload) != expected:
        raise ContainerError(
            f"header/payload size mismatch: sidecar implies {expected} bytes, "
            f"payload has {len(payload)}"
        )
    return header, payload


def store_raster(raster: Raster, base: str | Path) -> None:
    header = {
        "width": raster.width,
        "height": raster.height,
        "bands": raster.bands,
        "dtype": RASTER_DTYPE,
        "layout": LAYOUT,
    }
    payload = raster.values.astype("<f4").tobytes()
    _write_container(Path(base), payload, header)


def load_raster(path: str | Path) -> Raster:
    header, payload = _read_container(path, RASTER_DTYPE)
    values = np.frombuffer(payload, dtype="<f4").reshape(
        header["bands"], header["height"], header["width"]
    )
    _check_finite(values, header["height"], header["width"])
    return Raster(values.copy())


def store_label_map(label_map: LabelMap, base: str | Path) -> None:
    header = {
        "width": label_map.width,
        "height": label_map.height,
        "bands": 1,
        "dtype": LABEL_DTYPE,
        "layout": LAYOUT,
    }
    payload = label_map.labels.astype("<u2").tobytes()
    _write_container(Path(base), payload, header)


def load_label_map(path: str | Path, omega: int) -> LabelMap:
    header, payload = _read_container(path, LABEL_DTYPE)
    if header["bands"] != 1:
        raise ContainerError("label map containers must hold exactly one band")
    labels = np.frombuffer(payload, dtype="<u2").reshape(
        header["height"], header["width"]
    )
    return LabelMap(labels.copy(), omega)


@dataclass(frozen=True)
class SceneSpec:
    """Recipe for a synthetic labeled scene.

    ``granularity`` is the target mean region diameter in pixels; the scene
    is partitioned into ``ceil(width*height / granularity**2)`` contiguous
    regions grown from random seed sites. Per-pixel values are drawn from
    the region class's diagonal-covariance normal spectrum, plus isotropic
    noise.
    """

    width: int
    height: int
    omega: int
    bands: int
    granularity: int
    class_means: tuple[tuple[float, ...], ...]
    class_stds: tuple[tuple[float, ...], ...]
    noise: float
    seed: int

    def __post_init__(self) -> None:
        if self.width < 1 or self.height < 1:
            raise ValueError("scene dimensions must be positive")
        if self.omega < 1:
            raise ValueError("need at least one class")
        if self.bands < 1:
            raise ValueError("need at least one band")
        if self.granularity < 1:
            raise ValueError("granularity must be positive")
        if len(self.class_means) != self.omega or len(self.class_stds) != self.omega:
            raise ValueError("need one spectrum (means, stds) per class")
        for row in self.class_means:
            if len(row) != self.bands:
                raise ValueError("class means must have one entry per band")
        for row in self.class_stds:
            if len(row) != self.bands:
                raise ValueError("class stds must have one entry per band")
            if any(s <= 0 for s in row):
                raise ValueError("all class standard deviations must be > 0")
        if self.noise < 0:
            raise ValueError("noise level must be >= 0")

    @classmethod
    def with_default_spectra(
        cls,
        width: int,
        height: int,
        omega: int,
        bands: int = 4,
        granularity: int = 24,
        noise: float = 0.5,
        seed: int = 0,
        separation: float = 2.6,
    ) -> "SceneSpec":
        """Binary-code class spectra: class c lights band b iff bit b of c is set.

        Neighboring codes differ in one bit, so some class pairs sit exactly
        ``separation`` apart while others are farther: a mix of confusable
        and easy pairs.
        """
        means = tuple(
            tuple(separation * ((c >> b) & 1) for b in range(bands))
            for c in range(1, omega + 1)
        )
        stds = tuple(tuple(1.0 for _ in range(bands)) for _ in range(omega))
        return cls(width, height, omega, bands, granularity, means, stds, noise, seed)

    def to_dict(self) -> dict:
        return {
            "width": self.width,
            "height": self.height,
            "omega": self.omega,
            "bands": self.bands,
            "granularity": self.granularity,
            "class_means": [list(r) for r in self.class_means],
            "class_stds": [list(r) for r in self.class_stds],
            "noise": self.noise,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SceneSpec":
        return cls(
            width=int(data["width"]),
            height=int(data["height"]),
            omega=int(data["omega"]),
            bands=int(data["bands"]),
            granularity=int(data["granularity"]),
            class_means=tuple(tuple(float(v) for v in r) for r in data["class_means"]),
            class_stds=tuple(tuple(float(v) for v in r) for r in data["class_stds"]),
            noise=float(data["noise"]),
            seed=int(data["seed"]),
        )


def generate_synthetic_scene(spec: SceneSpec) -> tuple[Raster, LabelMap]:
    """Seeded random partition into contiguous class regions plus spectra.

    Regions grow from seed sites by multi-source breadth-first search over
    the 4-neighborhood, so every site's cell is 4-connected by construction
    and boundary pixels between classes always exist (they are what makes
    labeling hard near edges).
    """
    rng = np.random.default_rng(spec.seed)
    n_pixels = spec.width * spec.height
    n_sites = max(1, math.ceil(n_pixels / spec.granularity**2))
    n_sites = min(n_sites, n_pixels)
    sites = rng.choice(n_pixels, size=n_sites, replace=False)

    if n_sites >= spec.omega:
        # First Ω sites cover every class; the rest draw uniformly.
        head = rng.permutation(np.arange(1, spec.omega + 1))
        tail = rng.integers(1, spec.omega + 1, size=n_sites - spec.omega)
        site_classes = np.concatenate([head, tail])
    else:
        site_classes = rng.permutation(np.arange(1, spec.omega + 1))[:n_sites]

    owner = np.full(n_pixels, -1, dtype=np.int32)
    queue: deque[int] = deque()
    for k, site in enumerate(sites):
        owner[site] = k
        queue.append(int(site))
    width = spec.width
    while queue:
        pix = queue.popleft()
        row, col = divmod(pix, width)
        for dr, dc in _NEIGHBORS:
            r, c = row + dr, col + dc
            if 0 <= r < spec.height and 0 <= c < width:
                nxt = r * width + c
                if owner[nxt] < 0:
                    owner[nxt] = owner[pix]
                    queue.append(nxt)

    labels = site_classes[owner].astype(np.uint16).reshape(spec.height, spec.width)

    means = np.asarray(spec.class_means, dtype=np.float64)
    stds = np.asarray(spec.class_stds, dtype=np.float64)
    z = rng.standard_normal((spec.bands, spec.height, spec.width))
    noise = rng.standard_normal((spec.bands, spec.height, spec.width))
    mean_grid = means[labels - 1].transpose(2, 0, 1)
    std_grid = stds[labels - 1].transpose(2, 0, 1)
    values = mean_grid + std_grid * z + spec.noise * noise

    return Raster(values.astype(np.float32)), LabelMap(labels, spec.omega)
