"""Per-pixel feature construction.

The feature vector for a pixel stacks its spectral bands with grayscale
morphological opening and closing of the first principal component, one
pair per structuring-element radius, and z-scores every feature over the
whole pixel pool.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .raster import Raster, load_raster, store_raster, _base_path

STANDARDIZE_TOL = 1e-6


class FeatureError(ValueError):
    pass


@dataclass(frozen=True)
class MorphConfig:
    """Disk radii for the morphological features; strictly increasing."""

    radii: tuple[int, ...] = (1, 3)

    def __post_init__(self) -> None:
        if not self.radii:
            raise FeatureError("need at least one radius")
        if any(r < 1 for r in self.radii):
            raise FeatureError("radii must be positive integers")
        if any(b <= a for a, b in zip(self.radii, self.radii[1:])):
            raise FeatureError("radii must be strictly increasing")


def disk_offsets(radius: int) -> list[tuple[int, int]]:
    """Flat disk structuring element: Euclidean-norm offsets, cross-opened.

    Starting from all integer offsets with norm <= radius, the shape is
    opened by the radius-1 cross (kept pixels are those coverable by a
    cross translate inside the disk). Radii 1 and 2 are unchanged; larger
    radii lose their four diagonal corner pixels. This keeps the family
    nested under opening, so opening with a larger radius never exceeds
    opening with a smaller one (and dually for closing).
    """
    size = 2 * radius + 1
    inside = np.zeros((size + 2, size + 2), dtype=bool)
    for dy in range(-radius, radius + 1):
        for dx in range(-radius, radius + 1):
            if dy * dy + dx * dx <= radius * radius:
                inside[dy + radius + 1, dx + radius + 1] = True
    cross = ((0, 0), (-1, 0), (1, 0), (0, -1), (0, 1))
    eroded = np.ones_like(inside)
    for dy, dx in cross:
        eroded &= np.roll(np.roll(inside, -dy, axis=0), -dx, axis=1)
    opened = np.zeros_like(inside)
    for dy, dx in cross:
        opened |= np.roll(np.roll(eroded, dy, axis=0), dx, axis=1)
    ys, xs = np.nonzero(opened)
    return [(int(y) - radius - 1, int(x) - radius - 1) for y, x in zip(ys, xs)]


def _slide(grid: np.ndarray, radius: int, reduce) -> np.ndarray:
    # Edge replication keeps the filter well defined at borders.
    padded = np.pad(grid, radius, mode="edge")
    h, w = grid.shape
    out = None
    for dy, dx in disk_offsets(radius):
        window = padded[radius + dy : radius + dy + h, radius + dx : radius + dx + w]
        out = window.copy() if out is None else reduce(out, window)
    return out


def erode(grid: np.ndarray, radius: int) -> np.ndarray:
    return _slide(np.asarray(grid, dtype=np.float64), radius, np.minimum)


def dilate(grid: np.ndarray, radius: int) -> np.ndarray:
    return _slide(np.asarray(grid, dtype=np.float64), radius, np.maximum)


def opening(grid: np.ndarray, radius: int) -> np.ndarray:
    return dilate(erode(grid, radius), radius)


def closing(grid: np.ndarray, radius: int) -> np.ndarray:
    return erode(dilate(grid, radius), radius)


def morphological_filter(grid: np.ndarray, config: MorphConfig) -> list[np.ndarray]:
    """Opening and closing per radius, ordered [open(r1), close(r1), open(r2), ...]."""
    grid = np.asarray(grid, dtype=np.float64)
    if not np.isfinite(grid).all():
        raise FeatureError("grid holds non-finite values")
    out: list[np.ndarray] = []
    for r in config.radii:
        out.append(opening(grid, r))
        out.append(closing(grid, r))
    return out


def pca_first_component(raster: Raster) -> np.ndarray:
    """Projection of each centered pixel vector onto the leading eigenvector.

    The eigenvector sign is fixed so its largest-magnitude entry is positive,
    making the output reproducible across eigensolvers.
    """
    pixels = raster.pixel_matrix()
    if pixels.shape[0] < 2:
        raise FeatureError("need at least 2 pixels")
    mean = pixels.mean(axis=0)
    centered = pixels - mean
    cov = np.cov(centered, rowvar=False, ddof=1)
    cov = np.atleast_2d(cov)
    eigvals, eigvecs = np.linalg.eigh(cov)
    leading = eigvecs[:, -1]
    if eigvals[-1] <= 0:
        raise FeatureError("degenerate PCA: band covariance has no positive eigenvalue")
    pivot = int(np.argmax(np.abs(leading)))
    if leading[pivot] < 0:
        leading = -leading
    projection = centered @ leading
    return projection.reshape(raster.height, raster.width)


@dataclass
class FeatureStack:
    """Standardized per-pixel features, indexed (feature, row, col).

    ``means``/``stds`` are the pre-standardization statistics; a feature with
    zero variance is passed through as all-zeros and flagged.
    """

    values: np.ndarray
    names: list[str]
    means: np.ndarray
    stds: np.ndarray
    zero_variance: list[bool] = field(default_factory=list)

    @property
    def dim(self) -> int:
        return self.values.shape[0]

    @property
    def height(self) -> int:
        return self.values.shape[1]

    @property
    def width(self) -> int:
        return self.values.shape[2]

    def matrix(self) -> np.ndarray:
        """Pixels as rows: shape (height*width, dim), float64."""
        return self.values.reshape(self.dim, -1).T.copy()


def build_feature_stack(raster: Raster, config: MorphConfig) -> FeatureStack:
    pc1 = pca_first_component(raster)
    morph = morphological_filter(pc1, config)

    layers = [raster.values[b].astype(np.float64) for b in range(raster.bands)]
    names = [f"band{b}" for b in range(raster.bands)]
    for r, pair_start in zip(config.radii, range(0, len(morph), 2)):
        layers.append(morph[pair_start])
        layers.append(morph[pair_start + 1])
        names.append(f"open_r{r}")
        names.append(f"close_r{r}")

    stacked = np.stack(layers)
    flat = stacked.reshape(len(layers), -1)
    means = flat.mean(axis=1)
    stds = flat.std(axis=1)
    zero_variance = [bool(s == 0.0) for s in stds]
    safe = np.where(stds == 0.0, 1.0, stds)
    standardized = (flat - means[:, None]) / safe[:, None]
    standardized[stds == 0.0, :] = 0.0
    return FeatureStack(
        values=standardized.reshape(stacked.shape),
        names=names,
        means=means,
        stds=stds,
        zero_variance=zero_variance,
    )


def store_feature_stack(stack: FeatureStack, base: str | Path) -> None:
    """Persist as a multiband raster container plus standardization constants."""
    store_raster(Raster(stack.values.astype(np.float32)), base)
    base = _base_path(base)
    sidecar = json.loads(base.with_suffix(".json").read_text())
    sidecar["features"] = stack.names
    sidecar["standardization"] = {
        "means": [float(m) for m in stack.means],
        "stds": [float(s) for s in stack.stds],
        "zero_variance": stack.zero_variance,
    }
    base.with_suffix(".json").write_text(
        json.dumps(sidecar, sort_keys=True, separators=(",", ":")) + "\n"
    )


def load_feature_stack(path: str | Path) -> FeatureStack:
    raster = load_raster(path)
    sidecar = json.loads(_base_path(path).with_suffix(".json").read_text())
    if "features" not in sidecar or "standardization" not in sidecar:
        raise FeatureError("container is not a feature stack (missing sidecar fields)")
    std = sidecar["standardization"]
    return FeatureStack(
        values=raster.values.astype(np.float64),
        names=list(sidecar["features"]),
        means=np.asarray(std["means"], dtype=np.float64),
        stds=np.asarray(std["stds"], dtype=np.float64),
        zero_variance=[bool(v) for v in std["zero_variance"]],
    )
