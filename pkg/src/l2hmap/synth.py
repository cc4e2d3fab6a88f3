"""Deterministic synthetic scenes for exercising the full pipeline.

A smooth random field is thresholded at class quantiles to get blobby
1-m ground truth with controlled per-class area fractions. The image is
the per-class mean color plus Gaussian noise. Three coarse 10-m products
are derived by majority-vote downsampling of the truth, then each pixel
is independently corrupted to a random other class with probability
delta, mimicking independent products that disagree on unstable ground.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import ConfigError
from .fusion import TR_CLASS, rasterize_roads
from .grid import GeoRef, RasterGrid, VectorLines
from .assessment import largest_remainder

# Anchor colors in the RGB unit cube; pairwise Euclidean distance >= 0.56.
CLASS_COLORS = np.array([
    (0.10, 0.10, 0.10),
    (0.90, 0.10, 0.10),
    (0.10, 0.90, 0.10),
    (0.10, 0.10, 0.90),
    (0.90, 0.90, 0.10),
    (0.90, 0.10, 0.90),
    (0.10, 0.90, 0.90),
    (0.90, 0.90, 0.90),
    (0.50, 0.50, 0.10),
    (0.50, 0.10, 0.50),
    (0.10, 0.50, 0.50),
], dtype=np.float64)

DOWN_FACTOR = 10


@dataclass(frozen=True)
class SceneSpec:
    width: int = 1000
    height: int = 1000
    num_classes: int = 5
    sigma: float = 0.1            # per-channel color noise
    delta: float = 0.2            # per-product corruption probability
    seed: int = 0
    num_roads: int = 0
    road_width_px: int = 5        # burned width in 1-m truth pixels
    smoothness: float = 25.0      # gaussian radius of the blob field
    easy: bool = True             # enforce >= 3 sigma color separation
    class_fractions: tuple = ()   # optional, must sum to 1

    def __post_init__(self):
        if self.width % DOWN_FACTOR or self.height % DOWN_FACTOR:
            raise ConfigError("scene dimensions must be multiples of 10")
        if not 2 <= self.num_classes <= len(CLASS_COLORS):
            raise ConfigError(f"num_classes must be 2..{len(CLASS_COLORS)}")
        if not 0.0 <= self.delta < 1.0:
            raise ConfigError(f"delta must be in [0, 1), got {self.delta}")
        if self.class_fractions:
            if len(self.class_fractions) != self.num_classes:
                raise ConfigError("class_fractions length must equal num_classes")
            if abs(sum(self.class_fractions) - 1.0) > 1e-9:
                raise ConfigError("class_fractions must sum to 1")
        if self.easy:
            means = CLASS_COLORS[:self.num_classes]
            d = np.linalg.norm(means[:, None] - means[None, :], axis=-1)
            np.fill_diagonal(d, np.inf)
            if d.min() < 3.0 * self.sigma:
                raise ConfigError(
                    f"easy mode needs mean separation >= 3 sigma; min distance "
                    f"{d.min():.3f} < {3 * self.sigma:.3f}")

    @property
    def fractions(self):
        if self.class_fractions:
            return np.asarray(self.class_fractions, dtype=np.float64)
        return np.full(self.num_classes, 1.0 / self.num_classes)


def majority_downsample(truth, num_classes, factor=DOWN_FACTOR):
    """Per-block majority class, ties broken by the lowest class ID."""
    vals = truth.band(0) if isinstance(truth, RasterGrid) else np.asarray(truth)
    h, w = vals.shape
    hh, ww = h // factor, w // factor
    blocks = vals[:hh * factor, :ww * factor].reshape(hh, factor, ww, factor)
    votes = np.stack([(blocks == c).sum(axis=(1, 3))
                      for c in range(1, num_classes + 1)])
    out = (votes.argmax(axis=0) + 1).astype(np.uint8)
    if isinstance(truth, RasterGrid):
        return RasterGrid(out, truth.georef.scaled(factor, "down"), truth.nodata)
    return out


def _blob_classes(spec, rng):
    noise = rng.standard_normal((spec.height, spec.width))
    fld = ndimage.gaussian_filter(noise, sigma=spec.smoothness, mode="nearest")
    order = np.argsort(fld.ravel(), kind="stable")
    counts = largest_remainder(spec.fractions, fld.size)
    out = np.empty(fld.size, dtype=np.uint8)
    start = 0
    for c, n in enumerate(counts, start=1):
        out[order[start:start + n]] = c
        start += n
    return out.reshape(spec.height, spec.width)


def _random_roads(spec, rng):
    lines = []
    for _ in range(spec.num_roads):
        if rng.random() < 0.5:  # left-right
            y0, y1 = rng.uniform(0, spec.height, size=2)
            pts = [(0.0, y0), (spec.width / 2.0, (y0 + y1) / 2.0 + rng.uniform(-50, 50)),
                   (float(spec.width), y1)]
        else:  # top-bottom
            x0, x1 = rng.uniform(0, spec.width, size=2)
            pts = [(x0, 0.0), ((x0 + x1) / 2.0 + rng.uniform(-50, 50), spec.height / 2.0),
                   (x1, float(spec.height))]
        lines.append(pts)
    return VectorLines(lines, [{"kind": "synthetic"} for _ in lines])


def generate(spec):
    """Build (image 3xHxW f32, truth 1 m, three 10-m products, roads)."""
    rng = np.random.default_rng(spec.seed)
    georef_1m = GeoRef(0.0, 0.0, 1.0, 1.0, "synthetic")
    truth = _blob_classes(spec, rng)
    roads = _random_roads(spec, rng)
    if spec.num_roads:
        template = RasterGrid(truth, georef_1m, nodata=255)
        mask = rasterize_roads(roads, template, spec.road_width_px)
        truth = np.where(mask.band(0) != 0, np.uint8(TR_CLASS), truth)
    truth_grid = RasterGrid(truth, georef_1m, nodata=255)

    means = CLASS_COLORS[:spec.num_classes]
    image = means[truth.astype(np.int64) - 1].transpose(2, 0, 1)
    image = image + rng.normal(0.0, spec.sigma, size=image.shape)
    image_grid = RasterGrid(image.astype(np.float32), georef_1m, nodata=float("nan"))

    coarse = majority_downsample(truth_grid, spec.num_classes)
    products = []
    for _ in range(3):
        vals = coarse.band(0).copy()
        if spec.delta > 0:
            hit = rng.random(vals.shape) < spec.delta
            draw = rng.integers(0, spec.num_classes - 1, size=vals.shape)
            other = draw + 1 + (draw + 1 >= vals)
            vals = np.where(hit, other.astype(np.uint8), vals)
        products.append(RasterGrid(vals, coarse.georef, nodata=255))
    return image_grid, truth_grid, products, roads


def stable_fraction_expectation(delta, num_classes):
    """Probability that three independently corrupted products agree."""
    keep = (1.0 - delta) ** 3
    chance = delta ** 3 / (num_classes - 1) ** 2
    return keep + chance
