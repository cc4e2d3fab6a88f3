"""Point sampling, confusion matrix, and agreement/area statistics.

Confusion matrix orientation: rows are the map (predicted) class, columns
are the reference class. "Map-side accuracy" is diagonal over the row
total, "reference-side accuracy" diagonal over the column total; both are
reported per class and left as NaN where the marginal is zero.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, EmptyMatrixError, UnknownClassError
from .grid import UNLABELED


@dataclass
class SamplePoint:
    x: float
    y: float
    reference_class: int | None = None
    map_class: int | None = None


@dataclass
class ConfusionMatrix:
    counts: np.ndarray  # (L, L) int64, rows = map, cols = reference
    class_names: list

    @property
    def total(self):
        return int(self.counts.sum())


@dataclass
class AreaStats:
    region: int
    map_fractions: dict       # class id -> fraction of the region's mapped area
    ref_fractions: dict | None  # None when no reference row exists
    misestimation: dict | None  # map - reference, signed


def sample_points(grid, n, seed, strategy="uniform"):
    """Draw validation points at pixel centers, deterministically per seed.

    uniform draws without replacement over all pixels. stratified-by-class
    allocates n proportionally to class areas (largest-remainder rounding)
    and draws without replacement inside each class.
    """
    n = int(n)
    if n < 1:
        raise ConfigError(f"need n >= 1, got {n}")
    vals = grid.band(0)
    npix = vals.size
    rng = np.random.default_rng(seed)
    if strategy == "uniform":
        if n > npix:
            raise ConfigError(f"n={n} exceeds pixel count {npix}")
        flat_idx = rng.choice(npix, size=n, replace=False)
    elif strategy == "stratified-by-class":
        flat = vals.ravel()
        present = np.unique(flat)
        present = present[present != UNLABELED]
        areas = np.array([np.count_nonzero(flat == c) for c in present], dtype=np.float64)
        alloc = largest_remainder(areas / areas.sum(), n)
        chunks = []
        for c, k in zip(present, alloc):
            if k == 0:
                continue
            pool = np.flatnonzero(flat == c)
            if k > pool.size:
                raise ConfigError(f"class {int(c)} has {pool.size} pixels, need {k}")
            chunks.append(rng.choice(pool, size=k, replace=False))
        flat_idx = np.concatenate(chunks)
    else:
        raise ConfigError(f"unknown strategy {strategy!r}")
    rows, cols = np.divmod(flat_idx, grid.width)
    xs, ys = grid.georef.pixel_center(cols, rows)
    return [SamplePoint(float(x), float(y), map_class=int(v))
            for x, y, v in zip(xs, ys, vals[rows, cols])]


def largest_remainder(fractions, n):
    """Integer allocation of n summing exactly to n, proportional to fractions."""
    raw = np.asarray(fractions, dtype=np.float64) * n
    base = np.floor(raw).astype(np.int64)
    short = n - int(base.sum())
    if short > 0:
        order = np.argsort(-(raw - base), kind="stable")
        base[order[:short]] += 1
    return base


def lookup_classes(grid, points, target="map"):
    """Fill map_class or reference_class from the grid value under each point."""
    if target not in ("map", "reference"):
        raise ConfigError(f"target must be 'map' or 'reference', got {target!r}")
    g = grid.georef
    for p in points:
        col, row = g.world_to_pixel(p.x, p.y)
        c, r = int(np.floor(col)), int(np.floor(row))
        if not (0 <= c < grid.width and 0 <= r < grid.height):
            raise ConfigError(f"point ({p.x}, {p.y}) lies outside the map extent")
        v = int(grid.band(0)[r, c])
        if target == "map":
            p.map_class = v
        else:
            p.reference_class = v
    return points


def confusion(points, scheme):
    """Tally points into an L x L matrix (rows = map, cols = reference)."""
    L = scheme.num_classes
    counts = np.zeros((L, L), dtype=np.int64)
    for p in points:
        if p.map_class is None or p.reference_class is None:
            raise ConfigError("every point needs both map_class and reference_class")
        for v in (p.map_class, p.reference_class):
            if not 1 <= v <= L:
                raise UnknownClassError(v, "confusion tally")
        counts[p.map_class - 1, p.reference_class - 1] += 1
    return ConfusionMatrix(counts, [c.name for c in scheme.classes])


def metrics(cm):
    """Overall accuracy, kappa, and the two per-class accuracy families.

    Returns a dict with oa, kappa, map_side_accuracy (diagonal over row
    totals) and reference_side_accuracy (diagonal over column totals),
    the latter two keyed by class name with NaN for empty marginals.
    """
    counts = cm.counts.astype(np.float64)
    total = counts.sum()
    if total == 0:
        raise EmptyMatrixError("confusion matrix has zero total")
    diag = np.diag(counts)
    rows = counts.sum(axis=1)
    cols = counts.sum(axis=0)
    oa = diag.sum() / total
    pe = float((rows * cols).sum()) / (total * total)
    kappa = (oa - pe) / (1.0 - pe) if pe < 1.0 else 1.0
    with np.errstate(invalid="ignore", divide="ignore"):
        map_side = np.where(rows > 0, diag / rows, np.nan)
        ref_side = np.where(cols > 0, diag / cols, np.nan)
    return {
        "oa": float(oa),
        "kappa": float(kappa),
        "total": int(total),
        "map_side_accuracy": dict(zip(cm.class_names, (float(v) for v in map_side))),
        "reference_side_accuracy": dict(zip(cm.class_names, (float(v) for v in ref_side))),
    }


def area_misestimation(class_map, regions, reference):
    """Per-region signed difference between mapped and reference fractions.

    reference maps region id -> {class id -> fraction}. Regions present in
    the map but absent from the reference are still listed, with the
    reference side marked unavailable (None).
    """
    if class_map.data.shape[1:] != regions.data.shape[1:] \
            or not class_map.same_georef(regions):
        from .errors import AlignmentError
        raise AlignmentError("class map and region raster are not aligned")
    vals = class_map.band(0).ravel()
    regs = regions.band(0).ravel()
    out = []
    for region in np.unique(regs):
        sel = vals[regs == region]
        sel = sel[sel != UNLABELED]
        counts = np.bincount(sel, minlength=256)
        total = counts.sum()
        map_fr = {int(c): counts[c] / total for c in np.flatnonzero(counts)}
        ref = reference.get(int(region))
        if ref is None:
            out.append(AreaStats(int(region), map_fr, None, None))
            continue
        all_classes = sorted(set(map_fr) | set(ref))
        mis = {c: map_fr.get(c, 0.0) - ref.get(c, 0.0) for c in all_classes}
        out.append(AreaStats(int(region), map_fr, dict(ref), mis))
    return out


def write_confusion_csv(cm, path):
    with open(path, "w", newline="", encoding="utf-8") as f:
        wr = csv.writer(f)
        wr.writerow(["map\\reference"] + cm.class_names)
        for name, row in zip(cm.class_names, cm.counts):
            wr.writerow([name] + [int(v) for v in row])


def read_confusion_csv(path, scheme=None):
    with open(path, "r", newline="", encoding="utf-8") as f:
        rows = list(csv.reader(f))
    if not rows:
        raise EmptyMatrixError(f"{path} is empty")
    names = rows[0][1:]
    counts = np.array([[int(v) for v in r[1:]] for r in rows[1:]], dtype=np.int64)
    if counts.shape != (len(names), len(names)):
        from .errors import FormatError
        raise FormatError(f"{path}: matrix is not square over the header classes")
    return ConfusionMatrix(counts, names)


def read_reference_csv(path):
    """Long-format reference fractions: region,class,fraction per row."""
    ref = {}
    with open(path, "r", newline="", encoding="utf-8") as f:
        for row in csv.DictReader(f):
            region = int(row["region"])
            ref.setdefault(region, {})[int(row["class"])] = float(row["fraction"])
    return ref


def write_area_csv(stats, scheme, path):
    """Long-format misestimation table: one row per (region, class)."""
    with open(path, "w", newline="", encoding="utf-8") as f:
        wr = csv.writer(f)
        wr.writerow(["region", "class", "class_name", "map_fraction",
                     "ref_fraction", "delta"])
        for st in stats:
            classes = sorted(set(st.map_fractions)
                             | set(st.ref_fractions or {}))
            for c in classes:
                name = scheme.name_of(c) if c <= scheme.num_classes else str(c)
                mf = st.map_fractions.get(c, 0.0)
                if st.ref_fractions is None:
                    wr.writerow([st.region, c, name, f"{mf:.9f}", "", ""])
                else:
                    rf = st.ref_fractions.get(c, 0.0)
                    wr.writerow([st.region, c, name, f"{mf:.9f}", f"{rf:.9f}",
                                 f"{mf - rf:.9f}"])
