"""Training-label construction from coarse products and vector roads.

Three coarse class rasters are first mapped onto the unified legend, then
intersected: a pixel keeps its class only where all three products agree
and the common value is labeled; everywhere else it becomes UNLABELED.
Vector roads are burned on top as the traffic-route class.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import AlignmentError, ConfigError, FormatError, ShapeError, UnknownClassError
from .grid import UNLABELED, RasterGrid

TR_CLASS = 1  # traffic route in the unified scheme


@dataclass(frozen=True)
class HarmonizationTable:
    """Total mapping from one product's legend onto the unified scheme."""

    product_name: str
    mapping: dict  # source class id -> unified class id

    def lookup_array(self):
        lut = np.full(256, -1, dtype=np.int16)
        for src, dst in self.mapping.items():
            lut[int(src)] = int(dst)
        return lut

    @classmethod
    def identity(cls, num_classes, name="identity"):
        m = {i: i for i in range(0, num_classes + 1)}
        return cls(name, m)


def read_table(path, product_name=None):
    """Parse `source_id -> unified_id` lines; `#` starts a comment."""
    mapping = {}
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "->" not in line:
                raise FormatError(f"{path}:{lineno}: expected 'source -> unified'")
            src, dst = line.split("->", 1)
            try:
                mapping[int(src)] = int(dst)
            except ValueError:
                raise FormatError(f"{path}:{lineno}: non-integer class id")
    name = product_name or str(path)
    return HarmonizationTable(name, mapping)


def write_table(table, path):
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"# harmonization table: {table.product_name}\n")
        for src in sorted(table.mapping):
            f.write(f"{src} -> {table.mapping[src]}\n")


@dataclass
class FusionReport:
    """Audit counts for one fusion run.

    stable/unlabeled and the per-class counts describe the pre-labels
    (before the road overlay); road_pixels counts the burned road mask.
    """

    total_pixels: int
    stable_pixels: int
    unlabeled_pixels: int
    road_pixels: int
    per_class_stable: dict  # class id -> count

    def to_dict(self):
        return {
            "total_pixels": self.total_pixels,
            "stable_pixels": self.stable_pixels,
            "unlabeled_pixels": self.unlabeled_pixels,
            "road_pixels": self.road_pixels,
            "per_class_stable": {str(k): v for k, v in sorted(self.per_class_stable.items())},
        }


def harmonize(product, table):
    """Per-pixel legend lookup; nodata pixels become UNLABELED."""
    if product.data.dtype != np.uint8:
        raise ShapeError("harmonize expects a u8 class raster")
    lut = table.lookup_array()
    vals = product.band(0)
    nodata_mask = vals == np.uint8(product.nodata) if 0 <= product.nodata <= 255 else \
        np.zeros(vals.shape, dtype=bool)
    mapped = lut[vals]
    bad = (mapped < 0) & ~nodata_mask
    if bad.any():
        missing = int(vals[bad].flat[0])
        raise UnknownClassError(missing, f"product {table.product_name}")
    mapped = np.where(nodata_mask, UNLABELED, mapped).astype(np.uint8)
    return RasterGrid(mapped, product.georef, product.nodata)


def _check_aligned(*grids):
    first = grids[0]
    for g in grids[1:]:
        if g.data.shape[1:] != first.data.shape[1:]:
            raise AlignmentError(
                f"shape mismatch: {g.width}x{g.height} vs {first.width}x{first.height}")
        if not first.same_georef(g):
            raise AlignmentError("georeference mismatch")


def intersect_products(a, b, c):
    """Keep the common class where all three agree; else UNLABELED."""
    _check_aligned(a, b, c)
    va, vb, vc = a.band(0), b.band(0), c.band(0)
    agree = (va == vb) & (vb == vc) & (va != UNLABELED)
    out = np.where(agree, va, np.uint8(UNLABELED)).astype(np.uint8)
    return RasterGrid(out, a.georef, a.nodata)


def trace_cells(x0, y0, x1, y1):
    """All cells a segment passes through (supercover grid traversal).

    Coordinates are in pixel units (cell (i, j) spans [i, i+1) x [j, j+1)).
    Returns an (N, 2) int array of (col, row) cells, unclipped.
    """
    cells = [(int(np.floor(x0)), int(np.floor(y0)))]
    dx, dy = x1 - x0, y1 - y0
    cx, cy = cells[0]
    step_x = 1 if dx > 0 else -1
    step_y = 1 if dy > 0 else -1
    # parametric distance to the next vertical/horizontal cell boundary
    t_max_x = np.inf if dx == 0 else ((cx + (step_x > 0)) - x0) / dx
    t_max_y = np.inf if dy == 0 else ((cy + (step_y > 0)) - y0) / dy
    t_dx = np.inf if dx == 0 else abs(1.0 / dx)
    t_dy = np.inf if dy == 0 else abs(1.0 / dy)
    while True:
        if t_max_x < t_max_y:
            if t_max_x > 1.0:
                break
            cx += step_x
            t_max_x += t_dx
        else:
            if t_max_y > 1.0:
                break
            cy += step_y
            t_max_y += t_dy
        cells.append((cx, cy))
    return np.array(cells, dtype=np.int64)


def rasterize_roads(lines, template, width_px=1):
    """Burn polylines into a binary mask on the template's grid.

    Cells touched by a segment are set, then dilated so that any cell
    within Chebyshev distance < width_px / 2 of a traced cell is also set
    (radius (width_px - 1) // 2). The mask is clipped to the grid.
    """
    if width_px < 1:
        raise ConfigError(f"width_px must be >= 1, got {width_px}")
    h, w = template.height, template.width
    mask = np.zeros((h, w), dtype=bool)
    g = template.georef
    for pts in lines.polylines:
        cols, rows = g.world_to_pixel(pts[:, 0], pts[:, 1])
        for k in range(len(pts) - 1):
            cells = trace_cells(cols[k], rows[k], cols[k + 1], rows[k + 1])
            keep = ((cells[:, 0] >= 0) & (cells[:, 0] < w)
                    & (cells[:, 1] >= 0) & (cells[:, 1] < h))
            cells = cells[keep]
            mask[cells[:, 1], cells[:, 0]] = True
    radius = (int(width_px) - 1) // 2
    if radius > 0 and mask.any():
        footprint = np.ones((2 * radius + 1, 2 * radius + 1), dtype=bool)
        mask = ndimage.binary_dilation(mask, structure=footprint)
    return RasterGrid(mask.astype(np.uint8), template.georef, template.nodata)


def overlay_roads(prelabels, road_mask, fill_only=False):
    """Stamp TR wherever the road mask is set.

    By default roads override stable pre-labels; with fill_only=True only
    UNLABELED pixels are filled.
    """
    _check_aligned(prelabels, road_mask)
    pre = prelabels.band(0)
    on = road_mask.band(0) != 0
    if fill_only:
        on = on & (pre == UNLABELED)
    out = np.where(on, np.uint8(TR_CLASS), pre).astype(np.uint8)
    return RasterGrid(out, prelabels.georef, prelabels.nodata)


def fuse(a, b, c, tables, lines=None, width_px=1, fill_only=False):
    """Full label-construction chain; returns (labels, FusionReport)."""
    if len(tables) != 3:
        raise ConfigError("fuse needs exactly three harmonization tables")
    ha = harmonize(a, tables[0])
    hb = harmonize(b, tables[1])
    hc = harmonize(c, tables[2])
    pre = intersect_products(ha, hb, hc)
    prevals = pre.band(0)
    total = prevals.size
    unlabeled = int(np.count_nonzero(prevals == UNLABELED))
    counts = np.bincount(prevals.ravel(), minlength=256)
    per_class = {int(cid): int(n) for cid, n in enumerate(counts)
                 if n > 0 and cid != UNLABELED}
    if lines is not None and lines.polylines:
        road = rasterize_roads(lines, pre, width_px)
    else:
        road = RasterGrid(np.zeros((pre.height, pre.width), dtype=np.uint8),
                          pre.georef, pre.nodata)
    labels = overlay_roads(pre, road, fill_only=fill_only)
    report = FusionReport(
        total_pixels=int(total),
        stable_pixels=int(total - unlabeled),
        unlabeled_pixels=unlabeled,
        road_pixels=int(np.count_nonzero(road.band(0))),
        per_class_stable=per_class,
    )
    return labels, report
