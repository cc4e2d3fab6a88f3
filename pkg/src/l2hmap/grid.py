"""Raster/vector data model and portable file I/O.

The whole pipeline moves data around as `RasterGrid` objects. Grids are
stored on disk in the little-endian "LCR" container:

    magic "LCR1" | u32 width | u32 height | u16 bands | u8 dtype
    | f64 nodata | f64 origin_x, origin_y, pixel_size_x, pixel_size_y
    | u16 crs length + UTF-8 bytes | raw row-major band-sequential payload

dtype 0 is u8 class IDs, dtype 1 is f32 continuous bands. Polylines use a
line-delimited text format, one polyline per line:

    x1,y1 x2,y2 ... | key=value;key=value

There is deliberately no reprojection, compression, or interpolating
resampling: class rasters are categorical and must stay categorical.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, FormatError, ShapeError

MAGIC = b"LCR1"
DTYPE_U8_CLASS = 0
DTYPE_F32_BAND = 1

_HEADER = struct.Struct("<IIHBdddddH")

UNLABELED = 0


@dataclass(frozen=True)
class GeoRef:
    """Affine world<->pixel mapping (axis-aligned, no rotation).

    pixel_size_y is negative for north-up rasters; tests frequently use a
    positive value, which is equally legal.
    """

    origin_x: float = 0.0
    origin_y: float = 0.0
    pixel_size_x: float = 1.0
    pixel_size_y: float = 1.0
    crs_tag: str = ""

    def __post_init__(self):
        if self.pixel_size_x <= 0:
            raise ConfigError(f"pixel_size_x must be > 0, got {self.pixel_size_x}")
        if self.pixel_size_y == 0:
            raise ConfigError("pixel_size_y must be nonzero")

    def world_to_pixel(self, x, y):
        """Map coordinates to fractional (col, row)."""
        col = (np.asarray(x) - self.origin_x) / self.pixel_size_x
        row = (np.asarray(y) - self.origin_y) / self.pixel_size_y
        return col, row

    def pixel_center(self, col, row):
        """Center of pixel (col, row) in map units."""
        x = self.origin_x + (np.asarray(col) + 0.5) * self.pixel_size_x
        y = self.origin_y + (np.asarray(row) + 0.5) * self.pixel_size_y
        return x, y

    def scaled(self, factor, direction):
        """Georef after nearest resampling by an integer factor."""
        if direction == "up":
            sx, sy = self.pixel_size_x / factor, self.pixel_size_y / factor
        else:
            sx, sy = self.pixel_size_x * factor, self.pixel_size_y * factor
        return GeoRef(self.origin_x, self.origin_y, sx, sy, self.crs_tag)


@dataclass(frozen=True)
class ClassDef:
    id: int
    name: str
    color: tuple  # RGB 0-255


@dataclass(frozen=True)
class ClassScheme:
    """Ordered class legend. ID 0 is always UNLABELED."""

    classes: tuple

    def __post_init__(self):
        ids = [c.id for c in self.classes]
        if ids != list(range(1, len(ids) + 1)):
            raise ConfigError(f"class ids must be contiguous 1..L, got {ids}")

    @property
    def num_classes(self):
        return len(self.classes)

    @property
    def ids(self):
        return tuple(c.id for c in self.classes)

    def name_of(self, class_id):
        if class_id == UNLABELED:
            return "UNLABELED"
        return self.classes[class_id - 1].name

    def color_of(self, class_id):
        if class_id == UNLABELED:
            return (0, 0, 0)
        return self.classes[class_id - 1].color

    def subset(self, n):
        """First n classes, for reduced synthetic scenes."""
        return ClassScheme(self.classes[:n])


DEFAULT_SCHEME = ClassScheme((
    ClassDef(1, "TR", (80, 80, 80)),        # traffic route
    ClassDef(2, "TC", (0, 120, 0)),         # tree cover
    ClassDef(3, "SL", (160, 190, 60)),      # shrubland
    ClassDef(4, "GL", (150, 220, 120)),     # grassland
    ClassDef(5, "CL", (240, 200, 80)),      # cropland
    ClassDef(6, "BD", (200, 0, 0)),         # building
    ClassDef(7, "BL&SV", (200, 170, 140)),  # barren & sparse vegetation
    ClassDef(8, "S&I", (240, 240, 255)),    # snow & ice
    ClassDef(9, "WT", (0, 90, 200)),        # water
    ClassDef(10, "WL", (0, 190, 190)),      # wetland
    ClassDef(11, "M&L", (250, 230, 160)),   # moss & lichen
))


class RasterGrid:
    """Immutable 2-D georeferenced grid, (bands, height, width) in memory."""

    __slots__ = ("data", "georef", "nodata")

    def __init__(self, data, georef=None, nodata=255.0):
        data = np.asarray(data)
        if data.ndim == 2:
            data = data[None, :, :]
        if data.ndim != 3:
            raise ShapeError(f"grid data must be 2-D or 3-D, got ndim={data.ndim}")
        if data.dtype == np.uint8:
            pass
        elif data.dtype == np.float32:
            pass
        else:
            raise ShapeError(f"grid dtype must be uint8 or float32, got {data.dtype}")
        data = np.ascontiguousarray(data)
        data.setflags(write=False)
        self.data = data
        self.georef = georef if georef is not None else GeoRef()
        self.nodata = float(nodata)

    @property
    def bands(self):
        return self.data.shape[0]

    @property
    def height(self):
        return self.data.shape[1]

    @property
    def width(self):
        return self.data.shape[2]

    @property
    def dtype_code(self):
        return DTYPE_U8_CLASS if self.data.dtype == np.uint8 else DTYPE_F32_BAND

    def band(self, i=0):
        return self.data[i]

    def same_georef(self, other, tol=1e-9):
        a, b = self.georef, other.georef
        return (abs(a.origin_x - b.origin_x) <= tol
                and abs(a.origin_y - b.origin_y) <= tol
                and abs(a.pixel_size_x - b.pixel_size_x) <= tol
                and abs(a.pixel_size_y - b.pixel_size_y) <= tol
                and a.crs_tag == b.crs_tag)

    def __eq__(self, other):
        if not isinstance(other, RasterGrid):
            return NotImplemented
        return (self.data.dtype == other.data.dtype
                and self.data.shape == other.data.shape
                and np.array_equal(self.data, other.data)
                and self.same_georef(other, tol=0.0)
                and (self.nodata == other.nodata
                     or (np.isnan(self.nodata) and np.isnan(other.nodata))))


@dataclass
class VectorLines:
    """Polylines in map units with per-line string attributes."""

    polylines: list = field(default_factory=list)  # list of (N,2) float arrays
    attributes: list = field(default_factory=list)  # list of dicts

    def __post_init__(self):
        clean = []
        for line in self.polylines:
            arr = np.asarray(line, dtype=np.float64)
            if arr.ndim != 2 or arr.shape[1] != 2 or arr.shape[0] < 2:
                raise ShapeError("every polyline needs >= 2 (x, y) vertices")
            clean.append(arr)
        self.polylines = clean
        if not self.attributes:
            self.attributes = [{} for _ in self.polylines]
        if len(self.attributes) != len(self.polylines):
            raise ShapeError("attributes and polylines length mismatch")


def write_grid(grid, path):
    """Serialize a RasterGrid into the LCR container."""
    g = grid.georef
    crs = g.crs_tag.encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(_HEADER.pack(grid.width, grid.height, grid.bands, grid.dtype_code,
                             grid.nodata, g.origin_x, g.origin_y,
                             g.pixel_size_x, g.pixel_size_y, len(crs)))
        f.write(crs)
        payload = grid.data.astype("<u1" if grid.dtype_code == DTYPE_U8_CLASS else "<f4",
                                   copy=False)
        f.write(payload.tobytes())


def read_grid(path):
    """Parse an LCR file back into a RasterGrid (byte-exact round-trip)."""
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < 4 or raw[:4] != MAGIC:
        raise FormatError(f"{path}: missing LCR1 magic")
    if len(raw) < 4 + _HEADER.size:
        raise FormatError(f"{path}: truncated header")
    (width, height, bands, dtype_code, nodata, ox, oy, psx, psy,
     crs_len) = _HEADER.unpack_from(raw, 4)
    off = 4 + _HEADER.size
    if len(raw) < off + crs_len:
        raise FormatError(f"{path}: truncated crs tag")
    crs = raw[off:off + crs_len].decode("utf-8")
    off += crs_len
    if dtype_code == DTYPE_U8_CLASS:
        np_dtype, itemsize = "<u1", 1
    elif dtype_code == DTYPE_F32_BAND:
        np_dtype, itemsize = "<f4", 4
    else:
        raise FormatError(f"{path}: unknown dtype code {dtype_code}")
    expect = width * height * bands * itemsize
    payload = raw[off:]
    if len(payload) != expect:
        raise FormatError(f"{path}: payload is {len(payload)} bytes, expected {expect}")
    data = np.frombuffer(payload, dtype=np_dtype).reshape(bands, height, width)
    georef = GeoRef(ox, oy, psx, psy, crs)
    return RasterGrid(data.astype(data.dtype.newbyteorder("=")), georef, nodata)


def write_lines(lines, path):
    with open(path, "w", encoding="utf-8") as f:
        for pts, attrs in zip(lines.polylines, lines.attributes):
            coords = " ".join(f"{x:.10g},{y:.10g}" for x, y in pts)
            if attrs:
                kv = ";".join(f"{k}={v}" for k, v in attrs.items())
                f.write(f"{coords} | {kv}\n")
            else:
                f.write(coords + "\n")


def read_lines(path):
    polylines, attributes = [], []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            coord_part, _, attr_part = line.partition("|")
            try:
                pts = [tuple(float(v) for v in tok.split(","))
                       for tok in coord_part.split()]
            except ValueError as e:
                raise FormatError(f"{path}:{lineno}: bad coordinate token ({e})")
            if any(len(p) != 2 for p in pts) or len(pts) < 2:
                raise FormatError(f"{path}:{lineno}: need >= 2 x,y pairs")
            attrs = {}
            for kv in attr_part.split(";"):
                kv = kv.strip()
                if kv:
                    k, _, v = kv.partition("=")
                    attrs[k.strip()] = v.strip()
            polylines.append(pts)
            attributes.append(attrs)
    return VectorLines(polylines, attributes)


def resample_nearest(src, factor, direction):
    """Integer nearest-neighbor resampling.

    up: replicate each pixel into a factor x factor block.
    down: keep the top-left sample of each block (requires divisibility).
    """
    factor = int(factor)
    if factor < 1:
        raise ConfigError(f"factor must be >= 1, got {factor}")
    if direction not in ("up", "down"):
        raise ConfigError(f"direction must be 'up' or 'down', got {direction!r}")
    d = src.data
    if direction == "up":
        out = np.repeat(np.repeat(d, factor, axis=1), factor, axis=2)
    else:
        if src.height % factor or src.width % factor:
            raise ShapeError(
                f"{src.width}x{src.height} not divisible by factor {factor}")
        out = d[:, ::factor, ::factor]
    return RasterGrid(out, src.georef.scaled(factor, direction), src.nodata)


def _axis_starts(size, tile, step):
    if size <= tile:
        return [0], size
    starts = list(range(0, size - tile + 1, step))
    if starts[-1] + tile < size:
        starts.append(size - tile)
    return starts, tile


def tile_iter(grid, tile, overlap=0):
    """Yield (window, sub-grid) covering the raster in row-major order.

    window is (x0, y0, w, h) in pixels. Interior windows step by
    (tile - overlap); the last window in each axis is clamped to the edge.
    """
    tile, overlap = int(tile), int(overlap)
    if tile < 1:
        raise ConfigError(f"tile must be >= 1, got {tile}")
    if overlap < 0 or overlap >= tile:
        raise ConfigError(f"need 0 <= overlap < tile, got overlap={overlap} tile={tile}")
    if tile > max(grid.width, grid.height):
        raise ConfigError(
            f"tile {tile} exceeds both grid dimensions {grid.width}x{grid.height}")
    step = tile - overlap
    xs, tw = _axis_starts(grid.width, tile, step)
    ys, th = _axis_starts(grid.height, tile, step)
    for y0 in ys:
        for x0 in xs:
            sub = RasterGrid(grid.data[:, y0:y0 + th, x0:x0 + tw],
                             _window_georef(grid.georef, x0, y0), grid.nodata)
            yield (x0, y0, tw, th), sub


def _window_georef(g, x0, y0):
    return GeoRef(g.origin_x + x0 * g.pixel_size_x,
                  g.origin_y + y0 * g.pixel_size_y,
                  g.pixel_size_x, g.pixel_size_y, g.crs_tag)
