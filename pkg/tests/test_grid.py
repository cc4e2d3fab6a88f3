import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from l2hmap.errors import ConfigError, FormatError, ShapeError
from l2hmap.grid import (GeoRef, RasterGrid, VectorLines, read_grid, read_lines,
                         resample_nearest, tile_iter, write_grid, write_lines)


def u8_grid(values, **kw):
    return RasterGrid(np.asarray(values, dtype=np.uint8), **kw)


class TestLcrRoundTrip:
    def test_round_trip_identity(self, tmp_path):
        g = RasterGrid(np.arange(24, dtype=np.float32).reshape(2, 3, 4),
                       GeoRef(10.0, 20.0, 0.5, -0.5, "utm-50n"), nodata=-1.0)
        p = tmp_path / "g.lcr"
        write_grid(g, p)
        assert read_grid(p) == g

    def test_round_trip_byte_exact(self, tmp_path):
        rng = np.random.default_rng(3)
        g = u8_grid(rng.integers(0, 12, size=(7, 5)))
        p1, p2 = tmp_path / "a.lcr", tmp_path / "b.lcr"
        write_grid(g, p1)
        write_grid(read_grid(p1), p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_row_major_layout(self, tmp_path):
        g = u8_grid([[1, 2, 3], [4, 5, 6]])
        p = tmp_path / "g.lcr"
        write_grid(g, p)
        back = read_grid(p)
        assert back.band(0).ravel().tolist() == [1, 2, 3, 4, 5, 6]

    def test_truncated_payload(self, tmp_path):
        g = u8_grid(np.ones((4, 4)))
        p = tmp_path / "g.lcr"
        write_grid(g, p)
        p.write_bytes(p.read_bytes()[:-3])
        with pytest.raises(FormatError):
            read_grid(p)

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "g.lcr"
        p.write_bytes(b"NOPE" + b"\x00" * 64)
        with pytest.raises(FormatError):
            read_grid(p)

    def test_unknown_dtype_code(self, tmp_path):
        g = u8_grid(np.ones((2, 2)))
        p = tmp_path / "g.lcr"
        write_grid(g, p)
        raw = bytearray(p.read_bytes())
        raw[4 + 4 + 4 + 2] = 9  # dtype byte after magic, width, height, bands
        p.write_bytes(bytes(raw))
        with pytest.raises(FormatError):
            read_grid(p)


class TestResample:
    def test_up_replicates(self):
        g = u8_grid([[7]])
        up = resample_nearest(g, 10, "up")
        assert up.width == up.height == 10
        assert (up.band(0) == 7).all()
        assert up.georef.pixel_size_x == pytest.approx(0.1)

    def test_up_then_down_identity(self):
        g = u8_grid([[1, 2], [3, 4]])
        assert resample_nearest(resample_nearest(g, 5, "up"), 5, "down") == g

    def test_down_takes_top_left(self):
        g = u8_grid([[1, 2], [3, 4]])
        down = resample_nearest(g, 2, "down")
        assert down.band(0).tolist() == [[1]]

    def test_down_non_divisible(self):
        g = u8_grid(np.zeros((3, 3)))
        with pytest.raises(ShapeError):
            resample_nearest(g, 2, "down")

    @given(h=st.integers(1, 12), w=st.integers(1, 12),
           factor=st.sampled_from([2, 5, 10]), seed=st.integers(0, 100))
    @settings(max_examples=40, deadline=None)
    def test_up_down_identity_property(self, h, w, factor, seed):
        rng = np.random.default_rng(seed)
        g = u8_grid(rng.integers(0, 11, size=(h, w)))
        assert resample_nearest(resample_nearest(g, factor, "up"), factor, "down") == g


class TestTileIter:
    def test_single_window(self):
        g = u8_grid(np.zeros((256, 256)))
        wins = list(tile_iter(g, 256, 0))
        assert len(wins) == 1
        assert wins[0][0] == (0, 0, 256, 256)

    def test_500_grid_9_windows(self):
        g = u8_grid(np.zeros((500, 500)))
        wins = list(tile_iter(g, 256, 32))
        assert len(wins) == 9
        visited = np.zeros((500, 500), dtype=bool)
        for (x0, y0, w, h), sub in wins:
            assert sub.data.shape[1:] == (h, w)
            visited[y0:y0 + h, x0:x0 + w] = True
        assert visited.all()

    def test_overlap_ge_tile_rejected(self):
        g = u8_grid(np.zeros((10, 10)))
        with pytest.raises(ConfigError):
            list(tile_iter(g, 4, 4))

    def test_row_major_order(self):
        g = u8_grid(np.zeros((10, 20)))
        origins = [w[:2] for w, _ in tile_iter(g, 8, 0)]
        assert origins == sorted(origins, key=lambda p: (p[1], p[0]))

    @given(h=st.integers(1, 40), w=st.integers(1, 40),
           tile=st.integers(1, 40), overlap=st.integers(0, 39))
    @settings(max_examples=80, deadline=None)
    def test_coverage_property(self, h, w, tile, overlap):
        g = u8_grid(np.zeros((h, w)))
        if overlap >= tile or tile > max(h, w):
            with pytest.raises(ConfigError):
                list(tile_iter(g, tile, overlap))
            return
        visited = np.zeros((h, w), dtype=np.int32)
        for (x0, y0, ww, hh), _ in tile_iter(g, tile, overlap):
            visited[y0:y0 + hh, x0:x0 + ww] += 1
        assert (visited >= 1).all()


class TestVectorLines:
    def test_round_trip(self, tmp_path):
        lines = VectorLines([[(0.5, 1.5), (9.5, 1.5)], [(1, 1), (2, 2), (3, 1)]],
                            [{"kind": "primary"}, {}])
        p = tmp_path / "roads.lines"
        write_lines(lines, p)
        back = read_lines(p)
        assert len(back.polylines) == 2
        np.testing.assert_allclose(back.polylines[0], lines.polylines[0])
        assert back.attributes[0] == {"kind": "primary"}

    def test_single_vertex_rejected(self):
        with pytest.raises(ShapeError):
            VectorLines([[(1, 1)]])

    def test_bad_line_file(self, tmp_path):
        p = tmp_path / "bad.lines"
        p.write_text("1,2 notanumber,4\n")
        with pytest.raises(FormatError):
            read_lines(p)
