import numpy as np
import pytest

from l2hmap.assessment import (ConfusionMatrix, area_misestimation, confusion,
                               largest_remainder, lookup_classes, metrics,
                               read_confusion_csv, read_reference_csv,
                               sample_points, write_area_csv,
                               write_confusion_csv)
from l2hmap.errors import ConfigError, EmptyMatrixError, UnknownClassError
from l2hmap.grid import DEFAULT_SCHEME, GeoRef, RasterGrid

# Published national validation confusion matrix (rows = map class,
# columns = reference class, order TR..M&L), used as a metrics fixture.
VALIDATION_COUNTS = np.array([
    [447,   173,   5,    209,   184,   228,  240,   0,   28,   0,   0],
    [37,  20708,  14,   2713,  1899,   124,  134,   0,  352,   5,  52],
    [0,      25, 270,     74,    27,     2,  102,   0,    1,   0,   0],
    [9,    1332,  35,  17256,  1837,   119, 2848,   0,   75,  11, 401],
    [53,   1310,  45,   1976, 11424,   275,  857,   0,  119,  16,   0],
    [57,     83,   3,     72,   274,  1128,  122,   0,    8,   0,   0],
    [50,    209,  23,   5643,  1031,   418, 24546,  3,   93,   1, 194],
    [0,       2,   0,     94,     7,     0,   51, 135,    2,   0,  92],
    [2,      21,   0,     39,   105,    12,   59,   0, 1493,   1,   2],
    [0,      37,  11,     46,    28,     3,    7,   0,   14, 135,   0],
    [0,      22,   2,    698,    18,     2,  455,   2,    5,   0, 733],
], dtype=np.int64)

CLASS_NAMES = [c.name for c in DEFAULT_SCHEME.classes]


def u8(values, **kw):
    return RasterGrid(np.asarray(values, dtype=np.uint8), **kw)


class TestValidationMatrix:
    def cm(self):
        return ConfusionMatrix(VALIDATION_COUNTS.copy(), CLASS_NAMES)

    def test_totals(self):
        cm = self.cm()
        assert cm.total == 106344
        assert cm.counts.sum(axis=1).tolist() == [
            1514, 26038, 501, 23923, 16075, 1747, 32211, 383, 1734, 281, 1937]
        assert cm.counts.sum(axis=0).tolist() == [
            655, 23922, 408, 28820, 16834, 2311, 29421, 140, 2190, 169, 1474]

    def test_reported_metrics(self):
        m = metrics(self.cm())
        assert m["oa"] * 100 == pytest.approx(73.61, abs=0.01)
        assert m["kappa"] == pytest.approx(0.6595, abs=0.0005)
        assert m["map_side_accuracy"]["TC"] * 100 == pytest.approx(79.53, abs=0.01)

    def test_csv_round_trip(self, tmp_path):
        p = tmp_path / "cm.csv"
        write_confusion_csv(self.cm(), p)
        back = read_confusion_csv(p)
        assert back.class_names == CLASS_NAMES
        assert np.array_equal(back.counts, VALIDATION_COUNTS)


class TestMetrics:
    def test_identity_matrix(self):
        cm = ConfusionMatrix(np.diag([5, 7, 9]).astype(np.int64), list("abc"))
        m = metrics(cm)
        assert m["oa"] == 1.0 and m["kappa"] == 1.0

    def test_rows_proportional_to_marginals_kappa_zero(self):
        col = np.array([10, 20, 70], dtype=np.float64)
        counts = np.outer([30, 30, 40], col / col.sum()).astype(np.int64) * 10
        # exact proportionality: build directly from the outer product
        counts = np.outer([3, 3, 4], [1, 2, 7]).astype(np.int64)
        m = metrics(ConfusionMatrix(counts, list("abc")))
        assert m["kappa"] == pytest.approx(0.0, abs=1e-12)

    def test_empty_matrix(self):
        with pytest.raises(EmptyMatrixError):
            metrics(ConfusionMatrix(np.zeros((2, 2), dtype=np.int64), list("ab")))

    def test_kappa_bounds_random_matrices(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            counts = rng.integers(0, 50, size=(4, 4)).astype(np.int64)
            if counts.sum() == 0:
                continue
            m = metrics(ConfusionMatrix(counts, list("abcd")))
            assert -1.0 <= m["kappa"] <= 1.0
            offdiag = counts.sum() - np.trace(counts)
            if m["kappa"] == pytest.approx(1.0):
                assert offdiag == 0

    def test_permutation_invariance(self):
        rng = np.random.default_rng(1)
        counts = rng.integers(0, 40, size=(5, 5)).astype(np.int64)
        perm = rng.permutation(5)
        a = metrics(ConfusionMatrix(counts, list("abcde")))
        b = metrics(ConfusionMatrix(counts[np.ix_(perm, perm)], list("abcde")))
        assert a["oa"] == pytest.approx(b["oa"])
        assert a["kappa"] == pytest.approx(b["kappa"])

    def test_empty_marginal_reported_as_nan(self):
        counts = np.array([[4, 0], [0, 0]], dtype=np.int64)
        m = metrics(ConfusionMatrix(counts, list("ab")))
        assert np.isnan(m["map_side_accuracy"]["b"])


class TestSamplePoints:
    def grid(self):
        vals = np.concatenate([np.full(50, 1), np.full(30, 2), np.full(20, 3)])
        return u8(vals.reshape(10, 10))

    def test_deterministic(self):
        a = sample_points(self.grid(), 10, seed=3)
        b = sample_points(self.grid(), 10, seed=3)
        assert [(p.x, p.y, p.map_class) for p in a] == \
            [(p.x, p.y, p.map_class) for p in b]

    def test_single_class_stratified(self):
        g = u8(np.full((5, 5), 4))
        pts = sample_points(g, 10, seed=0, strategy="stratified-by-class")
        assert len(pts) == 10
        assert all(p.map_class == 4 for p in pts)

    def test_stratified_largest_remainder(self):
        pts = sample_points(self.grid(), 10, seed=1, strategy="stratified-by-class")
        counts = {c: sum(p.map_class == c for p in pts) for c in (1, 2, 3)}
        assert counts == {1: 5, 2: 3, 3: 2}

    def test_largest_remainder_exact(self):
        assert largest_remainder([0.5, 0.3, 0.2], 10).tolist() == [5, 3, 2]
        assert largest_remainder([1 / 3, 1 / 3, 1 / 3], 10).sum() == 10

    def test_uniform_without_replacement_cap(self):
        with pytest.raises(ConfigError):
            sample_points(u8(np.ones((2, 2))), 5, seed=0)

    def test_points_inside_extent(self):
        g = u8(np.ones((4, 6)), georef=GeoRef(100.0, 200.0, 2.0, -2.0))
        for p in sample_points(g, 10, seed=2):
            assert 100.0 <= p.x <= 112.0
            assert 192.0 <= p.y <= 200.0


class TestConfusion:
    def test_all_agree_diagonal(self):
        from l2hmap.assessment import SamplePoint
        pts = [SamplePoint(0, 0, reference_class=2, map_class=2) for _ in range(5)]
        cm = confusion(pts, DEFAULT_SCHEME)
        assert cm.counts[1, 1] == 5 and cm.total == 5

    def test_empty_list_zero_matrix(self):
        cm = confusion([], DEFAULT_SCHEME)
        assert cm.total == 0

    def test_marginals_match_tallies(self):
        from l2hmap.assessment import SamplePoint
        rng = np.random.default_rng(4)
        pts = [SamplePoint(0, 0, reference_class=int(rng.integers(1, 5)),
                           map_class=int(rng.integers(1, 5))) for _ in range(200)]
        cm = confusion(pts, DEFAULT_SCHEME)
        for c in range(1, 5):
            assert cm.counts[c - 1].sum() == sum(p.map_class == c for p in pts)
            assert cm.counts[:, c - 1].sum() == sum(p.reference_class == c for p in pts)

    def test_unknown_class(self):
        from l2hmap.assessment import SamplePoint
        with pytest.raises(UnknownClassError):
            confusion([SamplePoint(0, 0, reference_class=99, map_class=1)],
                      DEFAULT_SCHEME)

    def test_map_equals_truth_gives_oa_one(self):
        rng = np.random.default_rng(6)
        g = u8(rng.integers(1, 6, size=(20, 20)))
        pts = sample_points(g, 50, seed=1)
        lookup_classes(g, pts, target="reference")
        m = metrics(confusion(pts, DEFAULT_SCHEME))
        assert m["oa"] == 1.0


class TestAreaMisestimation:
    def test_reference_equal_to_map_zero_delta(self):
        g = u8([[1, 1, 2, 2]])
        regions = u8([[7, 7, 7, 7]])
        ref = {7: {1: 0.5, 2: 0.5}}
        stats = area_misestimation(g, regions, ref)
        assert stats[0].misestimation == {1: 0.0, 2: 0.0}

    def test_single_region_hand_example(self):
        vals = np.concatenate([np.full(60, 2), np.full(40, 4)]).reshape(10, 10)
        g = u8(vals)
        regions = u8(np.ones((10, 10)))
        stats = area_misestimation(g, regions, {1: {2: 0.5, 4: 0.5}})
        assert stats[0].misestimation[2] == pytest.approx(0.10)
        assert stats[0].misestimation[4] == pytest.approx(-0.10)

    def test_fractions_sum_to_one(self):
        rng = np.random.default_rng(7)
        g = u8(rng.integers(1, 6, size=(30, 30)))
        regions = u8(rng.integers(1, 4, size=(30, 30)))
        stats = area_misestimation(g, regions, {})
        for st in stats:
            assert sum(st.map_fractions.values()) == pytest.approx(1.0, abs=1e-9)

    def test_missing_reference_region_listed(self):
        g = u8([[1, 2]])
        regions = u8([[1, 2]])
        stats = area_misestimation(g, regions, {1: {1: 1.0}})
        by_region = {st.region: st for st in stats}
        assert by_region[2].ref_fractions is None
        assert by_region[2].misestimation is None

    def test_csv_output(self, tmp_path):
        g = u8([[1, 1, 2, 2]])
        regions = u8([[3, 3, 3, 3]])
        stats = area_misestimation(g, regions, {3: {1: 0.25, 2: 0.75}})
        p = tmp_path / "areas.csv"
        write_area_csv(stats, DEFAULT_SCHEME, p)
        text = p.read_text()
        assert "region,class,class_name,map_fraction,ref_fraction,delta" in text
        assert "3,1,TR," in text

    def test_reference_csv(self, tmp_path):
        p = tmp_path / "ref.csv"
        p.write_text("region,class,fraction\n1,2,0.6\n1,4,0.4\n")
        assert read_reference_csv(p) == {1: {2: 0.6, 4: 0.4}}
