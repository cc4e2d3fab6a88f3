import json

import numpy as np
import pytest

from l2hmap.assessment import ConfusionMatrix, write_confusion_csv
from l2hmap.cli import main
from l2hmap.grid import DEFAULT_SCHEME, UNLABELED, read_grid

from tests.test_assess import CLASS_NAMES, VALIDATION_COUNTS

TINY_SCENE = """\
scene_width = 100
scene_height = 100
scene_classes = 3
scene_sigma = 0.05
scene_delta = 0.1
scene_seed = 11
scene_roads = 1
scene_road_width = 4
scene_smoothness = 10.0
"""

TINY_RUN = TINY_SCENE + """\
net_blocks = 1
net_kernels = [1, 3]
net_channels = [3, 2]
train_patch_size = 50
train_batch_size = 2
train_epochs = 2
train_learning_rate = 0.2
train_warmup_steps = 4
loss_tau = 0.6
mosaic_tile = 64
assess_points = 50
"""


def run(*argv):
    return main(list(argv))


class TestDispatch:
    def test_no_arguments_usage_exit_2(self, capsys):
        assert run() == 2
        assert "usage" in capsys.readouterr().err

    def test_module_error_exit_1(self, capsys):
        assert run("assess", "metrics") == 1
        err = capsys.readouterr().err
        assert "error:" in err and "--matrix" in err

    def test_unknown_config_key_exit_1(self, tmp_path, capsys):
        bad = tmp_path / "bad.toml"
        bad.write_text("no_such_key = 1\n")
        assert run("synth", "--spec", str(bad), "--out", str(tmp_path / "o")) == 1
        assert "no_such_key" in capsys.readouterr().err


class TestSynth:
    def test_outputs_and_determinism(self, tmp_path):
        spec = tmp_path / "scene.toml"
        spec.write_text(TINY_SCENE)
        for d in ("s1", "s2"):
            assert run("synth", "--spec", str(spec), "--out", str(tmp_path / d)) == 0
        names = ["image.lcr", "truth.lcr", "product_a.lcr", "product_b.lcr",
                 "product_c.lcr", "roads.lines", "run_manifest.json"]
        for n in names:
            assert (tmp_path / "s1" / n).exists()
        for n in names[:-1]:  # manifest carries a timestamp
            assert (tmp_path / "s1" / n).read_bytes() == \
                (tmp_path / "s2" / n).read_bytes()
        img = read_grid(tmp_path / "s1" / "image.lcr")
        assert img.data.shape == (3, 100, 100)

    def test_manifest_contents(self, tmp_path):
        spec = tmp_path / "scene.toml"
        spec.write_text(TINY_SCENE)
        run("synth", "--spec", str(spec), "--out", str(tmp_path / "s"))
        m = json.loads((tmp_path / "s" / "run_manifest.json").read_text())
        assert m["command"] == "synth"
        assert m["config"]["scene_seed"] == 11
        assert m["seeds"]["scene_seed"] == 11
        assert str(spec) in m["inputs"]
        assert len(m["config_hash"]) == 64


class TestFuse:
    def scene(self, tmp_path):
        spec = tmp_path / "scene.toml"
        spec.write_text(TINY_SCENE)
        run("synth", "--spec", str(spec), "--out", str(tmp_path / "s"))
        return tmp_path / "s"

    def test_fuse_writes_labels_and_report(self, tmp_path):
        s = self.scene(tmp_path)
        out = tmp_path / "labels.lcr"
        rep = tmp_path / "report.json"
        assert run("fuse", "--a", str(s / "product_a.lcr"),
                   "--b", str(s / "product_b.lcr"),
                   "--c", str(s / "product_c.lcr"),
                   "--roads", str(s / "roads.lines"),
                   "--classes", "3", "--road-width", "3",
                   "--out", str(out), "--report", str(rep)) == 0
        labels = read_grid(out)
        assert labels.data.shape == (1, 10, 10)  # coarse 10 m grid
        assert labels.band(0).max() <= 3
        report = json.loads(rep.read_text())
        assert report["total_pixels"] == 100
        assert 0 < report["stable_pixels"] <= 100
        assert report["road_pixels"] > 0
        assert (tmp_path / "labels.manifest.json").exists()


class TestAssessMetrics:
    def test_published_matrix_stdout(self, tmp_path, capsys):
        p = tmp_path / "cm.csv"
        write_confusion_csv(ConfusionMatrix(VALIDATION_COUNTS.copy(),
                                            CLASS_NAMES), p)
        mjson = tmp_path / "metrics.json"
        assert run("assess", "metrics", "--matrix", str(p),
                   "--out", str(mjson), "--fig", str(tmp_path / "cm.png")) == 0
        out = capsys.readouterr().out
        assert "OA 73.61" in out
        assert "Kappa 0.6595" in out
        m = json.loads(mjson.read_text())
        assert m["oa"] == pytest.approx(0.7361, abs=1e-4)
        assert (tmp_path / "cm.png").stat().st_size > 0


class TestNetInspect:
    def test_default_config_description(self, capsys):
        assert run("net", "inspect") == 0
        out = capsys.readouterr().out
        assert "block1" in out and "head" in out
        assert "340,955" in out or "340955" in out


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("cli_run")
    cfg = tmp / "run.toml"
    cfg.write_text(TINY_RUN)
    spec_only = tmp / "scene.toml"
    spec_only.write_text(TINY_SCENE)
    run("synth", "--spec", str(spec_only), "--out", str(tmp / "scene"))
    s = tmp / "scene"
    run("fuse", "--a", str(s / "product_a.lcr"),
        "--b", str(s / "product_b.lcr"), "--c", str(s / "product_c.lcr"),
        "--classes", "3", "--out", str(tmp / "labels.lcr"))
    return tmp, cfg


class TestTrainPredictAssess:
    def test_train_then_predict(self, workspace):
        tmp, cfg = workspace
        assert run("train", "--image", str(tmp / "scene" / "image.lcr"),
                   "--labels", str(tmp / "labels.lcr"),
                   "--config", str(cfg), "--out", str(tmp / "model")) == 0
        assert (tmp / "model" / "checkpoint.l2hp").exists()
        assert (tmp / "model" / "training_curves.png").stat().st_size > 0
        log_lines = (tmp / "model" / "train_log.jsonl").read_text().splitlines()
        assert log_lines and all("ce" in json.loads(l) for l in log_lines)

        assert run("predict", "--checkpoint", str(tmp / "model" / "checkpoint.l2hp"),
                   "--image", str(tmp / "scene" / "image.lcr"),
                   "--tile", "64", "--out", str(tmp / "pred")) == 0
        cmap = read_grid(tmp / "pred" / "class_map.lcr")
        assert cmap.data.shape == (1, 100, 100)
        assert cmap.band(0).min() >= 1 and cmap.band(0).max() <= 3
        legend = json.loads((tmp / "pred" / "legend.json").read_text())
        assert set(legend) == {"0", "1", "2", "3"}
        assert (tmp / "pred" / "class_map.png").stat().st_size > 0

    def test_assess_matrix_on_prediction(self, workspace, capsys):
        tmp, cfg = workspace
        if not (tmp / "pred" / "class_map.lcr").exists():
            pytest.skip("predict step did not run first")
        out = tmp / "conf.csv"
        assert run("assess", "matrix", "--map", str(tmp / "pred" / "class_map.lcr"),
                   "--reference", str(tmp / "scene" / "truth.lcr"),
                   "--points", "60", "--classes", "3", "--out", str(out)) == 0
        text = out.read_text()
        assert text.count("\n") >= 4  # header + 3 class rows


class TestPipeline:
    def test_small_end_to_end(self, tmp_path, capsys):
        cfg = tmp_path / "run.toml"
        cfg.write_text(TINY_RUN)
        out = tmp_path / "run"
        assert run("pipeline", "--config", str(cfg), "--out", str(out)) == 0
        stdout = capsys.readouterr().out
        assert "OA " in stdout and "pixel OA " in stdout
        m = json.loads((out / "metrics.json").read_text())
        for key in ("oa", "kappa", "pixel_oa", "ce_epoch_means"):
            assert key in m
        assert len(m["ce_epoch_means"]) == 2
        for n in ("labels.lcr", "checkpoint.l2hp", "train_log.jsonl",
                  "training_curves.png", "class_map.lcr", "class_map.png",
                  "max_prob.lcr", "confusion.csv", "confusion.png",
                  "legend.json", "fusion_report.json", "run_manifest.json"):
            assert (out / n).exists(), n

    def test_seed_override_changes_scene(self, tmp_path):
        cfg = tmp_path / "run.toml"
        cfg.write_text(TINY_RUN)
        run("pipeline", "--config", str(cfg), "--seed", "1",
            "--out", str(tmp_path / "a"))
        run("pipeline", "--config", str(cfg), "--seed", "2",
            "--out", str(tmp_path / "b"))
        ia = read_grid(tmp_path / "a" / "scene" / "image.lcr")
        ib = read_grid(tmp_path / "b" / "scene" / "image.lcr")
        assert not np.array_equal(ia.data, ib.data)
