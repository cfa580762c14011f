"""Trainer tests: preprocessing modes, protocol enforcement, regressor fitting."""
import numpy as np
import pytest

from deepvote import io
from deepvote.checkpoint import load_checkpoint
from deepvote.errors import DataError
from deepvote.model import DeepVotingModel, forward
from deepvote.scene import (GRID_STRIDE, OcclusionInfo, PartInstance,
                            SceneAnnotation)
from deepvote.synth import SynthConfig, dataset_generate
from deepvote.train import (PreprocessedScene, TrainConfig, fit_box_regressor,
                            preprocess, train)


def normalized_grid(rng, h, w, d):
    g = rng.standard_normal((h, w, d)).astype(np.float32)
    return g / np.linalg.norm(g, axis=-1, keepdims=True)


def ann_with_box(box, parts=(), image_id="s"):
    instances = [PartInstance(pid, (cx, cy), (cx - 48.0, cy - 48.0, 96.0, 96.0))
                 for pid, cx, cy in parts]
    h_edge = min(box[2], box[3])
    return SceneAnnotation(image_id, box, h_edge / 448.0, instances, OcclusionInfo())


class TestPreprocess:
    def test_dv_plus_identity_at_canonical(self):
        rng = np.random.default_rng(0)
        grid = normalized_grid(rng, 28, 28, 16)
        ann = ann_with_box((64.0, 96.0, 224.0, 224.0))  # 14 cells short edge
        out = preprocess(grid, ann, "dv+", num_parts=1, sigma=1.0)
        np.testing.assert_array_equal(out.features, grid)
        assert out.zoom == (1.0, 1.0)

    def test_dv_plus_upsamples_small_object(self):
        rng = np.random.default_rng(1)
        grid = normalized_grid(rng, 28, 28, 8)
        ann = ann_with_box((32.0, 32.0, 112.0, 112.0))  # 7 cells -> zoom 2
        out = preprocess(grid, ann, "dv+", num_parts=1, sigma=1.0)
        assert out.features.shape == (56, 56, 8)
        norms = np.linalg.norm(out.features.astype(np.float64), axis=-1)
        np.testing.assert_allclose(norms, 1.0, atol=1e-5)

    def test_dv_crop_index_arithmetic(self):
        rng = np.random.default_rng(2)
        grid = normalized_grid(rng, 28, 28, 8)
        # object covers cells [4,18) x [6,20): 14x14 crop, zoom 1
        ann = ann_with_box((64.0, 96.0, 224.0, 224.0))
        out = preprocess(grid, ann, "dv", num_parts=1, sigma=1.0)
        assert out.features.shape == (14, 14, 8)
        np.testing.assert_array_equal(out.features, grid[6:20, 4:18])

    def test_dv_labels_in_cropped_frame(self):
        rng = np.random.default_rng(3)
        grid = normalized_grid(rng, 28, 28, 8)
        ann = ann_with_box((64.0, 96.0, 224.0, 224.0), parts=[(0, 160.0, 160.0)])
        out = preprocess(grid, ann, "dv", num_parts=1, sigma=1.0)
        # center (160,160) px -> cell (10,10) minus crop origin (4,6)
        peak = np.unravel_index(np.argmax(out.labels[:, :, 0]), out.labels.shape[:2])
        assert peak == (4, 6)

    def test_degenerate_box_rejected(self):
        rng = np.random.default_rng(4)
        grid = normalized_grid(rng, 8, 8, 4)
        ann = ann_with_box((0.0, 0.0, 0.0, 64.0))
        with pytest.raises(DataError):
            preprocess(grid, ann, "dv+", num_parts=1, sigma=1.0)


@pytest.fixture(scope="module")
def tiny_dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("tinydata")
    cfg = SynthConfig(n_train=6, n_test=3, feature_dim=32, num_parts=2,
                      num_patterns=6, seed=33)
    dataset_generate(cfg, out)
    return out


def tiny_train_config(**overrides):
    base = dict(mode="dv+", epochs=3, lr=0.01, momentum=0.9, weight_decay=1e-4,
                num_concepts=16, kernel_size=15, seed=5)
    base.update(overrides)
    return TrainConfig(**base)


class TestTrain:
    def test_loss_decreases(self, tiny_dataset, tmp_path):
        cfg = tiny_train_config(epochs=8)
        train(cfg, tiny_dataset, tmp_path / "run")
        log = io.read_json(tmp_path / "run" / "train_log.json")
        losses = [row["loss"] for row in log["history"]]
        assert losses[-1] < losses[0]

    def test_determinism_identical_checkpoint_bytes(self, tiny_dataset, tmp_path):
        cfg = tiny_train_config()
        p1 = train(cfg, tiny_dataset, tmp_path / "a")
        p2 = train(cfg, tiny_dataset, tmp_path / "b")
        assert p1.read_bytes() == p2.read_bytes()

    def test_occluded_scene_in_train_split_refused(self, tiny_dataset, tmp_path):
        import shutil
        data = tmp_path / "poisoned"
        shutil.copytree(tiny_dataset, data)
        # drop an occluded scene into the train split
        src = next((data / "test_l1").glob("*.dvfm")).with_suffix("")
        for ext in (".dvfm", ".json"):
            shutil.copy(src.with_suffix(ext), data / "train" / ("zzz_occ" + ext))
        with pytest.raises(DataError, match="occluded scene in training set"):
            train(tiny_train_config(), data, tmp_path / "run")

    def test_checkpoint_roundtrip_forward_identical(self, tiny_dataset, tmp_path):
        cfg = tiny_train_config()
        ckpt = train(cfg, tiny_dataset, tmp_path / "run")
        model, _, _ = load_checkpoint(ckpt)
        grid, _ = io.load_scene(next((tiny_dataset / "test_l0").glob("*.dvfm")).with_suffix(""))
        _, z1, _ = forward(model, grid)
        model2, _, _ = load_checkpoint(ckpt)
        _, z2, _ = forward(model2, grid)
        np.testing.assert_array_equal(z1, z2)

    def test_dv_equals_dvplus_when_object_fills_image(self, tmp_path):
        # hand-built dataset whose object box spans the whole grid
        rng = np.random.default_rng(8)
        data = tmp_path / "fulldata"
        (data / "train").mkdir(parents=True)
        for i in range(3):
            grid = normalized_grid(rng, 16, 16, 12)
            ann = SceneAnnotation(
                f"s{i}", (0.0, 0.0, 256.0, 256.0), 1.0,
                [PartInstance(0, (64.0, 64.0), (16.0, 16.0, 96.0, 96.0)),
                 PartInstance(1, (192.0, 160.0), (144.0, 112.0, 96.0, 96.0))],
                OcclusionInfo())
            io.write_dvfm(data / "train" / f"s{i}.dvfm", grid)
            io.write_annotation(data / "train" / f"s{i}.json", ann)
        cfg_dv = tiny_train_config(mode="dv", epochs=2, num_concepts=8)
        cfg_dvp = tiny_train_config(mode="dv+", epochs=2, num_concepts=8)
        p1 = train(cfg_dv, data, tmp_path / "dv")
        p2 = train(cfg_dvp, data, tmp_path / "dvp")
        t1 = io.read_checkpoint(p1)
        t2 = io.read_checkpoint(p2)
        # identical up to the embedded config hash (mode differs by definition)
        assert set(t1) == set(t2)
        for name in t1:
            if name == "config_hash":
                continue
            np.testing.assert_array_equal(t1[name], t2[name], err_msg=name)

    def test_missing_train_split(self, tmp_path):
        with pytest.raises(DataError):
            train(tiny_train_config(), tmp_path / "absent", tmp_path / "run")


class TestFitBoxRegressor:
    @staticmethod
    def _top_peak_scenario(model_seed, grid_seed):
        """A model/grid pair plus a tau selecting only the strongest peak."""
        from deepvote.detect import extract_peaks
        rng = np.random.default_rng(grid_seed)
        model = DeepVotingModel.initialize(8, 1, num_concepts=4, kernel_size=5,
                                           rng=model_seed)
        grid = normalized_grid(rng, 12, 12, 8)
        _, part_map, _ = forward(model, grid)
        (cx, cy), score = extract_peaks(part_map, tau=-1e9, part_id=0)[0]
        return model, grid, (cx, cy), score - 1e-6

    def test_centered_anchor_sized_gt_gives_near_zero_targets(self):
        model, grid, (cx, cy), tau = self._top_peak_scenario(1, 9)
        ax, ay = cx * GRID_STRIDE + 8, cy * GRID_STRIDE + 8
        ann = SceneAnnotation(
            "s", (0.0, 0.0, 192.0, 192.0), 1.0,
            [PartInstance(0, (float(ax), float(ay)),
                          (ax - 50.0, ay - 50.0, 100.0, 100.0))],
            OcclusionInfo())
        scene = PreprocessedScene(grid, np.zeros((12, 12, 1), np.float32), ann, (1.0, 1.0))
        reg = fit_box_regressor(model, [scene], tau=tau, match_iou=0.3)
        np.testing.assert_allclose(reg[0], 0.0, atol=1e-6)

    def test_shifted_gt_recovers_offset(self):
        model, grid, (cx, cy), tau = self._top_peak_scenario(2, 10)
        ax, ay = cx * GRID_STRIDE + 8, cy * GRID_STRIDE + 8
        ann = SceneAnnotation(
            "s", (0.0, 0.0, 192.0, 192.0), 1.0,
            [PartInstance(0, (ax + 16.0, float(ay)),
                          (ax + 16.0 - 50.0, ay - 50.0, 100.0, 100.0))],
            OcclusionInfo())
        scene = PreprocessedScene(grid, np.zeros((12, 12, 1), np.float32), ann, (1.0, 1.0))
        reg = fit_box_regressor(model, [scene], tau=tau, match_iou=0.3)
        assert reg[0, 0] == pytest.approx(0.16, abs=1e-6)
        assert reg[0, 2] == pytest.approx(0.0, abs=1e-6)

    def test_empty_match_set_identity_with_warning(self, caplog):
        model = DeepVotingModel.initialize(8, 2, num_concepts=4, kernel_size=5, rng=3)
        rng = np.random.default_rng(11)
        grid = normalized_grid(rng, 10, 10, 8)
        ann = SceneAnnotation("s", (0.0, 0.0, 160.0, 160.0), 1.0, [], OcclusionInfo())
        scene = PreprocessedScene(grid, np.zeros((10, 10, 2), np.float32), ann, (1.0, 1.0))
        import logging
        with caplog.at_level(logging.WARNING, logger="deepvote.train"):
            reg = fit_box_regressor(model, [scene])
        assert not reg.any()
        assert any("no matched peaks" in rec.message for rec in caplog.records)
