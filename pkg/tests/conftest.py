"""Session-scoped desk-benchmark fixtures shared by acceptance and property tests.

The benchmark (synth -> train -> sweeps) runs once per pytest session, on
first use; expect a few minutes of wall time when the acceptance module is
included in the run.
"""
import time

import numpy as np
import pytest

from deepvote.benchmark import desk_benchmark_config
from deepvote.checkpoint import load_checkpoint
from deepvote.detect import DetectConfig
from deepvote.evaluate import occlusion_sweep
from deepvote.synth import SynthConfig, dataset_generate
from deepvote.train import TrainConfig, train


@pytest.fixture(scope="session")
def desk_flat():
    return desk_benchmark_config()


@pytest.fixture(scope="session")
def desk_root(tmp_path_factory, desk_flat):
    """Dataset plus trained model; records the synth+train wall time."""
    root = tmp_path_factory.mktemp("desk")
    t0 = time.monotonic()
    dataset_generate(SynthConfig.from_flat(desk_flat), root / "data")
    train(TrainConfig.from_flat(desk_flat), root / "data", root / "run")
    (root / "train_seconds.txt").write_text(str(time.monotonic() - t0))
    return root


@pytest.fixture(scope="session")
def desk_train_seconds(desk_root):
    return float((desk_root / "train_seconds.txt").read_text())


@pytest.fixture(scope="session")
def desk_model(desk_root):
    model, scale_reg, config_hash = load_checkpoint(desk_root / "run" / "model.dvck")
    return model, scale_reg, config_hash


@pytest.fixture(scope="session")
def desk_detect_cfg(desk_flat):
    return DetectConfig.from_flat(desk_flat)


@pytest.fixture(scope="session")
def desk_sweep_pred(desk_root, desk_model, desk_detect_cfg):
    model, scale_reg, _ = desk_model
    return occlusion_sweep(model, scale_reg, desk_root / "data", desk_detect_cfg)


@pytest.fixture(scope="session")
def desk_sweep_gt(desk_root, desk_model, desk_detect_cfg):
    model, scale_reg, _ = desk_model
    cfg = DetectConfig(tau=desk_detect_cfg.tau, nms_iou=desk_detect_cfg.nms_iou,
                       scale_source="ground_truth")
    return occlusion_sweep(model, scale_reg, desk_root / "data", cfg, with_baseline=False)


@pytest.fixture(scope="session")
def desk_k11_sweep(desk_root, desk_flat, desk_detect_cfg):
    """The kernel-size-11 counterpart trained on the same dataset."""
    flat = dict(desk_flat)
    flat["train.kernel_size"] = 11
    train(TrainConfig.from_flat(flat), desk_root / "data", desk_root / "run_k11")
    model, scale_reg, _ = load_checkpoint(desk_root / "run_k11" / "model.dvck")
    return occlusion_sweep(model, scale_reg, desk_root / "data", desk_detect_cfg,
                           with_baseline=False)


@pytest.fixture(scope="session")
def desk_template(desk_flat):
    from deepvote.synth import generate_template

    cfg = SynthConfig.from_flat(desk_flat)
    return generate_template(
        np.random.SeedSequence([cfg.seed, 100]).generate_state(1)[0],
        cfg.num_parts, cfg.num_patterns, cfg.feature_dim,
        extent=(cfg.extent, cfg.extent),
        max_pattern_dot=cfg.max_pattern_dot,
        with_surface=cfg.surface_intensity > 0,
        with_context=cfg.context,
        part_box_range=(cfg.part_box_min, cfg.part_box_max),
    )
