"""The desk benchmark: a small, fast synthetic dataset with pinned settings.

Six-part object, 100 train scenes (occlusion-free) and 100 test scenes per
occlusion level, with feature and concept counts sized so a full synth ->
train -> sweep cycle runs in minutes on a laptop CPU.  Every value here is
part of the benchmark definition; override via config files for experiments.
"""
from __future__ import annotations

DESK_SEED = 7


def desk_benchmark_config(seed: int = DESK_SEED) -> dict:
    return {
        "synth.grid_w": 28,
        "synth.grid_h": 28,
        "synth.feature_dim": 64,
        "synth.num_parts": 6,
        "synth.num_patterns": 36,
        "synth.noise_sigma": 0.04,
        "synth.scale_min": 0.6,
        "synth.scale_max": 1.0,
        "synth.n_train": 100,
        "synth.n_test": 100,
        "synth.seed": seed,
        "train.mode": "dv+",
        "train.epochs": 24,
        "train.lr": 0.01,
        "train.momentum": 0.9,
        "train.weight_decay": 1e-4,
        "train.num_concepts": 64,
        "train.kernel_size": 15,
        "train.sigma_label": 1.0,
        "train.seed": seed,
        "detect.tau": 0.1,
        "detect.nms_iou": 0.3,
    }


def tiny_config(seed: int = 11) -> dict:
    """A seconds-scale variant for smoke and determinism checks."""
    cfg = desk_benchmark_config(seed)
    cfg.update({
        "synth.n_train": 6,
        "synth.n_test": 4,
        "synth.feature_dim": 32,
        "synth.num_parts": 2,
        "synth.num_patterns": 6,
        "train.epochs": 3,
        "train.num_concepts": 16,
    })
    return cfg
