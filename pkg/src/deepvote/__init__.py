"""Occlusion-robust semantic part detection by concept extraction and spatial voting."""

__version__ = "0.1.0"

from .checkpoint import load_checkpoint, save_checkpoint
from .detect import (Detection, DetectConfig, ScaleRegressor, decode_box, detect,
                     extract_peaks, fit_scale_regressor, nms, run_scene)
from .errors import ConfigError, DataError, DeepVoteError, GenerationError
from .evaluate import EvalReport, iou, match_and_ap, occlusion_sweep, peak_recall
from .explain import (VoteContribution, decompose_score, explain_report,
                      render_heatmap, top_responses_per_concept)
from .model import (DeepVotingModel, dice_coefficient, dice_loss_backward, forward,
                    make_label_cube, train_step)
from .ops import (SGD, ConvKernel, bilinear_resize, conv2d_backward, conv2d_forward,
                  dropout, gaussian_filter_2d, l2_normalize_locations, relu,
                  relu_backward)
from .scene import OcclusionInfo, PartInstance, SceneAnnotation, validate_annotation
from .synth import (ObjectTemplate, SynthConfig, apply_occlusion, dataset_generate,
                    generate_template, render_scene)
from .train import TrainConfig, fit_box_regressor, preprocess, train

__all__ = [
    "__version__",
    "SGD", "ConvKernel", "ConfigError", "DataError", "DeepVoteError", "GenerationError",
    "DeepVotingModel", "Detection", "DetectConfig", "EvalReport", "ObjectTemplate",
    "OcclusionInfo", "PartInstance", "ScaleRegressor", "SceneAnnotation", "SynthConfig",
    "TrainConfig", "VoteContribution",
    "apply_occlusion", "bilinear_resize", "conv2d_backward", "conv2d_forward",
    "dataset_generate", "decode_box", "decompose_score", "detect", "dice_coefficient",
    "dice_loss_backward", "dropout", "explain_report", "extract_peaks",
    "fit_box_regressor", "fit_scale_regressor", "forward", "gaussian_filter_2d",
    "generate_template", "iou", "l2_normalize_locations", "load_checkpoint",
    "make_label_cube", "match_and_ap", "nms", "occlusion_sweep", "peak_recall",
    "preprocess", "relu", "relu_backward", "render_heatmap", "render_scene",
    "run_scene", "save_checkpoint", "top_responses_per_concept", "train", "train_step",
    "validate_annotation",
]
