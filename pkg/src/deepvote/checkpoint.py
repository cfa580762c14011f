"""Model bundle (head + regressors + config hash) over the named-tensor format."""
from __future__ import annotations

import numpy as np

from .detect import ScaleRegressor
from .errors import DataError
from .io import read_checkpoint, write_checkpoint
from .model import DeepVotingModel
from .ops import ConvKernel

_REQUIRED = ("concept_w", "concept_b", "voting_w", "voting_b",
             "box_regressor", "dropout_p", "scale_w", "scale_b")


def save_checkpoint(path, model: DeepVotingModel, scale_reg: ScaleRegressor,
                    config_hash_hex: str = "") -> None:
    tensors = {
        "concept_w": model.concept.weights,
        "concept_b": model.concept.bias,
        "voting_w": model.voting.weights,
        "voting_b": model.voting.bias,
        "box_regressor": model.box_regressor,
        "dropout_p": np.array([model.dropout_p], np.float32),
        "scale_w": scale_reg.weights,
        "scale_b": np.array([scale_reg.bias], np.float32),
        "config_hash": np.array([ord(c) for c in config_hash_hex], np.float32),
    }
    write_checkpoint(path, tensors)


def load_checkpoint(path) -> tuple[DeepVotingModel, ScaleRegressor, str]:
    tensors = read_checkpoint(path)
    missing = [name for name in _REQUIRED if name not in tensors]
    if missing:
        raise DataError(f"{path}: checkpoint missing tensors {missing}")
    model = DeepVotingModel(
        concept=ConvKernel(tensors["concept_w"], tensors["concept_b"]),
        voting=ConvKernel(tensors["voting_w"], tensors["voting_b"]),
        dropout_p=float(tensors["dropout_p"][0]),
        box_regressor=tensors["box_regressor"],
    )
    scale_reg = ScaleRegressor(weights=tensors["scale_w"], bias=float(tensors["scale_b"][0]))
    hash_codes = tensors.get("config_hash", np.zeros(0, np.float32))
    config_hash_hex = "".join(chr(int(c)) for c in hash_codes)
    return model, scale_reg, config_hash_hex
