"""The two-layer voting head: concept extraction, spatial voting, dice loss.

The head is a 1x1 convolution over normalized feature vectors (template
matching against learned concept vectors) followed by ReLU and dropout, then
a large-support KxK convolution whose kernel slices act as per-(concept, part)
vote maps.  Training maximizes the dice overlap between the part map and a
Gaussian-smoothed label cube.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .ops import (SGD, ConvKernel, conv2d_backward, conv2d_forward, dropout,
                  gaussian_filter_2d, relu, relu_backward)
from .scene import SceneAnnotation, px_to_cell

DEFAULT_NUM_CONCEPTS = 256
DEFAULT_KERNEL_SIZE = 15
DEFAULT_DROPOUT = 0.5
DICE_EPS = 1e-6


@dataclass
class DeepVotingModel:
    """Learned parameters of the voting detector head.

    ``concept`` is a 1x1xDx|V| kernel (one unit-ish template per concept
    channel), ``voting`` a KxKx|V|x|S| kernel of signed vote weights, and
    ``box_regressor`` an (|S|, 4) array of per-part anchor corrections
    (dx, dy, dlogw, dlogh) in the fixed-anchor parameterization.
    """

    concept: ConvKernel
    voting: ConvKernel
    dropout_p: float
    box_regressor: np.ndarray

    def __post_init__(self):
        if self.concept.kh != 1 or self.concept.kw != 1:
            raise ConfigError("concept kernel must be 1x1")
        if self.voting.kh != self.voting.kw or self.voting.kh % 2 == 0:
            raise ConfigError("voting kernel must be square with odd extent")
        if self.voting.cin != self.concept.cout:
            raise ConfigError("voting kernel cin must equal number of concepts")
        if self.box_regressor.shape != (self.voting.cout, 4):
            raise ConfigError(
                f"box regressor shape {self.box_regressor.shape} != ({self.voting.cout}, 4)"
            )

    @property
    def feature_dim(self) -> int:
        return self.concept.cin

    @property
    def num_concepts(self) -> int:
        return self.concept.cout

    @property
    def num_parts(self) -> int:
        return self.voting.cout

    @property
    def kernel_size(self) -> int:
        return self.voting.kh

    @classmethod
    def initialize(
        cls,
        feature_dim: int,
        num_parts: int,
        num_concepts: int = DEFAULT_NUM_CONCEPTS,
        kernel_size: int = DEFAULT_KERNEL_SIZE,
        dropout_p: float = DEFAULT_DROPOUT,
        rng=0,
    ) -> "DeepVotingModel":
        """Fresh model: unit-norm random concept templates, near-zero votes."""
        gen = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
        cw = gen.standard_normal((1, 1, feature_dim, num_concepts)) / np.sqrt(feature_dim)
        cw /= np.linalg.norm(cw[0, 0], axis=0, keepdims=True)
        vw = gen.uniform(-0.01, 0.01, (kernel_size, kernel_size, num_concepts, num_parts))
        return cls(
            concept=ConvKernel(cw.astype(np.float32), np.zeros(num_concepts, np.float32)),
            voting=ConvKernel(vw.astype(np.float32), np.zeros(num_parts, np.float32)),
            dropout_p=dropout_p,
            box_regressor=np.zeros((num_parts, 4), np.float32),
        )

    def params(self) -> dict[str, np.ndarray]:
        return {
            "concept_w": self.concept.weights,
            "concept_b": self.concept.bias,
            "voting_w": self.voting.weights,
            "voting_b": self.voting.bias,
        }

    def copy(self) -> "DeepVotingModel":
        return DeepVotingModel(self.concept.copy(), self.voting.copy(),
                               self.dropout_p, self.box_regressor.copy())


@dataclass
class ForwardCache:
    """Intermediates kept for the backward pass and for score explanations."""

    features: np.ndarray
    pre_relu: np.ndarray
    concept_map: np.ndarray   # Y, post-ReLU
    concept_used: np.ndarray  # Y', post-dropout in training, == Y otherwise
    mask: np.ndarray
    part_map: np.ndarray      # Z
    training: bool


def forward(
    model: DeepVotingModel, features: np.ndarray, training: bool = False, rng=0
) -> tuple[np.ndarray, np.ndarray, ForwardCache]:
    """Run the head: returns (concept map Y, part map Z, cache).

    ``features`` must be per-location l2-normalized with D channels.  In
    training mode dropout is applied between the layers using ``rng``.
    """
    if features.ndim != 3 or features.shape[2] != model.feature_dim:
        raise ConfigError(
            f"features shape {features.shape} incompatible with feature_dim {model.feature_dim}"
        )
    pre = conv2d_forward(features, model.concept)
    concept_map = relu(pre)
    if training:
        used, mask = dropout(concept_map, model.dropout_p, rng, training=True)
    else:
        used, mask = concept_map, np.ones_like(concept_map)
    part_map = conv2d_forward(used, model.voting)
    cache = ForwardCache(features, pre, concept_map, used, mask, part_map, training)
    return concept_map, part_map, cache


def dice_coefficient(part_map: np.ndarray, labels: np.ndarray, eps: float = DICE_EPS) -> float:
    """Mean-over-parts dice overlap between prediction and label cube.

    Per channel: (2*sum(z*l) + eps) / (sum(z^2 + l^2) + eps).  The eps in both
    places makes an empty channel (z = l = 0) score 1 rather than 0/0.  Values
    are only guaranteed in [0, 1] for nonnegative z; votes can be negative and
    the training loss (1 - dice) is optimized on the raw map.
    """
    if part_map.shape != labels.shape:
        raise ConfigError(f"shape mismatch {part_map.shape} vs {labels.shape}")
    if eps <= 0:
        raise ConfigError("eps must be positive")
    z = part_map.astype(np.float64)
    l = labels.astype(np.float64)
    num = 2.0 * (z * l).sum(axis=(0, 1)) + eps
    den = (z * z + l * l).sum(axis=(0, 1)) + eps
    return float((num / den).mean())


def dice_loss_backward(part_map: np.ndarray, labels: np.ndarray,
                       eps: float = DICE_EPS) -> np.ndarray:
    """Gradient of (1 - dice) with respect to the part map.

    With num_s = 2*sum(z*l) + eps and den_s = sum(z^2 + l^2) + eps, the
    quotient rule gives d(num/den)/dz = (2*l*den - 2*z*num) / den^2, and the
    channel mean contributes 1/|S|; the loss negates it.
    """
    if part_map.shape != labels.shape:
        raise ConfigError(f"shape mismatch {part_map.shape} vs {labels.shape}")
    if eps <= 0:
        raise ConfigError("eps must be positive")
    z = part_map.astype(np.float64)
    l = labels.astype(np.float64)
    num = 2.0 * (z * l).sum(axis=(0, 1)) + eps
    den = (z * z + l * l).sum(axis=(0, 1)) + eps
    grad_dice = (2.0 * l * den - 2.0 * z * num) / (den * den) / part_map.shape[2]
    return (-grad_dice).astype(part_map.dtype)


def head_backward(
    model: DeepVotingModel, cache: ForwardCache, grad_part_map: np.ndarray
) -> tuple[dict[str, np.ndarray], np.ndarray]:
    """Backprop a part-map gradient through both layers.

    Returns (parameter gradients keyed like ``model.params()``, gradient with
    respect to the input features).
    """
    grad_used, grad_vw, grad_vb = conv2d_backward(cache.concept_used, model.voting, grad_part_map)
    grad_concept = grad_used * cache.mask if cache.training else grad_used
    grad_pre = relu_backward(cache.pre_relu, grad_concept)
    grad_x, grad_cw, grad_cb = conv2d_backward(cache.features, model.concept, grad_pre)
    grads = {
        "concept_w": grad_cw,
        "concept_b": grad_cb,
        "voting_w": grad_vw,
        "voting_b": grad_vb,
    }
    return grads, grad_x


def make_label_cube(
    ann: SceneAnnotation, grid_w: int, grid_h: int, num_parts: int, sigma: float
) -> np.ndarray:
    """Build the (H, W, |S|) training target from part center annotations.

    Each part center lands on its nearest grid cell (pixel / 16, clamped to
    the grid); the binary plane per part is then Gaussian-smoothed with its
    peak rescaled back to 1.
    """
    binary = np.zeros((grid_h, grid_w, num_parts), np.float32)
    for part in ann.parts:
        if not 0 <= part.part_id < num_parts:
            raise ConfigError(f"unknown part id {part.part_id} (num_parts={num_parts})")
        cx = min(max(px_to_cell(part.center[0]), 0), grid_w - 1)
        cy = min(max(px_to_cell(part.center[1]), 0), grid_h - 1)
        binary[cy, cx, part.part_id] = 1.0
    cube = np.zeros_like(binary)
    for s in range(num_parts):
        if binary[:, :, s].any():
            cube[:, :, s] = gaussian_filter_2d(binary[:, :, s], sigma)
    return cube


def train_step(
    model: DeepVotingModel,
    batch: list[tuple[np.ndarray, np.ndarray]],
    optimizer: SGD,
    rng_seed: int = 0,
) -> float:
    """One SGD step on a batch of (features, label cube) pairs.

    Runs the training-mode forward pass per scene, averages the dice loss,
    accumulates gradients, and applies the optimizer.  Returns the pre-update
    mean loss.  Deterministic for a fixed seed.
    """
    if not batch:
        raise ConfigError("training batch is empty")
    params = model.params()
    total_grads = {name: np.zeros_like(p) for name, p in params.items()}
    total_loss = 0.0
    for i, (features, labels) in enumerate(batch):
        rng = np.random.default_rng([rng_seed, i])
        _, part_map, cache = forward(model, features, training=True, rng=rng)
        total_loss += 1.0 - dice_coefficient(part_map, labels)
        grad_z = dice_loss_backward(part_map, labels) / len(batch)
        grads, _ = head_backward(model, cache, grad_z)
        for name in total_grads:
            total_grads[name] += grads[name]
    optimizer.step(params, total_grads)
    return total_loss / len(batch)


def label_cell(ann_part_center: tuple[float, float], grid_w: int, grid_h: int) -> tuple[int, int]:
    """Grid cell (x, y) a part center maps to; the label peak location."""
    cx = min(max(px_to_cell(ann_part_center[0]), 0), grid_w - 1)
    cy = min(max(px_to_cell(ann_part_center[1]), 0), grid_h - 1)
    return cx, cy
