"""Dense grid numerics for the voting detector.

Feature grids are numpy arrays of shape (H, W, C), C-contiguous float32, so
the flat memory layout is ``(h * W + w) * C + c``, the same order the feature
file format uses on disk.  Every function here is a pure function of its
inputs; the only mutable state in the module is the velocity buffer owned by
an :class:`SGD` instance.

Operations preserve the input dtype (float32 in production, float64 in
gradient-check tests).  Reductions that feed gradients (norms, channel sums)
accumulate in float64 regardless.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

FLOAT = np.float32


def _as_generator(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


@dataclass
class ConvKernel:
    """Stride-1 convolution weights: shape (kh, kw, cin, cout) plus bias (cout,).

    Spatial extents must be odd so same-padding keeps the output grid aligned
    with the input grid.
    """

    weights: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        if self.weights.ndim != 4:
            raise ConfigError(f"kernel weights must be 4-d, got shape {self.weights.shape}")
        kh, kw, _, cout = self.weights.shape
        if kh % 2 == 0 or kw % 2 == 0:
            raise ConfigError(f"kernel extent must be odd, got {kh}x{kw}")
        if self.bias.shape != (cout,):
            raise ConfigError(f"bias shape {self.bias.shape} does not match cout={cout}")

    @property
    def kh(self) -> int:
        return self.weights.shape[0]

    @property
    def kw(self) -> int:
        return self.weights.shape[1]

    @property
    def cin(self) -> int:
        return self.weights.shape[2]

    @property
    def cout(self) -> int:
        return self.weights.shape[3]

    def copy(self) -> "ConvKernel":
        return ConvKernel(self.weights.copy(), self.bias.copy())


def l2_normalize_locations(x: np.ndarray, eps: float = 1e-8) -> np.ndarray:
    """Normalize each (h, w) feature vector to unit length.

    Vectors with norm below ``eps`` are divided by ``eps`` instead, so an
    all-zero location stays all-zero.
    """
    if eps <= 0:
        raise ConfigError("eps must be positive")
    norms = np.sqrt(np.sum(x.astype(np.float64) ** 2, axis=-1, keepdims=True))
    out = x / np.maximum(norms, eps)
    return out.astype(x.dtype, copy=False)


def _pad_spatial(x: np.ndarray, ph: int, pw: int) -> np.ndarray:
    if ph == 0 and pw == 0:
        return x
    h, w, c = x.shape
    out = np.zeros((h + 2 * ph, w + 2 * pw, c), dtype=x.dtype)
    out[ph:ph + h, pw:pw + w] = x
    return out


def conv2d_forward(x: np.ndarray, kernel: ConvKernel, same_pad: bool = True) -> np.ndarray:
    """Stride-1 2-d convolution (cross-correlation) over an (H, W, Cin) grid.

    With ``same_pad`` the input is zero-padded so the output keeps the input's
    spatial dims; out-of-bounds taps contribute zero.  Without it the window
    only visits fully-interior positions.
    """
    if x.ndim != 3:
        raise ConfigError(f"input must be (H, W, C), got shape {x.shape}")
    if x.shape[2] != kernel.cin:
        raise ConfigError(f"input channels {x.shape[2]} != kernel cin {kernel.cin}")
    h, w, cin = x.shape
    kh, kw = kernel.kh, kernel.kw
    ph = kh // 2 if same_pad else 0
    pw = kw // 2 if same_pad else 0
    oh = h + 2 * ph - kh + 1
    ow = w + 2 * pw - kw + 1
    if oh <= 0 or ow <= 0:
        raise ConfigError(f"kernel {kh}x{kw} larger than unpadded input {h}x{w}")
    xp = _pad_spatial(x, ph, pw)
    wk = kernel.weights.astype(x.dtype, copy=False)
    acc = np.zeros((oh * ow, kernel.cout), dtype=x.dtype)
    for dh in range(kh):
        for dw in range(kw):
            window = xp[dh:dh + oh, dw:dw + ow].reshape(oh * ow, cin)
            acc += window @ wk[dh, dw]
    acc += kernel.bias.astype(x.dtype, copy=False)
    return acc.reshape(oh, ow, kernel.cout)


def conv2d_backward(
    x: np.ndarray, kernel: ConvKernel, grad_out: np.ndarray, same_pad: bool = True
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients of ``sum(grad_out * conv2d_forward(x, kernel))``.

    Returns ``(grad_x, grad_weights, grad_bias)`` with the shapes of the
    corresponding arguments.
    """
    if x.ndim != 3 or x.shape[2] != kernel.cin:
        raise ConfigError(f"input shape {x.shape} inconsistent with kernel cin {kernel.cin}")
    h, w, cin = x.shape
    kh, kw = kernel.kh, kernel.kw
    ph = kh // 2 if same_pad else 0
    pw = kw // 2 if same_pad else 0
    oh = h + 2 * ph - kh + 1
    ow = w + 2 * pw - kw + 1
    if grad_out.shape != (oh, ow, kernel.cout):
        raise ConfigError(
            f"grad_out shape {grad_out.shape} does not match output ({oh}, {ow}, {kernel.cout})"
        )
    xp = _pad_spatial(x, ph, pw)
    go = grad_out.reshape(oh * ow, kernel.cout).astype(x.dtype, copy=False)
    wk = kernel.weights.astype(x.dtype, copy=False)

    grad_w = np.zeros_like(wk)
    grad_xp = np.zeros_like(xp)
    for dh in range(kh):
        for dw in range(kw):
            window = xp[dh:dh + oh, dw:dw + ow].reshape(oh * ow, cin)
            grad_w[dh, dw] = window.T @ go
            grad_xp[dh:dh + oh, dw:dw + ow] += (go @ wk[dh, dw].T).reshape(oh, ow, cin)
    grad_x = grad_xp[ph:ph + h, pw:pw + w]
    if ph == 0 and pw == 0:
        grad_x = grad_x.copy()
    grad_b = grad_out.astype(np.float64).sum(axis=(0, 1)).astype(x.dtype)
    return grad_x, grad_w, grad_b


def relu(x: np.ndarray) -> np.ndarray:
    """Elementwise max(0, x)."""
    return np.maximum(x, 0)


def relu_backward(x: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    """Pass gradient where x > 0; subgradient at exactly 0 is 0."""
    if x.shape != grad_out.shape:
        raise ConfigError(f"shape mismatch {x.shape} vs {grad_out.shape}")
    return grad_out * (x > 0)


def dropout(
    x: np.ndarray, p: float, rng, training: bool = True
) -> tuple[np.ndarray, np.ndarray]:
    """Inverted dropout: zero each element with probability p, scale survivors.

    Returns ``(output, mask)`` where the mask already carries the 1/(1-p)
    survivor scaling, so the backward pass is ``grad_out * mask``.  In
    inference mode the op is the identity and the mask is all ones.
    """
    if not 0.0 <= p < 1.0:
        raise ConfigError(f"dropout probability must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return x.copy(), np.ones_like(x)
    gen = _as_generator(rng)
    keep = gen.random(x.shape) >= p
    mask = keep.astype(x.dtype) / x.dtype.type(1.0 - p)
    return x * mask, mask


def gaussian_kernel_1d(sigma: float) -> np.ndarray:
    """Normalized 1-d Gaussian taps truncated at radius ceil(3*sigma)."""
    if sigma <= 0:
        raise ConfigError("sigma must be positive")
    radius = int(math.ceil(3.0 * sigma))
    xs = np.arange(-radius, radius + 1, dtype=np.float64)
    g = np.exp(-(xs ** 2) / (2.0 * sigma * sigma))
    return g / g.sum()


def gaussian_filter_2d(plane: np.ndarray, sigma: float, rescale: bool = True) -> np.ndarray:
    """Separable Gaussian blur of a 2-d map, zero-padded at the borders.

    With ``rescale`` (the default) the blurred map is scaled so its maximum
    equals the input maximum, so a lone unit peak stays a unit peak.  Pass
    ``rescale=False`` to get the raw linear convolution.
    """
    if plane.ndim != 2:
        raise ConfigError(f"expected a 2-d map, got shape {plane.shape}")
    g = gaussian_kernel_1d(sigma)
    radius = (len(g) - 1) // 2
    work = plane.astype(np.float64)

    for axis in (0, 1):
        src = np.moveaxis(work, axis, 0)
        n = src.shape[0]
        padded = np.zeros((n + 2 * radius,) + src.shape[1:], dtype=np.float64)
        padded[radius:radius + n] = src
        out = np.zeros_like(src)
        for j, gj in enumerate(g):
            out += gj * padded[j:j + n]
        work = np.moveaxis(out, 0, axis)

    if rescale:
        peak = work.max()
        if peak > 0:
            work *= float(plane.max()) / peak
    return work.astype(plane.dtype, copy=False)


def bilinear_resize(x: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Resample an (H, W, C) grid to (out_h, out_w, C) with bilinear weights.

    Uses half-pixel-center alignment, so resizing to the same dims is exact.
    """
    if x.ndim != 3:
        raise ConfigError(f"input must be (H, W, C), got shape {x.shape}")
    if out_h <= 0 or out_w <= 0:
        raise ConfigError("output dims must be positive")
    h, w, _ = x.shape
    if out_h == h and out_w == w:
        return x.copy()

    ys = (np.arange(out_h, dtype=np.float64) + 0.5) * (h / out_h) - 0.5
    xs = (np.arange(out_w, dtype=np.float64) + 0.5) * (w / out_w) - 0.5
    ys = np.clip(ys, 0.0, h - 1.0)
    xs = np.clip(xs, 0.0, w - 1.0)
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (ys - y0).astype(x.dtype)[:, None, None]
    fx = (xs - x0).astype(x.dtype)[None, :, None]

    tl = x[y0[:, None], x0[None, :]]
    tr = x[y0[:, None], x1[None, :]]
    bl = x[y1[:, None], x0[None, :]]
    br = x[y1[:, None], x1[None, :]]
    top = tl * (1 - fx) + tr * fx
    bot = bl * (1 - fx) + br * fx
    return (top * (1 - fy) + bot * fy).astype(x.dtype, copy=False)


class SGD:
    """Plain SGD with momentum and L2 weight decay.

    Update rule per parameter: ``v = momentum*v + grad + weight_decay*param``
    then ``param -= lr*v``.  Velocity buffers are keyed by parameter name and
    owned by this instance; parameters are updated in place.
    """

    def __init__(self, lr: float, momentum: float = 0.0, weight_decay: float = 0.0):
        if lr <= 0:
            raise ConfigError("learning rate must be positive")
        if not 0.0 <= momentum < 1.0:
            raise ConfigError("momentum must be in [0, 1)")
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        for name, param in params.items():
            grad = grads[name]
            if grad.shape != param.shape:
                raise ConfigError(
                    f"gradient shape {grad.shape} != param shape {param.shape} for '{name}'"
                )
            v = self.velocity.get(name)
            if v is None:
                v = np.zeros_like(param)
            v = self.momentum * v + grad + self.weight_decay * param
            param -= (self.lr * v).astype(param.dtype, copy=False)
            self.velocity[name] = v
