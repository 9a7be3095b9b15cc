"""Small trainable convolutional feature extractor ("toynet-lite").

Two conv blocks: conv(3x3, 32, pad 1) -> ReLU -> maxpool2 ->
conv(3x3, 64, pad 1) -> ReLU -> maxpool2. For an even HxW input the
output feature map is (H/4) x (W/4) x 64; odd intermediate sizes round up
(pool pads with -inf). Feature maps supplied externally bypass this module.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ShapeError

CONV1_CHANNELS = 32
CONV2_CHANNELS = 64
MIN_SPATIAL = 8


@dataclass
class BackboneParams:
    conv1_w: np.ndarray  # (3, 3, Cin, 32)
    conv1_b: np.ndarray  # (32,)
    conv2_w: np.ndarray  # (3, 3, 32, 64)
    conv2_b: np.ndarray  # (64,)


def init_backbone(in_channels: int, rng: np.random.Generator, dtype=np.float64) -> BackboneParams:
    """He-initialized kernels, zero biases."""
    k1 = (3, 3, in_channels, CONV1_CHANNELS)
    k2 = (3, 3, CONV1_CHANNELS, CONV2_CHANNELS)
    std1 = np.sqrt(2.0 / (3 * 3 * in_channels))
    std2 = np.sqrt(2.0 / (3 * 3 * CONV1_CHANNELS))
    return BackboneParams(
        conv1_w=(rng.normal(0.0, std1, size=k1)).astype(dtype),
        conv1_b=np.zeros(CONV1_CHANNELS, dtype=dtype),
        conv2_w=(rng.normal(0.0, std2, size=k2)).astype(dtype),
        conv2_b=np.zeros(CONV2_CHANNELS, dtype=dtype),
    )


def output_shape(h: int, w: int) -> tuple[int, int, int]:
    """Spatial shape of the emitted feature map for an HxW input."""
    h1, w1 = (h + 1) // 2, (w + 1) // 2
    return ((h1 + 1) // 2, (w1 + 1) // 2, CONV2_CHANNELS)


def backbone_forward(images: np.ndarray, params: BackboneParams, return_cache: bool = False):
    """Map (B, H, W, Cin) images to (B, H', W', 64) feature maps."""
    images = np.asarray(images)
    squeeze = images.ndim == 3
    xb = images[None] if squeeze else images
    if xb.ndim != 4:
        raise ShapeError(f"backbone input must be (B,H,W,C) or (H,W,C), got {images.shape}")
    if xb.shape[1] < MIN_SPATIAL or xb.shape[2] < MIN_SPATIAL:
        raise ShapeError(
            f"backbone needs spatial dims >= {MIN_SPATIAL}, got {xb.shape[1]}x{xb.shape[2]}"
        )
    z1, c1 = T.conv2d(xb, params.conv1_w, params.conv1_b, padding=1, stride=1, return_cache=True)
    a1 = T.relu(z1, inplace=True)   # post-activation doubles as the backward mask
    p1, arg1, pc1 = T.maxpool2(a1, return_cache=True)
    z2, c2 = T.conv2d(p1, params.conv2_w, params.conv2_b, padding=1, stride=1, return_cache=True)
    a2 = T.relu(z2, inplace=True)
    p2, arg2, pc2 = T.maxpool2(a2, return_cache=True)
    out = p2[0] if squeeze else p2
    if not return_cache:
        return out
    cache = {
        "conv1": c1, "a1": a1, "pool1": (arg1, pc1),
        "conv2": c2, "a2": a2, "pool2": (arg2, pc2),
        "squeeze": squeeze,
    }
    return out, cache


def backbone_backward(d_fm: np.ndarray, cache, need_input_grad: bool = False):
    """Exact reverse-mode gradients of backbone_forward.

    Returns (d_images or None, grads dict with conv1_w/conv1_b/conv2_w/conv2_b).
    All caches are batched internally, matching backbone_forward.
    """
    squeeze = cache["squeeze"]
    d = d_fm[None] if squeeze else d_fm
    arg2, pc2 = cache["pool2"]
    d = T.maxpool2_backward(d, arg2, pc2)
    d = T.relu_backward(d, cache["a2"], inplace=True)
    d, dk2, db2 = T.conv2d_backward(d, cache["conv2"])
    arg1, pc1 = cache["pool1"]
    d = T.maxpool2_backward(d, arg1, pc1)
    d = T.relu_backward(d, cache["a1"], inplace=True)
    d_in, dk1, db1 = T.conv2d_backward(d, cache["conv1"], need_input_grad=need_input_grad)
    grads = {"conv1_w": dk1, "conv1_b": db1, "conv2_w": dk2, "conv2_b": db2}
    if need_input_grad:
        return (d_in[0] if squeeze else d_in), grads
    return None, grads
