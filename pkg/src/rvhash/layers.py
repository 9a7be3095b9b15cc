"""Fully connected heads: transform (FC-ReLU-FC-ReLU), hash (FC-sigmoid),
and prediction (bias-free FC with softmax or per-class sigmoid)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .tensor import relu, relu_backward, sigmoid, softmax_rows, softmax_rows_backward

SOFTMAX = "softmax"
SIGMOID = "sigmoid"
ACTIVATIONS = (SOFTMAX, SIGMOID)


@dataclass
class TransformParams:
    fc1_w: np.ndarray | None   # (Din, D1)
    fc1_b: np.ndarray | None   # (D1,)
    fc2_w: np.ndarray | None   # (D1, D2)
    fc2_b: np.ndarray | None   # (D2,)
    enabled: bool = True

    def out_dim(self, in_dim: int) -> int:
        return self.fc2_w.shape[1] if self.enabled else in_dim


@dataclass
class HashParams:
    w: np.ndarray   # (Din, L)
    b: np.ndarray   # (L,)

    @property
    def bits(self) -> int:
        return self.w.shape[1]


@dataclass
class PredictParams:
    w: np.ndarray   # (Din, M); no bias by design
    activation: str = SOFTMAX


# Gain-1 fan-in scaling for every fully connected layer. The usual ReLU
# gain of sqrt(2) compounds the unnormalized VLAD output's magnitude and
# drives the hash sigmoid into saturation within the first epoch; gain 1
# keeps pre-sigmoid variance near 1 and trains reliably.
def gaussian_fc(rng: np.random.Generator, fan_in: int, fan_out: int, dtype=np.float64) -> np.ndarray:
    return rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=(fan_in, fan_out)).astype(dtype)


def init_transform(
    in_dim: int, d1: int, d2: int, rng: np.random.Generator, enabled: bool = True, dtype=np.float64
) -> TransformParams:
    if not enabled:
        return TransformParams(None, None, None, None, enabled=False)
    if not (1 <= d2 <= d1):
        raise ShapeError(f"transform dims must satisfy 1 <= D2 <= D1, got D1={d1}, D2={d2}")
    return TransformParams(
        fc1_w=gaussian_fc(rng, in_dim, d1, dtype),
        fc1_b=np.zeros(d1, dtype=dtype),
        fc2_w=gaussian_fc(rng, d1, d2, dtype),
        fc2_b=np.zeros(d2, dtype=dtype),
        enabled=True,
    )


def init_hash(in_dim: int, bits: int, rng: np.random.Generator, dtype=np.float64) -> HashParams:
    if bits < 1:
        raise ShapeError(f"hash length must be >= 1, got {bits}")
    return HashParams(w=gaussian_fc(rng, in_dim, bits, dtype), b=np.zeros(bits, dtype=dtype))


def init_predict(
    in_dim: int, n_classes: int, rng: np.random.Generator, activation: str = SOFTMAX, dtype=np.float64
) -> PredictParams:
    if activation not in ACTIVATIONS:
        raise ValueError(f"unknown prediction activation {activation!r}")
    return PredictParams(w=gaussian_fc(rng, in_dim, n_classes, dtype), activation=activation)


def _check_last_dim(x: np.ndarray, dim: int, who: str) -> np.ndarray:
    x = np.asarray(x)
    if x.shape[-1] != dim:
        raise ShapeError(f"{who} expects input dim {dim}, got {x.shape}")
    return x


def transform_forward(v: np.ndarray, params: TransformParams, return_cache: bool = False):
    """ReLU(fc2(ReLU(fc1(v)))); identity pass-through when disabled."""
    if not params.enabled:
        return (v, {"identity": True}) if return_cache else v
    v = _check_last_dim(v, params.fc1_w.shape[0], "transform")
    z1 = v @ params.fc1_w + params.fc1_b
    a1 = relu(z1)
    z2 = a1 @ params.fc2_w + params.fc2_b
    a2 = relu(z2)
    if return_cache:
        return a2, {"identity": False, "v": v, "z1": z1, "a1": a1, "z2": z2, "params": params}
    return a2


def transform_backward(d_out: np.ndarray, cache):
    if cache["identity"]:
        return d_out, {}
    p: TransformParams = cache["params"]
    d2 = relu_backward(d_out, cache["z2"])
    flat_a1 = cache["a1"].reshape(-1, p.fc2_w.shape[0])
    flat_d2 = d2.reshape(-1, p.fc2_w.shape[1])
    g_fc2_w = flat_a1.T @ flat_d2
    g_fc2_b = flat_d2.sum(axis=0)
    d1 = relu_backward(d2 @ p.fc2_w.T, cache["z1"])
    flat_v = cache["v"].reshape(-1, p.fc1_w.shape[0])
    flat_d1 = d1.reshape(-1, p.fc1_w.shape[1])
    g_fc1_w = flat_v.T @ flat_d1
    g_fc1_b = flat_d1.sum(axis=0)
    d_v = d1 @ p.fc1_w.T
    return d_v, {"fc1_w": g_fc1_w, "fc1_b": g_fc1_b, "fc2_w": g_fc2_w, "fc2_b": g_fc2_b}


def hash_forward(x: np.ndarray, params: HashParams, return_cache: bool = False):
    """Continuous hash activations, strictly inside (0, 1).

    Saturated sigmoids are nudged one representable value off 0/1 so the
    open-interval contract survives float rounding.
    """
    x = _check_last_dim(x, params.w.shape[0], "hash layer")
    z = x @ params.w + params.b
    h = sigmoid(z)
    np.clip(h, np.nextafter(0.0, 1.0), np.nextafter(1.0, 0.0), out=h)
    if return_cache:
        return h, {"x": x, "h": h, "params": params}
    return h


def hash_backward(d_h: np.ndarray, cache):
    p: HashParams = cache["params"]
    h = cache["h"]
    d_z = d_h * h * (1.0 - h)
    flat_x = cache["x"].reshape(-1, p.w.shape[0])
    flat_dz = d_z.reshape(-1, p.w.shape[1])
    g_w = flat_x.T @ flat_dz
    g_b = flat_dz.sum(axis=0)
    d_x = d_z @ p.w.T
    return d_x, {"w": g_w, "b": g_b}


def predict_forward(h: np.ndarray, params: PredictParams, return_cache: bool = False):
    """Class scores from hash activations: softmax (default) or sigmoid."""
    h = _check_last_dim(h, params.w.shape[0], "prediction layer")
    z = h @ params.w
    probs = softmax_rows(z) if params.activation == SOFTMAX else sigmoid(z)
    if return_cache:
        return probs, {"h": h, "probs": probs, "params": params}
    return probs


def predict_backward(d_probs: np.ndarray, cache):
    p: PredictParams = cache["params"]
    probs = cache["probs"]
    if p.activation == SOFTMAX:
        d_z = softmax_rows_backward(d_probs, probs)
    else:
        d_z = d_probs * probs * (1.0 - probs)
    flat_h = cache["h"].reshape(-1, p.w.shape[0])
    flat_dz = d_z.reshape(-1, p.w.shape[1])
    g_w = flat_h.T @ flat_dz
    d_h = d_z @ p.w.T
    return d_h, {"w": g_w}
