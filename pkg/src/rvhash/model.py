"""Network assembly for the four pipeline variants.

variant          layout                                         retrieval vector
---------------  ---------------------------------------------  -----------------------
random_vlad      backbone -> VLAD -> transform -> hash -> pred  binarized hash bits
ssdh_only        backbone -> flatten -> transform -> hash ->    binarized hash bits
                 pred (VLAD bypassed)
netvlad          backbone -> netvlad-VLAD -> pred               real VLAD vector (cosine)
backbone_only    backbone -> flatten -> pred                    real feature map (euclidean)

`input_kind="features"` drops the backbone and feeds stored feature maps
directly. `vlad_style="netvlad"` swaps the normalized, k-means-seeded VLAD
flavour into the random_vlad pipeline (ablation switch).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import backbone as BB
from . import layers as L
from . import vlad as V
from .errors import ShapeError

VARIANTS = ("random_vlad", "netvlad", "ssdh_only", "backbone_only")
HASH_VARIANTS = ("random_vlad", "ssdh_only")
VLAD_VARIANTS = ("random_vlad", "netvlad")


@dataclass
class ModelConfig:
    variant: str = "random_vlad"
    input_shape: tuple[int, int, int] = (28, 28, 1)
    input_kind: str = "image"          # "image" (through backbone) | "features"
    n_classes: int = 10
    clusters: int = 8
    code_bits: int = 32
    d1: int = 1024
    d2: int = 1024
    alpha0: float = 1.0
    vlad_style: str = V.RANDOM
    transform_enabled: bool = True
    predict_activation: str = L.SOFTMAX
    dtype: str = "float64"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}, expected one of {VARIANTS}")
        if self.input_kind not in ("image", "features"):
            raise ValueError(f"input_kind must be 'image' or 'features', got {self.input_kind!r}")
        if self.dtype not in ("float64", "float32"):
            raise ValueError(f"dtype must be float64 or float32, got {self.dtype!r}")
        if self.vlad_style not in V.STYLES:
            raise ValueError(f"unknown vlad_style {self.vlad_style!r}")

    @property
    def np_dtype(self):
        return np.float64 if self.dtype == "float64" else np.float32

    @property
    def feature_shape(self) -> tuple[int, int, int]:
        h, w, c = self.input_shape
        if self.input_kind == "image":
            return BB.output_shape(h, w)
        return (h, w, c)

    @property
    def descriptor_dim(self) -> int:
        return self.feature_shape[2]

    @property
    def n_descriptors(self) -> int:
        return self.feature_shape[0] * self.feature_shape[1]

    @property
    def flat_dim(self) -> int:
        return self.n_descriptors * self.descriptor_dim

    @property
    def effective_vlad_style(self) -> str:
        return V.NETVLAD if self.variant == "netvlad" else self.vlad_style

    @property
    def code_kind(self) -> str:
        """'binary' for hash variants, 'real' for the real-vector baselines."""
        return "binary" if self.variant in HASH_VARIANTS else "real"

    @property
    def code_dim(self) -> int:
        if self.variant in HASH_VARIANTS:
            return self.code_bits
        if self.variant == "netvlad":
            return self.clusters * self.descriptor_dim
        return self.flat_dim


@dataclass
class ModelParams:
    backbone: BB.BackboneParams | None = None
    vlad: V.VladParams | None = None
    transform: L.TransformParams | None = None
    hash: L.HashParams | None = None
    predict: L.PredictParams | None = None


@dataclass
class ModelOutput:
    probs: np.ndarray
    h_hat: np.ndarray | None
    codes: np.ndarray          # retrieval vector (continuous hash or real vector)
    cache: dict | None = field(default=None, repr=False)


def init_model(
    config: ModelConfig,
    rng: np.random.Generator,
    sample_inputs: np.ndarray | None = None,
) -> ModelParams:
    """Build all trainable parameters; deterministic for a given generator.

    The netvlad VLAD flavour seeds its anchors with k-means and therefore
    needs `sample_inputs` (a few raw model inputs); descriptors are taken
    from the freshly initialized backbone's output on them.
    """
    dt = config.np_dtype
    params = ModelParams()
    if config.input_kind == "image":
        params.backbone = BB.init_backbone(config.input_shape[2], rng, dt)

    if config.variant in VLAD_VARIANTS:
        sample_descriptors = None
        if sample_inputs is not None:
            x = np.asarray(sample_inputs, dtype=dt)
            if x.ndim == 3:
                x = x[None]
            fm = BB.backbone_forward(x, params.backbone) if config.input_kind == "image" else x
            sample_descriptors = fm.reshape(-1, config.descriptor_dim)
        params.vlad = V.init_vlad(
            config.clusters,
            config.descriptor_dim,
            rng,
            style=config.effective_vlad_style,
            alpha0=config.alpha0,
            sample_descriptors=sample_descriptors,
            dtype=dt,
        )

    if config.variant in HASH_VARIANTS:
        in_dim = (
            config.clusters * config.descriptor_dim
            if config.variant == "random_vlad"
            else config.flat_dim
        )
        params.transform = L.init_transform(
            in_dim, config.d1, config.d2, rng, enabled=config.transform_enabled, dtype=dt
        )
        hash_in = params.transform.out_dim(in_dim)
        params.hash = L.init_hash(hash_in, config.code_bits, rng, dtype=dt)
        predict_in = config.code_bits
    elif config.variant == "netvlad":
        predict_in = config.clusters * config.descriptor_dim
    else:
        predict_in = config.flat_dim

    params.predict = L.init_predict(
        predict_in, config.n_classes, rng, activation=config.predict_activation, dtype=dt
    )
    return params


def model_forward(
    x: np.ndarray, params: ModelParams, config: ModelConfig, return_cache: bool = False
) -> ModelOutput:
    """Forward pass over a batch; x is (B,H,W,C) images or feature maps."""
    x = np.asarray(x, dtype=config.np_dtype)
    if x.ndim == 3:
        x = x[None]
    if x.ndim != 4 or x.shape[1:] != tuple(config.input_shape):
        raise ShapeError(
            f"model input must be (B,{','.join(map(str, config.input_shape))}), got {x.shape}"
        )
    cache: dict = {}
    if config.input_kind == "image":
        fm, bb_cache = BB.backbone_forward(x, params.backbone, return_cache=True)
        cache["backbone"] = bb_cache
    else:
        fm = x
    b = fm.shape[0]

    h_hat = None
    if config.variant in VLAD_VARIANTS:
        v, v_cache = V.vlad_forward(fm, params.vlad, return_cache=True)
        cache["vlad"] = v_cache
        if config.variant == "random_vlad":
            t, t_cache = L.transform_forward(v, params.transform, return_cache=True)
            cache["transform"] = t_cache
            h_hat, h_cache = L.hash_forward(t, params.hash, return_cache=True)
            cache["hash"] = h_cache
            predict_in = h_hat
            codes = h_hat
        else:
            predict_in = v
            codes = v
    else:
        flat = fm.reshape(b, -1)
        cache["flat_shape"] = fm.shape
        if config.variant == "ssdh_only":
            t, t_cache = L.transform_forward(flat, params.transform, return_cache=True)
            cache["transform"] = t_cache
            h_hat, h_cache = L.hash_forward(t, params.hash, return_cache=True)
            cache["hash"] = h_cache
            predict_in = h_hat
            codes = h_hat
        else:
            predict_in = flat
            codes = flat

    probs, p_cache = L.predict_forward(predict_in, params.predict, return_cache=True)
    cache["predict"] = p_cache
    return ModelOutput(probs=probs, h_hat=h_hat, codes=codes, cache=cache if return_cache else None)


def model_backward(
    out: ModelOutput,
    params: ModelParams,
    config: ModelConfig,
    d_probs: np.ndarray,
    d_hhat: np.ndarray | None = None,
    freeze_backbone: bool = False,
    need_input_grad: bool = False,
):
    """Exact gradients of the composed forward.

    d_probs seeds the prediction path; d_hhat (optional) adds a direct
    cotangent on the continuous hash output (quantization/balance losses).
    Returns (d_input or None, grads) with grads keyed "group/name".
    """
    if out.cache is None:
        raise ValueError("model_backward needs a forward pass with return_cache=True")
    cache = out.cache
    grads: dict[str, np.ndarray] = {}

    d_pin, g_pred = L.predict_backward(d_probs, cache["predict"])
    grads["predict/w"] = g_pred["w"]

    if config.variant in HASH_VARIANTS:
        d_h = d_pin if d_hhat is None else d_pin + d_hhat
        d_t, g_hash = L.hash_backward(d_h, cache["hash"])
        grads["hash/w"] = g_hash["w"]
        grads["hash/b"] = g_hash["b"]
        d_v, g_tr = L.transform_backward(d_t, cache["transform"])
        for name, g in g_tr.items():
            grads[f"transform/{name}"] = g
    else:
        if d_hhat is not None:
            raise ValueError(f"variant {config.variant} has no hash output to seed")
        d_v = d_pin

    if config.variant in VLAD_VARIANTS:
        d_fm, g_vlad = V.vlad_backward(d_v, cache["vlad"])
        for name, g in g_vlad.items():
            grads[f"vlad/{name}"] = g
    else:
        d_fm = d_v.reshape(cache["flat_shape"])

    d_input = None
    if config.input_kind == "image":
        if freeze_backbone and not need_input_grad:
            pass
        else:
            d_input, g_bb = BB.backbone_backward(
                d_fm, cache["backbone"], need_input_grad=need_input_grad
            )
            if not freeze_backbone:
                for name, g in g_bb.items():
                    grads[f"backbone/{name}"] = g
    elif need_input_grad:
        d_input = d_fm
    return d_input, grads


def named_params(params: ModelParams) -> dict[str, np.ndarray]:
    """Flat, deterministically ordered view of every trainable array."""
    out: dict[str, np.ndarray] = {}
    if params.backbone is not None:
        bb = params.backbone
        out["backbone/conv1_w"] = bb.conv1_w
        out["backbone/conv1_b"] = bb.conv1_b
        out["backbone/conv2_w"] = bb.conv2_w
        out["backbone/conv2_b"] = bb.conv2_b
    if params.vlad is not None:
        out["vlad/anchors"] = params.vlad.anchors
        out["vlad/assign_w"] = params.vlad.assign_w
        out["vlad/assign_b"] = params.vlad.assign_b
    if params.transform is not None and params.transform.enabled:
        out["transform/fc1_w"] = params.transform.fc1_w
        out["transform/fc1_b"] = params.transform.fc1_b
        out["transform/fc2_w"] = params.transform.fc2_w
        out["transform/fc2_b"] = params.transform.fc2_b
    if params.hash is not None:
        out["hash/w"] = params.hash.w
        out["hash/b"] = params.hash.b
    if params.predict is not None:
        out["predict/w"] = params.predict.w
    return out


def set_named_param(params: ModelParams, name: str, value: np.ndarray) -> None:
    group, _, leaf = name.partition("/")
    holder = getattr(params, group)
    attr = {"anchors": "anchors", "assign_w": "assign_w", "assign_b": "assign_b"}.get(leaf, leaf)
    if holder is None or not hasattr(holder, attr):
        raise ShapeError(f"model has no parameter named {name!r}")
    setattr(holder, attr, value)
