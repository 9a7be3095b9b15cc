"""Soft-assignment VLAD aggregation layer, in two flavours.

A feature map of N = H*W descriptors x_i (dimension D) is aggregated over K
trainable anchors c_k into per-anchor residual sums

    y_k = sum_i a_ik * (x_i - c_k),

where a_ik is a softmax over assignment scores w_k . x_i + b_k. The three
parameter sets {w_k}, {b_k}, {c_k} are independent trainables.

Flavours:

* "random":  anchors start as Gaussian noise; no normalization anywhere; the
  flattened K*D vector is emitted as-is.
* "netvlad": descriptors are L2-normalized before assignment/aggregation
  (pre-norm), each y_k is L2-normalized (intra-norm), and the flattened
  vector is L2-normalized again (post-norm). Anchors start from k-means.

In both flavours the assignment weights are tied to the anchors at init time
via w_k = 2*alpha0*c_k, b_k = -alpha0*||c_k||^2, which makes the initial soft
assignment behave like a Gaussian-distance softmax with sharpness alpha0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .kmeans import kmeans
from .tensor import softmax_rows

RANDOM = "random"
NETVLAD = "netvlad"
STYLES = (RANDOM, NETVLAD)

_NORM_EPS = 1e-12


@dataclass
class VladParams:
    anchors: np.ndarray        # (K, D) residual origins c_k
    assign_w: np.ndarray       # (K, D) assignment weights w_k
    assign_b: np.ndarray       # (K,)   assignment biases b_k
    style: str = RANDOM

    @property
    def clusters(self) -> int:
        return self.anchors.shape[0]

    @property
    def dim(self) -> int:
        return self.anchors.shape[1]

    @property
    def out_dim(self) -> int:
        return self.anchors.size


def init_vlad(
    clusters: int,
    dim: int,
    rng: np.random.Generator,
    style: str = RANDOM,
    alpha0: float = 1.0,
    sample_descriptors: np.ndarray | None = None,
    dtype=np.float64,
) -> VladParams:
    """Build VLAD parameters; netvlad style requires sample descriptors."""
    if style not in STYLES:
        raise ValueError(f"unknown VLAD style {style!r}, expected one of {STYLES}")
    if clusters < 1 or dim < 1:
        raise ShapeError(f"clusters and dim must be >= 1, got K={clusters}, D={dim}")
    if style == NETVLAD:
        if sample_descriptors is None:
            raise ValueError("netvlad style needs sample_descriptors for k-means anchor init")
        desc = np.asarray(sample_descriptors, dtype=np.float64).reshape(-1, dim)
        desc = _l2_rows(desc)
        anchors = kmeans(desc, clusters, rng)
    else:
        anchors = rng.normal(0.0, 1.0 / np.sqrt(dim), size=(clusters, dim))
    anchors = anchors.astype(dtype)
    assign_w = (2.0 * alpha0 * anchors).astype(dtype)
    assign_b = (-alpha0 * (anchors**2).sum(axis=1)).astype(dtype)
    return VladParams(anchors=anchors, assign_w=assign_w, assign_b=assign_b, style=style)


def _l2_rows(x: np.ndarray) -> np.ndarray:
    norms = np.sqrt((x**2).sum(axis=-1, keepdims=True))
    return x / np.maximum(norms, _NORM_EPS)


def _as_descriptors(fm: np.ndarray, dim: int):
    """View (B,H,W,D) / (H,W,D) / (N,D) input as batched (B,N,D) descriptors."""
    fm = np.asarray(fm)
    if fm.shape[-1] != dim:
        raise ShapeError(f"descriptor dim mismatch: input {fm.shape} vs D={dim}")
    if fm.ndim == 2:
        return fm[None], True
    if fm.ndim == 3:
        return fm.reshape(1, -1, dim), True
    if fm.ndim == 4:
        return fm.reshape(fm.shape[0], -1, dim), False
    raise ShapeError(f"feature map must have 2..4 axes, got {fm.shape}")


def vlad_soft_assign(fm: np.ndarray, params: VladParams) -> np.ndarray:
    """Softmax assignment weights, shape (N, K) (or (B, N, K) batched)."""
    desc, squeeze = _as_descriptors(fm, params.dim)
    if params.style == NETVLAD:
        desc = _l2_rows(desc)
    logits = desc @ params.assign_w.T + params.assign_b
    assign = softmax_rows(logits)
    return assign[0] if squeeze else assign


def vlad_aggregate(fm: np.ndarray, assign: np.ndarray, params: VladParams) -> np.ndarray:
    """Aggregate residuals with given assignment; flattens to K*D.

    random style: raw flattened sums; netvlad style: intra- and post-L2
    normalized. The descriptors get the same pre-normalization the
    assignment saw.
    """
    desc, squeeze = _as_descriptors(fm, params.dim)
    if params.style == NETVLAD:
        desc = _l2_rows(desc)
    a = np.asarray(assign)
    if squeeze and a.ndim == 2:
        a = a[None]
    if a.shape[:2] != desc.shape[:2] or a.shape[2] != params.clusters:
        raise ShapeError(f"assignment shape {assign.shape} does not match descriptors {desc.shape}")
    y = np.einsum("bnk,bnd->bkd", a, desc) - a.sum(axis=1)[:, :, None] * params.anchors[None]
    if params.style == NETVLAD:
        y = _l2_rows(y)
        flat = y.reshape(y.shape[0], -1)
        flat = _l2_rows(flat)
    else:
        flat = y.reshape(y.shape[0], -1)
    return flat[0] if squeeze else flat


def vlad_forward(fm: np.ndarray, params: VladParams, return_cache: bool = False):
    """Full layer: assignment + aggregation (+ normalizations for netvlad)."""
    desc_raw, squeeze = _as_descriptors(fm, params.dim)
    if params.style == NETVLAD:
        norms = np.sqrt((desc_raw**2).sum(axis=-1, keepdims=True))
        norms = np.maximum(norms, _NORM_EPS)
        desc = desc_raw / norms
    else:
        norms = None
        desc = desc_raw
    logits = desc @ params.assign_w.T + params.assign_b
    assign = softmax_rows(logits)
    assign_sum = assign.sum(axis=1)
    y = np.einsum("bnk,bnd->bkd", assign, desc) - assign_sum[:, :, None] * params.anchors[None]
    if params.style == NETVLAD:
        y_norms = np.maximum(np.sqrt((y**2).sum(axis=-1, keepdims=True)), _NORM_EPS)
        y_hat = y / y_norms
        flat_raw = y_hat.reshape(y.shape[0], -1)
        flat_norms = np.maximum(
            np.sqrt((flat_raw**2).sum(axis=-1, keepdims=True)), _NORM_EPS
        )
        out = flat_raw / flat_norms
    else:
        y_norms = flat_norms = None
        y_hat = flat_raw = None
        out = y.reshape(y.shape[0], -1)
    out_final = out[0] if squeeze else out
    if not return_cache:
        return out_final
    cache = {
        "desc": desc, "norms": norms, "assign": assign, "assign_sum": assign_sum,
        "y": y, "y_norms": y_norms, "y_hat": y_hat,
        "flat_raw": flat_raw, "flat_norms": flat_norms,
        "params": params, "squeeze": squeeze, "fm_shape": np.asarray(fm).shape,
    }
    return out_final, cache


def assign_backward(d_assign: np.ndarray, assign: np.ndarray, desc: np.ndarray, assign_w: np.ndarray):
    """Backward through softmax assignment and its affine scores.

    Returns (d_desc, d_assign_w, d_assign_b) for a cotangent on the
    assignment weights.
    """
    inner = (assign * d_assign).sum(axis=-1, keepdims=True)
    d_logits = assign * (d_assign - inner)
    d_w = np.einsum("bnk,bnd->kd", d_logits, desc)
    d_b = d_logits.sum(axis=(0, 1))
    d_desc = d_logits @ assign_w
    return d_desc, d_w, d_b


def vlad_backward(d_out: np.ndarray, cache):
    """Gradients of vlad_forward w.r.t. descriptors and all three parameter sets.

    Returns (d_fm, grads) with grads keys anchors/assign_w/assign_b. The
    assignment-softmax path and the residual path are both included.
    """
    params: VladParams = cache["params"]
    desc = cache["desc"]
    assign = cache["assign"]
    assign_sum = cache["assign_sum"]
    squeeze = cache["squeeze"]
    d = d_out[None] if squeeze and np.asarray(d_out).ndim == 1 else np.asarray(d_out)
    b = desc.shape[0]
    k, dim = params.anchors.shape

    if params.style == NETVLAD:
        flat_raw = cache["flat_raw"]
        flat_norms = cache["flat_norms"]
        # post-L2 backward
        inner = (d * (flat_raw / flat_norms)).sum(axis=-1, keepdims=True)
        d_flat = (d - (flat_raw / flat_norms) * inner) / flat_norms
        d_yhat = d_flat.reshape(b, k, dim)
        # intra-L2 backward
        y_hat = cache["y_hat"]
        inner_y = (d_yhat * y_hat).sum(axis=-1, keepdims=True)
        d_y = (d_yhat - y_hat * inner_y) / cache["y_norms"]
    else:
        d_y = d.reshape(b, k, dim)

    d_anchors = -np.einsum("bk,bkd->kd", assign_sum, d_y)
    d_assign = np.einsum("bnd,bkd->bnk", desc, d_y) - np.einsum(
        "bkd,kd->bk", d_y, params.anchors
    )[:, None, :]
    d_desc = np.einsum("bnk,bkd->bnd", assign, d_y)

    d_desc_assign, d_assign_w, d_assign_b = assign_backward(
        d_assign, assign, desc, params.assign_w
    )
    d_desc = d_desc + d_desc_assign

    if params.style == NETVLAD:
        norms = cache["norms"]
        inner_d = (d_desc * desc).sum(axis=-1, keepdims=True)
        d_desc = (d_desc - desc * inner_d) / norms

    fm_shape = cache["fm_shape"]
    d_fm = d_desc.reshape(fm_shape)
    grads = {"anchors": d_anchors, "assign_w": d_assign_w, "assign_b": d_assign_b}
    return d_fm, grads


def sharpen(params: VladParams, factor: float) -> VladParams:
    """Scale all assignment scores jointly; large factors approach the
    hard nearest-anchor assignment."""
    return VladParams(
        anchors=params.anchors,
        assign_w=params.assign_w * factor,
        assign_b=params.assign_b * factor,
        style=params.style,
    )
