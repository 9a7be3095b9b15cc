"""Dense tensor primitives: the numeric substrate for every other module.

Conventions
-----------
* Tensors are plain numpy arrays, row-major, last axis contiguous.
  float64 is the correctness dtype; float32 is allowed for training speed.
* Images and feature maps are channel-last: (H, W, C), batched (B, H, W, C).
* Convolution uses the cross-correlation convention (no kernel flip).
* Max-pool tie-break: the first window position in row-major order wins.
* Randomness: `make_rng(seed)` returns a numpy Generator backed by PCG64.
  Identical seeds give identical streams across runs and platforms.

Operations are pure functions; no shared mutable state.
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeError


def make_rng(seed: int) -> np.random.Generator:
    """Deterministic PCG64 generator for a 64-bit unsigned seed."""
    return np.random.default_rng(np.uint64(seed))


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product with an explicit inner-dimension check."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects 2-d operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dimensions disagree: {a.shape} x {b.shape}")
    return a @ b


def _normalize_padding(padding) -> tuple[int, int, int, int]:
    if isinstance(padding, (int, np.integer)):
        if padding < 0:
            raise ShapeError(f"negative padding {padding}")
        return (int(padding),) * 4
    pads = tuple(int(p) for p in padding)
    if len(pads) != 4 or any(p < 0 for p in pads):
        raise ShapeError(f"padding must be int or (top, bottom, left, right) >= 0, got {padding!r}")
    return pads


def _out_size(size: int, pad_a: int, pad_b: int, k: int, stride: int) -> int:
    span = size + pad_a + pad_b - k
    if span < 0 or span % stride != 0:
        raise ShapeError(
            f"conv output size is not an integer: input {size}, pad {pad_a}+{pad_b}, "
            f"kernel {k}, stride {stride}"
        )
    return span // stride + 1


def _im2col(xpad: np.ndarray, kh: int, kw: int, stride: int, ho: int, wo: int) -> np.ndarray:
    """Extract sliding windows as a (B, Ho, Wo, kh*kw*Cin) matrix."""
    b, _, _, c = xpad.shape
    sb, sh, sw, sc = xpad.strides
    windows = np.lib.stride_tricks.as_strided(
        xpad,
        shape=(b, ho, wo, kh, kw, c),
        strides=(sb, sh * stride, sw * stride, sh, sw, sc),
        writeable=False,
    )
    return windows.reshape(b, ho, wo, kh * kw * c)


def conv2d(
    x: np.ndarray,
    kernels: np.ndarray,
    bias: np.ndarray,
    padding=0,
    stride: int = 1,
    return_cache: bool = False,
):
    """2-d cross-correlation.

    x: (H, W, Cin) or (B, H, W, Cin); kernels: (kh, kw, Cin, Cout); bias: (Cout,).
    """
    x = np.asarray(x)
    squeeze = x.ndim == 3
    xb = x[None] if squeeze else x
    if xb.ndim != 4:
        raise ShapeError(f"conv2d input must be (H,W,C) or (B,H,W,C), got {x.shape}")
    if kernels.ndim != 4:
        raise ShapeError(f"conv2d kernels must be (kh,kw,Cin,Cout), got {kernels.shape}")
    kh, kw, cin, cout = kernels.shape
    if xb.shape[3] != cin:
        raise ShapeError(f"conv2d channel mismatch: input {xb.shape} vs kernels {kernels.shape}")
    if bias.shape != (cout,):
        raise ShapeError(f"conv2d bias must be ({cout},), got {bias.shape}")
    if stride < 1:
        raise ShapeError(f"stride must be >= 1, got {stride}")
    pt, pb, pl, pr = _normalize_padding(padding)
    b, h, w, _ = xb.shape
    ho = _out_size(h, pt, pb, kh, stride)
    wo = _out_size(w, pl, pr, kw, stride)
    xpad = np.pad(xb, ((0, 0), (pt, pb), (pl, pr), (0, 0)))
    cols = _im2col(xpad, kh, kw, stride, ho, wo)
    # flat 2-d GEMM with in-place bias: much faster than broadcasting over
    # the 4-d matmul result
    flat = cols.reshape(-1, kh * kw * cin) @ kernels.reshape(kh * kw * cin, cout)
    flat += bias
    out = flat.reshape(b, ho, wo, cout)
    if return_cache:
        cache = (cols, kernels, xb.shape, (pt, pb, pl, pr), stride, squeeze)
        return (out[0] if squeeze else out), cache
    return out[0] if squeeze else out


def conv2d_backward(d_out: np.ndarray, cache, need_input_grad: bool = True):
    """Gradients of conv2d w.r.t. input, kernels, and bias.

    With need_input_grad=False the input gradient is skipped (returned as
    None), which saves the largest GEMM when the conv is the first layer.
    """
    cols, kernels, xshape, (pt, pb, pl, pr), stride, squeeze = cache
    kh, kw, cin, cout = kernels.shape
    d_out_b = d_out[None] if squeeze else d_out
    b, ho, wo, _ = d_out_b.shape
    flat_cols = cols.reshape(-1, kh * kw * cin)
    flat_dout = d_out_b.reshape(-1, cout)
    d_kernels = (flat_cols.T @ flat_dout).reshape(kernels.shape)
    d_bias = flat_dout.sum(axis=0)
    if not need_input_grad:
        return None, d_kernels, d_bias
    d_cols = flat_dout @ kernels.reshape(kh * kw * cin, cout).T
    d_cols = d_cols.reshape(b, ho, wo, kh, kw, cin)
    hpad = xshape[1] + pt + pb
    wpad = xshape[2] + pl + pr
    d_xpad = np.zeros((b, hpad, wpad, cin), dtype=d_out_b.dtype)
    for i in range(kh):
        for j in range(kw):
            d_xpad[:, i : i + ho * stride : stride, j : j + wo * stride : stride, :] += d_cols[:, :, :, i, j, :]
    d_x = d_xpad[:, pt : hpad - pb, pl : wpad - pr, :]
    return (d_x[0] if squeeze else d_x), d_kernels, d_bias


def maxpool2(x: np.ndarray, return_cache: bool = False):
    """2x2 max pooling with stride 2; odd edges padded with -inf.

    Returns (pooled, argmax) where argmax holds the winning window position
    (0..3, row-major within the 2x2 window; first position wins ties) for
    backward routing. Implemented with pairwise comparisons on strided
    views, no window materialization.
    """
    x = np.asarray(x)
    squeeze = x.ndim == 3
    xb = x[None] if squeeze else x
    if xb.ndim != 4:
        raise ShapeError(f"maxpool2 input must be (H,W,C) or (B,H,W,C), got {x.shape}")
    b, h, w, c = xb.shape
    he, we = h + h % 2, w + w % 2
    if (he, we) != (h, w):
        xb = np.pad(xb, ((0, 0), (0, he - h), (0, we - w), (0, 0)), constant_values=-np.inf)
    a = xb[:, 0::2, 0::2, :]
    bq = xb[:, 0::2, 1::2, :]
    cq = xb[:, 1::2, 0::2, :]
    dq = xb[:, 1::2, 1::2, :]
    top_first = a >= bq
    v1 = np.where(top_first, a, bq)
    bot_first = cq >= dq
    v2 = np.where(bot_first, cq, dq)
    take_top = v1 >= v2
    out = np.where(take_top, v1, v2)
    i1 = np.where(top_first, np.uint8(0), np.uint8(1))
    i2 = np.where(bot_first, np.uint8(2), np.uint8(3))
    argmax = np.where(take_top, i1, i2)
    if squeeze:
        out, argmax = out[0], argmax[0]
    if return_cache:
        return out, argmax, (x.shape, squeeze)
    return out, argmax


def maxpool2_backward(d_out: np.ndarray, argmax: np.ndarray, cache) -> np.ndarray:
    """Route pooled gradients back to the winning input positions."""
    in_shape, squeeze = cache
    d_out_b = d_out[None] if squeeze else d_out
    arg_b = argmax[None] if squeeze else argmax
    b, ho, wo, c = d_out_b.shape
    d_xpad = np.zeros((b, ho * 2, wo * 2, c), dtype=d_out_b.dtype)
    for p, (di, dj) in enumerate(((0, 0), (0, 1), (1, 0), (1, 1))):
        d_xpad[:, di::2, dj::2, :] = d_out_b * (arg_b == p)
    h = in_shape[1] if not squeeze else in_shape[0]
    w = in_shape[2] if not squeeze else in_shape[1]
    d_x = d_xpad[:, :h, :w, :]
    return d_x[0] if squeeze else d_x


def relu(x: np.ndarray, inplace: bool = False) -> np.ndarray:
    if inplace:
        return np.maximum(x, 0.0, out=x)
    return np.maximum(x, 0.0)


def relu_backward(d_out: np.ndarray, x: np.ndarray, inplace: bool = False) -> np.ndarray:
    """Zero the gradient where the pre-activation was <= 0.

    The post-activation works equally as the mask (a > 0 iff z > 0), so
    callers may pass either. inplace mutates d_out.
    """
    if inplace:
        return np.multiply(d_out, x > 0, out=d_out)
    return d_out * (x > 0)


def softmax_rows(scores: np.ndarray) -> np.ndarray:
    """Row-wise softmax over the last axis, max-subtracted for stability."""
    scores = np.asarray(scores)
    shifted = scores - scores.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_rows_backward(d_probs: np.ndarray, probs: np.ndarray) -> np.ndarray:
    """Jacobian-vector product of softmax: p * (g - sum(p*g))."""
    inner = (probs * d_probs).sum(axis=-1, keepdims=True)
    return probs * (d_probs - inner)


def sigmoid(z: np.ndarray) -> np.ndarray:
    """Logistic sigmoid, stable in both tails."""
    z = np.asarray(z)
    out = np.empty_like(z, dtype=z.dtype)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def finite_diff_grad(f, x: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function, element by element."""
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = f(x)
        flat[i] = orig - eps
        lo = f(x)
        flat[i] = orig
        gflat[i] = (hi - lo) / (2.0 * eps)
    return grad


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    """Norm-based relative disagreement, robust near zero."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / denom)
