"""Training objective: classification error, quantization reward, and the
optional bit-balance term, with exact analytic gradients.

The minimized quantity is

    alpha * E1  -  beta * E2  (+ e3_weight * E3 when enabled)

where E1 is summed log loss on the true class plus an L2 penalty on the
prediction weights, E2 = (1/L) sum_i ||h_i - 1/2||_p^p rewards near-binary
hash activations (entering with a minus sign: larger is better), and E3
pushes each sample's mean bit toward 1/2. E3 is off by default.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError

LOG_CLAMP = 1e-12


@dataclass
class LossConfig:
    loss_alpha: float = 1.0
    loss_beta: float = 1.0
    weight_decay: float = 5e-4   # L2 coefficient on the prediction weights
    p: int = 2
    e3_enabled: bool = False
    e3_weight: float = 1.0

    def __post_init__(self):
        if self.loss_alpha <= 0:
            raise ValueError(f"loss_alpha must be > 0, got {self.loss_alpha}")
        if self.loss_beta < 0:
            raise ValueError(f"loss_beta must be >= 0, got {self.loss_beta}")
        if self.weight_decay < 0:
            raise ValueError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if self.p not in (1, 2):
            raise ValueError(f"p must be 1 or 2, got {self.p}")


def check_one_hot(t_true: np.ndarray) -> np.ndarray:
    t = np.asarray(t_true)
    if t.ndim != 2:
        raise ShapeError(f"labels must be one-hot (n, M), got {t.shape}")
    ok = np.all((t == 0) | (t == 1)) and np.all(t.sum(axis=1) == 1)
    if not ok:
        raise ValueError("labels must be one-hot with exactly one 1 per row")
    return t


def e1_classification(
    t_true: np.ndarray, t_pred: np.ndarray, w_c: np.ndarray, weight_decay: float
) -> float:
    """Summed true-class log loss plus weight_decay * ||W_c||^2."""
    t = check_one_hot(t_true)
    pred = np.asarray(t_pred)
    if pred.shape != t.shape:
        raise ShapeError(f"prediction shape {pred.shape} != label shape {t.shape}")
    picked = np.maximum(pred[t == 1], LOG_CLAMP)
    return float(-np.log(picked).sum() + weight_decay * float((w_c**2).sum()))


def e1_grad_pred(t_true: np.ndarray, t_pred: np.ndarray) -> np.ndarray:
    """d E1 / d t_pred; zero where the log clamp is active."""
    t = np.asarray(t_true)
    pred = np.asarray(t_pred)
    grad = np.zeros_like(pred)
    mask = (t == 1) & (pred > LOG_CLAMP)
    grad[mask] = -1.0 / pred[mask]
    return grad


def e2_quantization(h_hat: np.ndarray, p: int = 2) -> float:
    """(1/L) sum over samples of ||h - 1/2||_p^p (to be maximized)."""
    h = np.atleast_2d(np.asarray(h_hat))
    bits = h.shape[-1]
    dev = np.abs(h - 0.5)
    return float((dev**p).sum() / bits)


def e2_grad(h_hat: np.ndarray, p: int = 2) -> np.ndarray:
    h = np.asarray(h_hat)
    bits = h.shape[-1]
    if p == 2:
        return 2.0 * (h - 0.5) / bits
    return np.sign(h - 0.5) / bits


def e3_bit_balance(h_hat: np.ndarray, p: int = 2) -> float:
    """Sum over samples of |mean(h) - 1/2|^p (to be minimized)."""
    h = np.atleast_2d(np.asarray(h_hat))
    dev = np.abs(h.mean(axis=-1) - 0.5)
    return float((dev**p).sum())


def e3_grad(h_hat: np.ndarray, p: int = 2) -> np.ndarray:
    h = np.atleast_2d(np.asarray(h_hat))
    bits = h.shape[-1]
    m = h.mean(axis=-1, keepdims=True) - 0.5
    if p == 2:
        g = 2.0 * m / bits
    else:
        g = np.sign(m) / bits
    return np.broadcast_to(g, h.shape).reshape(np.asarray(h_hat).shape)


@dataclass
class ObjectiveResult:
    value: float
    d_pred: np.ndarray
    d_hhat: np.ndarray | None
    d_wc: np.ndarray
    e1: float         # full classification term, regularizer included
    e1_data: float    # log-loss part only (what per-sample logs report)
    e2: float
    e3: float


def total_objective(
    t_true: np.ndarray,
    t_pred: np.ndarray,
    h_hat: np.ndarray | None,
    w_c: np.ndarray,
    cfg: LossConfig,
) -> ObjectiveResult:
    """Objective value, its components, and its gradients.

    d_pred seeds the prediction backward, d_hhat the hash backward (None
    when there is no hash layer), and d_wc is the regularizer's direct
    contribution to the prediction weights.
    """
    t = np.asarray(t_true)
    pred = np.asarray(t_pred)
    if pred.shape != t.shape:
        raise ShapeError(f"prediction shape {pred.shape} != label shape {t.shape}")
    e1 = e1_classification(t, pred, w_c, cfg.weight_decay)
    e1_data = e1 - cfg.weight_decay * float((w_c**2).sum())
    value = cfg.loss_alpha * e1
    d_pred = cfg.loss_alpha * e1_grad_pred(t, pred)
    d_wc = cfg.loss_alpha * 2.0 * cfg.weight_decay * w_c
    d_hhat = None
    e2 = e3 = 0.0
    if h_hat is not None:
        e2 = e2_quantization(h_hat, cfg.p)
        value -= cfg.loss_beta * e2
        d_hhat = -cfg.loss_beta * e2_grad(h_hat, cfg.p)
        if cfg.e3_enabled:
            e3 = e3_bit_balance(h_hat, cfg.p)
            value += cfg.e3_weight * e3
            d_hhat = d_hhat + cfg.e3_weight * e3_grad(h_hat, cfg.p)
    return ObjectiveResult(
        value=value, d_pred=d_pred, d_hhat=d_hhat, d_wc=d_wc,
        e1=e1, e1_data=e1_data, e2=e2, e3=e3,
    )
