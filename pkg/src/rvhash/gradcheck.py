"""Finite-difference verification of every analytic gradient path.

Each check scalarizes a forward pass with a fixed random cotangent (or uses
the training objective directly), computes the analytic gradient through
the production backward code, and compares against central differences.
Large parameter arrays are probed at a random subset of coordinates; the
relative error is the norm-ratio over the probed coordinates.

The CLI `gradcheck` subcommand runs this suite and exits non-zero when any
group's error reaches 1e-4 (64-bit).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import layers as L
from . import loss as LS
from . import tensor as T
from . import vlad as V
from .backbone import backbone_backward, backbone_forward, init_backbone
from .model import ModelConfig, init_model, model_backward, model_forward, named_params

THRESHOLD = 1e-4
MAX_PROBES = 24


@dataclass
class CheckResult:
    name: str
    max_rel_error: float
    passed: bool


def _probe_indices(arr: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    if arr.size <= MAX_PROBES:
        return np.arange(arr.size)
    return rng.choice(arr.size, size=MAX_PROBES, replace=False)


def _fd_at(f, arr: np.ndarray, indices: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """Central differences of scalar f() at selected flat coordinates of arr.

    eps is small enough that a perturbation almost never crosses a ReLU or
    max-pool kink, yet well above the float64 roundoff floor.
    """
    flat = arr.reshape(-1)
    out = np.empty(len(indices))
    for j, i in enumerate(indices):
        orig = flat[i]
        flat[i] = orig + eps
        hi = f()
        flat[i] = orig - eps
        lo = f()
        flat[i] = orig
        out[j] = (hi - lo) / (2 * eps)
    return out


def _compare(f, arrays: dict[str, np.ndarray], analytic: dict[str, np.ndarray],
             rng: np.random.Generator, corrupt: bool = False) -> float:
    worst = 0.0
    first = True
    for name, arr in arrays.items():
        g = np.asarray(analytic[name], dtype=np.float64).reshape(-1)
        idx = _probe_indices(arr, rng)
        fd = _fd_at(f, arr, idx)
        ga = g[idx].copy()
        if corrupt and first:
            # fault-injection hook: a visibly wrong first coordinate
            ga[0] += 0.05 * (1.0 + np.linalg.norm(ga))
            first = False
        worst = max(worst, T.relative_error(ga, fd))
    return worst


def _cot(rng: np.random.Generator, shape) -> np.ndarray:
    return rng.normal(size=shape)


def check_conv(seed: int, corrupt: bool = False) -> float:
    rng = T.make_rng(seed)
    x = rng.normal(size=(2, 5, 6, 2))
    k = rng.normal(size=(3, 3, 2, 4))
    b = rng.normal(size=4)
    out, cache = T.conv2d(x, k, b, padding=1, stride=1, return_cache=True)
    cot = _cot(rng, out.shape)

    def f():
        return float((T.conv2d(x, k, b, padding=1, stride=1) * cot).sum())

    dx, dk, db = T.conv2d_backward(cot, cache)
    return _compare(f, {"x": x, "k": k, "b": b}, {"x": dx, "k": dk, "b": db}, rng, corrupt)


def check_pool(seed: int, corrupt: bool = False) -> float:
    rng = T.make_rng(seed)
    x = rng.normal(size=(2, 6, 7, 3))
    out, arg, cache = T.maxpool2(x, return_cache=True)
    cot = _cot(rng, out.shape)

    def f():
        return float((T.maxpool2(x)[0] * cot).sum())

    dx = T.maxpool2_backward(cot, arg, cache)
    return _compare(f, {"x": x}, {"x": dx}, rng, corrupt)


def check_fc_transform(seed: int, corrupt: bool = False) -> float:
    rng = T.make_rng(seed)
    p = L.init_transform(8, 6, 5, rng)
    v = rng.normal(size=(3, 8))
    out, cache = L.transform_forward(v, p, return_cache=True)
    cot = _cot(rng, out.shape)

    def f():
        return float((L.transform_forward(v, p) * cot).sum())

    d_v, grads = L.transform_backward(cot, cache)
    arrays = {"v": v, "fc1_w": p.fc1_w, "fc1_b": p.fc1_b, "fc2_w": p.fc2_w, "fc2_b": p.fc2_b}
    analytic = {"v": d_v, **grads}
    return _compare(f, arrays, analytic, rng, corrupt)


def check_softmax_assign(seed: int, corrupt: bool = False) -> float:
    rng = T.make_rng(seed)
    p = V.init_vlad(4, 3, rng, alpha0=1.0)
    fm = rng.normal(size=(2, 1, 5, 3))   # batch of two 1x5 maps, D=3
    assign = V.vlad_soft_assign(fm, p)   # (2, 5, 4)
    cot = _cot(rng, assign.shape)

    def f():
        return float((V.vlad_soft_assign(fm, p) * cot).sum())

    desc = fm.reshape(2, 5, 3)
    d_desc, d_w, d_b = V.assign_backward(cot, assign, desc, p.assign_w)
    arrays = {"fm": fm, "assign_w": p.assign_w, "assign_b": p.assign_b}
    analytic = {"fm": d_desc.reshape(fm.shape), "assign_w": d_w, "assign_b": d_b}
    return _compare(f, arrays, analytic, rng, corrupt)


def _check_vlad(seed: int, style: str, corrupt: bool) -> float:
    rng = T.make_rng(seed)
    desc = rng.normal(size=(12, 3)) + 0.5
    p = V.init_vlad(4, 3, rng, style=style, alpha0=1.0,
                    sample_descriptors=desc if style == V.NETVLAD else None)
    fm = rng.normal(size=(2, 6, 3))
    out, cache = V.vlad_forward(fm, p, return_cache=True)
    cot = _cot(rng, out.shape)

    def f():
        return float((V.vlad_forward(fm, p) * cot).sum())

    d_fm, grads = V.vlad_backward(cot, cache)
    arrays = {"fm": fm, "anchors": p.anchors, "assign_w": p.assign_w, "assign_b": p.assign_b}
    analytic = {"fm": d_fm, **grads}
    return _compare(f, arrays, analytic, rng, corrupt)


def check_vlad_aggregate(seed: int, corrupt: bool = False) -> float:
    return _check_vlad(seed, V.RANDOM, corrupt)


def check_vlad_netvlad(seed: int, corrupt: bool = False) -> float:
    return _check_vlad(seed, V.NETVLAD, corrupt)


def check_hash(seed: int, corrupt: bool = False) -> float:
    rng = T.make_rng(seed)
    p = L.init_hash(6, 5, rng)
    x = rng.normal(size=(3, 6))
    out, cache = L.hash_forward(x, p, return_cache=True)
    cot = _cot(rng, out.shape)

    def f():
        return float((L.hash_forward(x, p) * cot).sum())

    d_x, grads = L.hash_backward(cot, cache)
    return _compare(
        f, {"x": x, "w": p.w, "b": p.b}, {"x": d_x, "w": grads["w"], "b": grads["b"]}, rng, corrupt
    )


def _check_predict(seed: int, activation: str, corrupt: bool) -> float:
    rng = T.make_rng(seed)
    p = L.init_predict(5, 4, rng, activation=activation)
    h = rng.uniform(0.05, 0.95, size=(3, 5))
    out, cache = L.predict_forward(h, p, return_cache=True)
    cot = _cot(rng, out.shape)

    def f():
        return float((L.predict_forward(h, p) * cot).sum())

    d_h, grads = L.predict_backward(cot, cache)
    return _compare(f, {"h": h, "w": p.w}, {"h": d_h, "w": grads["w"]}, rng, corrupt)


def check_predict_softmax(seed: int, corrupt: bool = False) -> float:
    return _check_predict(seed, L.SOFTMAX, corrupt)


def check_predict_sigmoid(seed: int, corrupt: bool = False) -> float:
    return _check_predict(seed, L.SIGMOID, corrupt)


def check_backbone(seed: int, corrupt: bool = False) -> float:
    rng = T.make_rng(seed)
    p = init_backbone(1, rng)
    x = rng.normal(size=(2, 8, 8, 1))
    out, cache = backbone_forward(x, p, return_cache=True)
    cot = _cot(rng, out.shape)

    def f():
        return float((backbone_forward(x, p) * cot).sum())

    d_x, grads = backbone_backward(cot, cache, need_input_grad=True)
    arrays = {"x": x, "conv1_w": p.conv1_w, "conv1_b": p.conv1_b,
              "conv2_w": p.conv2_w, "conv2_b": p.conv2_b}
    analytic = {"x": d_x, **grads}
    return _compare(f, arrays, analytic, rng, corrupt)


def check_e1(seed: int, corrupt: bool = False) -> float:
    rng = T.make_rng(seed)
    probs = rng.uniform(0.05, 0.95, size=(4, 3))
    onehot = np.zeros((4, 3))
    onehot[np.arange(4), rng.integers(0, 3, size=4)] = 1.0
    w_c = rng.normal(size=(5, 3))
    lam = 0.01

    def f():
        return LS.e1_classification(onehot, probs, w_c, lam)

    analytic = {"probs": LS.e1_grad_pred(onehot, probs), "w_c": 2 * lam * w_c}
    return _compare(f, {"probs": probs, "w_c": w_c}, analytic, rng, corrupt)


def _check_e2(seed: int, p_norm: int, corrupt: bool) -> float:
    rng = T.make_rng(seed)
    h = np.where(rng.random((4, 6)) < 0.5, rng.uniform(0.05, 0.45, (4, 6)),
                 rng.uniform(0.55, 0.95, (4, 6)))

    def f():
        return LS.e2_quantization(h, p_norm)

    return _compare(f, {"h": h}, {"h": LS.e2_grad(h, p_norm)}, rng, corrupt)


def check_e2_p1(seed: int, corrupt: bool = False) -> float:
    return _check_e2(seed, 1, corrupt)


def check_e2_p2(seed: int, corrupt: bool = False) -> float:
    return _check_e2(seed, 2, corrupt)


def _check_e3(seed: int, p_norm: int, corrupt: bool) -> float:
    rng = T.make_rng(seed)
    h = rng.uniform(0.55, 0.95, size=(4, 6))   # means stay off 0.5 for p=1

    def f():
        return LS.e3_bit_balance(h, p_norm)

    return _compare(f, {"h": h}, {"h": LS.e3_grad(h, p_norm)}, rng, corrupt)


def check_e3_p1(seed: int, corrupt: bool = False) -> float:
    return _check_e3(seed, 1, corrupt)


def check_e3_p2(seed: int, corrupt: bool = False) -> float:
    return _check_e3(seed, 2, corrupt)


def _objective_config(variant: str) -> ModelConfig:
    return ModelConfig(
        variant=variant,
        input_shape=(8, 8, 1),
        input_kind="image",
        n_classes=3,
        clusters=2,
        code_bits=5,
        d1=7,
        d2=6,
        alpha0=1.0,
    )


def _check_objective(seed: int, variant: str, corrupt: bool,
                     e3: bool = False, vlad_style: str = V.RANDOM) -> float:
    rng = T.make_rng(seed)
    config = _objective_config(variant)
    config.vlad_style = vlad_style
    x = rng.normal(size=(4, 8, 8, 1)) * 0.5 + 0.5
    labels = rng.integers(0, 3, size=4)
    onehot = np.zeros((4, 3))
    onehot[np.arange(4), labels] = 1.0
    sample_inputs = x if config.effective_vlad_style == V.NETVLAD else None
    params = init_model(config, rng, sample_inputs)
    cfg = LS.LossConfig(loss_alpha=1.3, loss_beta=0.7, weight_decay=0.01,
                        p=2, e3_enabled=e3, e3_weight=0.2)

    def objective() -> float:
        out = model_forward(x, params, config)
        return LS.total_objective(onehot, out.probs, out.h_hat, params.predict.w, cfg).value

    out = model_forward(x, params, config, return_cache=True)
    obj = LS.total_objective(onehot, out.probs, out.h_hat, params.predict.w, cfg)
    d_input, grads = model_backward(out, params, config, obj.d_pred, obj.d_hhat,
                                    need_input_grad=True)
    grads["predict/w"] = grads["predict/w"] + obj.d_wc
    arrays = {"input": x, **named_params(params)}
    analytic = {"input": d_input, **grads}
    return _compare(objective, arrays, analytic, rng, corrupt)


def check_objective_random_vlad(seed: int, corrupt: bool = False) -> float:
    return _check_objective(seed, "random_vlad", corrupt)


def check_objective_netvlad_style(seed: int, corrupt: bool = False) -> float:
    return _check_objective(seed, "random_vlad", corrupt, vlad_style=V.NETVLAD)


def check_objective_ssdh_only(seed: int, corrupt: bool = False) -> float:
    return _check_objective(seed, "ssdh_only", corrupt, e3=True)


def check_objective_netvlad(seed: int, corrupt: bool = False) -> float:
    return _check_objective(seed, "netvlad", corrupt)


def check_objective_backbone_only(seed: int, corrupt: bool = False) -> float:
    return _check_objective(seed, "backbone_only", corrupt)


CHECKS = {
    "conv": check_conv,
    "pool": check_pool,
    "fc_transform": check_fc_transform,
    "softmax_assign": check_softmax_assign,
    "vlad_aggregate": check_vlad_aggregate,
    "vlad_netvlad": check_vlad_netvlad,
    "hash_sigmoid": check_hash,
    "predict_softmax": check_predict_softmax,
    "predict_sigmoid": check_predict_sigmoid,
    "backbone": check_backbone,
    "loss_e1": check_e1,
    "loss_e2_p1": check_e2_p1,
    "loss_e2_p2": check_e2_p2,
    "loss_e3_p1": check_e3_p1,
    "loss_e3_p2": check_e3_p2,
    "objective_random_vlad": check_objective_random_vlad,
    "objective_netvlad_style": check_objective_netvlad_style,
    "objective_ssdh_only": check_objective_ssdh_only,
    "objective_netvlad": check_objective_netvlad,
    "objective_backbone_only": check_objective_backbone_only,
}


def run_suite(seeds=range(3), names=None, corrupt: str | None = None) -> list[CheckResult]:
    results = []
    for name in names or CHECKS:
        fn = CHECKS[name]
        worst = max(fn(seed, corrupt=(corrupt == name)) for seed in seeds)
        results.append(CheckResult(name=name, max_rel_error=worst, passed=worst < THRESHOLD))
    return results
