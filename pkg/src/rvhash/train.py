"""Deterministic point-wise SGD training with momentum and checkpointing.

Update rule: v <- momentum * v - lr * g; theta <- theta + v.
Every epoch reshuffles with the seeded generator; logged objective/E1/E2
are per-sample means over the epoch. Training touches each sample exactly
once per epoch (point-wise losses only), so epoch cost is linear in N.

Checkpoint file (RVCK, little-endian): magic "RVCK", u32 version, then a
sequence of length-prefixed named tensors: u16 name length + name bytes,
u8 ndim + ndim x u32 dims, then float64 data. Metadata (epoch counter,
generator state, config echo) rides along as reserved "__"-named tensors
whose u64/utf-8 payloads are bit-cast into float64 words.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .data import LabeledDataset, to_one_hot
from .errors import DataError, NumericError, ShapeError
from .loss import LossConfig, total_objective
from .model import (
    ModelConfig,
    ModelParams,
    init_model,
    model_backward,
    model_forward,
    named_params,
)
from . import backbone as BB
from . import layers as L
from . import vlad as V

RVCK_MAGIC = b"RVCK"
RVCK_VERSION = 1
SAMPLE_DESCRIPTOR_CAP = 512   # images used for k-means anchor seeding


def _keep_malloc_arena() -> None:
    """Stop glibc from returning large buffers to the OS between batches.

    The training loop allocates ~100 MB of short-lived arrays per step;
    with default malloc thresholds each step pays page-fault cost for the
    same memory again. Harmless no-op on non-glibc platforms.
    """
    try:
        import ctypes

        libc = ctypes.CDLL("libc.so.6", use_errno=True)
        libc.mallopt(-3, 1 << 30)   # M_MMAP_THRESHOLD: keep big blocks in the arena
        libc.mallopt(-1, 1 << 30)   # M_TRIM_THRESHOLD: do not trim back to the OS
    except (OSError, AttributeError):
        pass


@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 64
    learning_rate: float = 0.01
    momentum: float = 0.9
    lr_decay_epochs: tuple[int, ...] = (40,)
    seed: int = 0
    freeze_backbone: bool = False
    dry_run: bool = False

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")


@dataclass
class EpochStats:
    epoch: int
    objective: float
    e1: float
    e2: float
    val_top1: float
    steps: int
    samples: int


@dataclass
class TrainResult:
    params: ModelParams
    velocity: dict[str, np.ndarray]
    log: list[EpochStats] = field(default_factory=list)
    epoch: int = 0
    rng_state: dict | None = None


def sgd_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    velocity: dict[str, np.ndarray],
    lr: float,
    momentum: float,
) -> None:
    """Momentum SGD, in place over the named parameter arrays."""
    for name, g in grads.items():
        p = params.get(name)
        if p is None or p.shape != g.shape:
            raise ShapeError(
                f"gradient/parameter mismatch for {name!r}: "
                f"{None if p is None else p.shape} vs {g.shape}"
            )
        v = velocity[name]
        v *= momentum
        v -= lr * g
        p += v


def _epoch_lr(base: float, epoch: int, decays: tuple[int, ...]) -> float:
    return base * (0.1 ** sum(1 for d in decays if epoch >= d))


def _validation_top1(
    val: LabeledDataset, params: ModelParams, config: ModelConfig, chunk: int = 256
) -> float:
    wrong = 0
    for lo in range(0, len(val), chunk):
        xb = val.samples[lo : lo + chunk]
        out = model_forward(xb, params, config)
        wrong += int((np.argmax(out.probs, axis=1) != val.labels[lo : lo + chunk]).sum())
    return wrong / len(val)


def sample_descriptor_inputs(ds: LabeledDataset) -> np.ndarray:
    return ds.samples[: min(SAMPLE_DESCRIPTOR_CAP, len(ds))]


def train(
    train_ds: LabeledDataset,
    model_config: ModelConfig,
    train_config: TrainConfig,
    loss_config: LossConfig,
    val_ds: LabeledDataset | None = None,
    resume: "TrainResult | None" = None,
    epoch_callback=None,
) -> TrainResult:
    """Run the SGD loop; deterministic given config + seed."""
    n = len(train_ds)
    if n == 0:
        raise DataError("training dataset is empty")
    labels = np.asarray(train_ds.labels)
    if labels.min() < 0 or labels.max() >= model_config.n_classes:
        raise DataError(
            f"labels out of range: found [{labels.min()}, {labels.max()}], "
            f"expected [0, {model_config.n_classes})"
        )

    ss = np.random.SeedSequence(train_config.seed)
    init_ss, loop_ss = ss.spawn(2)
    if resume is None:
        init_rng = np.random.Generator(np.random.PCG64(init_ss))
        sample_inputs = None
        if model_config.effective_vlad_style == V.NETVLAD and model_config.variant in (
            "random_vlad",
            "netvlad",
        ):
            sample_inputs = sample_descriptor_inputs(train_ds)
        params = init_model(model_config, init_rng, sample_inputs)
        velocity = {k: np.zeros_like(v) for k, v in named_params(params).items()}
        loop_rng = np.random.Generator(np.random.PCG64(loop_ss))
        start_epoch = 0
        log: list[EpochStats] = []
    else:
        params = resume.params
        velocity = resume.velocity
        loop_rng = np.random.Generator(np.random.PCG64())
        loop_rng.bit_generator.state = resume.rng_state
        start_epoch = resume.epoch
        log = list(resume.log)

    if train_config.dry_run:
        return TrainResult(
            params=params,
            velocity=velocity,
            log=log,
            epoch=start_epoch,
            rng_state=loop_rng.bit_generator.state,
        )

    _keep_malloc_arena()
    dtype = model_config.np_dtype
    x_all = np.ascontiguousarray(train_ds.samples, dtype=dtype)
    t_all = to_one_hot(labels, model_config.n_classes, dtype=dtype)
    named = named_params(params)
    bsz = train_config.batch_size

    for epoch in range(start_epoch + 1, train_config.epochs + 1):
        lr = _epoch_lr(train_config.learning_rate, epoch, tuple(train_config.lr_decay_epochs))
        perm = loop_rng.permutation(n)
        e1_sum = e2_sum = e3_sum = 0.0
        steps = 0
        for lo in range(0, n, bsz):
            idx = perm[lo : lo + bsz]
            out = model_forward(x_all[idx], params, model_config, return_cache=True)
            obj = total_objective(
                t_all[idx], out.probs, out.h_hat, params.predict.w, loss_config
            )
            # per-sample mean reduction for the data terms; the weight-decay
            # pull is applied once per step (batch-size-invariant lr semantics)
            scale = 1.0 / len(idx)
            _, grads = model_backward(
                out,
                params,
                model_config,
                obj.d_pred * scale,
                None if obj.d_hhat is None else obj.d_hhat * scale,
                freeze_backbone=train_config.freeze_backbone,
            )
            grads["predict/w"] = grads["predict/w"] + obj.d_wc
            sgd_step(named, grads, velocity, lr, train_config.momentum)
            e1_sum += obj.e1_data
            e2_sum += obj.e2
            e3_sum += obj.e3
            steps += 1
        for name, arr in named.items():
            if not np.all(np.isfinite(arr)):
                raise NumericError(f"non-finite values in {name!r} after epoch {epoch}")
        objective = (
            loss_config.loss_alpha * e1_sum
            - loss_config.loss_beta * e2_sum
            + (loss_config.e3_weight * e3_sum if loss_config.e3_enabled else 0.0)
        ) / n
        val_top1 = (
            _validation_top1(val_ds, params, model_config) if val_ds is not None else float("nan")
        )
        stats = EpochStats(
            epoch=epoch,
            objective=objective,
            e1=e1_sum / n,
            e2=e2_sum / n,
            val_top1=val_top1,
            steps=steps,
            samples=n,
        )
        log.append(stats)
        if epoch_callback is not None:
            epoch_callback(stats)

    return TrainResult(
        params=params,
        velocity=velocity,
        log=log,
        epoch=train_config.epochs,
        rng_state=loop_rng.bit_generator.state,
    )


# --- checkpoint io -------------------------------------------------------


def _u64_to_f64(words: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(words, dtype="<u8").view("<f8")


def _f64_to_u64(vals: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(vals, dtype="<f8").view("<u8")


def _bytes_to_tensor(data: bytes) -> np.ndarray:
    padded = data + b"\x00" * (-len(data) % 8)
    return _u64_to_f64(np.frombuffer(padded, dtype="<u8"))


def _tensor_to_bytes(arr: np.ndarray, length: int) -> bytes:
    return _f64_to_u64(arr).tobytes()[:length]


def _rng_state_to_tensor(state: dict) -> np.ndarray:
    s = state["state"]["state"]
    inc = state["state"]["inc"]
    words = np.array(
        [
            s & 0xFFFFFFFFFFFFFFFF,
            (s >> 64) & 0xFFFFFFFFFFFFFFFF,
            inc & 0xFFFFFFFFFFFFFFFF,
            (inc >> 64) & 0xFFFFFFFFFFFFFFFF,
            int(state.get("has_uint32", 0)),
            int(state.get("uinteger", 0)),
        ],
        dtype=np.uint64,
    )
    return _u64_to_f64(words)


def _tensor_to_rng_state(arr: np.ndarray) -> dict:
    w = _f64_to_u64(arr)
    return {
        "bit_generator": "PCG64",
        "state": {
            "state": int(w[0]) | (int(w[1]) << 64),
            "inc": int(w[2]) | (int(w[3]) << 64),
        },
        "has_uint32": int(w[4]),
        "uinteger": int(w[5]),
    }


@dataclass
class Checkpoint:
    tensors: dict[str, np.ndarray]
    epoch: int
    rng_state: dict | None
    config_text: str
    version: int = RVCK_VERSION


def save_checkpoint(path, result: TrainResult, config_text: str = "") -> None:
    tensors: dict[str, np.ndarray] = {}
    for name, arr in named_params(result.params).items():
        tensors[name] = np.asarray(arr, dtype=np.float64)
    for name, arr in result.velocity.items():
        tensors[f"velocity/{name}"] = np.asarray(arr, dtype=np.float64)
    tensors["__epoch__"] = np.array([float(result.epoch)])
    if result.rng_state is not None:
        tensors["__rng__"] = _rng_state_to_tensor(result.rng_state)
    cfg_bytes = config_text.encode("utf-8")
    tensors["__config_len__"] = np.array([float(len(cfg_bytes))])
    tensors["__config__"] = _bytes_to_tensor(cfg_bytes)
    with open(path, "wb") as f:
        f.write(RVCK_MAGIC)
        f.write(struct.pack("<I", RVCK_VERSION))
        for name in sorted(tensors):
            arr = np.ascontiguousarray(tensors[name], dtype="<f8")
            nb = name.encode("utf-8")
            f.write(struct.pack("<H", len(nb)))
            f.write(nb)
            f.write(struct.pack("<B", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(arr.tobytes())


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != RVCK_MAGIC:
        raise DataError(f"bad checkpoint magic {blob[:4]!r} in {path}")
    if len(blob) < 8:
        raise DataError(f"truncated checkpoint header in {path}")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != RVCK_VERSION:
        raise DataError(f"unsupported checkpoint version {version} in {path}")
    off = 8
    tensors: dict[str, np.ndarray] = {}
    while off < len(blob):
        try:
            (name_len,) = struct.unpack_from("<H", blob, off)
            off += 2
            name = blob[off : off + name_len].decode("utf-8")
            if len(blob[off : off + name_len]) != name_len:
                raise struct.error("short name")
            off += name_len
            (ndim,) = struct.unpack_from("<B", blob, off)
            off += 1
            shape = struct.unpack_from(f"<{ndim}I", blob, off)
            off += 4 * ndim
            count = int(np.prod(shape, dtype=np.int64)) if ndim else 1
            nbytes = 8 * count
            if off + nbytes > len(blob):
                raise struct.error("short tensor data")
            arr = np.frombuffer(blob, dtype="<f8", count=count, offset=off).reshape(shape)
            off += nbytes
        except struct.error as exc:
            raise DataError(f"truncated checkpoint record in {path}: {exc}") from exc
        tensors[name] = arr.copy()
    epoch_arr = tensors.pop("__epoch__", None)
    epoch = int(epoch_arr[0]) if epoch_arr is not None else 0
    rng_arr = tensors.pop("__rng__", None)
    rng_state = _tensor_to_rng_state(rng_arr) if rng_arr is not None else None
    cfg_len_arr = tensors.pop("__config_len__", None)
    cfg_arr = tensors.pop("__config__", None)
    config_text = ""
    if cfg_arr is not None and cfg_len_arr is not None:
        config_text = _tensor_to_bytes(cfg_arr, int(cfg_len_arr[0])).decode("utf-8")
    return Checkpoint(
        tensors=tensors, epoch=epoch, rng_state=rng_state, config_text=config_text,
        version=version,
    )


def skeleton_params(config: ModelConfig) -> ModelParams:
    """Zero-valued parameters with the architecture's shapes (for loading)."""
    params = ModelParams()
    dt = config.np_dtype
    if config.input_kind == "image":
        cin = config.input_shape[2]
        params.backbone = BB.BackboneParams(
            conv1_w=np.zeros((3, 3, cin, BB.CONV1_CHANNELS), dtype=dt),
            conv1_b=np.zeros(BB.CONV1_CHANNELS, dtype=dt),
            conv2_w=np.zeros((3, 3, BB.CONV1_CHANNELS, BB.CONV2_CHANNELS), dtype=dt),
            conv2_b=np.zeros(BB.CONV2_CHANNELS, dtype=dt),
        )
    if config.variant in ("random_vlad", "netvlad"):
        k, d = config.clusters, config.descriptor_dim
        params.vlad = V.VladParams(
            anchors=np.zeros((k, d), dtype=dt),
            assign_w=np.zeros((k, d), dtype=dt),
            assign_b=np.zeros(k, dtype=dt),
            style=config.effective_vlad_style,
        )
    if config.variant in ("random_vlad", "ssdh_only"):
        in_dim = (
            config.clusters * config.descriptor_dim
            if config.variant == "random_vlad"
            else config.flat_dim
        )
        if config.transform_enabled:
            params.transform = L.TransformParams(
                fc1_w=np.zeros((in_dim, config.d1), dtype=dt),
                fc1_b=np.zeros(config.d1, dtype=dt),
                fc2_w=np.zeros((config.d1, config.d2), dtype=dt),
                fc2_b=np.zeros(config.d2, dtype=dt),
                enabled=True,
            )
            hash_in = config.d2
        else:
            params.transform = L.TransformParams(None, None, None, None, enabled=False)
            hash_in = in_dim
        params.hash = L.HashParams(
            w=np.zeros((hash_in, config.code_bits), dtype=dt),
            b=np.zeros(config.code_bits, dtype=dt),
        )
        predict_in = config.code_bits
    elif config.variant == "netvlad":
        predict_in = config.clusters * config.descriptor_dim
    else:
        predict_in = config.flat_dim
    params.predict = L.PredictParams(
        w=np.zeros((predict_in, config.n_classes), dtype=dt),
        activation=config.predict_activation,
    )
    return params


def restore(ckpt: Checkpoint, config: ModelConfig) -> TrainResult:
    """Bind checkpoint tensors to a config-shaped model, validating shapes."""
    params = skeleton_params(config)
    named = named_params(params)
    velocity: dict[str, np.ndarray] = {}
    seen = set()
    for name, arr in ckpt.tensors.items():
        target_name = name[len("velocity/") :] if name.startswith("velocity/") else name
        target = named.get(target_name)
        if target is None:
            raise DataError(f"checkpoint tensor {name!r} does not exist in this architecture")
        if tuple(arr.shape) != tuple(target.shape):
            raise DataError(
                f"checkpoint tensor {name!r} has shape {tuple(arr.shape)}, "
                f"architecture expects {tuple(target.shape)}"
            )
        if name.startswith("velocity/"):
            velocity[target_name] = arr.astype(config.np_dtype)
        else:
            named[name][...] = arr.astype(config.np_dtype)
            seen.add(name)
    missing = set(named) - seen
    if missing:
        raise DataError(f"checkpoint is missing tensors: {sorted(missing)}")
    for name in named:
        velocity.setdefault(name, np.zeros_like(named[name]))
    return TrainResult(
        params=params, velocity=velocity, log=[], epoch=ckpt.epoch, rng_state=ckpt.rng_state
    )


def write_epoch_log(path, log: list[EpochStats]) -> None:
    """One tab-separated line per epoch: epoch, objective, E1, E2, val_top1."""
    with open(path, "w", encoding="utf-8") as f:
        for s in log:
            f.write(
                f"{s.epoch}\t{repr(float(s.objective))}\t{repr(float(s.e1))}\t"
                f"{repr(float(s.e2))}\t{repr(float(s.val_top1))}\n"
            )
