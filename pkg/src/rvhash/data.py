"""Dataset ingestion and deterministic splits.

Two on-disk formats are understood:

* IDX (big-endian, the MNIST container): image magic 0x00000803, label
  magic 0x00000801. Pixels are scaled to [0, 1] by /255 on load.
* RVF1 (little-endian feature-map container):
  magic "RVF1", u32 version, u64 count, u32 H, u32 W, u32 D, u32 M,
  then per sample: u32 label, H*W*D float32 values, row-major.

Readers reject malformed input with DataError; they never crash.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError, DataError

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801
RVF_MAGIC = b"RVF1"
RVF_VERSION = 1


@dataclass
class LabeledDataset:
    samples: np.ndarray          # (n, H, W, C); images in [0,1], or raw feature maps
    labels: np.ndarray           # (n,) integer class ids in [0, n_classes)
    n_classes: int
    kind: str                    # "image" | "features"
    source: str = ""

    def __post_init__(self):
        if len(self.samples) != len(self.labels):
            raise DataError(
                f"sample/label count mismatch: {len(self.samples)} vs {len(self.labels)}"
            )

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def sample_shape(self) -> tuple[int, int, int]:
        return tuple(self.samples.shape[1:])

    def subset(self, indices: np.ndarray) -> "LabeledDataset":
        return replace(self, samples=self.samples[indices], labels=self.labels[indices])


def _read_exact(f, n: int, what: str) -> bytes:
    data = f.read(n)
    if len(data) != n:
        raise DataError(f"truncated file while reading {what}: wanted {n} bytes, got {len(data)}")
    return data


def _read_be32(f, what: str) -> int:
    return struct.unpack(">I", _read_exact(f, 4, what))[0]


def read_idx(images_path, labels_path) -> LabeledDataset:
    """Parse an MNIST-style IDX image/label file pair."""
    with open(images_path, "rb") as f:
        magic = _read_be32(f, "image magic")
        if magic != IDX_IMAGE_MAGIC:
            raise DataError(f"bad IDX image magic 0x{magic:08x} in {images_path}")
        count = _read_be32(f, "image count")
        rows = _read_be32(f, "image rows")
        cols = _read_be32(f, "image cols")
        raw = _read_exact(f, count * rows * cols, "pixel data")
        if f.read(1):
            raise DataError(f"trailing bytes after pixel data in {images_path}")
    with open(labels_path, "rb") as f:
        magic = _read_be32(f, "label magic")
        if magic != IDX_LABEL_MAGIC:
            raise DataError(f"bad IDX label magic 0x{magic:08x} in {labels_path}")
        lcount = _read_be32(f, "label count")
        lraw = _read_exact(f, lcount, "label data")
        if f.read(1):
            raise DataError(f"trailing bytes after label data in {labels_path}")
    if count != lcount:
        raise DataError(f"image/label count mismatch: {count} images vs {lcount} labels")
    images = np.frombuffer(raw, dtype=np.uint8).reshape(count, rows, cols, 1)
    labels = np.frombuffer(lraw, dtype=np.uint8).astype(np.int64)
    n_classes = int(labels.max()) + 1 if count else 0
    return LabeledDataset(
        samples=images.astype(np.float64) / 255.0,
        labels=labels,
        n_classes=n_classes,
        kind="image",
        source=str(images_path),
    )


def write_idx(images_path, labels_path, images: np.ndarray, labels: np.ndarray) -> None:
    """Write uint8 images (n, H, W) and labels (n,) in IDX format."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    n, rows, cols = images.shape
    with open(images_path, "wb") as f:
        f.write(struct.pack(">IIII", IDX_IMAGE_MAGIC, n, rows, cols))
        f.write(images.tobytes())
    with open(labels_path, "wb") as f:
        f.write(struct.pack(">II", IDX_LABEL_MAGIC, n))
        f.write(labels.tobytes())


def read_rvf(path) -> LabeledDataset:
    """Load a feature-map dataset (RVF1)."""
    with open(path, "rb") as f:
        magic = _read_exact(f, 4, "magic")
        if magic != RVF_MAGIC:
            raise DataError(f"bad RVF magic {magic!r} in {path}")
        version = struct.unpack("<I", _read_exact(f, 4, "version"))[0]
        if version != RVF_VERSION:
            raise DataError(f"unsupported RVF version {version} in {path}")
        count, h, w, d, m = struct.unpack("<QIIII", _read_exact(f, 24, "header"))
        if min(h, w, d) < 1 and count > 0:
            raise DataError(f"bad RVF shape {h}x{w}x{d} in {path}")
        per = h * w * d
        samples = np.empty((count, h, w, d), dtype=np.float32)
        labels = np.empty(count, dtype=np.int64)
        for i in range(count):
            (label,) = struct.unpack("<I", _read_exact(f, 4, f"label of record {i}"))
            if label >= m:
                raise DataError(f"record {i} has label {label} >= class count {m} in {path}")
            labels[i] = label
            buf = _read_exact(f, 4 * per, f"features of record {i}")
            samples[i] = np.frombuffer(buf, dtype="<f4").reshape(h, w, d)
        if f.read(1):
            raise DataError(f"trailing bytes after {count} records in {path}")
    return LabeledDataset(
        samples=samples, labels=labels, n_classes=int(m), kind="features", source=str(path)
    )


def write_rvf(path, ds: LabeledDataset) -> None:
    """Write a feature-map dataset (RVF1). Sample payload is float32."""
    samples = np.ascontiguousarray(ds.samples, dtype="<f4")
    if samples.ndim != 4:
        raise DataError(f"RVF samples must be (n,H,W,D), got {samples.shape}")
    n, h, w, d = samples.shape
    if np.any(ds.labels < 0) or (n and int(ds.labels.max()) >= ds.n_classes):
        raise DataError("labels out of range for declared class count")
    with open(path, "wb") as f:
        f.write(RVF_MAGIC)
        f.write(struct.pack("<I", RVF_VERSION))
        f.write(struct.pack("<QIIII", n, h, w, d, ds.n_classes))
        for i in range(n):
            f.write(struct.pack("<I", int(ds.labels[i])))
            f.write(samples[i].tobytes())


@dataclass
class SplitSpec:
    seed: int
    train_fraction: float = 5.0 / 6.0
    query_count: int = 1000
    sample_limit: int = 0        # 0 = use everything


@dataclass
class SplitResult:
    train: LabeledDataset
    database: LabeledDataset
    queries: LabeledDataset
    query_db_ids: np.ndarray     # position of each query inside the database split


def split_and_sample(ds: LabeledDataset, spec: SplitSpec) -> SplitResult:
    """Seeded shuffle -> train/database split -> query sample (no replacement).

    The database is the held-out validation part; queries are drawn from it,
    so query_db_ids identify them for self-exclusion during evaluation.
    """
    if not (0.0 < spec.train_fraction <= 1.0):
        raise ConfigError(f"train_fraction must be in (0, 1], got {spec.train_fraction}")
    n = len(ds)
    rng = np.random.default_rng(np.uint64(spec.seed))
    perm = rng.permutation(n)
    if spec.sample_limit:
        if spec.sample_limit > n:
            raise ConfigError(f"sample_limit {spec.sample_limit} exceeds dataset size {n}")
        perm = perm[: spec.sample_limit]
    used = len(perm)
    train_n = int(round(spec.train_fraction * used))
    db_n = used - train_n
    if spec.query_count > 0 and db_n == 0:
        raise ConfigError(
            "degenerate split: train_fraction leaves an empty database but queries were requested"
        )
    if spec.query_count > db_n:
        raise ConfigError(f"query_count {spec.query_count} exceeds database size {db_n}")
    train_idx = perm[:train_n]
    db_idx = perm[train_n:]
    q_pos = rng.permutation(db_n)[: spec.query_count]
    return SplitResult(
        train=ds.subset(train_idx),
        database=ds.subset(db_idx),
        queries=ds.subset(db_idx[q_pos]),
        query_db_ids=q_pos.astype(np.uint64),
    )


def to_one_hot(labels: np.ndarray, n_classes: int, dtype=np.float64) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise DataError(
            f"labels must lie in [0, {n_classes}), got range "
            f"[{labels.min()}, {labels.max()}]"
        )
    out = np.zeros((len(labels), n_classes), dtype=dtype)
    out[np.arange(len(labels)), labels] = 1.0
    return out
