"""Dataset ingestion and non-stationary stream scheduling.

Supports the standard IDX image/label files (optionally gzipped), a
generic binary matrix+labels format for non-IDX sources, and a synthetic
blob generator for desk-scale runs. Streams are pure functions of
(spec, dataset, step, rng), so a training run's batch sequence is fully
determined by the seed and stays unchanged when unrelated features
(replay, expansion) are toggled.
"""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataFormatError, StreamExhausted
from .rng import RngState

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

MATRIX_MAGIC = b"MVDS\x01\x00"

STREAM_MODES = ("iid", "sequential", "continuous_drift", "split_task")


@dataclass
class Dataset:
    images: np.ndarray          # (N, D) float64 in [0, 1]
    labels: np.ndarray          # (N,) int64 in [0, n_classes)
    split: str = "train"
    n_classes: int = 0
    image_hw: tuple[int, int] = (0, 0)
    _by_class: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 2 or self.images.shape[0] != self.labels.shape[0]:
            raise DataFormatError(
                f"count: images {self.images.shape} inconsistent with labels {self.labels.shape}")
        if self.images.size and (self.images.min() < 0.0 or self.images.max() > 1.0):
            raise DataFormatError("payload: intensities outside [0, 1]")
        if self.n_classes == 0:
            self.n_classes = int(self.labels.max()) + 1 if len(self.labels) else 0
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise DataFormatError("payload: label outside [0, n_classes)")
        if self.image_hw == (0, 0):
            side = int(round(np.sqrt(self.dim)))
            self.image_hw = (side, self.dim // side) if side * (self.dim // side) == self.dim else (1, self.dim)

    def __len__(self) -> int:
        return self.images.shape[0]

    @property
    def dim(self) -> int:
        return self.images.shape[1]

    def class_indices(self, c: int) -> np.ndarray:
        if c not in self._by_class:
            self._by_class[c] = np.flatnonzero(self.labels == c)
        return self._by_class[c]

    def subset(self, idx: np.ndarray, split: str | None = None) -> "Dataset":
        return Dataset(self.images[idx], self.labels[idx], split or self.split,
                       self.n_classes, self.image_hw)


def _open_maybe_gzip(path):
    path = str(path)
    return gzip.open(path, "rb") if path.endswith(".gz") else open(path, "rb")


def load_idx(images_path, labels_path, split: str = "train") -> Dataset:
    """Parse a big-endian IDX image/label file pair into a Dataset.

    Pixel bytes are divided by 255. Raises DataFormatError naming the
    offending field (magic, count, payload) on malformed input.
    """
    with _open_maybe_gzip(images_path) as fh:
        head = fh.read(16)
        if len(head) < 16:
            raise DataFormatError(f"magic: image file {images_path} shorter than its header")
        magic, n, rows, cols = struct.unpack(">IIII", head)
        if magic != IDX_IMAGES_MAGIC:
            raise DataFormatError(f"magic: expected {IDX_IMAGES_MAGIC:#010x} in {images_path}, got {magic:#010x}")
        payload = fh.read()
        if len(payload) != n * rows * cols:
            raise DataFormatError(f"payload: image file {images_path} has {len(payload)} bytes, expected {n * rows * cols}")
        images = np.frombuffer(payload, dtype=np.uint8).reshape(n, rows * cols) / 255.0

    with _open_maybe_gzip(labels_path) as fh:
        head = fh.read(8)
        if len(head) < 8:
            raise DataFormatError(f"magic: label file {labels_path} shorter than its header")
        magic, n_labels = struct.unpack(">II", head)
        if magic != IDX_LABELS_MAGIC:
            raise DataFormatError(f"magic: expected {IDX_LABELS_MAGIC:#010x} in {labels_path}, got {magic:#010x}")
        raw = fh.read()
        if len(raw) != n_labels:
            raise DataFormatError(f"payload: label file {labels_path} has {len(raw)} bytes, expected {n_labels}")
        labels = np.frombuffer(raw, dtype=np.uint8).astype(np.int64)

    if n != n_labels:
        raise DataFormatError(f"count: {n} images but {n_labels} labels")
    return Dataset(images, labels, split=split, image_hw=(rows, cols))


def write_idx(images_path, labels_path, images: np.ndarray, labels: np.ndarray) -> None:
    """Write an IDX pair. images: (N, rows, cols) uint8; labels: (N,) uint8."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    n, rows, cols = images.shape
    with open(images_path, "wb") as fh:
        fh.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, n, rows, cols))
        fh.write(images.tobytes())
    with open(labels_path, "wb") as fh:
        fh.write(struct.pack(">II", IDX_LABELS_MAGIC, len(labels)))
        fh.write(labels.tobytes())


def save_matrix_dataset(path, dataset: Dataset) -> None:
    """Generic binary layout: magic, N u64, D u64, C u64, rows u32, cols u32,
    dtype u8 (0 = f64), then N*D little-endian f64 intensities, then N i64 labels."""
    with open(path, "wb") as fh:
        fh.write(MATRIX_MAGIC)
        fh.write(struct.pack("<QQQIIB", len(dataset), dataset.dim, dataset.n_classes,
                             dataset.image_hw[0], dataset.image_hw[1], 0))
        fh.write(np.ascontiguousarray(dataset.images, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(dataset.labels, dtype="<i8").tobytes())


def load_matrix_dataset(path, split: str = "train") -> Dataset:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:6] != MATRIX_MAGIC:
        raise DataFormatError(f"magic: {path} is not a matrix dataset file")
    header = struct.Struct("<QQQIIB")
    n, d, c, rows, cols, dtype = header.unpack_from(blob, 6)
    if dtype != 0:
        raise DataFormatError(f"dtype: unsupported code {dtype}")
    off = 6 + header.size
    need = off + 8 * n * d + 8 * n
    if len(blob) != need:
        raise DataFormatError(f"payload: {path} has {len(blob)} bytes, expected {need}")
    images = np.frombuffer(blob, dtype="<f8", count=n * d, offset=off).reshape(n, d)
    labels = np.frombuffer(blob, dtype="<i8", count=n, offset=off + 8 * n * d).astype(np.int64)
    return Dataset(images.astype(np.float64), labels, split=split, n_classes=int(c),
                   image_hw=(rows, cols))


def split_train_valid(dataset: Dataset, n_valid: int, rng: RngState) -> tuple[Dataset, Dataset]:
    """Seeded shuffle, then the last n_valid examples form the validation set."""
    if n_valid >= len(dataset):
        raise ValueError(f"n_valid={n_valid} must be smaller than N={len(dataset)}")
    if n_valid == 0:
        return dataset, dataset.subset(np.array([], dtype=np.int64), "valid")
    perm = rng.permutation(len(dataset))
    return dataset.subset(perm[:-n_valid], "train"), dataset.subset(perm[-n_valid:], "valid")


def blob_prototypes(n_classes: int, dim: int, hot: float = 0.95,
                    cold: float = 0.05) -> np.ndarray:
    """Class prototypes: one hot block of `dim // n_classes` dims per class.

    Classes 0..n-2 use disjoint blocks; the last class's block overlaps
    most of class 0's (shifted by a quarter width), giving the stream one
    pair of similar-but-separated classes, like neighbouring digits.
    """
    width = dim // n_classes
    if width < 2 or n_classes < 2:
        raise ValueError("need dim >= 2 * n_classes and at least 2 classes")
    starts = [0] + [dim - (n_classes - 1 - c) * width for c in range(1, n_classes - 1)]
    starts.append(max(1, width // 4))
    protos = np.full((n_classes, dim), cold)
    for c, s in enumerate(starts):
        protos[c, s:s + width] = hot
    return protos


def blob_factors(n_classes: int, dim: int, factor_dim: int = 2,
                 scale: float = 0.15) -> np.ndarray:
    """Fixed per-class factor-loading matrices, (C, dim, factor_dim).

    Loadings span all input dimensions, so classes compete for the same
    encoder features: representing one class's within-class variation
    costs capacity that later classes can overwrite. The matrices are
    deterministic constants, identical across experiment seeds.
    """
    gen = RngState(715517, (n_classes, dim, factor_dim))
    return scale * gen.normal((n_classes, dim, factor_dim))


def make_blob_dataset(n_per_class: int, rng: RngState, n_classes: int = 4,
                      dim: int = 16, noise: float = 0.05, hot: float = 0.95,
                      cold: float = 0.05, factor_dim: int = 2,
                      factor_scale: float = 0.15, split: str = "train") -> Dataset:
    """Well-separated Gaussian-blob classes for desk-scale runs.

    Each sample is its class prototype plus a per-class low-rank factor
    term plus isotropic noise, clipped to [0,1]:

        x = proto[c] + loadings[c] @ u + noise * eps,  u, eps ~ N(0, I)

    Prototype separation is many within-class standard deviations, so
    the classes stay well separated while still carrying within-class
    structure worth encoding.
    """
    protos = blob_prototypes(n_classes, dim, hot, cold)
    loadings = blob_factors(n_classes, dim, factor_dim, factor_scale)
    labels = np.repeat(np.arange(n_classes), n_per_class)
    u = rng.normal((len(labels), factor_dim))
    x = (protos[labels]
         + np.einsum("ndf,nf->nd", loadings[labels], u)
         + noise * rng.normal((len(labels), dim)))
    return Dataset(np.clip(x, 0.0, 1.0), labels, split=split, n_classes=n_classes,
                   image_hw=(1, dim))


# ---------------------------------------------------------------------------
# Stream scheduling.

@dataclass
class StreamSpec:
    mode: str
    total_steps: int
    batch_size: int
    class_order: tuple[int, ...]
    drift_window: int = 0              # 0 selects the default 0.2 * block
    task_pairs: tuple[tuple[int, int], ...] = ()

    def __post_init__(self):
        if self.mode not in STREAM_MODES:
            raise ConfigError(f"unknown stream mode {self.mode!r}")
        if self.total_steps < 1 or self.batch_size < 1:
            raise ConfigError("total_steps and batch_size must be positive")
        if self.mode == "split_task":
            if not self.task_pairs:
                raise ConfigError("split_task mode needs task_pairs")
            if self.total_steps % len(self.task_pairs) != 0:
                raise ConfigError("total_steps must divide equally between tasks")
        else:
            if not self.class_order:
                raise ConfigError("class_order must not be empty")
            if len(set(self.class_order)) != len(self.class_order):
                raise ConfigError("class_order must not repeat classes")
            if self.mode in ("sequential", "continuous_drift"):
                if self.total_steps % len(self.class_order) != 0:
                    raise ConfigError("total_steps must divide equally between classes")
        if self.mode == "continuous_drift":
            block = self.total_steps // len(self.class_order)
            if self.drift_window == 0:
                self.drift_window = max(1, int(0.2 * block))
            if self.drift_window > block:
                raise ConfigError(f"drift_window {self.drift_window} exceeds block length {block}")

    @property
    def block_steps(self) -> int:
        n = len(self.task_pairs) if self.mode == "split_task" else len(self.class_order)
        return self.total_steps // n


@dataclass
class Batch:
    x: np.ndarray
    labels: np.ndarray
    step: int


def _draw_from(dataset: Dataset, pool: np.ndarray, n: int, rng: RngState) -> np.ndarray:
    if len(pool) == 0:
        raise ConfigError("stream refers to a class with no samples")
    return pool[rng.integers(len(pool), size=n)]


def next_batch(spec: StreamSpec, dataset: Dataset, step: int, rng: RngState) -> Batch:
    """The training batch for one stream step.

    iid: uniform with replacement over every class in class_order.
    sequential: uniform within the current class block.
    continuous_drift: during the first drift_window steps of block c>0,
    each slot draws the new class with probability ramping linearly from
    0 to 1 and the previous class otherwise.
    split_task: sequential over task_pairs, uniform within the pair.
    """
    if step < 0 or step >= spec.total_steps:
        raise StreamExhausted(f"step {step} outside [0, {spec.total_steps})")
    n = spec.batch_size

    if spec.mode == "iid":
        pool = np.concatenate([dataset.class_indices(c) for c in spec.class_order])
        idx = _draw_from(dataset, pool, n, rng)
    elif spec.mode == "split_task":
        task = min(step // spec.block_steps, len(spec.task_pairs) - 1)
        a, b = spec.task_pairs[task]
        pool = np.concatenate([dataset.class_indices(a), dataset.class_indices(b)])
        idx = _draw_from(dataset, pool, n, rng)
    else:
        block = spec.block_steps
        c = min(step // block, len(spec.class_order) - 1)
        cur = spec.class_order[c]
        t_in = step - c * block
        if spec.mode == "continuous_drift" and c > 0 and t_in < spec.drift_window:
            p_new = t_in / spec.drift_window
            take_new = rng.uniform(0.0, 1.0, n) < p_new
            idx = np.empty(n, dtype=np.int64)
            n_new = int(take_new.sum())
            if n_new:
                idx[take_new] = _draw_from(dataset, dataset.class_indices(cur), n_new, rng)
            if n - n_new:
                prev = spec.class_order[c - 1]
                idx[~take_new] = _draw_from(dataset, dataset.class_indices(prev), n - n_new, rng)
        else:
            idx = _draw_from(dataset, dataset.class_indices(cur), n, rng)

    return Batch(dataset.images[idx], dataset.labels[idx], step)
