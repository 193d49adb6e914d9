"""Evaluation metrics and exports.

Cluster accuracy maps each mixture component to its most represented
class and scores the induced labelling. k-NN error measures the
class-discriminability of the whole latent space without imposing a
parametric boundary. All tie-breaks are deterministic: argmax over
components and majority votes go to the lowest index/class, distance
ties resolve in train-index order.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .kernels import softplus
from .model import SIGMA_FLOOR, ModelParams, encode_shared, infer_task_posterior
from .rng import RngState

KNN_KS = (3, 5, 10)
_ENCODE_CHUNK = 2048


@dataclass
class EvalReport:
    step: int
    cluster_accuracy: float
    knn_error: dict[int, float]
    n_active_components: int
    confusion: np.ndarray          # (C, K) counts: class x argmax component
    per_class_accuracy: np.ndarray  # (C,)

    def summary(self) -> str:
        knn = " ".join(f"knn{k}={v:.4f}" for k, v in sorted(self.knn_error.items()))
        return (f"step={self.step} cluster_acc={self.cluster_accuracy:.4f} {knn} "
                f"components={self.n_active_components}")


def majority_mapping(assignments: np.ndarray, labels: np.ndarray,
                     n_components: int, n_classes: int) -> np.ndarray:
    """Component -> most represented class; ties to lowest class, empty -> -1."""
    mapping = np.full(n_components, -1, dtype=np.int64)
    for k in range(n_components):
        members = labels[assignments == k]
        if len(members):
            mapping[k] = int(np.argmax(np.bincount(members, minlength=n_classes)))
    return mapping


def cluster_accuracy(assignments: np.ndarray, labels: np.ndarray) -> float:
    """Accuracy after mapping each component to its majority class."""
    assignments = np.asarray(assignments, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if assignments.shape != labels.shape:
        raise ValueError(f"assignments length {assignments.shape} != labels {labels.shape}")
    if len(labels) == 0:
        raise ValueError("empty evaluation set")
    mapping = majority_mapping(assignments, labels, int(assignments.max()) + 1,
                               int(labels.max()) + 1)
    return float(np.mean(mapping[assignments] == labels))


def task_posteriors(x: np.ndarray, params: ModelParams) -> np.ndarray:
    """q(y|x) for a matrix of inputs, chunked to bound memory."""
    out = np.empty((x.shape[0], params.k))
    for lo in range(0, x.shape[0], _ENCODE_CHUNK):
        hi = min(lo + _ENCODE_CHUNK, x.shape[0])
        out[lo:hi] = infer_task_posterior(encode_shared(x[lo:hi], params), params)
    return out


def encode_eval_latents(dataset: Dataset, params: ModelParams, rng: RngState,
                        mode: str = "sampled") -> tuple[np.ndarray, np.ndarray]:
    """Latents and argmax components for every point in the dataset.

    sampled mode draws one z ~ q(z | x, y_hat) from the given rng; mean
    mode returns the posterior mean of the argmax component.
    """
    if mode not in ("sampled", "mean"):
        raise ValueError(f"unknown latent mode {mode!r}")
    nz = params.arch.n_z
    x = dataset.images
    latents = np.empty((x.shape[0], nz))
    comps = np.empty(x.shape[0], dtype=np.int64)
    for lo in range(0, x.shape[0], _ENCODE_CHUNK):
        hi = min(lo + _ENCODE_CHUNK, x.shape[0])
        h = encode_shared(x[lo:hi], params)
        q = infer_task_posterior(h, params)
        yhat = np.argmax(q, axis=1)
        a = np.einsum("bh,boh->bo", h, params.lat_w[yhat], optimize=True) + params.lat_b[yhat]
        mu = a[:, :nz]
        if mode == "sampled":
            sig = softplus(a[:, nz:]) + SIGMA_FLOOR
            latents[lo:hi] = mu + sig * rng.normal(mu.shape)
        else:
            latents[lo:hi] = mu
        comps[lo:hi] = yhat
    return latents, comps


def knn_errors(train_latents: np.ndarray, train_labels: np.ndarray,
               test_latents: np.ndarray, test_labels: np.ndarray,
               ks: tuple[int, ...]) -> dict[int, float]:
    """Euclidean k-NN classification error for several k in one pass.

    Majority vote among the k nearest; exact distance ties resolve in
    train-index order (stable sort), vote ties to the smallest class.
    """
    train_latents = np.asarray(train_latents, dtype=np.float64)
    test_latents = np.asarray(test_latents, dtype=np.float64)
    train_labels = np.asarray(train_labels, dtype=np.int64)
    test_labels = np.asarray(test_labels, dtype=np.int64)
    n_train = train_latents.shape[0]
    for k in ks:
        if k < 1 or k > n_train:
            raise ValueError(f"k={k} invalid for {n_train} train points")
    if train_latents.shape[1] != test_latents.shape[1]:
        raise ValueError("latent dimensions disagree")
    n_classes = int(max(train_labels.max(), test_labels.max())) + 1
    k_top = max(ks)
    train_sq = np.sum(train_latents ** 2, axis=1)
    correct = {k: 0 for k in ks}
    chunk = max(1, int(2 ** 25 // max(n_train, 1)))
    class_ids = np.arange(n_classes)
    for lo in range(0, test_latents.shape[0], chunk):
        hi = min(lo + chunk, test_latents.shape[0])
        t = test_latents[lo:hi]
        d2 = np.sum(t ** 2, axis=1)[:, None] - 2.0 * (t @ train_latents.T) + train_sq[None, :]
        nearest = np.argsort(d2, axis=1, kind="stable")[:, :k_top]
        votes = train_labels[nearest]
        true = test_labels[lo:hi]
        for k in ks:
            counts = np.sum(votes[:, :k, None] == class_ids, axis=1)
            pred = np.argmax(counts, axis=1)  # first max -> smallest class
            correct[k] += int(np.sum(pred == true))
    n_test = test_latents.shape[0]
    return {k: 1.0 - correct[k] / n_test for k in ks}


def knn_error(train_latents: np.ndarray, train_labels: np.ndarray,
              test_latents: np.ndarray, test_labels: np.ndarray, k: int) -> float:
    """Single-k convenience wrapper around knn_errors."""
    return knn_errors(train_latents, train_labels, test_latents, test_labels, (k,))[k]


def evaluate(params: ModelParams, test_dataset: Dataset, train_dataset: Dataset,
             rng: RngState, step: int = 0, knn_train_subsample: int = 10000,
             knn_test_subsample: int = 0, latent_mode: str = "sampled",
             ks: tuple[int, ...] = KNN_KS) -> EvalReport:
    """All report fields in one read-only pass.

    Cluster accuracy, confusion, and per-class accuracy use the full
    test set. The k-NN fit uses a seeded subsample of the training set
    (and optionally of the test set) to bound cost; latents for both
    sides are produced in the same mode from the given rng.
    """
    if len(test_dataset) == 0:
        raise ValueError("empty test set")
    c = max(test_dataset.n_classes, train_dataset.n_classes)
    q = task_posteriors(test_dataset.images, params)
    assignments = np.argmax(q, axis=1)

    confusion = np.zeros((c, params.k), dtype=np.int64)
    np.add.at(confusion, (test_dataset.labels, assignments), 1)
    mapping = majority_mapping(assignments, test_dataset.labels, params.k, c)
    acc = float(np.mean(mapping[assignments] == test_dataset.labels))

    per_class = np.zeros(c)
    for cls in range(c):
        members = assignments[test_dataset.labels == cls]
        per_class[cls] = float(np.mean(mapping[members] == cls)) if len(members) else 0.0

    n_sub = min(knn_train_subsample, len(train_dataset))
    sub_idx = rng.permutation(len(train_dataset))[:n_sub]
    train_sub = train_dataset.subset(sub_idx)
    knn_test = test_dataset
    if knn_test_subsample and knn_test_subsample < len(test_dataset):
        knn_test = test_dataset.subset(rng.permutation(len(test_dataset))[:knn_test_subsample])
    train_z, _ = encode_eval_latents(train_sub, params, rng, latent_mode)
    test_z, _ = encode_eval_latents(knn_test, params, rng, latent_mode)
    usable = tuple(k for k in ks if k <= n_sub)
    knn = knn_errors(train_z, train_sub.labels, test_z, knn_test.labels, usable) if usable else {}

    return EvalReport(step=step, cluster_accuracy=acc, knn_error=knn,
                      n_active_components=params.k, confusion=confusion,
                      per_class_accuracy=per_class)


def incremental_class_accuracy(params: ModelParams, test_dataset: Dataset) -> float:
    """Accuracy of argmax q(y|x) over all components against class labels.

    Requires a supervised run whose components are aligned to classes.
    """
    if params.k < test_dataset.n_classes:
        raise ValueError(f"K={params.k} smaller than the {test_dataset.n_classes} classes")
    q = task_posteriors(test_dataset.images, params)
    return float(np.mean(np.argmax(q, axis=1) == test_dataset.labels))


def incremental_task_accuracy(params: ModelParams, test_dataset: Dataset,
                              task_pairs: tuple[tuple[int, int], ...]) -> float:
    """Accuracy when each point's argmax is restricted to its own task's pair.

    Computed pointwise over the whole test set, so it can never fall
    below the unrestricted (incremental class) accuracy.
    """
    if params.k < test_dataset.n_classes:
        raise ValueError(f"K={params.k} smaller than the {test_dataset.n_classes} classes")
    q = task_posteriors(test_dataset.images, params)
    class_to_pair = {}
    for pair in task_pairs:
        for cls in pair:
            class_to_pair[cls] = pair
    correct = 0
    for i, true in enumerate(test_dataset.labels):
        pair = class_to_pair[int(true)]
        sub = [p for p in pair if p < params.k]
        pred = sub[int(np.argmax(q[i, sub]))]
        correct += int(pred == true)
    return correct / len(test_dataset)


# ---------------------------------------------------------------------------
# Exports.

def export_latents_csv(path, latents: np.ndarray, labels: np.ndarray,
                       components: np.ndarray) -> None:
    """CSV with header index,label,component,z_0..z_{n_z-1}."""
    nz = latents.shape[1]
    header = "index,label,component," + ",".join(f"z_{j}" for j in range(nz))
    with open(path, "w") as fh:
        fh.write(header + "\n")
        for i in range(latents.shape[0]):
            zs = ",".join(repr(float(v)) for v in latents[i])
            fh.write(f"{i},{int(labels[i])},{int(components[i])},{zs}\n")


def write_pgm(path, image: np.ndarray) -> None:
    """Binary PGM (P5) of a single [0,1] grayscale image."""
    img = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    data = np.round(img * 255.0).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def sample_grid(samples: np.ndarray, image_hw: tuple[int, int],
                cols: int = 10) -> np.ndarray:
    """Tile flattened samples row-major into one image grid."""
    h, w = image_hw
    n = samples.shape[0]
    rows = (n + cols - 1) // cols
    grid = np.zeros((rows * h, cols * w))
    for i in range(n):
        r, c = divmod(i, cols)
        grid[r * h:(r + 1) * h, c * w:(c + 1) * w] = samples[i].reshape(h, w)
    return grid


GRID_MAGIC = b"MVMX\x01\x00"


def save_grid_matrix(path, matrix: np.ndarray) -> None:
    """Raw matrix file: magic, rows u64, cols u64, little-endian f64 payload."""
    m = np.asarray(matrix, dtype=np.float64)
    with open(path, "wb") as fh:
        fh.write(GRID_MAGIC)
        fh.write(struct.pack("<QQ", m.shape[0], m.shape[1]))
        fh.write(np.ascontiguousarray(m, dtype="<f8").tobytes())


def load_grid_matrix(path) -> np.ndarray:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:6] != GRID_MAGIC:
        raise ValueError(f"{path} is not a raw matrix file")
    rows, cols = struct.unpack_from("<QQ", blob, 6)
    return np.frombuffer(blob, dtype="<f8", count=rows * cols, offset=22).reshape(rows, cols).copy()
