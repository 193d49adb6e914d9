"""Dynamic capacity expansion driven by poorly-modelled samples.

Any real-data sample whose objective value falls below a threshold is
stored. When the store fills (and a consolidation period has elapsed,
and capacity remains), a new component is instantiated as a copy of the
existing component with greatest posterior mass over the stored set,
then finetuned to that set with the component-constrained loss.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .adam import AdamState, adam_step
from .errors import StateError
from .model import ModelParams, backward, encode_shared, infer_task_posterior
from .rng import RngState


class PoorSampleBuffer:
    """Bounded store of inputs whose objective fell below the threshold."""

    def __init__(self, capacity: int, threshold: float):
        if capacity < 1:
            raise ValueError("buffer capacity must be positive")
        self.capacity = int(capacity)
        self.threshold = float(threshold)
        self.samples: list[np.ndarray] = []
        self.elbos: list[float] = []

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def full(self) -> bool:
        return len(self.samples) >= self.capacity

    def clear(self) -> None:
        self.samples = []
        self.elbos = []

    def as_matrix(self) -> np.ndarray:
        if not self.samples:
            raise StateError("buffer is empty")
        return np.stack(self.samples)


@dataclass
class ExpansionState:
    consolidation_period: int = 100
    finetune_iters: int = 100
    finetune_batch: int = 64
    steps_since_last_expansion: int = 0
    expansion_log: list[tuple[int, int, int]] = field(default_factory=list)  # (step, parent, new K)


def screen_batch(x: np.ndarray, elbo_totals: np.ndarray, buffer: PoorSampleBuffer) -> int:
    """Store each sample with objective below the threshold until full.

    Applies to real-data batches only; generated batches must not be
    screened. Returns the number of samples stored.
    """
    x = np.asarray(x, dtype=np.float64)
    totals = np.asarray(elbo_totals, dtype=np.float64).reshape(-1)
    if x.shape[0] != totals.shape[0]:
        raise ValueError(f"batch size {x.shape[0]} != elbo count {totals.shape[0]}")
    added = 0
    for i in range(x.shape[0]):
        if buffer.full:
            break
        if totals[i] < buffer.threshold:
            buffer.samples.append(x[i].copy())
            buffer.elbos.append(float(totals[i]))
            added += 1
    return added


def should_expand(buffer: PoorSampleBuffer, state: ExpansionState, params: ModelParams) -> bool:
    return (buffer.full
            and state.steps_since_last_expansion >= state.consolidation_period
            and params.k < params.arch.k_max)


def posterior_mass(x: np.ndarray, params: ModelParams) -> np.ndarray:
    """sum over samples of q(y=k|x), one entry per component."""
    q = infer_task_posterior(encode_shared(x, params), params)
    return q.sum(axis=0)


def select_parent(buffer: PoorSampleBuffer, params: ModelParams) -> int:
    """Component with greatest posterior mass over the buffer; ties to lowest index."""
    if len(buffer) == 0:
        raise StateError("cannot select a parent from an empty buffer")
    return int(np.argmax(posterior_mass(buffer.as_matrix(), params)))


def export_buffer_grid(buffer: PoorSampleBuffer, image_hw: tuple[int, int],
                       pgm_path, matrix_path=None) -> None:
    """Write the stored samples as an image grid for visual inspection."""
    from .evaluation import sample_grid, save_grid_matrix, write_pgm
    grid = sample_grid(buffer.as_matrix(), image_hw)
    write_pgm(pgm_path, grid)
    if matrix_path is not None:
        save_grid_matrix(matrix_path, buffer.as_matrix())


def expand(params: ModelParams, adam: AdamState, buffer: PoorSampleBuffer,
           state: ExpansionState, rng: RngState, step: int) -> int:
    """Instantiate component K+1 from the best parent and finetune to the buffer.

    The new per-component buffers are exact copies of the parent's; their
    Adam accumulators start at zero. Finetuning runs the component-
    constrained loss with the new label on minibatches drawn with
    replacement from the buffer, updating all parameters with the run's
    ongoing optimizer state. Clears the buffer and resets the
    consolidation counter. Returns the parent index.
    """
    if not should_expand(buffer, state, params):
        raise StateError("expansion preconditions not met")
    parent = select_parent(buffer, params)
    data = buffer.as_matrix()

    params.add_component_copy(parent)
    new_label = params.k - 1
    for name in ("task_w", "task_b", "lat_w", "lat_b", "prior_mu", "prior_rho"):
        adam.grow_rows(name, getattr(params, name).shape)

    n = data.shape[0]
    bsz = min(state.finetune_batch, n)
    for _ in range(state.finetune_iters):
        idx = rng.integers(n, size=bsz)
        y = np.full(bsz, new_label, dtype=np.int64)
        _, grads, _ = backward(data[idx], params, rng, y_obs=y)
        adam_step(params.to_dict(), grads, adam)

    buffer.clear()
    state.steps_since_last_expansion = 0
    state.expansion_log.append((int(step), parent, params.k))
    return parent
