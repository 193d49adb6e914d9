"""Generative replay: usage counts, model snapshots, and replay batches.

The trainer alternates 1:1 between real batches and batches generated
from a frozen snapshot of the model. Component labels for generation are
drawn from a usage prior: the running mean of q(y|x) over all real
batches seen so far, which favours the components used the most. In
self-supervised mode the sampled component labels feed back through the
component-constrained loss.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import ModelParams, generate
from .rng import RngState


class UsageCounts:
    """Accumulated batch-mean posteriors per component."""

    def __init__(self, k: int):
        self.accumulated = np.zeros(k)
        self.total_batches = 0

    def update(self, q_batch: np.ndarray) -> None:
        """Add the column-mean of one batch of posteriors (rows sum to 1)."""
        q = np.asarray(q_batch, dtype=np.float64)
        if q.ndim != 2 or q.shape[1] != self.accumulated.shape[0]:
            raise ValueError(f"posterior batch shape {q.shape} does not match K={len(self.accumulated)}")
        if not np.allclose(q.sum(axis=1), 1.0, atol=1e-6):
            raise ValueError("posterior rows must sum to 1")
        self.accumulated += q.mean(axis=0)
        self.total_batches += 1

    def grow(self, new_k: int) -> None:
        """Pad with zeros when the model expands."""
        if new_k < len(self.accumulated):
            raise ValueError("usage counts cannot shrink")
        pad = new_k - len(self.accumulated)
        if pad:
            self.accumulated = np.concatenate([self.accumulated, np.zeros(pad)])

    def prior(self) -> np.ndarray:
        """Replay prior over components; uniform until any batch is counted."""
        if self.total_batches == 0:
            return np.full(len(self.accumulated), 1.0 / len(self.accumulated))
        p = self.accumulated / self.total_batches
        return p / p.sum()

    def copy(self) -> "UsageCounts":
        out = UsageCounts(len(self.accumulated))
        out.accumulated = self.accumulated.copy()
        out.total_batches = self.total_batches
        return out


class Snapshot:
    """Frozen deep copy of the model and its usage counts at one step."""

    def __init__(self, params: ModelParams, usage: UsageCounts, step: int):
        self.params = params.clone()
        self.usage = usage.copy()
        self.step = int(step)

    def prior(self) -> np.ndarray:
        return self.usage.prior()


@dataclass
class SnapshotPolicy:
    """When to refresh the replay snapshot.

    fixed: after every `period` completed steps. dynamic: immediately
    before each expansion (handled by the trainer, which sees the
    expansion trigger).
    """
    mode: str  # "fixed" | "dynamic"
    period: int = 0

    def __post_init__(self):
        if self.mode not in ("fixed", "dynamic"):
            raise ValueError(f"unknown snapshot mode {self.mode!r}")
        if self.mode == "fixed" and self.period < 1:
            raise ValueError("fixed snapshot policy needs a positive period")

    def fires_after_step(self, step: int) -> bool:
        """Fixed-mode trigger, evaluated after completing 0-indexed `step`."""
        return self.mode == "fixed" and (step + 1) % self.period == 0


def update_usage(counts: UsageCounts, q_batch: np.ndarray) -> UsageCounts:
    counts.update(q_batch)
    return counts


def take_snapshot(params: ModelParams, counts: UsageCounts, step: int) -> Snapshot:
    return Snapshot(params, counts, step)


def replay_step(snapshot: Snapshot, n: int, rng: RngState, smgr: bool):
    """One generated training batch from the snapshot.

    Returns (x_gen, y_obs) where y_obs is the sampled component labels
    when smgr is set (to be fed through the component-constrained loss)
    and None otherwise.
    """
    x_gen, y_gen = generate(snapshot.params, snapshot.prior(), n, rng)
    return x_gen, (y_gen if smgr else None)
