"""Training orchestration: stream -> loss -> optimizer -> expansion -> replay -> eval.

Per-step order: fetch batch (real, or generated when a snapshot exists
and the 1:1 alternation selects replay) -> loss/backward -> optimizer
step -> usage update and screening (real batches only) -> expansion
check (snapshot first under the dynamic policy) -> fixed-policy snapshot
check -> periodic evaluation and metrics logging.

Runs are deterministic: every random draw comes from a named sub-stream
of the master seed, and stream batches are keyed by step, so the same
config and seed produce byte-identical metrics files.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .adam import AdamState, adam_step
from .checkpoint import load_checkpoint, save_checkpoint
from .config import ExperimentConfig, serialize_config
from .data import (
    Batch,
    Dataset,
    StreamSpec,
    load_idx,
    load_matrix_dataset,
    make_blob_dataset,
    next_batch,
    split_train_valid,
)
from .errors import ConfigError, NumericError
from .evaluation import EvalReport, encode_eval_latents, evaluate, export_latents_csv, knn_errors
from .expansion import ExpansionState, PoorSampleBuffer, expand, posterior_mass, screen_batch
from .kernels import finite_difference_grad
from .model import Architecture, ModelParams, backward, init_params
from .replay import Snapshot, SnapshotPolicy, UsageCounts, replay_step, take_snapshot
from .rng import (
    STREAM_DATASET,
    STREAM_EVAL,
    STREAM_EXPAND,
    STREAM_INIT,
    STREAM_REPARAM,
    STREAM_REPLAY,
    STREAM_SHUFFLE,
    substream,
)

METRICS_HEADER = ("step,loss,elbo,cat_kl_mean,n_components,cluster_acc,"
                  "knn3,knn5,knn10,snapshot_taken,expansion_event")


def resolve_data_dir(cfg: ExperimentConfig) -> str:
    return cfg.data.dir or os.environ.get("MIXVAE_DATA", ".")


def build_datasets(cfg: ExperimentConfig) -> tuple[Dataset, Dataset, Dataset]:
    """(train, valid, test) per the config's data source."""
    d = cfg.data
    if d.source == "blobs":
        train = make_blob_dataset(d.blob_train_per_class, substream(cfg.seed, STREAM_DATASET, 0),
                                  n_classes=d.blob_classes, dim=d.blob_dim, noise=d.blob_noise,
                                  factor_dim=d.blob_factor_dim, factor_scale=d.blob_factor_scale)
        test = make_blob_dataset(d.blob_test_per_class, substream(cfg.seed, STREAM_DATASET, 1),
                                 n_classes=d.blob_classes, dim=d.blob_dim, noise=d.blob_noise,
                                 factor_dim=d.blob_factor_dim, factor_scale=d.blob_factor_scale,
                                 split="test")
        return train, test.subset(np.arange(0), "valid"), test
    base = resolve_data_dir(cfg)
    if d.source == "idx":
        full = load_idx(os.path.join(base, d.train_images), os.path.join(base, d.train_labels))
        test = load_idx(os.path.join(base, d.test_images), os.path.join(base, d.test_labels),
                        split="test")
    else:
        full = load_matrix_dataset(os.path.join(base, d.train_matrix))
        test = load_matrix_dataset(os.path.join(base, d.test_matrix), split="test")
    train, valid = split_train_valid(full, min(d.n_valid, len(full) - 1),
                                     substream(cfg.seed, STREAM_DATASET, 0))
    return train, valid, test


def build_stream_spec(cfg: ExperimentConfig, train: Dataset) -> StreamSpec:
    order = cfg.stream.class_order or tuple(range(train.n_classes))
    pairs = cfg.stream.task_pairs
    if cfg.stream.mode == "split_task" and not pairs:
        if train.n_classes % 2:
            raise ConfigError("split_task default pairing needs an even class count")
        pairs = tuple((c, c + 1) for c in range(0, train.n_classes, 2))
    return StreamSpec(mode=cfg.stream.mode, total_steps=cfg.stream.total_steps,
                      batch_size=cfg.stream.batch_size, class_order=order,
                      drift_window=cfg.stream.drift_window, task_pairs=pairs)


def _fmt(x) -> str:
    return repr(float(x))


class MetricsWriter:
    """Appends rows under the fixed schema; all floats via repr for
    byte-stable output."""

    def __init__(self, path):
        self.path = path
        with open(path, "w") as fh:
            fh.write(METRICS_HEADER + "\n")

    def row(self, step: int, loss: float, elbo: float, cat_kl: float,
            n_components: int, report: EvalReport, snapshots: int,
            expansions: list[tuple[int, int, int]]) -> None:
        ev = ";".join(f"{s}:{p}:{k}" for s, p, k in expansions)
        knn = [report.knn_error.get(k, float("nan")) for k in (3, 5, 10)]
        cells = [str(step), _fmt(loss), _fmt(elbo), _fmt(cat_kl), str(n_components),
                 _fmt(report.cluster_accuracy), _fmt(knn[0]), _fmt(knn[1]), _fmt(knn[2]),
                 str(snapshots), ev]
        with open(self.path, "a") as fh:
            fh.write(",".join(cells) + "\n")


@dataclass
class TrainResult:
    out_dir: str
    metrics_path: str
    checkpoint_path: str
    params: ModelParams
    adam: AdamState
    usage: UsageCounts
    expansion_log: list
    snapshot_steps: list
    final_report: EvalReport
    reports: list = field(default_factory=list)


def _expand_supervised(params: ModelParams, adam: AdamState, usage: UsageCounts,
                       batch: Batch, exp_state: ExpansionState) -> list[tuple[int, int, int]]:
    """Label-triggered expansion for supervised runs.

    Components stay aligned to class labels: when label K first appears
    it becomes component K, copied from the existing component with the
    greatest posterior mass over the batch samples carrying that label.
    """
    events = []
    while batch.labels.max() >= params.k:
        new_label = params.k
        if new_label >= params.arch.k_max:
            raise ConfigError(f"label {int(batch.labels.max())} exceeds capacity K_max")
        members = batch.x[batch.labels == new_label]
        if len(members) == 0:
            raise ConfigError(f"labels skipped value {new_label}; supervised runs need "
                              "contiguous label introduction")
        parent = int(np.argmax(posterior_mass(members, params)))
        params.add_component_copy(parent)
        for name in ("task_w", "task_b", "lat_w", "lat_b", "prior_mu", "prior_rho"):
            adam.grow_rows(name, getattr(params, name).shape)
        usage.grow(params.k)
        exp_state.expansion_log.append((batch.step, parent, params.k))
        events.append((batch.step, parent, params.k))
    return events


def run_train(cfg: ExperimentConfig) -> TrainResult:
    train, _valid, test = build_datasets(cfg)
    spec = build_stream_spec(cfg, train)
    supervised = cfg.mode == "supervised"

    arch = Architecture(input_dim=train.dim, encoder=cfg.arch.encoder, n_z=cfg.arch.n_z,
                        decoder=cfg.arch.decoder, k_max=cfg.arch.k_max)
    params = init_params(arch, substream(cfg.seed, STREAM_INIT), cfg.arch.k_init)
    adam = AdamState(lr=cfg.opt.lr, beta1=cfg.opt.beta1, beta2=cfg.opt.beta2, eps=cfg.opt.eps)
    usage = UsageCounts(params.k)
    buffer = PoorSampleBuffer(cfg.expansion.n_new, cfg.expansion.c_new)
    exp_state = ExpansionState(consolidation_period=cfg.expansion.consolidation,
                               finetune_iters=cfg.expansion.finetune_iters,
                               finetune_batch=cfg.expansion.finetune_batch)
    replay_on = cfg.replay.mode != "off"
    policy = SnapshotPolicy(cfg.replay.snapshot, cfg.replay.snapshot_period)
    smgr = cfg.replay.mode == "smgr"

    reparam = substream(cfg.seed, STREAM_REPARAM)
    replay_rng = substream(cfg.seed, STREAM_REPLAY)

    os.makedirs(cfg.out_dir, exist_ok=True)
    with open(os.path.join(cfg.out_dir, "config.txt"), "w") as fh:
        fh.write(serialize_config(cfg))
    metrics = MetricsWriter(os.path.join(cfg.out_dir, "metrics.csv"))
    per_class_path = os.path.join(cfg.out_dir, "per_class.csv")
    with open(per_class_path, "w") as fh:
        fh.write("step,class,accuracy\n")

    snapshot: Snapshot | None = None
    alternation_anchor: int | None = None  # first step with a snapshot available
    snapshot_steps: list[int] = []
    pending_snapshots = 0
    pending_expansions: list[tuple[int, int, int]] = []
    reports: list[EvalReport] = []

    def note_snapshot(step: int) -> None:
        nonlocal snapshot, alternation_anchor, pending_snapshots
        snapshot = take_snapshot(params, usage, step)
        if alternation_anchor is None:
            alternation_anchor = step + 1
        snapshot_steps.append(step)
        pending_snapshots += 1
        save_checkpoint(os.path.join(cfg.out_dir, f"snapshot-{step:07d}.ckpt"),
                        snapshot.params, None, snapshot.usage, step, snapshot=True)

    for step in range(spec.total_steps):
        is_replay = (replay_on and snapshot is not None
                     and (step - alternation_anchor) % 2 == 1)
        if is_replay:
            x, y_gen = replay_step(snapshot, spec.batch_size, replay_rng, smgr or supervised)
            y_obs = y_gen
        else:
            batch = next_batch(spec, train, step, substream(cfg.seed, STREAM_SHUFFLE, step))
            x = batch.x
            y_obs = None
            if supervised:
                ev = _expand_supervised(params, adam, usage, batch, exp_state)
                pending_expansions.extend(ev)
                y_obs = batch.labels

        try:
            loss, grads, bd = backward(x, params, reparam, y_obs=y_obs)
        except NumericError as exc:
            raise NumericError(f"{exc} at step {step}") from exc
        adam_step(params.to_dict(), grads, adam)
        exp_state.steps_since_last_expansion += 1

        if not is_replay:
            usage.update(bd.task_posterior)
            if cfg.expansion.enabled and not supervised:
                screen_batch(x, bd.total, buffer)
                if buffer.full:
                    if params.k >= arch.k_max:
                        buffer.clear()
                    elif exp_state.steps_since_last_expansion >= exp_state.consolidation_period:
                        if replay_on and policy.mode == "dynamic":
                            note_snapshot(step)
                        n_prev = len(exp_state.expansion_log)
                        parent = expand(params, adam, buffer, exp_state,
                                        substream(cfg.seed, STREAM_EXPAND, n_prev), step)
                        usage.grow(params.k)
                        pending_expansions.append((step, parent, params.k))

        if replay_on and policy.fires_after_step(step):
            note_snapshot(step)

        if (step + 1) % cfg.eval.cadence == 0 or step == spec.total_steps - 1:
            report = evaluate(params, test, train, substream(cfg.seed, STREAM_EVAL, step),
                              step=step, knn_train_subsample=cfg.eval.knn_train_subsample,
                              knn_test_subsample=cfg.eval.knn_test_subsample,
                              latent_mode=cfg.eval.latent_mode)
            reports.append(report)
            metrics.row(step, loss, float(np.mean(bd.total)), float(np.mean(bd.cat_kl)),
                        params.k, report, pending_snapshots, pending_expansions)
            with open(per_class_path, "a") as fh:
                for cls, acc in enumerate(report.per_class_accuracy):
                    fh.write(f"{step},{cls},{_fmt(acc)}\n")
            pending_snapshots = 0
            pending_expansions = []

    ckpt_path = os.path.join(cfg.out_dir, "checkpoint.ckpt")
    save_checkpoint(ckpt_path, params, adam, usage, spec.total_steps)
    return TrainResult(out_dir=cfg.out_dir, metrics_path=metrics.path,
                       checkpoint_path=ckpt_path, params=params, adam=adam, usage=usage,
                       expansion_log=exp_state.expansion_log, snapshot_steps=snapshot_steps,
                       final_report=reports[-1], reports=reports)


def run_eval(cfg: ExperimentConfig, checkpoint_path, split: str = "test",
             out_csv: str | None = None) -> EvalReport:
    """Evaluate a checkpoint on a dataset split; print and append a CSV row."""
    loaded = load_checkpoint(checkpoint_path)
    params = loaded.params
    train, valid, test = build_datasets(cfg)
    target = {"train": train, "valid": valid, "test": test}[split]
    if len(target) == 0:
        raise ValueError(f"empty {split} split")
    if params.arch.input_dim != target.dim:
        raise ConfigError(f"checkpoint input dim {params.arch.input_dim} != data dim {target.dim}")
    report = evaluate(params, target, train, substream(cfg.seed, STREAM_EVAL, loaded.step),
                      step=loaded.step, knn_train_subsample=cfg.eval.knn_train_subsample,
                      knn_test_subsample=cfg.eval.knn_test_subsample,
                      latent_mode=cfg.eval.latent_mode)
    print(report.summary())
    if out_csv:
        new = not os.path.exists(out_csv)
        with open(out_csv, "a") as fh:
            if new:
                fh.write(METRICS_HEADER + "\n")
            knn = [report.knn_error.get(k, float("nan")) for k in (3, 5, 10)]
            fh.write(",".join([str(loaded.step), "nan", "nan", "nan", str(params.k),
                               _fmt(report.cluster_accuracy), _fmt(knn[0]), _fmt(knn[1]),
                               _fmt(knn[2]), "0", ""]) + "\n")
    return report


def export_snapshot_rows(snapshot_paths, n_per_row: int, out_pgm,
                         out_matrix=None, seed: int = 0) -> np.ndarray:
    """One row of generated samples per snapshot, stacked into a grid.

    Snapshots are ordered by their stored step, so successive rows show
    what the model remembered as training progressed.
    """
    from .evaluation import sample_grid, save_grid_matrix, write_pgm
    from .model import generate
    loaded = sorted((load_checkpoint(p) for p in snapshot_paths), key=lambda l: l.step)
    if not loaded:
        raise ValueError("no snapshot files given")
    samples = []
    for i, snap in enumerate(loaded):
        x, _ = generate(snap.params, snap.usage.prior(), n_per_row,
                        substream(seed, STREAM_EVAL, 10 ** 6 + i))
        samples.append(x)
    flat = np.concatenate(samples)
    d = loaded[0].params.arch.input_dim
    side = int(round(np.sqrt(d)))
    hw = (side, d // side) if side * (d // side) == d else (1, d)
    grid = sample_grid(flat, hw, cols=n_per_row)
    write_pgm(out_pgm, grid)
    if out_matrix is not None:
        save_grid_matrix(out_matrix, flat)
    return grid


# ---------------------------------------------------------------------------
# Gradient checking against the finite-difference oracle.

GRADCHECK_TOLERANCE = 1e-4


def _grad_rel_errors(params: ModelParams, x: np.ndarray, eps: np.ndarray,
                     y_obs, h: float, corrupt_buffer: str | None) -> dict[str, float]:
    _, grads, _ = backward(x, params, None, y_obs=y_obs, eps=eps)
    if corrupt_buffer is not None:
        grads[corrupt_buffer] = grads[corrupt_buffer] + 1e-2
    out = {}
    for name, buf in params.buffers():
        def f(v, name=name, shape=buf.shape):
            trial = params.clone()
            trial.set_buffer(name, v.reshape(shape))
            loss, _, _ = backward(x, trial, None, y_obs=y_obs, eps=eps)
            return loss
        fd = finite_difference_grad(f, buf.copy(), h)
        g = grads[name]
        denom = np.maximum(1.0, np.maximum(np.abs(g), np.abs(fd)))
        out[name] = float(np.max(np.abs(g - fd) / denom))
    return out


def run_gradcheck(seed: int = 0, n_configs: int = 5, h: float = 1e-5,
                  corrupt_buffer: str | None = None, verbose: bool = True):
    """Randomized tiny-net gradient checks for both loss paths.

    Returns (per-buffer max relative error by path, passed). The
    corrupt_buffer hook perturbs one analytic gradient buffer so the
    failure path itself is testable.
    """
    arch = Architecture(input_dim=6, encoder=(5, 4), n_z=2, decoder=(4, 5), k_max=4)
    worst = {"marginal": {}, "constrained": {}}
    for i in range(n_configs):
        rng = substream(seed, STREAM_INIT, i)
        params = init_params(arch, rng, k_init=3)
        for name, buf in params.buffers():
            if "b." in name or "prior" in name or name == "task_b":
                buf += 0.3 * rng.normal(buf.shape)
        x = rng.uniform(0.05, 0.95, (2, 6))
        eps = rng.normal((2, params.k, arch.n_z))
        y = rng.integers(params.k, size=2)
        for path, y_obs in (("marginal", None), ("constrained", y)):
            errs = _grad_rel_errors(params, x, eps, y_obs, h, corrupt_buffer)
            for name, e in errs.items():
                worst[path][name] = max(worst[path].get(name, 0.0), e)
    passed = all(e < GRADCHECK_TOLERANCE for path in worst.values() for e in path.values())
    if verbose:
        for path, errs in worst.items():
            for name, e in sorted(errs.items()):
                flag = "ok" if e < GRADCHECK_TOLERANCE else "FAIL"
                print(f"gradcheck {path:12s} {name:12s} max_rel_err={e:.3e} {flag}")
        print(f"gradcheck overall: {'PASS' if passed else 'FAIL'}")
    return worst, passed


# ---------------------------------------------------------------------------
# Random-init k-NN dimensionality sweep.

def run_knn_sweep(cfg: ExperimentConfig, dims: tuple[int, ...] = (8, 16, 32, 64, 128, 256),
                  n_seeds: int = 3, k: int = 10, out_csv: str | None = None):
    """10-NN test error of randomly initialised models across latent sizes.

    For each (dim, seed): fresh Glorot-initialised model, sampled
    latents for a seeded train subsample and the test set, k-NN error.
    Returns {dim: [per-seed errors]}.
    """
    train, _valid, test = build_datasets(cfg)
    results: dict[int, list[float]] = {}
    rows = []
    for dim in dims:
        arch = Architecture(input_dim=train.dim, encoder=cfg.arch.encoder, n_z=dim,
                            decoder=cfg.arch.decoder, k_max=cfg.arch.k_max)
        errs = []
        for s in range(n_seeds):
            seed = cfg.seed + s
            params = init_params(arch, substream(seed, STREAM_INIT), cfg.arch.k_init)
            rng = substream(seed, STREAM_EVAL, dim)
            n_sub = min(cfg.eval.knn_train_subsample, len(train))
            sub = train.subset(rng.permutation(len(train))[:n_sub])
            train_z, _ = encode_eval_latents(sub, params, rng, cfg.eval.latent_mode)
            test_ds = test
            if cfg.eval.knn_test_subsample and cfg.eval.knn_test_subsample < len(test):
                test_ds = test.subset(rng.permutation(len(test))[:cfg.eval.knn_test_subsample])
            test_z, _ = encode_eval_latents(test_ds, params, rng, cfg.eval.latent_mode)
            err = knn_errors(train_z, sub.labels, test_z, test_ds.labels, (k,))[k]
            errs.append(err)
            rows.append((dim, seed, err))
        results[dim] = errs
        print(f"knn-sweep n_z={dim}: {k}-NN error {100 * np.mean(errs):.2f}% "
              f"(+/- {100 * np.std(errs):.2f}) over {n_seeds} seeds")
    if out_csv:
        with open(out_csv, "w") as fh:
            fh.write("n_z,seed,knn_error\n")
            for dim, seed, err in rows:
                fh.write(f"{dim},{seed},{_fmt(err)}\n")
    return results
