"""Acceptance suite: one test per release criterion, each printing a
PASS line with its measured value when it completes.

Criteria needing the real MNIST IDX files skip when the files are
absent (see conftest.find_mnist_dir). The full-scale reproduction runs
are opt-in via RUN_FULL_SCALE=1 because they take hours.
"""

import os
import time

import numpy as np
import pytest

from conftest import MNIST_DIR, needs_mnist, random_inputs, tiny_params
from mixvae.config import apply_overrides, load_preset
from mixvae.data import load_idx
from mixvae.errors import StateError
from mixvae.evaluation import knn_errors
from mixvae.expansion import PoorSampleBuffer, screen_batch, select_parent
from mixvae.kernels import finite_difference_grad
from mixvae.model import (
    backward,
    bernoulli_log_likelihood,
    component_posterior_params,
    decode,
    draw_eps,
    elbo,
    encode_shared,
    gaussian_kl,
    generate,
    infer_task_posterior,
    prior_params,
)
from mixvae.replay import UsageCounts, take_snapshot
from mixvae.rng import RngState
from mixvae.train import run_knn_sweep, run_train
from mixvae.adam import AdamState, adam_step

RUN_FULL_SCALE = os.environ.get("RUN_FULL_SCALE") == "1"


def report(criterion, detail):
    print(f"\nACCEPTANCE {criterion}: PASS ({detail})")


# -------------------------------------------------------------------------
# 1. Gradient fidelity.

def test_criterion_1_gradient_fidelity():
    t0 = time.time()
    worst = 0.0
    n_configs = 100
    for i in range(n_configs):
        rng = RngState(1000 + i, (1,))
        params = tiny_params(seed=2000 + i)
        x = rng.uniform(0.02, 0.98, (2, 6))
        eps = draw_eps(params, 2, rng)
        y = rng.integers(params.k, size=2)
        for y_obs in (None, y):
            _, grads, _ = backward(x, params, None, y_obs=y_obs, eps=eps)
            for name, buf in params.buffers():
                def f(v, name=name, shape=buf.shape):
                    trial = params.clone()
                    trial.set_buffer(name, v.reshape(shape))
                    loss, _, _ = backward(x, trial, None, y_obs=y_obs, eps=eps)
                    return loss
                fd = finite_difference_grad(f, buf.copy(), 1e-5)
                g = grads[name]
                rel = np.max(np.abs(g - fd) / np.maximum(1.0, np.maximum(np.abs(g), np.abs(fd))))
                worst = max(worst, float(rel))
    elapsed = time.time() - t0
    assert worst < 1e-4, f"max relative error {worst:.3e}"
    assert elapsed < 60, f"took {elapsed:.1f}s"
    report(1, f"gradient fidelity: max rel err {worst:.2e} over {n_configs} configs, "
              f"both loss paths, {elapsed:.1f}s")


# -------------------------------------------------------------------------
# 2. ELBO identities.

def test_criterion_2_elbo_identities():
    t0 = time.time()
    # (a) K=1 reduction against an independently composed single-VAE path
    worst_gap = 0.0
    for i in range(10):
        params = tiny_params(seed=3000 + i, k=1)
        for j in range(100):
            rng = RngState(4000 + 100 * i + j, (2,))
            x = rng.uniform(0.02, 0.98, 6)
            eps = rng.normal(2)
            h = encode_shared(x, params)
            mu, sig = component_posterior_params(h, 0, params)
            z = mu + sig * eps
            recon = bernoulli_log_likelihood(x, decode(z, params))
            p_mu, p_sig = prior_params(0, params)
            oracle = float(recon - gaussian_kl(mu, sig, p_mu, p_sig))
            got = elbo(x, params, None, eps=eps.reshape(1, 1, 2))
            worst_gap = max(worst_gap, abs(got.total - oracle))
            assert got.cat_kl == 0.0
    assert worst_gap < 1e-10, worst_gap

    # (b) recomposition and (c) nonnegative KL terms over 10^4 random inputs
    params = tiny_params(seed=3100)
    worst_recompose = 0.0
    for lo in range(0, 10 ** 4, 1000):
        rng = RngState(5000 + lo, (3,))
        x = rng.uniform(0.02, 0.98, (1000, 6))
        bd = elbo(x, params, rng)
        worst_recompose = max(worst_recompose, float(np.max(np.abs(bd.recompose() - bd.total))))
        assert np.all(bd.gauss_kl_per_component >= 0)
        assert np.all(bd.cat_kl >= -1e-15)
    assert worst_recompose < 1e-9
    elapsed = time.time() - t0
    assert elapsed < 60
    report(2, f"ELBO identities: K=1 gap {worst_gap:.1e}, recomposition gap "
              f"{worst_recompose:.1e}, KLs >= 0 on 1e4 inputs, {elapsed:.1f}s")


# -------------------------------------------------------------------------
# 3. Parent-selection oracle.

def test_criterion_3_parent_selection_oracle():
    t0 = time.time()
    n_tied = 0
    for i in range(1000):
        rng = RngState(6000 + i, (4,))
        tie_case = i % 10 == 0
        params = tiny_params(seed=7000 + i, k=int(rng.integers(3) + 1))
        if tie_case:
            params.task_w[:] = 0.0
            params.task_b[:] = 0.0
            n_tied += 1
        n = int(rng.integers(31) + 2)
        buf = PoorSampleBuffer(capacity=n, threshold=0.0)
        screen_batch(rng.uniform(0.02, 0.98, (n, 6)), np.full(n, -1.0), buf)
        sums = np.zeros(params.k)
        for x in buf.samples:
            sums += infer_task_posterior(encode_shared(x, params), params)
        expected = int(np.argmax(sums))
        got = select_parent(buf, params)
        assert got == expected, (i, got, expected)
        if tie_case and params.k > 1:
            assert got == 0
    with pytest.raises(StateError):
        select_parent(PoorSampleBuffer(4, 0.0), tiny_params())
    elapsed = time.time() - t0
    report(3, f"parent selection matches brute force on 1000 buffers "
              f"({n_tied} exact ties), {elapsed:.1f}s")


# -------------------------------------------------------------------------
# 4. Replay freeze and usage prior.

def test_criterion_4_replay_freeze_and_prior():
    t0 = time.time()
    params = tiny_params(seed=8000)
    usage = UsageCounts(params.k)
    rng = RngState(8001, (5,))
    for _ in range(20):
        bd = elbo(rng.uniform(0.02, 0.98, (16, 6)), params, rng)
        usage.update(bd.task_posterior)
    snapshot = take_snapshot(params, usage, step=20)
    x_before, y_before = generate(snapshot.params, snapshot.prior(), 256, RngState(8002, (6,)))

    adam = AdamState()
    train_rng = RngState(8003, (7,))
    for _ in range(1000):
        _, grads, _ = backward(train_rng.uniform(0.02, 0.98, (8, 6)), params, train_rng)
        adam_step(params.to_dict(), grads, adam)

    x_after, y_after = generate(snapshot.params, snapshot.prior(), 256, RngState(8002, (6,)))
    assert np.array_equal(x_before, x_after)
    assert np.array_equal(y_before, y_after)

    _, y_many = generate(snapshot.params, snapshot.prior(), 10 ** 4, RngState(8004, (8,)))
    freq = np.bincount(y_many, minlength=params.k) / 10 ** 4
    gap = np.max(np.abs(freq - snapshot.prior()))
    assert gap < 0.02, gap
    elapsed = time.time() - t0
    report(4, f"snapshot generation bit-stable across 1000 updates; y_gen freq within "
              f"{gap:.3f} of usage prior, {elapsed:.1f}s")


# -------------------------------------------------------------------------
# 5. Toy continual forgetting demonstration.

def test_criterion_5_toy_forgetting_demonstration(tmp_path):
    t0 = time.time()
    mgr_accs, mgr_firsts, off_firsts = [], [], []
    for seed in (0, 1, 2):
        cfg = apply_overrides(load_preset("toy-blobs-mgr-dyn"),
                              [f"seed={seed}", f"out_dir={tmp_path}/mgr{seed}"])
        res = run_train(cfg)
        mgr_accs.append(res.final_report.cluster_accuracy)
        mgr_firsts.append(res.final_report.per_class_accuracy[0])
        cfg_off = apply_overrides(load_preset("toy-blobs-noreplay"),
                                  [f"seed={seed}", f"out_dir={tmp_path}/off{seed}"])
        res_off = run_train(cfg_off)
        off_firsts.append(res_off.final_report.per_class_accuracy[0])
    mean_acc = float(np.mean(mgr_accs))
    gap = float(np.mean(mgr_firsts) - np.mean(off_firsts))
    elapsed = time.time() - t0
    assert mean_acc >= 0.90, f"MGR cluster accuracy {mean_acc:.3f} (per seed {mgr_accs})"
    assert gap >= 0.15, (f"first-class forgetting gap {gap:.3f} "
                         f"(MGR {mgr_firsts} vs off {off_firsts})")
    assert elapsed < 300, f"took {elapsed:.0f}s"
    report(5, f"toy continual run: MGR acc {mean_acc:.3f} >= 0.90, first-class gap "
              f"{gap:+.3f} >= 0.15, {elapsed:.0f}s")


# -------------------------------------------------------------------------
# 6. Scaled MNIST sequential (requires MNIST files).

@needs_mnist
def test_criterion_6_scaled_mnist_sequential(tmp_path):
    t0 = time.time()
    mgr_accs, off_accs = [], []
    for seed in (0, 1, 2):
        cfg = apply_overrides(load_preset("mnist3-seq-mgr-fixedT"),
                              [f"seed={seed}", f"data.dir={MNIST_DIR}",
                               f"out_dir={tmp_path}/mgr{seed}"])
        mgr_accs.append(run_train(cfg).final_report.cluster_accuracy)
        cfg_off = apply_overrides(load_preset("mnist3-seq-nomgr"),
                                  [f"seed={seed}", f"data.dir={MNIST_DIR}",
                                   f"out_dir={tmp_path}/off{seed}"])
        off_accs.append(run_train(cfg_off).final_report.cluster_accuracy)
    mean_mgr = float(np.mean(mgr_accs))
    mean_off = float(np.mean(off_accs))
    elapsed = time.time() - t0
    assert mean_mgr >= 0.80, f"3-class cluster accuracy {mean_mgr:.3f} ({mgr_accs})"
    assert mean_mgr > mean_off, f"MGR {mean_mgr:.3f} vs no-MGR {mean_off:.3f}"
    assert elapsed < 1800, f"took {elapsed:.0f}s"
    report(6, f"scaled MNIST: MGR {mean_mgr:.3f} >= 0.80 and > no-MGR {mean_off:.3f}, "
              f"{elapsed:.0f}s")


# -------------------------------------------------------------------------
# 7. Random-init k-NN dimensionality reproduction (requires MNIST files).

@needs_mnist
def test_criterion_7_random_init_knn_dims(tmp_path):
    t0 = time.time()
    cfg = apply_overrides(load_preset("knn-dim-sweep"),
                          [f"data.dir={MNIST_DIR}", f"out_dir={tmp_path}/sweep"])
    results = run_knn_sweep(cfg, dims=(8, 32, 128, 256), n_seeds=3)
    means = {d: float(np.mean(errs)) * 100 for d, errs in results.items()}
    elapsed = time.time() - t0
    assert abs(means[8] - 58.75) <= 9.0, means
    assert abs(means[256] - 12.68) <= 4.0, means
    per_seed = np.array([[results[d][s] for d in (8, 32, 128)] for s in range(3)])
    seed_avg = per_seed.mean(axis=0)
    assert seed_avg[0] > seed_avg[1] > seed_avg[2], seed_avg
    assert elapsed < 900, f"took {elapsed:.0f}s"
    report(7, f"random-init 10-NN error: nz8 {means[8]:.2f}% (target 58.75+/-9), "
              f"nz256 {means[256]:.2f}% (target 12.68+/-4), strictly decreasing, {elapsed:.0f}s")


# -------------------------------------------------------------------------
# 8. Expansion-threshold monotonicity (requires MNIST files).

@needs_mnist
def test_criterion_8_threshold_monotonicity(tmp_path):
    t0 = time.time()
    thresholds = (-250.0, -200.0, -150.0)
    counts = []
    best_acc = 0.0
    for c_new in thresholds:
        ks, accs = [], []
        for seed in (0, 1, 2):
            cfg = apply_overrides(load_preset("mnist3-seq-mgr-fixedT"),
                                  [f"seed={seed}", f"data.dir={MNIST_DIR}",
                                   f"expansion.c_new={c_new}",
                                   f"out_dir={tmp_path}/thr{c_new}_{seed}"])
            res = run_train(cfg)
            ks.append(res.params.k)
            accs.append(res.final_report.cluster_accuracy)
        counts.append(float(np.mean(ks)))
        best_acc = max(best_acc, float(np.mean(accs)))
    noexp_accs = []
    for seed in (0, 1, 2):
        cfg = apply_overrides(load_preset("mnist3-seq-mgr-fixedT"),
                              [f"seed={seed}", f"data.dir={MNIST_DIR}",
                               "expansion.enabled=false", "arch.k_init=1",
                               f"out_dir={tmp_path}/noexp{seed}"])
        noexp_accs.append(run_train(cfg).final_report.cluster_accuracy)
    noexp = float(np.mean(noexp_accs))
    elapsed = time.time() - t0
    assert counts == sorted(counts), f"component counts not monotone: {counts}"
    assert noexp < best_acc, f"no-expansion {noexp:.3f} vs best expanding {best_acc:.3f}"
    report(8, f"threshold sweep {thresholds} -> components {counts} (non-decreasing); "
              f"no-expansion {noexp:.3f} < best {best_acc:.3f}, {elapsed:.0f}s")


# -------------------------------------------------------------------------
# 9. Full-scale targets (optional; hours of CPU).

@needs_mnist
@pytest.mark.skipif(not RUN_FULL_SCALE, reason="full-scale runs are opt-in: RUN_FULL_SCALE=1")
def test_criterion_9_full_scale_targets(tmp_path):
    cfg = apply_overrides(load_preset("mnist-seq-mgr-fixedT"),
                          [f"data.dir={MNIST_DIR}", f"out_dir={tmp_path}/full"])
    res = run_train(cfg)
    acc = res.final_report.cluster_accuracy * 100
    knn10 = res.final_report.knn_error[10] * 100
    assert abs(acc - 77.74) <= 5.0, acc
    assert abs(knn10 - 6.29) <= 2.0, knn10

    iid_cfg = apply_overrides(load_preset("mnist-iid"),
                              [f"data.dir={MNIST_DIR}", f"out_dir={tmp_path}/iid"])
    iid = run_train(iid_cfg)
    assert abs(iid.final_report.knn_error[10] * 100 - 4.23) <= 1.5

    sup_cfg = apply_overrides(load_preset("splitmnist-supervised"),
                              [f"data.dir={MNIST_DIR}", f"out_dir={tmp_path}/sup"])
    sup = run_train(sup_cfg)
    from mixvae.evaluation import incremental_class_accuracy, incremental_task_accuracy
    from mixvae.train import build_datasets
    _train, _valid, test = build_datasets(sup_cfg)
    task = incremental_task_accuracy(sup.params, test, sup_cfg.stream.task_pairs) * 100
    cls = incremental_class_accuracy(sup.params, test) * 100
    assert task >= 98.0, task
    assert cls >= 88.0, cls
    report(9, f"full scale: seq acc {acc:.2f}, seq knn10 {knn10:.2f}, "
              f"iid knn10 {iid.final_report.knn_error[10] * 100:.2f}, "
              f"split task {task:.2f} / class {cls:.2f}")


# -------------------------------------------------------------------------
# 10. Determinism.

def test_criterion_10_determinism(tmp_path):
    t0 = time.time()
    overrides = ["stream.total_steps=600", "eval.cadence=200",
                 "data.blob_train_per_class=400", "data.blob_test_per_class=100"]
    runs = []
    for tag in ("a", "b"):
        cfg = apply_overrides(load_preset("toy-blobs-mgr-dyn"),
                              overrides + [f"out_dir={tmp_path}/{tag}"])
        runs.append(run_train(cfg))
    csv_a = open(runs[0].metrics_path, "rb").read()
    csv_b = open(runs[1].metrics_path, "rb").read()
    assert csv_a == csv_b, "metrics CSVs differ between identical runs"

    from mixvae.checkpoint import load_checkpoint, save_checkpoint
    loaded = load_checkpoint(runs[0].checkpoint_path)
    resaved = tmp_path / "resaved.ckpt"
    save_checkpoint(resaved, loaded.params, loaded.adam, loaded.usage, loaded.step)
    assert resaved.read_bytes() == open(runs[0].checkpoint_path, "rb").read()
    elapsed = time.time() - t0
    report(10, f"byte-identical metrics across reruns; checkpoint round-trip bit-exact, "
               f"{elapsed:.0f}s")
