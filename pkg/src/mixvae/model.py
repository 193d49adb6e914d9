"""Mixture-of-Gaussians latent-variable model: forward passes, ELBO, manual backprop.

Generative process: y ~ Cat(uniform), z ~ N(mu_z(y), sigma_z(y)^2),
x ~ Bernoulli(mu_x(z)). The variational posterior factorizes as
q(y|x) q(z|x,y): a shared ReLU MLP encoder feeds a K-way softmax task
head and K per-component linear latent heads (first half mean, second
half softplus pre-variance). The component priors are per-component
(mu, rho) rows with sigma = softplus(rho). A single ReLU MLP decoder
with a sigmoid output layer maps z back to Bernoulli means.

The training objective marginalizes y exactly over the K active
components and draws one reparameterized z sample per component:

    total = sum_k q(y=k|x) * (log p(x|z_k) - KL[q(z|x,k) || p(z|k)])
            - KL[q(y|x) || uniform]

Gradients are computed by hand-written reverse mode over the cached
forward pass, so forward and backward always see the same noise.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericError, ShapeError
from .kernels import (
    as_f64,
    glorot_uniform,
    log_softmax,
    relu,
    sigmoid,
    softplus,
)
from .rng import RngState

# Floor added to every softplus-produced sigma; keeps KL and the
# reparameterization path away from zero variance.
SIGMA_FLOOR = 1e-6
# Bernoulli means are clamped to [BERNOULLI_EPS, 1 - BERNOULLI_EPS]
# before any log-likelihood.
BERNOULLI_EPS = 1e-6


@dataclass(frozen=True)
class Architecture:
    input_dim: int
    encoder: tuple[int, ...]
    n_z: int
    decoder: tuple[int, ...]
    k_max: int

    def __post_init__(self):
        if self.input_dim < 1 or self.n_z < 1 or self.k_max < 1:
            raise ValueError("input_dim, n_z, k_max must be positive")
        if not self.encoder or not self.decoder:
            raise ValueError("encoder and decoder need at least one hidden layer")


class ModelParams:
    """All learnable weights plus the active component count K.

    Per-component buffers are stacked along axis 0 so expansion appends
    one row per buffer. Buffer iteration order is fixed and is the
    declared checkpoint order.
    """

    def __init__(self, arch: Architecture, enc_w, enc_b, task_w, task_b,
                 lat_w, lat_b, prior_mu, prior_rho, dec_w, dec_b):
        self.arch = arch
        self.enc_w = enc_w      # list[(H_l, H_{l-1})]
        self.enc_b = enc_b      # list[(H_l,)]
        self.task_w = task_w    # (K, H)
        self.task_b = task_b    # (K,)
        self.lat_w = lat_w      # (K, 2*n_z, H)
        self.lat_b = lat_b      # (K, 2*n_z)
        self.prior_mu = prior_mu    # (K, n_z)
        self.prior_rho = prior_rho  # (K, n_z)
        self.dec_w = dec_w      # list[(G_m, G_{m-1})], last maps to input_dim
        self.dec_b = dec_b
        self.check_shapes()

    @property
    def k(self) -> int:
        return self.task_w.shape[0]

    @property
    def shared_dim(self) -> int:
        return self.arch.encoder[-1]

    def check_shapes(self) -> None:
        k, nz, h = self.k, self.arch.n_z, self.shared_dim
        if not (self.task_b.shape == (k,)
                and self.task_w.shape == (k, h)
                and self.lat_w.shape == (k, 2 * nz, h)
                and self.lat_b.shape == (k, 2 * nz)
                and self.prior_mu.shape == (k, nz)
                and self.prior_rho.shape == (k, nz)):
            raise ShapeError("per-component buffers disagree on K")
        if k > self.arch.k_max:
            raise ShapeError(f"K={k} exceeds capacity K_max={self.arch.k_max}")

    def buffers(self) -> list[tuple[str, np.ndarray]]:
        out = []
        for i, (w, b) in enumerate(zip(self.enc_w, self.enc_b)):
            out.append((f"enc_w.{i}", w))
            out.append((f"enc_b.{i}", b))
        out += [("task_w", self.task_w), ("task_b", self.task_b),
                ("lat_w", self.lat_w), ("lat_b", self.lat_b),
                ("prior_mu", self.prior_mu), ("prior_rho", self.prior_rho)]
        for i, (w, b) in enumerate(zip(self.dec_w, self.dec_b)):
            out.append((f"dec_w.{i}", w))
            out.append((f"dec_b.{i}", b))
        return out

    def to_dict(self) -> dict[str, np.ndarray]:
        return dict(self.buffers())

    def set_buffer(self, name: str, value: np.ndarray) -> None:
        if name.startswith("enc_w."):
            self.enc_w[int(name.split(".")[1])] = value
        elif name.startswith("enc_b."):
            self.enc_b[int(name.split(".")[1])] = value
        elif name.startswith("dec_w."):
            self.dec_w[int(name.split(".")[1])] = value
        elif name.startswith("dec_b."):
            self.dec_b[int(name.split(".")[1])] = value
        else:
            setattr(self, name, value)

    def clone(self) -> "ModelParams":
        return copy.deepcopy(self)

    def add_component_copy(self, parent: int) -> None:
        """Append component K+1 as an exact copy of component `parent`."""
        if not (0 <= parent < self.k):
            raise IndexError(f"parent {parent} out of range for K={self.k}")
        if self.k + 1 > self.arch.k_max:
            raise ShapeError(f"expansion beyond capacity K_max={self.arch.k_max}")
        self.task_w = np.concatenate([self.task_w, self.task_w[parent:parent + 1].copy()])
        self.task_b = np.concatenate([self.task_b, self.task_b[parent:parent + 1].copy()])
        self.lat_w = np.concatenate([self.lat_w, self.lat_w[parent:parent + 1].copy()])
        self.lat_b = np.concatenate([self.lat_b, self.lat_b[parent:parent + 1].copy()])
        self.prior_mu = np.concatenate([self.prior_mu, self.prior_mu[parent:parent + 1].copy()])
        self.prior_rho = np.concatenate([self.prior_rho, self.prior_rho[parent:parent + 1].copy()])
        self.check_shapes()


def init_params(arch: Architecture, rng: RngState, k_init: int = 1) -> ModelParams:
    """Glorot-uniform weights, zero biases, zero prior rows.

    Draw order is the declared buffer order, so a given seed always
    produces the same parameters. Task and latent head rows are drawn
    per row (fan_out = row width) so the scale does not depend on the
    initial component count.
    """
    if not (1 <= k_init <= arch.k_max):
        raise ValueError(f"k_init must be in [1, {arch.k_max}]")
    sizes = (arch.input_dim,) + arch.encoder
    enc_w = [glorot_uniform(rng, sizes[i], sizes[i + 1], (sizes[i + 1], sizes[i]))
             for i in range(len(arch.encoder))]
    enc_b = [np.zeros(s) for s in arch.encoder]
    h = arch.encoder[-1]
    task_w = glorot_uniform(rng, h, 1, (k_init, h))
    task_b = np.zeros(k_init)
    lat_w = glorot_uniform(rng, h, 2 * arch.n_z, (k_init, 2 * arch.n_z, h))
    lat_b = np.zeros((k_init, 2 * arch.n_z))
    prior_mu = np.zeros((k_init, arch.n_z))
    prior_rho = np.zeros((k_init, arch.n_z))
    dsizes = (arch.n_z,) + arch.decoder + (arch.input_dim,)
    dec_w = [glorot_uniform(rng, dsizes[i], dsizes[i + 1], (dsizes[i + 1], dsizes[i]))
             for i in range(len(dsizes) - 1)]
    dec_b = [np.zeros(s) for s in dsizes[1:]]
    return ModelParams(arch, enc_w, enc_b, task_w, task_b, lat_w, lat_b,
                       prior_mu, prior_rho, dec_w, dec_b)


# ---------------------------------------------------------------------------
# Forward building blocks (single sample or batch).

def encode_shared(x: np.ndarray, params: ModelParams) -> np.ndarray:
    """Shared representation: ReLU MLP over the flattened input."""
    x = as_f64(x)
    single = x.ndim == 1
    h = x[None, :] if single else x
    if h.shape[1] != params.arch.input_dim:
        raise ShapeError(f"input dim {h.shape[1]} != encoder input {params.arch.input_dim}")
    for w, b in zip(params.enc_w, params.enc_b):
        h = relu(h @ w.T + b)
    return h[0] if single else h


def infer_task_posterior(h: np.ndarray, params: ModelParams) -> np.ndarray:
    """q(y|x): softmax over the K active task-head logits."""
    h = as_f64(h)
    single = h.ndim == 1
    hh = h[None, :] if single else h
    q = np.exp(log_softmax(hh @ params.task_w.T + params.task_b, axis=1))
    return q[0] if single else q


def component_posterior_params(h: np.ndarray, k: int, params: ModelParams):
    """(mu, sigma) of q(z|x, y=k) from the shared representation."""
    if not (0 <= k < params.k):
        raise IndexError(f"component {k} out of range for K={params.k}")
    nz = params.arch.n_z
    a = as_f64(h) @ params.lat_w[k].T + params.lat_b[k]
    mu = a[..., :nz]
    sig = softplus(a[..., nz:]) + SIGMA_FLOOR
    return mu, sig


def prior_params(k: int, params: ModelParams):
    """(mu_z(y=k), sigma_z(y=k)): row lookup into the prior table."""
    if not (0 <= k < params.k):
        raise IndexError(f"component {k} out of range for K={params.k}")
    return params.prior_mu[k].copy(), softplus(params.prior_rho[k]) + SIGMA_FLOOR


def reparameterize(mu: np.ndarray, sigma: np.ndarray, rng: RngState) -> np.ndarray:
    """z = mu + sigma * eps with eps ~ N(0, I)."""
    mu = as_f64(mu)
    sigma = as_f64(sigma)
    if mu.shape != sigma.shape:
        raise ShapeError(f"mu shape {mu.shape} != sigma shape {sigma.shape}")
    if np.any(sigma <= 0):
        raise NumericError("reparameterize requires strictly positive sigma")
    return mu + sigma * rng.normal(mu.shape)


def decode(z: np.ndarray, params: ModelParams) -> np.ndarray:
    """Bernoulli mean vector in (0,1)^D, clamped away from {0,1}."""
    z = as_f64(z)
    lead = z.shape[:-1]
    if z.shape[-1] != params.arch.n_z:
        raise ShapeError(f"latent dim {z.shape[-1]} != n_z {params.arch.n_z}")
    g = z.reshape(-1, params.arch.n_z)
    for w, b in zip(params.dec_w[:-1], params.dec_b[:-1]):
        g = relu(g @ w.T + b)
    o = g @ params.dec_w[-1].T + params.dec_b[-1]
    p = np.clip(sigmoid(o), BERNOULLI_EPS, 1.0 - BERNOULLI_EPS)
    return p.reshape(lead + (params.arch.input_dim,))


def bernoulli_log_likelihood(x: np.ndarray, p: np.ndarray) -> np.ndarray:
    """sum_d x_d ln p_d + (1-x_d) ln(1-p_d); soft targets in [0,1] allowed."""
    x = as_f64(x)
    p = np.clip(as_f64(p), BERNOULLI_EPS, 1.0 - BERNOULLI_EPS)
    if x.shape != p.shape:
        raise ShapeError(f"target shape {x.shape} != mean shape {p.shape}")
    return np.sum(x * np.log(p) + (1.0 - x) * np.log1p(-p), axis=-1)


def gaussian_kl(q_mu, q_sigma, p_mu, p_sigma) -> np.ndarray:
    """KL[N(q_mu, q_sigma^2) || N(p_mu, p_sigma^2)] for diagonal Gaussians."""
    q_mu, q_sigma, p_mu, p_sigma = map(as_f64, (q_mu, q_sigma, p_mu, p_sigma))
    if not (q_mu.shape == q_sigma.shape and p_mu.shape == p_sigma.shape
            and q_mu.shape[-1] == p_mu.shape[-1]):
        raise ShapeError("gaussian_kl dimension mismatch")
    if np.any(q_sigma <= 0) or np.any(p_sigma <= 0):
        raise NumericError("gaussian_kl requires strictly positive sigmas")
    var_ratio = (q_sigma / p_sigma) ** 2
    delta = (q_mu - p_mu) / p_sigma
    return np.sum(np.log(p_sigma / q_sigma) + 0.5 * (var_ratio + delta * delta) - 0.5, axis=-1)


def categorical_kl(q: np.ndarray, k: int | None = None) -> float | np.ndarray:
    """KL[q || uniform over k classes] = sum q_i ln(q_i k), with 0 ln 0 := 0."""
    q = as_f64(q)
    if k is None:
        k = q.shape[-1]
    if not np.allclose(np.sum(q, axis=-1), 1.0, atol=1e-6):
        raise ValueError("categorical_kl: q must sum to 1")
    terms = np.where(q > 0, q * np.log(np.maximum(q, 1e-300) * k), 0.0)
    out = np.sum(terms, axis=-1)
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# Full ELBO forward with cache, losses, and manual backprop.

@dataclass
class ElboBreakdown:
    """Per-sample decomposition of the marginalized objective.

    Fields are batched: task_posterior (B,K), recon_per_component (B,K),
    gauss_kl_per_component (B,K), cat_kl (B,), total (B,).
    """
    task_posterior: np.ndarray
    recon_per_component: np.ndarray
    gauss_kl_per_component: np.ndarray
    cat_kl: np.ndarray
    total: np.ndarray

    def recompose(self) -> np.ndarray:
        w = self.task_posterior
        return np.sum(w * (self.recon_per_component - self.gauss_kl_per_component),
                      axis=-1) - self.cat_kl

    def squeezed(self) -> "ElboBreakdown":
        return ElboBreakdown(self.task_posterior[0], self.recon_per_component[0],
                             self.gauss_kl_per_component[0], float(self.cat_kl[0]),
                             float(self.total[0]))


@dataclass
class _Cache:
    x: np.ndarray
    enc_in: list        # inputs to each encoder layer
    enc_mask: list      # relu masks per encoder layer
    h: np.ndarray
    t_logits: np.ndarray
    ln_q: np.ndarray
    q: np.ndarray
    rho: np.ndarray
    mu: np.ndarray
    sig: np.ndarray
    eps: np.ndarray
    z: np.ndarray
    dec_in: list
    dec_mask: list
    p: np.ndarray       # (B*K, D) clamped means
    p_mask: np.ndarray  # where the clamp is inactive
    psig: np.ndarray
    recon: np.ndarray
    klg: np.ndarray
    breakdown: ElboBreakdown = field(default=None)


def _forward(params: ModelParams, x: np.ndarray, eps: np.ndarray) -> _Cache:
    arch = params.arch
    b, k, nz = x.shape[0], params.k, arch.n_z
    if eps.shape != (b, k, nz):
        raise ShapeError(f"eps shape {eps.shape} != {(b, k, nz)}")

    enc_in, enc_mask = [], []
    h = x
    for w, bia in zip(params.enc_w, params.enc_b):
        enc_in.append(h)
        a = h @ w.T + bia
        mask = a > 0
        enc_mask.append(mask)
        h = np.where(mask, a, 0.0)

    t_logits = h @ params.task_w.T + params.task_b
    ln_q = log_softmax(t_logits, axis=1)
    q = np.exp(ln_q)

    a = np.einsum("bh,koh->bko", h, params.lat_w, optimize=True) + params.lat_b[None]
    mu = a[:, :, :nz]
    rho = a[:, :, nz:]
    sig = softplus(rho) + SIGMA_FLOOR
    z = mu + sig * eps

    g = z.reshape(b * k, nz)
    dec_in, dec_mask = [], []
    for w, bia in zip(params.dec_w[:-1], params.dec_b[:-1]):
        dec_in.append(g)
        c = g @ w.T + bia
        mask = c > 0
        dec_mask.append(mask)
        g = np.where(mask, c, 0.0)
    dec_in.append(g)
    o = g @ params.dec_w[-1].T + params.dec_b[-1]
    p_raw = sigmoid(o)
    p = np.clip(p_raw, BERNOULLI_EPS, 1.0 - BERNOULLI_EPS)
    p_mask = (p_raw > BERNOULLI_EPS) & (p_raw < 1.0 - BERNOULLI_EPS)

    x_tiled = np.repeat(x[:, None, :], k, axis=1).reshape(b * k, -1)
    recon = np.sum(x_tiled * np.log(p) + (1.0 - x_tiled) * np.log1p(-p), axis=1).reshape(b, k)

    psig = softplus(params.prior_rho) + SIGMA_FLOOR
    var_ratio = (sig / psig[None]) ** 2
    delta = (mu - params.prior_mu[None]) / psig[None]
    klg = np.sum(np.log(psig[None] / sig) + 0.5 * (var_ratio + delta * delta) - 0.5, axis=2)

    cat_kl = np.sum(q * (ln_q + np.log(k)), axis=1)
    total = np.sum(q * (recon - klg), axis=1) - cat_kl
    breakdown = ElboBreakdown(q, recon, klg, cat_kl, total)
    return _Cache(x, enc_in, enc_mask, h, t_logits, ln_q, q, rho, mu, sig, eps, z,
                  dec_in, dec_mask, p, p_mask, psig, recon, klg, breakdown)


def _as_batch(x: np.ndarray) -> tuple[np.ndarray, bool]:
    x = as_f64(x)
    return (x[None, :], True) if x.ndim == 1 else (x, False)


def draw_eps(params: ModelParams, batch: int, rng: RngState) -> np.ndarray:
    """One reparameterization noise block per sample per component."""
    return rng.normal((batch, params.k, params.arch.n_z))


def elbo(x: np.ndarray, params: ModelParams, rng: RngState,
         eps: np.ndarray | None = None) -> ElboBreakdown:
    """Monte Carlo objective: one z sample per component, exact sum over y."""
    xb, single = _as_batch(x)
    if xb.shape[1] != params.arch.input_dim:
        raise ShapeError(f"input dim {xb.shape[1]} != {params.arch.input_dim}")
    if eps is None:
        eps = draw_eps(params, xb.shape[0], rng)
    cache = _forward(params, xb, eps)
    return cache.breakdown.squeezed() if single else cache.breakdown


def supervised_elbo(x: np.ndarray, y_obs, params: ModelParams, rng: RngState,
                    eps: np.ndarray | None = None):
    """Component-constrained objective for observed labels:

    log p(x|z_y) - KL[q(z|x,y) || p(z|y)] + ln q(y|x), evaluated at y_obs.
    """
    xb, single = _as_batch(x)
    y = np.atleast_1d(np.asarray(y_obs, dtype=np.int64))
    if np.any(y < 0) or np.any(y >= params.k):
        raise IndexError(f"y_obs out of range for K={params.k}")
    if y.shape[0] != xb.shape[0]:
        raise ShapeError(f"batch {xb.shape[0]} != labels {y.shape[0]}")
    if eps is None:
        eps = draw_eps(params, xb.shape[0], rng)
    cache = _forward(params, xb, eps)
    rows = np.arange(xb.shape[0])
    vals = (cache.recon[rows, y] - cache.klg[rows, y] + cache.ln_q[rows, y])
    return float(vals[0]) if single else vals


def _zero_grads(params: ModelParams) -> dict[str, np.ndarray]:
    return {name: np.zeros_like(buf) for name, buf in params.buffers()}


def _backward(params: ModelParams, cache: _Cache,
              y_obs: np.ndarray | None) -> tuple[float, dict[str, np.ndarray]]:
    """Reverse-mode pass for the negative batch-mean objective."""
    arch = params.arch
    b, k, nz = cache.x.shape[0], params.k, arch.n_z
    scale = -1.0 / b
    grads = _zero_grads(params)

    if y_obs is None:
        loss = float(-np.mean(cache.breakdown.total))
        # d total / d r_k = q_k ; d total / d q_k = r_k - ln(q_k K) - 1
        g_r = scale * cache.q
        r = cache.recon - cache.klg
        g_q = scale * (r - (cache.ln_q + np.log(k)) - 1.0)
        g_t = cache.q * (g_q - np.sum(cache.q * g_q, axis=1, keepdims=True))
    else:
        rows = np.arange(b)
        vals = cache.recon[rows, y_obs] - cache.klg[rows, y_obs] + cache.ln_q[rows, y_obs]
        loss = float(-np.mean(vals))
        onehot = np.zeros((b, k))
        onehot[rows, y_obs] = 1.0
        g_r = scale * onehot
        g_t = scale * (onehot - cache.q)

    # Task head.
    grads["task_w"] += g_t.T @ cache.h
    grads["task_b"] += g_t.sum(axis=0)
    g_h = g_t @ params.task_w

    # Reconstruction branch through the decoder.
    g_recon = g_r
    coeff = g_recon.reshape(b * k, 1)
    x_tiled = np.repeat(cache.x[:, None, :], k, axis=1).reshape(b * k, -1)
    g_o = coeff * (x_tiled - cache.p) * cache.p_mask
    g = g_o
    grads[f"dec_w.{len(params.dec_w) - 1}"] += g.T @ cache.dec_in[-1]
    grads[f"dec_b.{len(params.dec_b) - 1}"] += g.sum(axis=0)
    g = g @ params.dec_w[-1]
    for m in range(len(params.dec_w) - 2, -1, -1):
        g = g * cache.dec_mask[m]
        grads[f"dec_w.{m}"] += g.T @ cache.dec_in[m]
        grads[f"dec_b.{m}"] += g.sum(axis=0)
        g = g @ params.dec_w[m]
    g_z = g.reshape(b, k, nz)

    # Gaussian KL branch.
    g_klg = -g_r
    psig = cache.psig[None]
    pmu = params.prior_mu[None]
    inv_p2 = 1.0 / (psig * psig)
    g_mu = g_klg[:, :, None] * (cache.mu - pmu) * inv_p2
    g_sig = g_klg[:, :, None] * (cache.sig * inv_p2 - 1.0 / cache.sig)
    g_pmu = np.sum(g_klg[:, :, None] * (pmu - cache.mu) * inv_p2, axis=0)
    g_psig = np.sum(
        g_klg[:, :, None]
        * (1.0 / psig - (cache.sig ** 2 + (cache.mu - pmu) ** 2) / psig ** 3),
        axis=0)

    # Reparameterization.
    g_mu = g_mu + g_z
    g_sig = g_sig + g_z * cache.eps

    # Latent heads: first half mean, second half softplus pre-variance.
    g_a = np.concatenate([g_mu, g_sig * sigmoid(cache.rho)], axis=2)
    grads["lat_w"] += np.einsum("bko,bh->koh", g_a, cache.h, optimize=True)
    grads["lat_b"] += g_a.sum(axis=0)
    g_h = g_h + np.einsum("bko,koh->bh", g_a, params.lat_w, optimize=True)

    # Prior table.
    grads["prior_mu"] += g_pmu
    grads["prior_rho"] += g_psig * sigmoid(params.prior_rho)

    # Shared encoder.
    for l in range(len(params.enc_w) - 1, -1, -1):
        g_h = g_h * cache.enc_mask[l]
        grads[f"enc_w.{l}"] += g_h.T @ cache.enc_in[l]
        grads[f"enc_b.{l}"] += g_h.sum(axis=0)
        g_h = g_h @ params.enc_w[l]

    return loss, grads


def backward(x: np.ndarray, params: ModelParams, rng: RngState,
             y_obs=None, eps: np.ndarray | None = None):
    """Loss and gradients of the negative batch-mean objective.

    y_obs None selects the marginalized loss; an int array selects the
    component-constrained loss. Returns (loss, grads, breakdown); the
    breakdown always carries the marginalized per-sample quantities so
    callers can reuse them for screening and usage counts.
    """
    xb, _ = _as_batch(x)
    if eps is None:
        eps = draw_eps(params, xb.shape[0], rng)
    cache = _forward(params, xb, eps)
    y = None
    if y_obs is not None:
        y = np.asarray(y_obs, dtype=np.int64).reshape(-1)
        if np.any(y < 0) or np.any(y >= params.k):
            raise IndexError(f"y_obs out of range for K={params.k}")
    loss, grads = _backward(params, cache, y)
    if not np.isfinite(loss):
        raise NumericError(f"non-finite loss {loss}")
    return loss, grads, cache.breakdown


def generate(params: ModelParams, pi: np.ndarray, n: int, rng: RngState):
    """Sample n inputs from the generative model under component prior pi.

    y ~ Cat(pi), z ~ p(z|y), x = decoder Bernoulli means (soft samples).
    Returns (x_gen (n,D), y_gen (n,)).
    """
    pi = as_f64(pi)
    if pi.shape != (params.k,):
        raise ValueError(f"pi length {pi.shape} != K={params.k}")
    if np.any(pi < 0) or abs(float(np.sum(pi)) - 1.0) > 1e-9:
        raise ValueError("pi must be a normalized probability vector")
    y = rng.categorical(pi, n)
    eps = rng.normal((n, params.arch.n_z))
    psig = softplus(params.prior_rho) + SIGMA_FLOOR
    z = params.prior_mu[y] + psig[y] * eps
    return decode(z, params), y
