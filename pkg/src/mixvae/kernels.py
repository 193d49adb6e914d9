"""Dense numeric kernels: stable primitives, init, and a finite-difference oracle.

All arrays are 64-bit floats. Matrices are 2-D row-major numpy arrays.
Kernels are pure functions; they either guard against non-finite output
(stable branch forms) or raise NumericError/ShapeError.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from .errors import NumericError, ShapeError


def as_f64(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


def check_finite(name: str, a: np.ndarray) -> np.ndarray:
    if not np.all(np.isfinite(a)):
        raise NumericError(f"{name} contains non-finite values")
    return a


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product. Raises ShapeError naming both shapes on mismatch."""
    a = as_f64(a)
    b = as_f64(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    return a @ b


def log_sum_exp(v: np.ndarray, axis: int = -1) -> np.ndarray:
    """log(sum(exp(v))) along `axis`, stabilized by max subtraction."""
    v = as_f64(v)
    if v.size == 0:
        raise ValueError("log_sum_exp of an empty vector")
    m = np.max(v, axis=axis, keepdims=True)
    if not np.all(np.isfinite(m)):
        raise NumericError("log_sum_exp requires finite inputs")
    out = np.log(np.sum(np.exp(v - m), axis=axis)) + np.squeeze(m, axis=axis)
    return out if out.ndim else float(out)


def log_softmax(v: np.ndarray, axis: int = -1) -> np.ndarray:
    """v - log_sum_exp(v); always finite for finite inputs."""
    v = as_f64(v)
    m = np.max(v, axis=axis, keepdims=True)
    if not np.all(np.isfinite(m)):
        raise NumericError("log_softmax requires finite inputs")
    shifted = v - m
    return shifted - np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))


def softmax(v: np.ndarray, axis: int = -1) -> np.ndarray:
    """Shift-invariant softmax via log_sum_exp; rows sum to 1 within 1e-12."""
    return np.exp(log_softmax(v, axis=axis))


def softplus(x) -> np.ndarray:
    """ln(1 + e^x) in overflow-safe branch form: max(x,0) + log1p(e^-|x|).

    Strictly positive for all x above the subnormal underflow point
    (~ -744); below that e^x has no float64 representation at all.
    """
    x = as_f64(x)
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def sigmoid(x) -> np.ndarray:
    """Logistic function, overflow-safe on both tails."""
    x = as_f64(x)
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def relu(x) -> np.ndarray:
    return np.maximum(as_f64(x), 0.0)


def glorot_uniform(rng, fan_in: int, fan_out: int, shape: tuple[int, ...]) -> np.ndarray:
    """Uniform Glorot init: U(-a, a), a = sqrt(6 / (fan_in + fan_out))."""
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, shape)


def finite_difference_grad(
    f: Callable[[np.ndarray], float], x: np.ndarray, h: float = 1e-5
) -> np.ndarray:
    """Central-difference gradient estimate of a scalar function.

    (f(x + h e_i) - f(x - h e_i)) / 2h per coordinate. Raises
    NumericError if any evaluation is non-finite.
    """
    if h <= 0:
        raise ValueError(f"step h must be positive, got {h}")
    x = as_f64(x).copy()
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = float(f(x))
        flat[i] = orig - h
        fm = float(f(x))
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NumericError(f"non-finite evaluation at coordinate {i}")
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad
