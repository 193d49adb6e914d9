import os

import numpy as np
import pytest

from mixvae.model import Architecture, init_params
from mixvae.rng import RngState

MNIST_FILES = ("train-images-idx3-ubyte", "train-labels-idx1-ubyte",
               "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte")


def find_mnist_dir():
    """Directory holding the four MNIST IDX files (optionally .gz), or None."""
    candidates = [os.environ.get("MIXVAE_DATA"), "data", "/root/data", "."]
    for base in candidates:
        if not base:
            continue
        if all(os.path.exists(os.path.join(base, f))
               or os.path.exists(os.path.join(base, f + ".gz"))
               for f in MNIST_FILES):
            return base
    return None


MNIST_DIR = find_mnist_dir()
needs_mnist = pytest.mark.skipif(
    MNIST_DIR is None,
    reason="MNIST IDX files not found; set MIXVAE_DATA to a directory with "
           "train-images-idx3-ubyte, train-labels-idx1-ubyte, t10k-images-idx3-ubyte, "
           "t10k-labels-idx1-ubyte")


def tiny_arch(d=6, n_z=2, k_max=4):
    return Architecture(input_dim=d, encoder=(5, 4), n_z=n_z, decoder=(4, 5), k_max=k_max)


def tiny_params(seed=0, k=3, d=6, n_z=2, k_max=4, spread_biases=True):
    """Small random net; biases and priors perturbed so their gradients are live."""
    rng = RngState(seed, (17,))
    params = init_params(tiny_arch(d, n_z, k_max), rng, k_init=k)
    if spread_biases:
        for name, buf in params.buffers():
            if "b." in name or "prior" in name or name == "task_b":
                buf += 0.3 * rng.normal(buf.shape)
    return params


@pytest.fixture
def rng():
    return RngState(123, (99,))


def random_inputs(n, d, seed=5):
    return RngState(seed, (31,)).uniform(0.02, 0.98, (n, d))
