"""Flat binary checkpoints with bit-exact round-trips.

Layout (all little-endian):

    magic            8 bytes   b"MIXVAE\\x01\\x00"
    version          u32
    flags            u32       bit 0: file is a replay snapshot
    rng algorithm    16 bytes  NUL-padded ascii, must match this build
    lr, b1, b2, eps  4 x f64   optimizer hyperparameters
    t                u64       optimizer timestep
    step             u64       training step the file was written at
    K, K_max, n_z, D 4 x u32
    n_enc, sizes...  u32 each  encoder layer widths
    n_dec, sizes...  u32 each  decoder hidden widths (output width is D)
    usage_total      u64
    parameter buffers, f64, declared order
    Adam m then v per buffer, f64, declared order
    usage accumulated, K x f64

Float payloads are written with numpy '<f8' tobytes, so save -> load ->
save is byte-identical.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .adam import AdamState
from .errors import CheckpointError
from .model import Architecture, ModelParams
from .replay import UsageCounts
from .rng import ALGORITHM_ID

MAGIC = b"MIXVAE\x01\x00"
VERSION = 1
FLAG_SNAPSHOT = 1


@dataclass
class LoadedCheckpoint:
    params: ModelParams
    adam: AdamState
    usage: UsageCounts
    step: int
    is_snapshot: bool


def _write_array(out: bytearray, a: np.ndarray) -> None:
    out += np.ascontiguousarray(a, dtype="<f8").tobytes()


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.blob):
            raise CheckpointError(f"truncated checkpoint while reading {what}")
        out = self.blob[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))

    def array(self, shape: tuple[int, ...], what: str) -> np.ndarray:
        n = int(np.prod(shape)) if shape else 1
        raw = self.take(8 * n, what)
        return np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(shape)


def save_checkpoint(path, params: ModelParams, adam: AdamState | None = None,
                    usage: UsageCounts | None = None, step: int = 0,
                    snapshot: bool = False) -> None:
    adam = adam if adam is not None else AdamState()
    usage = usage if usage is not None else UsageCounts(params.k)
    if len(usage.accumulated) != params.k:
        raise CheckpointError("usage counts length disagrees with K")
    arch = params.arch
    out = bytearray()
    out += MAGIC
    out += struct.pack("<II", VERSION, FLAG_SNAPSHOT if snapshot else 0)
    out += ALGORITHM_ID.encode("ascii").ljust(16, b"\x00")
    out += struct.pack("<4d", adam.lr, adam.beta1, adam.beta2, adam.eps)
    out += struct.pack("<QQ", adam.t, step)
    out += struct.pack("<4I", params.k, arch.k_max, arch.n_z, arch.input_dim)
    out += struct.pack("<I", len(arch.encoder))
    out += struct.pack(f"<{len(arch.encoder)}I", *arch.encoder)
    out += struct.pack("<I", len(arch.decoder))
    out += struct.pack(f"<{len(arch.decoder)}I", *arch.decoder)
    out += struct.pack("<Q", usage.total_batches)
    buffers = params.buffers()
    for _, buf in buffers:
        _write_array(out, buf)
    for name, buf in buffers:
        m = adam.m.get(name)
        _write_array(out, m if m is not None and m.shape == buf.shape else np.zeros_like(buf))
    for name, buf in buffers:
        v = adam.v.get(name)
        _write_array(out, v if v is not None and v.shape == buf.shape else np.zeros_like(buf))
    _write_array(out, usage.accumulated)
    with open(path, "wb") as fh:
        fh.write(bytes(out))


def load_checkpoint(path) -> LoadedCheckpoint:
    with open(path, "rb") as fh:
        rd = _Reader(fh.read())
    if rd.take(8, "magic") != MAGIC:
        raise CheckpointError("bad checkpoint magic")
    version, flags = rd.unpack("<II", "version")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    algo = rd.take(16, "rng algorithm").rstrip(b"\x00").decode("ascii")
    if algo != ALGORITHM_ID:
        raise CheckpointError(f"checkpoint rng algorithm {algo!r} != this build's {ALGORITHM_ID!r}")
    lr, b1, b2, eps = rd.unpack("<4d", "optimizer hyperparameters")
    t, step = rd.unpack("<QQ", "timestep")
    k, k_max, n_z, input_dim = rd.unpack("<4I", "model dims")
    (n_enc,) = rd.unpack("<I", "encoder depth")
    enc = rd.unpack(f"<{n_enc}I", "encoder sizes")
    (n_dec,) = rd.unpack("<I", "decoder depth")
    dec = rd.unpack(f"<{n_dec}I", "decoder sizes")
    (usage_total,) = rd.unpack("<Q", "usage total")

    arch = Architecture(input_dim=input_dim, encoder=tuple(enc), n_z=n_z,
                        decoder=tuple(dec), k_max=k_max)
    sizes = (input_dim,) + tuple(enc)
    dsizes = (n_z,) + tuple(dec) + (input_dim,)
    h = enc[-1]
    shapes: list[tuple[str, tuple[int, ...]]] = []
    for i in range(n_enc):
        shapes.append((f"enc_w.{i}", (sizes[i + 1], sizes[i])))
        shapes.append((f"enc_b.{i}", (sizes[i + 1],)))
    shapes += [("task_w", (k, h)), ("task_b", (k,)),
               ("lat_w", (k, 2 * n_z, h)), ("lat_b", (k, 2 * n_z)),
               ("prior_mu", (k, n_z)), ("prior_rho", (k, n_z))]
    for i in range(len(dsizes) - 1):
        shapes.append((f"dec_w.{i}", (dsizes[i + 1], dsizes[i])))
        shapes.append((f"dec_b.{i}", (dsizes[i + 1],)))

    bufs = {name: rd.array(shape, name) for name, shape in shapes}
    adam = AdamState(lr=lr, beta1=b1, beta2=b2, eps=eps)
    adam.t = t
    adam.m = {name: rd.array(shape, f"adam m {name}") for name, shape in shapes}
    adam.v = {name: rd.array(shape, f"adam v {name}") for name, shape in shapes}
    usage = UsageCounts(k)
    usage.accumulated = rd.array((k,), "usage counts")
    usage.total_batches = usage_total

    params = ModelParams(
        arch,
        enc_w=[bufs[f"enc_w.{i}"] for i in range(n_enc)],
        enc_b=[bufs[f"enc_b.{i}"] for i in range(n_enc)],
        task_w=bufs["task_w"], task_b=bufs["task_b"],
        lat_w=bufs["lat_w"], lat_b=bufs["lat_b"],
        prior_mu=bufs["prior_mu"], prior_rho=bufs["prior_rho"],
        dec_w=[bufs[f"dec_w.{i}"] for i in range(len(dsizes) - 1)],
        dec_b=[bufs[f"dec_b.{i}"] for i in range(len(dsizes) - 1)],
    )
    return LoadedCheckpoint(params, adam, usage, int(step), bool(flags & FLAG_SNAPSHOT))
