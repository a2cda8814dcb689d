"""Conditional velocity network and its exact gradients.

The network maps (t, x_t, x_m0) -> velocity image. The interpolant and the
conditioning image enter as two input channels; a stack of residual blocks
(conv-GELU-conv plus skip) keeps the spatial dims unchanged, and each block
receives the sinusoidally encoded time step through a per-block linear
projection added to its output tensor, broadcast spatially. The final conv
is zero-initialized so a fresh model is the identity transport (velocity 0).

Also here: Adam/SGD parameter updates and the binary checkpoint format.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

from .flow_core import FlowBatch
from .nn_ops import conv2d_backward, conv2d_forward, gelu_backward, gelu_forward
from .rng import generator

CHECKPOINT_MAGIC = b"RESMATCH"
CHECKPOINT_VERSION = 1
TIME_SCALE = 1000.0  # applied to t in [0,1] before sinusoidal encoding

__all__ = [
    "ArchConfig",
    "ModelParams",
    "AdamState",
    "init_params",
    "param_names",
    "time_embed",
    "forward",
    "forward_batch",
    "loss_and_grad",
    "init_adam_state",
    "adam_step",
    "sgd_step",
    "save_checkpoint",
    "load_checkpoint",
    "CheckpointError",
]


class CheckpointError(RuntimeError):
    """Raised when a checkpoint cannot be read or does not match."""


@dataclass(frozen=True)
class ArchConfig:
    base_channels: int = 32
    n_res_blocks: int = 4
    kernel_size: int = 3
    time_embed_dim: int = 64

    def validate(self) -> None:
        if min(self.base_channels, self.n_res_blocks, self.kernel_size, self.time_embed_dim) < 1:
            raise ValueError(f"all architecture dims must be >= 1: {self}")
        if self.kernel_size % 2 == 0:
            raise ValueError(f"kernel_size must be odd, got {self.kernel_size}")
        if self.time_embed_dim % 2 != 0:
            raise ValueError(f"time_embed_dim must be even, got {self.time_embed_dim}")


@dataclass
class ModelParams:
    """Named parameter arrays plus the data normalization carried with them."""

    arch: ArchConfig
    arrays: dict[str, np.ndarray]
    norm_mean: float = 0.0
    norm_std: float = 1.0


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0


def param_names(arch: ArchConfig) -> list[str]:
    """Parameter names in declaration (and serialization) order."""
    names = ["conv_in.w", "conv_in.b"]
    for i in range(arch.n_res_blocks):
        names += [
            f"block{i}.conv1.w",
            f"block{i}.conv1.b",
            f"block{i}.conv2.w",
            f"block{i}.conv2.b",
            f"block{i}.time.w",
            f"block{i}.time.b",
        ]
    names += ["conv_out.w", "conv_out.b"]
    return names


def init_params(arch: ArchConfig, seed: int) -> ModelParams:
    """Fan-in-scaled uniform init; zero biases; zero final conv."""
    arch.validate()
    rng = generator(seed)
    c, k, d = arch.base_channels, arch.kernel_size, arch.time_embed_dim

    def conv_w(cin: int, cout: int) -> np.ndarray:
        bound = 1.0 / math.sqrt(cin * k * k)
        return rng.uniform(-bound, bound, size=(k, k, cin, cout)).astype(np.float32)

    arrays: dict[str, np.ndarray] = {}
    arrays["conv_in.w"] = conv_w(2, c)
    arrays["conv_in.b"] = np.zeros(c, dtype=np.float32)
    for i in range(arch.n_res_blocks):
        arrays[f"block{i}.conv1.w"] = conv_w(c, c)
        arrays[f"block{i}.conv1.b"] = np.zeros(c, dtype=np.float32)
        arrays[f"block{i}.conv2.w"] = conv_w(c, c)
        arrays[f"block{i}.conv2.b"] = np.zeros(c, dtype=np.float32)
        bound = 1.0 / math.sqrt(d)
        arrays[f"block{i}.time.w"] = rng.uniform(-bound, bound, size=(c, d)).astype(np.float32)
        arrays[f"block{i}.time.b"] = np.zeros(c, dtype=np.float32)
    arrays["conv_out.w"] = np.zeros((k, k, c, 1), dtype=np.float32)
    arrays["conv_out.b"] = np.zeros(1, dtype=np.float32)
    return ModelParams(arch=arch, arrays=arrays)


def time_embed(t: float, dim: int) -> np.ndarray:
    """Interleaved sin/cos encoding of t, frequencies 10000^(-2k/dim)."""
    if dim % 2 != 0:
        raise ValueError(f"embedding dim must be even, got {dim}")
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"t must be in [0, 1], got {t}")
    return _embed_batch(np.array([t], dtype=np.float64), dim, np.float32)[0]


def _embed_batch(ts: np.ndarray, dim: int, dtype) -> np.ndarray:
    k = np.arange(dim // 2, dtype=np.float64)
    omega = 10000.0 ** (-2.0 * k / dim)
    phase = TIME_SCALE * ts[:, None] * omega[None, :]
    emb = np.empty((len(ts), dim), dtype=np.float64)
    emb[:, 0::2] = np.sin(phase)
    emb[:, 1::2] = np.cos(phase)
    return emb.astype(dtype)


def _dtype_of(params: ModelParams):
    return params.arrays["conv_in.w"].dtype


def forward_batch(
    params: ModelParams,
    ts: np.ndarray,
    x_t: np.ndarray,
    x_m0: np.ndarray,
    want_cache: bool = False,
):
    """Batched forward pass: ts (N,), x_t and x_m0 (N, H, W) -> (N, H, W)."""
    if x_t.shape != x_m0.shape:
        raise ValueError(f"shape mismatch: x_t {x_t.shape} vs x_m0 {x_m0.shape}")
    a = params.arrays
    dtype = _dtype_of(params)
    n = x_t.shape[0]

    x = np.stack([x_t, x_m0], axis=-1).astype(dtype, copy=False)
    emb = _embed_batch(np.asarray(ts, dtype=np.float64), params.arch.time_embed_dim, dtype)

    h, c_in = conv2d_forward(x, a["conv_in.w"], a["conv_in.b"])
    block_caches = []
    for i in range(params.arch.n_res_blocks):
        u1, c1 = conv2d_forward(h, a[f"block{i}.conv1.w"], a[f"block{i}.conv1.b"])
        a1, cg = gelu_forward(u1)
        u2, c2 = conv2d_forward(a1, a[f"block{i}.conv2.w"], a[f"block{i}.conv2.b"])
        tp = emb @ a[f"block{i}.time.w"].T + a[f"block{i}.time.b"]
        h = h + u2 + tp[:, None, None, :]
        block_caches.append((c1, cg, c2))
    hg, c_out_g = gelu_forward(h)
    y, c_out = conv2d_forward(hg, a["conv_out.w"], a["conv_out.b"])
    out = y[..., 0]
    if not want_cache:
        return out
    return out, (emb, c_in, block_caches, c_out_g, c_out, n)


def forward(params: ModelParams, t: float, x_t: np.ndarray, x_m0: np.ndarray) -> np.ndarray:
    """Single-image forward pass; x_t and x_m0 are 2-D, output matches."""
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"t must be in [0, 1], got {t}")
    out = forward_batch(params, np.array([t]), x_t[None], x_m0[None])
    return out[0]


def _backward_batch(params: ModelParams, dout: np.ndarray, cache) -> dict[str, np.ndarray]:
    a = params.arrays
    emb, c_in, block_caches, c_out_g, c_out, _ = cache
    grads: dict[str, np.ndarray] = {}

    dhg, grads["conv_out.w"], grads["conv_out.b"] = conv2d_backward(dout[..., None], c_out)
    dh = gelu_backward(dhg, c_out_g)
    for i in reversed(range(params.arch.n_res_blocks)):
        c1, cg, c2 = block_caches[i]
        dtp = dh.sum(axis=(1, 2))  # (N, C)
        grads[f"block{i}.time.w"] = dtp.T @ emb
        grads[f"block{i}.time.b"] = dtp.sum(axis=0)
        da1, grads[f"block{i}.conv2.w"], grads[f"block{i}.conv2.b"] = conv2d_backward(dh, c2)
        du1 = gelu_backward(da1, cg)
        dh1, grads[f"block{i}.conv1.w"], grads[f"block{i}.conv1.b"] = conv2d_backward(du1, c1)
        dh = dh + dh1
    _, grads["conv_in.w"], grads["conv_in.b"] = conv2d_backward(dh, c_in)
    return {name: grads[name] for name in param_names(params.arch)}


def loss_and_grad(params: ModelParams, batch: list[FlowBatch]):
    """Flow-matching loss over a batch and its exact parameter gradients.

    Loss is mean((v_pred - (x_m1 - x0))^2) over batch and pixels; gradients
    are hand-derived reverse mode through the whole network.
    """
    if not batch:
        raise ValueError("batch must be non-empty")
    dtype = _dtype_of(params)
    ts = np.array([fb.t for fb in batch], dtype=np.float64)
    x_t = np.stack([fb.x_t for fb in batch]).astype(dtype, copy=False)
    x_m0 = np.stack([fb.x_m0 for fb in batch]).astype(dtype, copy=False)
    target = np.stack([fb.x_m1 - fb.x0 for fb in batch]).astype(dtype, copy=False)

    v, cache = forward_batch(params, ts, x_t, x_m0, want_cache=True)
    diff = v - target
    loss = float(np.mean(diff.astype(np.float64) ** 2))
    dv = (2.0 / diff.size) * diff
    grads = _backward_batch(params, dv.astype(dtype, copy=False), cache)
    return loss, grads


def init_adam_state(params: ModelParams) -> AdamState:
    zeros = {k: np.zeros_like(v) for k, v in params.arrays.items()}
    return AdamState(m=zeros, v={k: np.zeros_like(v) for k, v in params.arrays.items()}, t=0)


def _check_keys(params: ModelParams, grads: dict) -> None:
    if set(grads.keys()) != set(params.arrays.keys()):
        missing = set(params.arrays) - set(grads)
        extra = set(grads) - set(params.arrays)
        raise ValueError(f"gradient keys do not match params: missing={missing}, extra={extra}")


def adam_step(
    params: ModelParams,
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> tuple[ModelParams, AdamState]:
    """One Adam update; returns fresh params and state, inputs untouched."""
    _check_keys(params, grads)
    t = state.t + 1
    bc1 = 1.0 - beta1**t
    bc2 = 1.0 - beta2**t
    new_arrays, new_m, new_v = {}, {}, {}
    for name, theta in params.arrays.items():
        g = grads[name]
        m = beta1 * state.m[name] + (1.0 - beta1) * g
        v = beta2 * state.v[name] + (1.0 - beta2) * g * g
        update = (lr * (m / bc1) / (np.sqrt(v / bc2) + eps)).astype(theta.dtype)
        new_arrays[name] = theta - update
        new_m[name] = m
        new_v[name] = v
    new_params = ModelParams(
        arch=params.arch, arrays=new_arrays, norm_mean=params.norm_mean, norm_std=params.norm_std
    )
    return new_params, AdamState(m=new_m, v=new_v, t=t)


def sgd_step(params: ModelParams, grads: dict[str, np.ndarray], lr: float) -> ModelParams:
    """Plain gradient descent, exactly theta - lr * grad."""
    _check_keys(params, grads)
    new_arrays = {name: theta - lr * grads[name] for name, theta in params.arrays.items()}
    return ModelParams(
        arch=params.arch, arrays=new_arrays, norm_mean=params.norm_mean, norm_std=params.norm_std
    )


def _write_array(f, name: str, arr: np.ndarray) -> None:
    raw = name.encode("utf-8")
    f.write(struct.pack("<I", len(raw)))
    f.write(raw)
    f.write(struct.pack("<I", arr.ndim))
    f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    f.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def _read_array(f) -> tuple[str, np.ndarray]:
    (name_len,) = struct.unpack("<I", f.read(4))
    name = f.read(name_len).decode("utf-8")
    (ndim,) = struct.unpack("<I", f.read(4))
    shape = struct.unpack(f"<{ndim}I", f.read(4 * ndim))
    count = int(np.prod(shape)) if ndim else 1
    data = np.frombuffer(f.read(4 * count), dtype="<f4").reshape(shape)
    return name, data.astype(np.float32)


def save_checkpoint(
    path: str | Path,
    params: ModelParams,
    step: int = 0,
    opt_state: AdamState | None = None,
) -> None:
    """Serialize params (and optionally Adam state) to the binary format."""
    names = param_names(params.arch)
    header = {
        "arch": asdict(params.arch),
        "norm": [params.norm_mean, params.norm_std],
        "step": int(step),
        "has_opt_state": opt_state is not None,
        "adam_t": opt_state.t if opt_state is not None else 0,
        "n_arrays": len(names) * (3 if opt_state is not None else 1),
    }
    blob = json.dumps(header).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", CHECKPOINT_VERSION))
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        for name in names:
            _write_array(f, name, params.arrays[name])
        if opt_state is not None:
            for name in names:
                _write_array(f, "adam.m." + name, opt_state.m[name])
            for name in names:
                _write_array(f, "adam.v." + name, opt_state.v[name])


def load_checkpoint(path: str | Path) -> tuple[ModelParams, int, AdamState | None]:
    """Read a checkpoint back; bitwise inverse of save_checkpoint."""
    with open(path, "rb") as f:
        magic = f.read(8)
        if magic != CHECKPOINT_MAGIC:
            raise CheckpointError(f"{path}: bad magic {magic!r}")
        (version,) = struct.unpack("<I", f.read(4))
        if version != CHECKPOINT_VERSION:
            raise CheckpointError(
                f"{path}: unsupported checkpoint version {version}, expected {CHECKPOINT_VERSION}"
            )
        (hlen,) = struct.unpack("<I", f.read(4))
        header = json.loads(f.read(hlen).decode("utf-8"))
        arch = ArchConfig(**header["arch"])
        names = param_names(arch)
        arrays = {}
        for _ in names:
            name, arr = _read_array(f)
            arrays[name] = arr
        if list(arrays.keys()) != names:
            raise CheckpointError(f"{path}: parameter arrays out of order or missing")
        params = ModelParams(
            arch=arch, arrays=arrays, norm_mean=header["norm"][0], norm_std=header["norm"][1]
        )
        opt_state = None
        if header["has_opt_state"]:
            m, v = {}, {}
            for _ in names:
                name, arr = _read_array(f)
                m[name.removeprefix("adam.m.")] = arr
            for _ in names:
                name, arr = _read_array(f)
                v[name.removeprefix("adam.v.")] = arr
            opt_state = AdamState(m=m, v=v, t=header["adam_t"])
    return params, header["step"], opt_state
