"""Single-layer LSTM with a linear head, written against two disciplines.

Inference (``forward``) runs a single sequence through preallocated scratch
buffers: every numpy op writes into storage created at scratch construction,
so the audio-rate path never touches the allocator. Training (``train``)
runs batched backpropagation through time in float64 and allocates freely;
it is host-side code where determinism and gradient fidelity matter more
than allocation discipline.

Cell equations, with the 4h gate axis laid out as blocks [i, f, g, o]:

    a_t = W_ih x_t + W_hh h_{t-1} + b
    i, f, o = sigmoid(a_i), sigmoid(a_f), sigmoid(a_o);  g = tanh(a_g)
    c_t = f * c_{t-1} + i * g
    h_t = o * tanh(c_t)
    y   = W_out h_T + b_out

There is one combined bias and no peepholes. Weights initialize uniformly
in [-1/sqrt(h), 1/sqrt(h)] from a PCG64 generator seeded with the training
seed, and batch order reshuffles from the same generator, so training is a
pure function of (dataset, config, hyperparameters).

Weight file (``.bsnn``, all little-endian): magic ``BSNN``, version byte 1,
dims (input u32, hidden u32, output u32, seq_len u32), per input channel
mean f32 and std f32, target mean f32 and std f32, then W_ih, W_hh, b,
W_out, b_out as row-major f32.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from . import alloc
from .dataset import NormStats, WindowedDataset
from .errors import (
    DivergenceError,
    EmptyDatasetError,
    FormatError,
    ShapeError,
    TruncationError,
)

WEIGHTS_MAGIC = b"BSNN"
WEIGHTS_VERSION = 1
WEIGHTS_EXTENSION = ".bsnn"

_DIMS = struct.Struct("<IIII")


@dataclass
class ModelConfig:
    input_dim: int = 2
    hidden_dim: int = 16
    output_dim: int = 96
    seq_len: int = 32

    def validate(self) -> None:
        for name in ("input_dim", "hidden_dim", "output_dim", "seq_len"):
            if getattr(self, name) < 1:
                raise ShapeError(f"{name} must be positive, got {getattr(self, name)}")


@dataclass
class LstmParams:
    W_ih: np.ndarray  # (4h, in)
    W_hh: np.ndarray  # (4h, h)
    b: np.ndarray  # (4h,)
    W_out: np.ndarray  # (out, h)
    b_out: np.ndarray  # (out,)

    def check_shapes(self, config: ModelConfig) -> None:
        h, i, o = config.hidden_dim, config.input_dim, config.output_dim
        expected = {
            "W_ih": (4 * h, i),
            "W_hh": (4 * h, h),
            "b": (4 * h,),
            "W_out": (o, h),
            "b_out": (o,),
        }
        for name, shape in expected.items():
            actual = getattr(self, name).shape
            if actual != shape:
                raise ShapeError(f"{name} has shape {actual}, expected {shape}")
        for name in expected:
            if not np.isfinite(getattr(self, name)).all():
                raise ShapeError(f"{name} contains non-finite values")

    def astype(self, dtype) -> "LstmParams":
        return LstmParams(
            W_ih=self.W_ih.astype(dtype),
            W_hh=self.W_hh.astype(dtype),
            b=self.b.astype(dtype),
            W_out=self.W_out.astype(dtype),
            b_out=self.b_out.astype(dtype),
        )


class InferenceScratch:
    """All state ``forward`` writes to, allocated once per execution context.

    Sized exactly for one ModelConfig and reused across calls, never grown.
    Gate views are pre-sliced here so the step loop creates no buffers.
    """

    def __init__(self, config: ModelConfig, dtype=np.float32):
        config.validate()
        h, T = config.hidden_dim, config.seq_len
        self.dtype = np.dtype(dtype)
        self.h = alloc.new_array(h, dtype)
        self.c = alloc.new_array(h, dtype)
        self.gates = alloc.new_array(4 * h, dtype)
        self.gates2 = alloc.new_array(4 * h, dtype)
        self.tmp_h = alloc.new_array(h, dtype)
        self.output = alloc.new_array(config.output_dim, dtype)
        self.ih_all = alloc.new_array((T, 4 * h), dtype)
        self.gate_i = self.gates[0:h]
        self.gate_f = self.gates[h : 2 * h]
        self.gate_g = self.gates[2 * h : 3 * h]
        self.gate_o = self.gates[3 * h : 4 * h]
        self.ih_rows = [self.ih_all[t] for t in range(T)]


def _sigmoid_inplace(x: np.ndarray) -> None:
    np.negative(x, out=x)
    np.exp(x, out=x)
    np.add(x, 1.0, out=x)
    np.reciprocal(x, out=x)


def forward(
    params: LstmParams,
    config: ModelConfig,
    input: np.ndarray,
    scratch: InferenceScratch,
) -> np.ndarray:
    """Run one (seq_len, input_dim) window; returns the scratch output buffer.

    Allocation-free after scratch construction: all intermediates live in
    the scratch and the return value is its reused output buffer.
    """
    params.check_shapes(config)
    if input.shape != (config.seq_len, config.input_dim):
        raise ShapeError(
            f"input shape {input.shape}, expected {(config.seq_len, config.input_dim)}"
        )
    if input.dtype != scratch.dtype or params.W_ih.dtype != scratch.dtype:
        raise ShapeError(
            f"dtype mismatch: input {input.dtype}, params {params.W_ih.dtype}, "
            f"scratch {scratch.dtype}"
        )
    if scratch.ih_all.shape != (config.seq_len, 4 * config.hidden_dim):
        raise ShapeError("scratch was built for a different config")

    s = scratch
    s.h[:] = 0.0
    s.c[:] = 0.0
    # .T is a no-copy view; BLAS consumes either memory order directly
    np.dot(input, params.W_ih.T, out=s.ih_all)
    for t in range(config.seq_len):
        np.copyto(s.gates, s.ih_rows[t])
        np.dot(s.h, params.W_hh.T, out=s.gates2)
        np.add(s.gates, s.gates2, out=s.gates)
        np.add(s.gates, params.b, out=s.gates)
        _sigmoid_inplace(s.gate_i)
        _sigmoid_inplace(s.gate_f)
        np.tanh(s.gate_g, out=s.gate_g)
        _sigmoid_inplace(s.gate_o)
        np.multiply(s.gate_f, s.c, out=s.c)
        np.multiply(s.gate_i, s.gate_g, out=s.tmp_h)
        np.add(s.c, s.tmp_h, out=s.c)
        np.tanh(s.c, out=s.tmp_h)
        np.multiply(s.gate_o, s.tmp_h, out=s.h)
    np.dot(s.h, params.W_out.T, out=s.output)
    np.add(s.output, params.b_out, out=s.output)
    return s.output


def loss_mse(pred: np.ndarray, target: np.ndarray) -> float:
    if pred.shape != target.shape:
        raise ShapeError(f"pred shape {pred.shape} != target shape {target.shape}")
    diff = pred.astype(np.float64) - target.astype(np.float64)
    return float(np.mean(diff * diff))


@dataclass
class TrainConfig:
    lr: float = 0.05
    epochs: int = 100
    batch_size: int = 16
    seed: int = 0


def init_params(config: ModelConfig, seed: int) -> LstmParams:
    """Uniform [-1/sqrt(h), 1/sqrt(h)] initialization, float64."""
    config.validate()
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy=seed)))
    bound = 1.0 / np.sqrt(config.hidden_dim)
    h, i, o = config.hidden_dim, config.input_dim, config.output_dim

    def u(*shape):
        return rng.uniform(-bound, bound, shape)

    return LstmParams(
        W_ih=u(4 * h, i), W_hh=u(4 * h, h), b=u(4 * h), W_out=u(o, h), b_out=u(o)
    )


def _forward_batch(params: LstmParams, x: np.ndarray) -> tuple[np.ndarray, dict]:
    """Batched forward in float64, caching activations for BPTT.

    x: (B, T, C). Returns (pred (B, out), cache).
    """
    B, T, _ = x.shape
    h_dim = params.W_hh.shape[1]
    i_s, f_s, g_s, o_s = (slice(k * h_dim, (k + 1) * h_dim) for k in range(4))

    hs = np.zeros((T + 1, B, h_dim))
    cs = np.zeros((T + 1, B, h_dim))
    acts = np.zeros((T, B, 4 * h_dim))
    tanh_c = np.zeros((T, B, h_dim))

    for t in range(T):
        a = x[:, t] @ params.W_ih.T + hs[t] @ params.W_hh.T + params.b
        a[:, i_s] = 1.0 / (1.0 + np.exp(-a[:, i_s]))
        a[:, f_s] = 1.0 / (1.0 + np.exp(-a[:, f_s]))
        a[:, g_s] = np.tanh(a[:, g_s])
        a[:, o_s] = 1.0 / (1.0 + np.exp(-a[:, o_s]))
        cs[t + 1] = a[:, f_s] * cs[t] + a[:, i_s] * a[:, g_s]
        tanh_c[t] = np.tanh(cs[t + 1])
        hs[t + 1] = a[:, o_s] * tanh_c[t]
        acts[t] = a

    pred = hs[T] @ params.W_out.T + params.b_out
    cache = {"x": x, "hs": hs, "cs": cs, "acts": acts, "tanh_c": tanh_c}
    return pred, cache


def _backward_batch(params: LstmParams, cache: dict, dpred: np.ndarray) -> LstmParams:
    """Gradients of a scalar loss w.r.t. every parameter, given dpred (B, out)."""
    x, hs, cs, acts, tanh_c = (
        cache["x"],
        cache["hs"],
        cache["cs"],
        cache["acts"],
        cache["tanh_c"],
    )
    B, T, _ = x.shape
    h_dim = params.W_hh.shape[1]
    i_s, f_s, g_s, o_s = (slice(k * h_dim, (k + 1) * h_dim) for k in range(4))

    g = LstmParams(
        W_ih=np.zeros_like(params.W_ih),
        W_hh=np.zeros_like(params.W_hh),
        b=np.zeros_like(params.b),
        W_out=dpred.T @ hs[T],
        b_out=dpred.sum(axis=0),
    )
    dh = dpred @ params.W_out
    dc = np.zeros((B, h_dim))
    da = np.zeros((B, 4 * h_dim))

    for t in range(T - 1, -1, -1):
        a = acts[t]
        i_g, f_g, g_g, o_g = a[:, i_s], a[:, f_s], a[:, g_s], a[:, o_s]
        do = dh * tanh_c[t]
        dc = dc + dh * o_g * (1.0 - tanh_c[t] ** 2)
        da[:, i_s] = dc * g_g * i_g * (1.0 - i_g)
        da[:, f_s] = dc * cs[t] * f_g * (1.0 - f_g)
        da[:, g_s] = dc * i_g * (1.0 - g_g**2)
        da[:, o_s] = do * o_g * (1.0 - o_g)
        g.W_ih += da.T @ x[:, t]
        g.W_hh += da.T @ hs[t]
        g.b += da.sum(axis=0)
        dh = da @ params.W_hh
        dc = dc * f_g
    return g


def batch_loss_and_grads(
    params: LstmParams, x: np.ndarray, y: np.ndarray
) -> tuple[float, LstmParams]:
    """Mean-squared-error over a batch and its parameter gradients."""
    pred, cache = _forward_batch(params, x)
    diff = pred - y
    loss = float(np.mean(diff * diff))
    dpred = 2.0 * diff / diff.size
    return loss, _backward_batch(params, cache, dpred)


def train(
    dataset: WindowedDataset, config: ModelConfig, hyper: TrainConfig
) -> tuple[LstmParams, list[float]]:
    """Full-BPTT stochastic gradient descent; returns params and the loss curve.

    Deterministic in ``hyper.seed``: initialization and every epoch's batch
    order derive from it. The loss curve holds one mean training loss per
    epoch.
    """
    config.validate()
    n = dataset.n_pairs
    if n == 0:
        raise EmptyDatasetError("dataset has no pairs")
    if dataset.inputs.shape[1:] != (config.seq_len, config.input_dim):
        raise ShapeError(
            f"dataset windows {dataset.inputs.shape[1:]} do not match "
            f"(seq_len, input_dim)=({config.seq_len}, {config.input_dim})"
        )
    if dataset.targets.shape[1] != config.output_dim:
        raise ShapeError(
            f"dataset targets {dataset.targets.shape[1]} wide, "
            f"model outputs {config.output_dim}"
        )

    params = init_params(config, hyper.seed)
    rng = np.random.Generator(
        np.random.PCG64(np.random.SeedSequence(entropy=hyper.seed, spawn_key=(2,)))
    )
    x_all = dataset.inputs.astype(np.float64)
    y_all = dataset.targets.astype(np.float64)

    curve: list[float] = []
    for epoch in range(hyper.epochs):
        order = rng.permutation(n)
        total, seen = 0.0, 0
        for lo in range(0, n, hyper.batch_size):
            idx = order[lo : lo + hyper.batch_size]
            loss, grads = batch_loss_and_grads(params, x_all[idx], y_all[idx])
            if not np.isfinite(loss):
                raise DivergenceError("training loss is not finite", epoch=epoch)
            if hyper.lr != 0.0:
                params.W_ih -= hyper.lr * grads.W_ih
                params.W_hh -= hyper.lr * grads.W_hh
                params.b -= hyper.lr * grads.b
                params.W_out -= hyper.lr * grads.W_out
                params.b_out -= hyper.lr * grads.b_out
            total += loss * len(idx)
            seen += len(idx)
        curve.append(total / seen)
    return params, curve


def embeddability_report(params: LstmParams, config: ModelConfig) -> dict:
    """Size and cost figures relevant to running on a small CPU.

    A multiply-accumulate counts as 2 flops; per step the pointwise gate and
    state updates cost 9h (3 products, 2 sums, 4 activation evaluations on
    h-sized vectors) on top of the 4h bias adds.
    """
    params.check_shapes(config)
    h, i, o, T = config.hidden_dim, config.input_dim, config.output_dim, config.seq_len
    param_count = 4 * h * (i + h + 1) + o * (h + 1)
    flops = T * (2 * 4 * h * (i + h) + 4 * h + 9 * h) + 2 * o * h + o
    return {
        "param_count": param_count,
        "flops_per_inference": flops,
        "weight_bytes": 4 * param_count,
    }


def save_weights(
    params: LstmParams, config: ModelConfig, norm_stats: NormStats, destination
) -> int:
    """Serialize params + normalization stats; returns bytes written."""
    config.validate()
    params.check_shapes(config)
    if len(norm_stats.input_mean) != config.input_dim:
        raise ShapeError(
            f"{len(norm_stats.input_mean)} channel stats for input_dim {config.input_dim}"
        )
    parts = [
        WEIGHTS_MAGIC,
        bytes([WEIGHTS_VERSION]),
        _DIMS.pack(config.input_dim, config.hidden_dim, config.output_dim, config.seq_len),
    ]
    stats = np.empty(2 * config.input_dim + 2, dtype="<f4")
    stats[0 : 2 * config.input_dim : 2] = norm_stats.input_mean
    stats[1 : 2 * config.input_dim : 2] = norm_stats.input_std
    stats[-2] = norm_stats.target_mean
    stats[-1] = norm_stats.target_std
    parts.append(stats.tobytes())
    for tensor in (params.W_ih, params.W_hh, params.b, params.W_out, params.b_out):
        parts.append(np.ascontiguousarray(tensor, dtype="<f4").tobytes())

    blob = b"".join(parts)
    if hasattr(destination, "write"):
        destination.write(blob)
    else:
        with open(destination, "wb") as fh:
            fh.write(blob)
    return len(blob)


def load_weights(source) -> tuple[LstmParams, ModelConfig, NormStats]:
    """Parse a weight file; rejects bad magic, zero dims, truncation, trailing."""
    if hasattr(source, "read"):
        buf = source.read()
    elif isinstance(source, (bytes, bytearray)):
        buf = bytes(source)
    else:
        with open(source, "rb") as fh:
            buf = fh.read()

    if len(buf) < 5:
        raise TruncationError("file shorter than magic", expected=5, actual=len(buf))
    if buf[:4] != WEIGHTS_MAGIC:
        raise FormatError(f"bad magic {buf[:4]!r}, expected {WEIGHTS_MAGIC!r}")
    if buf[4] != WEIGHTS_VERSION:
        raise FormatError(f"unsupported version {buf[4]}")
    pos = 5
    if len(buf) < pos + _DIMS.size:
        raise TruncationError("truncated dims", expected=pos + _DIMS.size, actual=len(buf))
    in_dim, h, out_dim, seq = _DIMS.unpack_from(buf, pos)
    pos += _DIMS.size
    if min(in_dim, h, out_dim, seq) < 1:
        raise FormatError(f"non-positive dimension in header: {(in_dim, h, out_dim, seq)}")

    n_stats = 2 * in_dim + 2
    tensor_floats = 4 * h * in_dim + 4 * h * h + 4 * h + out_dim * h + out_dim
    expected_total = pos + 4 * (n_stats + tensor_floats)
    if len(buf) < expected_total:
        raise TruncationError("truncated payload", expected=expected_total, actual=len(buf))
    if len(buf) > expected_total:
        raise FormatError(f"{len(buf) - expected_total} trailing bytes after payload")

    def take(count: int, shape: tuple[int, ...]) -> np.ndarray:
        nonlocal pos
        arr = np.frombuffer(buf, dtype="<f4", count=count, offset=pos).reshape(shape).copy()
        pos += 4 * count
        return arr

    stats = take(n_stats, (n_stats,))
    params = LstmParams(
        W_ih=take(4 * h * in_dim, (4 * h, in_dim)),
        W_hh=take(4 * h * h, (4 * h, h)),
        b=take(4 * h, (4 * h,)),
        W_out=take(out_dim * h, (out_dim, h)),
        b_out=take(out_dim, (out_dim,)),
    )
    config = ModelConfig(input_dim=in_dim, hidden_dim=h, output_dim=out_dim, seq_len=seq)
    params.check_shapes(config)
    norm = NormStats(
        input_mean=stats[0 : 2 * in_dim : 2].astype(np.float64),
        input_std=stats[1 : 2 * in_dim : 2].astype(np.float64),
        target_mean=float(stats[-2]),
        target_std=float(stats[-1]),
    )
    return params, config, norm


class LstmModel:
    """Loaded weights plus scratch: the narrow interface the runtime drives.

    ``predict_into`` is allocation-free; each execution context must own its
    model instance (or at least its scratch).
    """

    def __init__(self, params: LstmParams, config: ModelConfig, norm_stats: NormStats):
        self.params = params.astype(np.float32)
        self.config = config
        self.norm_stats = norm_stats
        self.scratch = InferenceScratch(config, dtype=np.float32)
        self._x_norm = alloc.new_array((config.seq_len, config.input_dim), np.float32)
        self._in_mean = norm_stats.input_mean.astype(np.float32)
        self._in_std = norm_stats.input_std.astype(np.float32)
        self._t_mean = np.float32(norm_stats.target_mean)
        self._t_std = np.float32(norm_stats.target_std)

    @classmethod
    def from_file(cls, path) -> "LstmModel":
        return cls(*load_weights(path))

    def save(self, path) -> int:
        return save_weights(self.params, self.config, self.norm_stats, path)

    @property
    def seq_len(self) -> int:
        return self.config.seq_len

    @property
    def n_inputs(self) -> int:
        return self.config.input_dim

    @property
    def n_outputs(self) -> int:
        return self.config.output_dim

    def predict_into(self, window: np.ndarray, out: np.ndarray) -> None:
        """Normalize a raw (seq_len, input_dim) window, infer, denormalize."""
        np.subtract(window, self._in_mean, out=self._x_norm)
        np.divide(self._x_norm, self._in_std, out=self._x_norm)
        y = forward(self.params, self.config, self._x_norm, self.scratch)
        np.multiply(y, self._t_std, out=out)
        np.add(out, self._t_mean, out=out)

    def predict(self, window: np.ndarray) -> np.ndarray:
        out = np.zeros(self.config.output_dim, dtype=np.float32)
        self.predict_into(np.asarray(window, dtype=np.float32), out)
        return out
