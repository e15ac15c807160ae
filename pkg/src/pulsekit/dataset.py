"""Windowed training pairs and matrix export.

An aligned channels x timesteps matrix is cut into supervised pairs: the
input is a window of ``input_len`` frames over the chosen input channels,
the target is the following ``output_len`` frames of one target channel.
Channels are z-score normalized with statistics computed over the whole
matrix; the statistics travel with the dataset so inference can apply the
identical transform.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from typing import BinaryIO

import numpy as np

from .errors import ConfigError, EmptyDatasetError, ShapeError
from .syncer import AlignedMatrix

NPY_MAGIC = b"\x93NUMPY"
_STD_FLOOR = 1e-8


@dataclass
class WindowSpec:
    input_len: int = 32
    output_len: int = 96
    hop: int | None = None  # None: hop = input_len (non-overlapping inputs)
    input_channels: tuple[int, ...] = (0, 1)
    target_channel: int = 0

    def __post_init__(self):
        if self.hop is None:
            self.hop = self.input_len
        if self.input_len < 1 or self.output_len < 1 or self.hop < 1:
            raise ConfigError(
                f"window lengths and hop must be >= 1: "
                f"input_len={self.input_len} output_len={self.output_len} hop={self.hop}"
            )
        if not self.input_channels:
            raise ConfigError("input_channels must not be empty")


@dataclass
class NormStats:
    """Per-channel z-score statistics, stored so inference can reuse them."""

    input_mean: np.ndarray  # (n_input_channels,) float64
    input_std: np.ndarray  # (n_input_channels,) float64
    target_mean: float
    target_std: float

    def normalize_inputs(self, window: np.ndarray) -> np.ndarray:
        """Normalize a (frames, channels) input window."""
        return (window - self.input_mean) / self.input_std

    def denormalize_target(self, y: np.ndarray) -> np.ndarray:
        return y * self.target_std + self.target_mean


@dataclass
class WindowedDataset:
    inputs: np.ndarray  # (n_pairs, input_len, n_input_channels) float32
    targets: np.ndarray  # (n_pairs, output_len) float32
    norm_stats: NormStats
    spec: WindowSpec

    @property
    def n_pairs(self) -> int:
        return self.inputs.shape[0]


def window_count(n_timesteps: int, input_len: int, output_len: int, hop: int) -> int:
    span = n_timesteps - input_len - output_len
    return span // hop + 1 if span >= 0 else 0


def make_windows(matrix: AlignedMatrix | np.ndarray, spec: WindowSpec) -> WindowedDataset:
    """Cut an aligned matrix into normalized (input window, target window) pairs."""
    data = matrix.data if isinstance(matrix, AlignedMatrix) else np.asarray(matrix)
    if data.ndim != 2:
        raise ShapeError(f"matrix must be 2-D, got shape {data.shape}")
    n_rows, n_steps = data.shape
    for ch in (*spec.input_channels, spec.target_channel):
        if not 0 <= ch < n_rows:
            raise IndexError(f"channel {ch} out of range for {n_rows} rows")

    n_pairs = window_count(n_steps, spec.input_len, spec.output_len, spec.hop)
    if n_pairs == 0:
        raise EmptyDatasetError(
            f"matrix with {n_steps} timesteps yields no "
            f"{spec.input_len}+{spec.output_len} windows"
        )

    mean = data.mean(axis=1, dtype=np.float64)
    std = np.maximum(data.std(axis=1, dtype=np.float64), _STD_FLOOR)
    normalized = (data.astype(np.float64) - mean[:, None]) / std[:, None]

    starts = np.arange(n_pairs) * spec.hop
    inputs = np.empty((n_pairs, spec.input_len, len(spec.input_channels)), dtype=np.float32)
    targets = np.empty((n_pairs, spec.output_len), dtype=np.float32)
    in_rows = normalized[list(spec.input_channels)]
    tgt_row = normalized[spec.target_channel]
    for p, s in enumerate(starts):
        inputs[p] = in_rows[:, s : s + spec.input_len].T
        targets[p] = tgt_row[s + spec.input_len : s + spec.input_len + spec.output_len]

    stats = NormStats(
        input_mean=mean[list(spec.input_channels)].copy(),
        input_std=std[list(spec.input_channels)].copy(),
        target_mean=float(mean[spec.target_channel]),
        target_std=float(std[spec.target_channel]),
    )
    return WindowedDataset(inputs=inputs, targets=targets, norm_stats=stats, spec=spec)


def _npy_header(shape: tuple[int, ...], descr: str) -> bytes:
    body = "{'descr': '%s', 'fortran_order': False, 'shape': %s, }" % (descr, repr(shape))
    encoded = body.encode("ascii")
    # magic(6) + version(2) + header-length(2) + header + '\n' padded to 64
    unpadded = 10 + len(encoded) + 1
    pad = (64 - unpadded % 64) % 64
    header = encoded + b" " * pad + b"\n"
    if len(header) > 0xFFFF:
        raise ShapeError(f"header too large for NPY v1.0: {len(header)} bytes")
    return NPY_MAGIC + b"\x01\x00" + len(header).to_bytes(2, "little") + header


def export_npy(
    array: np.ndarray, destination: BinaryIO | str, double_precision: bool = False
) -> int:
    """Write ``array`` in NPY v1.0 format (little-endian f32, or f64 on request)."""
    arr = np.asarray(array)
    descr = "<f8" if double_precision else "<f4"
    payload = np.ascontiguousarray(arr, dtype=descr)
    blob = _npy_header(tuple(arr.shape), descr) + payload.tobytes()
    return _write_bytes(blob, destination)


def export_csv(matrix: np.ndarray, destination) -> int:
    """Write one CSV row per channel; floats render shortest-round-trip for f32."""
    arr = np.asarray(matrix, dtype=np.float32)
    if arr.ndim != 2:
        raise ShapeError(f"csv export needs a 2-D matrix, got shape {arr.shape}")
    out = io.StringIO()
    for row in arr:
        out.write(",".join(format_f32(v) for v in row))
        out.write("\n")
    return _write_bytes(out.getvalue().encode("ascii"), destination)


def format_f32(value: np.float32) -> str:
    """Shortest decimal string that parses back to the identical float32."""
    return np.format_float_positional(np.float32(value), unique=True, trim="-")


def _write_bytes(blob: bytes, destination) -> int:
    if hasattr(destination, "write"):
        destination.write(blob)
    else:
        with open(destination, "wb") as fh:
            fh.write(blob)
    return len(blob)
