"""Shared helpers: manual log construction and an independent NPY reader."""

from __future__ import annotations

import ast

import numpy as np
import pytest

from pulsekit.logfmt import LogHeader, Role, SensorLog, SyncEvent


def make_log(
    device_id=0,
    role=Role.TX,
    sample_rate_hz=1000.0,
    samples=None,
    pulses=(),
    pulse_period=100,
    session_id=1,
    labels=None,
):
    """Build a SensorLog directly, bypassing the generator."""
    if samples is None:
        samples = np.zeros((1, 10), dtype=np.float32)
    samples = np.asarray(samples, dtype=np.float32)
    if labels is None:
        labels = [f"ch{i}" for i in range(samples.shape[0])]
    return SensorLog(
        header=LogHeader(
            device_id=device_id,
            role=role,
            sample_rate_hz=sample_rate_hz,
            n_channels=samples.shape[0],
            channel_labels=labels,
            pulse_period_frames=pulse_period,
            session_id=session_id,
        ),
        samples=samples,
        sync_events=[SyncEvent(int(k), int(f)) for k, f in pulses],
    )


def read_npy_reference(blob: bytes) -> np.ndarray:
    """Minimal NPY v1.0 reader, independent of the writer under test."""
    assert blob[:6] == b"\x93NUMPY", "bad magic"
    assert blob[6:8] == b"\x01\x00", "bad version"
    hlen = int.from_bytes(blob[8:10], "little")
    header = blob[10 : 10 + hlen].decode("ascii")
    assert header.endswith("\n")
    meta = ast.literal_eval(header.strip())
    assert meta["fortran_order"] is False
    dtype = np.dtype(meta["descr"])
    shape = meta["shape"]
    count = int(np.prod(shape)) if shape else 1
    data = np.frombuffer(blob, dtype=dtype, count=count, offset=10 + hlen)
    return data.reshape(shape)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
