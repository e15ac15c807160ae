"""Binary sensor-log format: one file per recording device.

Layout (all integers little-endian):

    offset  size  field
    0       4     magic ``BSLG``
    4       1     version (1)
    5       2     device_id (u16)
    7       1     role (u8: 0=TX, 1=RX)
    8       8     sample_rate_hz (f64)
    16      4     n_channels (u32)
    20      8     pulse_period_frames (u64)
    28      8     session_id (u64)
    36      8     n_frames (u64)
    44      8     n_sync_events (u64)
    52      ...   n_channels channel labels, each u16 length + UTF-8 bytes
    ...     ...   n_channels blocks of n_frames f32 samples (channel-major)
    ...     ...   n_sync_events records of (pulse_index u64, frame_index u64)

File extension: ``.bslog``. Values are 32-bit IEEE-754 floats, by convention
normalized to [-1, 1]. Sync events record the local frame at which each
shared clock pulse was sent (TX) or observed (RX).
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field
from typing import BinaryIO

import numpy as np

from .errors import FormatError, TruncationError, ValidationError

MAGIC = b"BSLG"
VERSION = 1
FILE_EXTENSION = ".bslog"

_FIXED_HEADER = struct.Struct("<HBdIQQQQ")  # follows magic+version
_SYNC_EVENT = struct.Struct("<QQ")
_LABEL_LEN = struct.Struct("<H")


class Role(enum.IntEnum):
    TX = 0
    RX = 1


class LogWriteError(OSError):
    """Sink failure during write; ``bytes_written`` is the progress made."""

    def __init__(self, message: str, bytes_written: int):
        super().__init__(f"{message} after {bytes_written} bytes")
        self.bytes_written = bytes_written


@dataclass
class LogHeader:
    device_id: int
    role: Role
    sample_rate_hz: float
    n_channels: int
    channel_labels: list[str]
    pulse_period_frames: int
    session_id: int

    def validate(self) -> None:
        if self.n_channels < 1:
            raise ValidationError(f"n_channels must be >= 1, got {self.n_channels}")
        if len(self.channel_labels) != self.n_channels:
            raise ValidationError(
                f"{len(self.channel_labels)} labels for {self.n_channels} channels"
            )
        if not self.sample_rate_hz > 0:
            raise ValidationError(f"sample_rate_hz must be > 0, got {self.sample_rate_hz}")
        if self.pulse_period_frames < 1:
            raise ValidationError(
                f"pulse_period_frames must be >= 1, got {self.pulse_period_frames}"
            )
        if not 0 <= self.device_id <= 0xFFFF:
            raise ValidationError(f"device_id out of u16 range: {self.device_id}")
        if not 0 <= self.session_id <= 0xFFFFFFFFFFFFFFFF:
            raise ValidationError(f"session_id out of u64 range: {self.session_id}")


@dataclass
class SyncEvent:
    pulse_index: int
    frame_index: int


@dataclass
class SensorLog:
    """One device's recorded session: header, samples, and sync pulses."""

    header: LogHeader
    samples: np.ndarray  # (n_channels, n_frames) float32
    sync_events: list[SyncEvent] = field(default_factory=list)

    @property
    def n_frames(self) -> int:
        return self.samples.shape[1]

    def validate(self) -> None:
        self.header.validate()
        if self.samples.ndim != 2:
            raise ValidationError(f"samples must be 2-D, got shape {self.samples.shape}")
        if self.samples.shape[0] != self.header.n_channels:
            raise ValidationError(
                f"samples has {self.samples.shape[0]} rows for "
                f"{self.header.n_channels} channels"
            )
        if self.samples.dtype != np.float32:
            raise ValidationError(f"samples must be float32, got {self.samples.dtype}")
        prev_pulse, prev_frame = -1, -1
        for ev in self.sync_events:
            if ev.pulse_index <= prev_pulse:
                raise ValidationError(
                    f"pulse_index not strictly increasing at pulse {ev.pulse_index}"
                )
            if ev.frame_index <= prev_frame:
                raise ValidationError(
                    f"frame_index not strictly increasing at pulse {ev.pulse_index}"
                )
            if ev.frame_index >= self.n_frames:
                raise ValidationError(
                    f"sync event at frame {ev.frame_index} beyond {self.n_frames} frames"
                )
            prev_pulse, prev_frame = ev.pulse_index, ev.frame_index

    def pulse_frames(self) -> np.ndarray:
        """Frame index of each sync event, as an int64 vector."""
        return np.array([ev.frame_index for ev in self.sync_events], dtype=np.int64)

    def pulse_indices(self) -> np.ndarray:
        return np.array([ev.pulse_index for ev in self.sync_events], dtype=np.int64)

    def __eq__(self, other) -> bool:
        if not isinstance(other, SensorLog):
            return NotImplemented
        return (
            self.header == other.header
            and self.samples.shape == other.samples.shape
            and self.samples.tobytes() == other.samples.tobytes()
            and self.sync_events == other.sync_events
        )


def write_log(log: SensorLog, destination: BinaryIO) -> int:
    """Serialize ``log`` to a byte sink. Returns the total bytes written."""
    log.validate()
    h = log.header
    parts = [
        MAGIC,
        bytes([VERSION]),
        _FIXED_HEADER.pack(
            h.device_id,
            int(h.role),
            h.sample_rate_hz,
            h.n_channels,
            h.pulse_period_frames,
            h.session_id,
            log.n_frames,
            len(log.sync_events),
        ),
    ]
    for label in h.channel_labels:
        encoded = label.encode("utf-8")
        if len(encoded) > 0xFFFF:
            raise ValidationError(f"channel label too long: {len(encoded)} bytes")
        parts.append(_LABEL_LEN.pack(len(encoded)))
        parts.append(encoded)
    samples = np.ascontiguousarray(log.samples, dtype="<f4")
    parts.append(samples.tobytes())
    for ev in log.sync_events:
        parts.append(_SYNC_EVENT.pack(ev.pulse_index, ev.frame_index))

    written = 0
    for part in parts:
        try:
            destination.write(part)
        except OSError as exc:
            raise LogWriteError(str(exc), written) from exc
        written += len(part)
    return written


def write_log_file(log: SensorLog, path) -> int:
    with open(path, "wb") as fh:
        return write_log(log, fh)


def parse_log(source: BinaryIO | bytes) -> SensorLog:
    """Parse a sensor log, validating every invariant.

    Declared sizes are checked against the actual stream length before any
    size-dependent allocation, so a hostile header cannot force unbounded
    memory use.
    """
    buf = source if isinstance(source, bytes) else source.read()
    if len(buf) < 5:
        raise TruncationError("file shorter than magic", expected=5, actual=len(buf))
    if buf[:4] != MAGIC:
        raise FormatError(f"bad magic {buf[:4]!r}, expected {MAGIC!r}")
    if buf[4] != VERSION:
        raise FormatError(f"unsupported version {buf[4]}")

    pos = 5
    if len(buf) < pos + _FIXED_HEADER.size:
        raise TruncationError(
            "truncated fixed header", expected=pos + _FIXED_HEADER.size, actual=len(buf)
        )
    (
        device_id,
        role_raw,
        sample_rate_hz,
        n_channels,
        pulse_period_frames,
        session_id,
        n_frames,
        n_sync_events,
    ) = _FIXED_HEADER.unpack_from(buf, pos)
    pos += _FIXED_HEADER.size

    if role_raw not in (0, 1):
        raise FormatError(f"unknown role byte {role_raw}")
    if n_channels < 1:
        raise ValidationError(f"n_channels must be >= 1, got {n_channels}")

    labels = []
    for _ in range(n_channels):
        if len(buf) < pos + _LABEL_LEN.size:
            raise TruncationError(
                "truncated label length", expected=pos + _LABEL_LEN.size, actual=len(buf)
            )
        (label_len,) = _LABEL_LEN.unpack_from(buf, pos)
        pos += _LABEL_LEN.size
        if len(buf) < pos + label_len:
            raise TruncationError(
                "truncated label bytes", expected=pos + label_len, actual=len(buf)
            )
        try:
            labels.append(buf[pos : pos + label_len].decode("utf-8"))
        except UnicodeDecodeError as exc:
            raise FormatError(f"label is not valid UTF-8: {exc}") from exc
        pos += label_len

    sample_bytes = n_channels * n_frames * 4
    event_bytes = n_sync_events * _SYNC_EVENT.size
    expected_total = pos + sample_bytes + event_bytes
    if len(buf) < expected_total:
        raise TruncationError("truncated payload", expected=expected_total, actual=len(buf))
    if len(buf) > expected_total:
        raise FormatError(f"{len(buf) - expected_total} trailing bytes after payload")

    samples = (
        np.frombuffer(buf, dtype="<f4", count=n_channels * n_frames, offset=pos)
        .reshape(n_channels, n_frames)
        .copy()
    )
    pos += sample_bytes

    events = []
    for _ in range(n_sync_events):
        pulse_index, frame_index = _SYNC_EVENT.unpack_from(buf, pos)
        pos += _SYNC_EVENT.size
        events.append(SyncEvent(pulse_index, frame_index))

    log = SensorLog(
        header=LogHeader(
            device_id=device_id,
            role=Role(role_raw),
            sample_rate_hz=sample_rate_hz,
            n_channels=n_channels,
            channel_labels=labels,
            pulse_period_frames=pulse_period_frames,
            session_id=session_id,
        ),
        samples=samples,
        sync_events=events,
    )
    log.validate()
    return log


def parse_log_file(path) -> SensorLog:
    with open(path, "rb") as fh:
        return parse_log(fh)
