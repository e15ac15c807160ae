"""Synthetic multi-device recording sessions with known ground truth.

Device 0 is the transmitter (TX) and defines the reference clock; devices
1..n-1 are receivers (RX). The TX emits a clock pulse every
``pulse_period_frames`` frames and records the frame at which it was sent.
Each RX records the local frame at which it observed the pulse:

    observed(k) = rint((k * period + start_offset) * (1 + drift_ppm * 1e-6)) + jitter(k)

where ``rint`` rounds half-to-even and ``jitter(k)`` is a per-pulse uniform
integer delay in [0, pulse_jitter_frames]. Jitter is a delay, never an
advance: a receiver cannot observe a pulse before it was sent, and this
keeps frame indices non-negative for any non-negative start offset.

Sensor channels sample a common physical process expressed in TX time, so
that after alignment all devices agree on signal content. Local frame L on
a device with offset ``o`` and drift ``d`` corresponds to physical time
``t = (L / (1 + d * 1e-6) - o) / sample_rate_hz``; deterministic signals are
zero for t < 0 (the process starts at TX frame 0). White noise channels are
device-local and have no cross-device identity.

Randomness: every stream comes from numpy's PCG64 seeded with
``SeedSequence(entropy=seed, spawn_key=...)``. Channel noise for device d,
channel c uses spawn key (0, d, c); pulse jitter for device d uses (1, d).
Identical configs therefore reproduce sessions bit-for-bit, and any single
channel can be regenerated in isolation.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

from .errors import ConfigError
from .logfmt import LogHeader, Role, SensorLog, SyncEvent


@dataclass(frozen=True)
class DampedSine:
    freq_hz: float
    decay_per_s: float


@dataclass(frozen=True)
class ImpulseTrain:
    rate_hz: float
    amplitude: float


@dataclass(frozen=True)
class WhiteNoise:
    amplitude: float


SignalSpec = Union[DampedSine, ImpulseTrain, WhiteNoise]


def parse_signal_spec(text: str) -> SignalSpec:
    """Parse ``kind:arg1:arg2`` notation, e.g. ``damped_sine:5.0:0.5``."""
    parts = text.strip().split(":")
    kind, args = parts[0], parts[1:]
    try:
        if kind == "damped_sine":
            freq, decay = args
            return DampedSine(float(freq), float(decay))
        if kind == "impulse_train":
            rate, amp = args
            return ImpulseTrain(float(rate), float(amp))
        if kind == "white_noise":
            (amp,) = args
            return WhiteNoise(float(amp))
    except ValueError as exc:
        raise ConfigError(f"bad signal spec {text!r}: {exc}") from exc
    raise ConfigError(f"unknown signal kind {kind!r}")


def format_signal_spec(spec: SignalSpec) -> str:
    if isinstance(spec, DampedSine):
        return f"damped_sine:{spec.freq_hz}:{spec.decay_per_s}"
    if isinstance(spec, ImpulseTrain):
        return f"impulse_train:{spec.rate_hz}:{spec.amplitude}"
    if isinstance(spec, WhiteNoise):
        return f"white_noise:{spec.amplitude}"
    raise TypeError(f"not a signal spec: {spec!r}")


@dataclass
class SessionConfig:
    """Parameters of one synthetic recording session.

    ``signal_specs`` is flat and device-major: entry ``d * channels_per_device + c``
    drives channel ``c`` of device ``d``.
    """

    n_devices: int
    channels_per_device: int
    n_frames: int
    sample_rate_hz: float
    pulse_period_frames: int
    start_offset_frames: list[int]
    drift_ppm: list[float]
    pulse_jitter_frames: int
    signal_specs: list[SignalSpec]
    seed: int

    def validate(self) -> None:
        if self.n_devices < 1:
            raise ConfigError(f"n_devices must be >= 1, got {self.n_devices}")
        if self.channels_per_device < 1:
            raise ConfigError(f"channels_per_device must be >= 1, got {self.channels_per_device}")
        if self.n_frames < 1:
            raise ConfigError(f"n_frames must be >= 1, got {self.n_frames}")
        if not self.sample_rate_hz > 0:
            raise ConfigError(f"sample_rate_hz must be > 0, got {self.sample_rate_hz}")
        if self.pulse_period_frames < 1:
            raise ConfigError("pulse_period_frames must be >= 1")
        if len(self.start_offset_frames) != self.n_devices:
            raise ConfigError(
                f"{len(self.start_offset_frames)} start offsets for {self.n_devices} devices"
            )
        if len(self.drift_ppm) != self.n_devices:
            raise ConfigError(f"{len(self.drift_ppm)} drift values for {self.n_devices} devices")
        if self.start_offset_frames[0] != 0:
            raise ConfigError("device 0 is TX: start_offset_frames[0] must be 0")
        if self.drift_ppm[0] != 0:
            raise ConfigError("device 0 is TX: drift_ppm[0] must be 0")
        if any(off < 0 for off in self.start_offset_frames):
            raise ConfigError("start offsets must be non-negative")
        if self.pulse_jitter_frames < 0:
            raise ConfigError("pulse_jitter_frames must be >= 0")
        if not self.pulse_period_frames > 2 * self.pulse_jitter_frames:
            raise ConfigError(
                f"pulse_period_frames ({self.pulse_period_frames}) must exceed "
                f"2 * pulse_jitter_frames ({2 * self.pulse_jitter_frames})"
            )
        expected = self.n_devices * self.channels_per_device
        if len(self.signal_specs) != expected:
            raise ConfigError(f"{len(self.signal_specs)} signal specs, need {expected}")
        if not 0 <= self.seed <= 0xFFFFFFFFFFFFFFFF:
            raise ConfigError(f"seed out of u64 range: {self.seed}")


@dataclass
class GroundTruth:
    """Clean (pre-jitter) per-device, per-pulse offsets relative to TX."""

    offsets: np.ndarray  # (n_devices, n_pulses) int64
    tx_pulse_frames: np.ndarray  # (n_pulses,) int64

    def offset(self, device: int, pulse_index: int) -> int:
        return int(self.offsets[device, pulse_index])

    @property
    def n_pulses(self) -> int:
        return self.offsets.shape[1]


def _channel_rng(seed: int, device: int, channel: int) -> np.random.Generator:
    return np.random.Generator(
        np.random.PCG64(np.random.SeedSequence(entropy=seed, spawn_key=(0, device, channel)))
    )


def _jitter_rng(seed: int, device: int) -> np.random.Generator:
    return np.random.Generator(
        np.random.PCG64(np.random.SeedSequence(entropy=seed, spawn_key=(1, device)))
    )


def render_channel(
    spec: SignalSpec,
    config: SessionConfig,
    device: int,
    channel: int,
) -> np.ndarray:
    """Generate one channel's samples; pure in (spec, config, device, channel)."""
    frames = np.arange(config.n_frames, dtype=np.float64)
    drift_scale = 1.0 + config.drift_ppm[device] * 1e-6
    t = (frames / drift_scale - config.start_offset_frames[device]) / config.sample_rate_hz

    if isinstance(spec, DampedSine):
        out = np.exp(-spec.decay_per_s * np.maximum(t, 0.0)) * np.sin(
            2.0 * np.pi * spec.freq_hz * t
        )
        out[t < 0] = 0.0
    elif isinstance(spec, ImpulseTrain):
        count = np.floor(t * spec.rate_hz)
        count[t < 0] = -1.0
        prev = np.empty_like(count)
        prev[0] = -1.0
        prev[1:] = count[:-1]
        out = np.where(count > prev, spec.amplitude, 0.0)
    elif isinstance(spec, WhiteNoise):
        rng = _channel_rng(config.seed, device, channel)
        out = rng.uniform(-spec.amplitude, spec.amplitude, config.n_frames)
    else:
        raise TypeError(f"not a signal spec: {spec!r}")
    return out.astype(np.float32)


def generate_session(config: SessionConfig) -> tuple[list[SensorLog], GroundTruth]:
    """Produce one SensorLog per device plus the ground-truth offset map."""
    config.validate()
    period = config.pulse_period_frames
    n_pulses = (config.n_frames - 1) // period + 1
    pulse_ids = np.arange(n_pulses, dtype=np.int64)
    tx_frames = pulse_ids * period

    offsets = np.zeros((config.n_devices, n_pulses), dtype=np.int64)
    observed = np.zeros((config.n_devices, n_pulses), dtype=np.int64)
    observed[0] = tx_frames
    for dev in range(1, config.n_devices):
        drift_scale = 1.0 + config.drift_ppm[dev] * 1e-6
        clean = np.rint(
            (tx_frames + config.start_offset_frames[dev]) * drift_scale
        ).astype(np.int64)
        jitter = _jitter_rng(config.seed, dev).integers(
            0, config.pulse_jitter_frames + 1, size=n_pulses, dtype=np.int64
        )
        frames = clean + jitter
        if frames.size and frames[-1] >= config.n_frames:
            raise ConfigError(
                f"device {dev} pulse {n_pulses - 1} lands at frame {frames[-1]} "
                f">= n_frames {config.n_frames}: session too short"
            )
        offsets[dev] = clean - tx_frames
        observed[dev] = frames

    logs = []
    for dev in range(config.n_devices):
        samples = np.empty((config.channels_per_device, config.n_frames), dtype=np.float32)
        for ch in range(config.channels_per_device):
            spec = config.signal_specs[dev * config.channels_per_device + ch]
            samples[ch] = render_channel(spec, config, dev, ch)
        header = LogHeader(
            device_id=dev,
            role=Role.TX if dev == 0 else Role.RX,
            sample_rate_hz=config.sample_rate_hz,
            n_channels=config.channels_per_device,
            channel_labels=[f"ch{c}" for c in range(config.channels_per_device)],
            pulse_period_frames=period,
            session_id=config.seed,
        )
        events = [SyncEvent(int(k), int(observed[dev, k])) for k in range(n_pulses)]
        log = SensorLog(header=header, samples=samples, sync_events=events)
        log.validate()
        logs.append(log)

    return logs, GroundTruth(offsets=offsets, tx_pulse_frames=tx_frames)
