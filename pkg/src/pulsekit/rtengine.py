"""Real-time inference runtime: wait-free audio path plus one worker.

Two execution contexts share an engine. The audio context calls ``render``
once per block: it copies the incoming frames into a fixed ring buffer,
raises a trigger every ``buffer_blocks`` blocks, and emits samples from the
most recently published prediction. The worker context runs ``worker_loop``
(or ``service_once`` directly): on a trigger it pops one full input window
from the ring, runs the model through preallocated scratch, and publishes
the denormalized prediction.

Shared state and ownership (each field has exactly one writer):

    ring write cursor, trigger sequence, audio counters   -> audio context
    ring read cursor, publication sequence, worker counters -> worker context

The ring is a drop-oldest SPSC queue: the producer never blocks or waits;
when it outruns the consumer it overwrites the oldest frames and counts
them. The consumer detects being lapped mid-copy (the copied span is torn)
and retries from fresher data, so torn frames never escape.

Predictions stage through two slots plus a publication sequence number
whose low bit names the filled slot. The worker fills the unpublished slot
and then bumps the sequence; a new trigger is required before that slot can
be written again, and triggers originate in ``render`` itself, so the slot
``render`` copies from is stable for the whole call.

A trigger that fires while the previous one is still unserviced is dropped
and counted (``inferences_missed``), never queued: the freshest window is
worth more than a stale backlog. Until the first publication, ``render``
emits zeros; when a prediction is exhausted before the next one arrives it
repeats from its start.

CPython note: "no allocation" means no array buffers. Slice views and
cursor integers are pooled small objects, which is as close to
allocation-free as Python code gets; see the realtime checklist in docs/.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import alloc
from .errors import ConfigError, ShapeError


class RingBuffer:
    """Fixed-capacity single-producer single-consumer frame queue.

    Cursors are monotonically increasing frame counts; physical position is
    cursor mod capacity. ``push`` is the producer side and never stalls;
    ``pop_window_into`` is the consumer side and may retry when lapped.
    """

    def __init__(self, capacity_frames: int, n_channels: int):
        if capacity_frames < 1 or n_channels < 1:
            raise ConfigError(
                f"ring needs positive capacity and channels, got "
                f"{capacity_frames} x {n_channels}"
            )
        self.capacity = capacity_frames
        self.n_channels = n_channels
        self.data = alloc.new_array((capacity_frames, n_channels), np.float32)
        self.write_idx = 0  # audio-owned
        self.read_idx = 0  # worker-owned
        self.overflows = 0  # audio-owned: frames overwritten before consumption

    def available(self) -> int:
        w = self.write_idx
        return w - max(self.read_idx, w - self.capacity)

    def push(self, block: np.ndarray) -> None:
        """Producer: append frames, overwriting the oldest when full."""
        n = block.shape[0]
        w = self.write_idx
        skip = 0
        if n > self.capacity:
            # only the newest capacity frames can survive
            skip = n - self.capacity
            self.overflows += self.available() + skip
        else:
            space = self.capacity - (w - self.read_idx)
            if n > space:
                self.overflows += n - space
        m = n - skip
        pos = (w + skip) % self.capacity
        first = min(m, self.capacity - pos)
        self.data[pos : pos + first] = block[skip : skip + first]
        if m > first:
            self.data[: m - first] = block[skip + first :]
        self.write_idx = w + n

    def pop_window_into(self, out: np.ndarray) -> bool:
        """Consumer: copy out the oldest ``len(out)`` frames, if present.

        Returns False when fewer frames are available. Retries if the
        producer lapped the copied span mid-copy.
        """
        win = out.shape[0]
        while True:
            w = self.write_idx
            start = max(self.read_idx, w - self.capacity)
            if w - start < win:
                return False
            pos = start % self.capacity
            first = min(win, self.capacity - pos)
            out[:first] = self.data[pos : pos + first]
            if win > first:
                out[first:] = self.data[: win - first]
            if self.write_idx - start <= self.capacity:
                self.read_idx = start + win
                return True
            # lapped during the copy: data may be torn, take a fresher span


@dataclass
class EngineConfig:
    block_size: int
    sample_rate_hz: float
    model: object  # needs seq_len, n_inputs, n_outputs, predict_into
    buffer_blocks: int = 2

    def validate(self) -> None:
        if self.block_size < 1:
            raise ConfigError(f"block_size must be >= 1, got {self.block_size}")
        if self.buffer_blocks < 1:
            raise ConfigError(f"buffer_blocks must be >= 1, got {self.buffer_blocks}")
        if not self.sample_rate_hz > 0:
            raise ConfigError(f"sample_rate_hz must be > 0, got {self.sample_rate_hz}")
        for attr in ("seq_len", "n_inputs", "n_outputs"):
            value = getattr(self.model, attr, None)
            if not isinstance(value, int) or value < 1:
                raise ConfigError(f"model.{attr} must be a positive int, got {value!r}")
        if not callable(getattr(self.model, "predict_into", None)):
            raise ConfigError("model must provide predict_into(window, out)")


@dataclass
class EngineStats:
    blocks_processed: int = 0
    inferences_completed: int = 0
    inferences_missed: int = 0
    buffer_overflows: int = 0
    underruns: int = 0
    max_inference_duration: float = 0.0

    def counters(self) -> dict:
        return {
            "blocks_processed": self.blocks_processed,
            "inferences_completed": self.inferences_completed,
            "inferences_missed": self.inferences_missed,
            "buffer_overflows": self.buffer_overflows,
            "underruns": self.underruns,
        }


class Engine:
    """All state for one audio/worker pair; allocated entirely in setup."""

    def __init__(self, config: EngineConfig):
        config.validate()
        self.config = config
        model = config.model
        self.ring = RingBuffer(model.seq_len, model.n_inputs)
        self._window = alloc.new_array((model.seq_len, model.n_inputs), np.float32)
        self._slots = alloc.new_array((2, model.n_outputs), np.float32)
        self._slot_views = [self._slots[0], self._slots[1]]
        self._pred_copy = alloc.new_array(model.n_outputs, np.float32)
        self._out_block = alloc.new_array(config.block_size, np.float32)
        self._block_budget = config.block_size / config.sample_rate_hz

        # audio-owned
        self.trigger_seq = 0
        self._blocks_into_buffer = 0
        self._pred_seq_seen = 0
        self._pred_pos = 0
        # worker-owned
        self.pub_seq = 0
        self.serviced_seq = 0
        self._shutdown = False

        self.stats = EngineStats()

    # ---- audio context ----

    def render(self, block: np.ndarray) -> np.ndarray:
        """Process one block; wait-free. Returns the reused output buffer."""
        t0 = time.perf_counter()
        cfg = self.config
        if block.shape != (cfg.block_size, cfg.model.n_inputs):
            raise ShapeError(
                f"block shape {block.shape}, expected "
                f"{(cfg.block_size, cfg.model.n_inputs)}"
            )

        # adopt a newly published prediction; the worker cannot touch that
        # slot again until this call raises the next trigger
        seq = self.pub_seq
        if seq != self._pred_seq_seen:
            np.copyto(self._pred_copy, self._slot_views[seq & 1])
            self._pred_seq_seen = seq
            self._pred_pos = 0

        self.ring.push(block)

        self._blocks_into_buffer += 1
        if self._blocks_into_buffer >= cfg.buffer_blocks:
            self._blocks_into_buffer = 0
            if self.trigger_seq > self.serviced_seq:
                self.stats.inferences_missed += 1  # coalesce, never queue
            else:
                self.trigger_seq += 1

        out = self._out_block
        if self._pred_seq_seen == 0:
            out[:] = 0.0
        else:
            n_out = cfg.model.n_outputs
            filled = 0
            while filled < cfg.block_size:
                take = min(cfg.block_size - filled, n_out - self._pred_pos)
                out[filled : filled + take] = self._pred_copy[
                    self._pred_pos : self._pred_pos + take
                ]
                filled += take
                self._pred_pos += take
                if self._pred_pos == n_out:
                    self._pred_pos = 0  # repeat until a fresh window arrives

        self.stats.blocks_processed += 1
        self.stats.buffer_overflows = self.ring.overflows
        if time.perf_counter() - t0 > self._block_budget:
            self.stats.underruns += 1
        return out

    # ---- worker context ----

    def service_once(self) -> bool:
        """Handle one outstanding trigger; True if an inference was published."""
        t = self.trigger_seq
        if t == self.serviced_seq:
            return False
        if not self.ring.pop_window_into(self._window):
            self.serviced_seq = t  # window not yet full: trigger cadence < window
            return False
        t0 = time.perf_counter()
        slot = (self.pub_seq + 1) & 1
        self.config.model.predict_into(self._window, self._slot_views[slot])
        self.pub_seq += 1
        duration = time.perf_counter() - t0
        self.stats.inferences_completed += 1
        if duration > self.stats.max_inference_duration:
            self.stats.max_inference_duration = duration
        self.serviced_seq = t
        return True

    def worker_loop(self, poll_interval: float = 1e-4) -> None:
        """Service triggers until shutdown; safe to run in a separate thread."""
        while not self._shutdown:
            if not self.service_once():
                time.sleep(poll_interval)

    def shutdown(self) -> None:
        self._shutdown = True


def setup(config: EngineConfig) -> Engine:
    """Allocate every buffer the engine will ever use."""
    return Engine(config)


def offline_run(engine: Engine, signal: np.ndarray) -> tuple[np.ndarray, EngineStats]:
    """Deterministic single-context replay: render a block, then let the
    worker service any trigger immediately.

    ``signal`` is (n_channels, n_frames); a trailing partial block is
    dropped. Returns every published prediction window in order plus the
    final stats.
    """
    model = engine.config.model
    if signal.ndim != 2 or signal.shape[0] != model.n_inputs:
        raise ShapeError(
            f"signal shape {signal.shape}, expected ({model.n_inputs}, n_frames)"
        )
    bs = engine.config.block_size
    n_blocks = signal.shape[1] // bs
    max_preds = n_blocks // engine.config.buffer_blocks + 1
    predictions = np.zeros((max_preds, model.n_outputs), dtype=np.float32)
    block = np.zeros((bs, model.n_inputs), dtype=np.float32)

    count = 0
    for b in range(n_blocks):
        block[:] = signal[:, b * bs : (b + 1) * bs].T
        engine.render(block)
        if engine.service_once():
            predictions[count] = engine._slot_views[engine.pub_seq & 1]
            count += 1
    return predictions[:count].copy(), engine.stats
