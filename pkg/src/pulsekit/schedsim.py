"""Tick-level simulator of fixed-priority preemptive scheduling on one CPU.

Two tasks compete for the CPU. The audio task becomes ready at every block
start and costs ``callback_cost_ticks``; with ``inference_on_audio_thread``
it additionally absorbs the inference cost in each triggered block. The
auxiliary task becomes ready when the input buffer fills, at the end of
every ``trigger_every_blocks``-th block, and costs ``inference_cost_ticks``.
Each tick the highest-priority ready task runs; the auxiliary task shows as
sleeping while an inference is in flight but the audio task holds the CPU.

Rules made precise:

  - An underrun is recorded for a block whose audio-task demand exceeds
    ``ticks_per_block``. Excess audio work is truncated at the block
    boundary (each block starts fresh), so underruns count per block
    instead of cascading.
  - A trigger that fires while auxiliary work is pending is dropped and
    recorded as MissedTrigger, matching the runtime's coalescing policy.
  - A newly triggered inference may start no earlier than the tick after
    its trigger; block starts hand the CPU to the audio task first.
  - With zero inference cost the inference starts and completes at the
    trigger tick itself without occupying any tick.

Public tick numbering is 1-based to match the rendered chart; positional
arrays index tick t at position t-1.
"""

from __future__ import annotations

import enum
import io
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, FormatError


class Occupant(enum.IntEnum):
    IDLE = 0
    AUDIO = 1
    AUX = 2


EVENT_NAMES = ("Trigger", "InferenceStart", "InferenceDone", "Underrun", "MissedTrigger")


@dataclass(frozen=True)
class SimConfig:
    ticks_per_block: int = 4
    n_blocks: int = 8
    callback_cost_ticks: int = 1
    inference_cost_ticks: int = 5
    trigger_every_blocks: int = 2
    inference_on_audio_thread: bool = False

    def validate(self) -> None:
        if self.ticks_per_block < 1:
            raise ConfigError(f"ticks_per_block must be >= 1, got {self.ticks_per_block}")
        if self.n_blocks < 1:
            raise ConfigError(f"n_blocks must be >= 1, got {self.n_blocks}")
        if self.trigger_every_blocks < 1:
            raise ConfigError(
                f"trigger_every_blocks must be >= 1, got {self.trigger_every_blocks}"
            )
        if self.callback_cost_ticks < 0 or self.inference_cost_ticks < 0:
            raise ConfigError("task costs must be non-negative")


@dataclass
class SimTrace:
    config: SimConfig
    cpu: np.ndarray  # (n_ticks,) Occupant codes
    aux_sleeping: np.ndarray  # (n_ticks,) bool: inference in flight, preempted
    events: list[tuple[int, str]] = field(default_factory=list)  # (tick_1based, name)

    @property
    def n_ticks(self) -> int:
        return len(self.cpu)

    def audio_ticks(self) -> list[int]:
        return [int(t) + 1 for t in np.flatnonzero(self.cpu == Occupant.AUDIO)]

    def aux_run_ticks(self) -> list[int]:
        return [int(t) + 1 for t in np.flatnonzero(self.cpu == Occupant.AUX)]

    def aux_sleep_ticks(self) -> list[int]:
        return [int(t) + 1 for t in np.flatnonzero(self.aux_sleeping)]

    def event_ticks(self, name: str) -> list[int]:
        return [t for t, n in self.events if n == name]

    def count(self, name: str) -> int:
        return sum(1 for _, n in self.events if n == name)

    def __eq__(self, other) -> bool:
        if not isinstance(other, SimTrace):
            return NotImplemented
        return (
            self.config == other.config
            and np.array_equal(self.cpu, other.cpu)
            and np.array_equal(self.aux_sleeping, other.aux_sleeping)
            and self.events == other.events
        )


def simulate(config: SimConfig) -> SimTrace:
    """Run the schedule tick by tick; deterministic in the config."""
    config.validate()
    tpb = config.ticks_per_block
    n_ticks = config.n_blocks * tpb
    cpu = np.zeros(n_ticks, dtype=np.int8)
    sleeping = np.zeros(n_ticks, dtype=bool)
    events: list[tuple[int, str]] = []

    def is_trigger_block(b: int) -> bool:
        return (b + 1) % config.trigger_every_blocks == 0

    audio_remaining = 0
    audio_demand = 0
    aux_remaining = 0
    aux_started = False

    for tick in range(n_ticks):
        block, tick_in_block = divmod(tick, tpb)
        if tick_in_block == 0:
            audio_demand = config.callback_cost_ticks
            if config.inference_on_audio_thread and is_trigger_block(block):
                audio_demand += config.inference_cost_ticks
            audio_remaining = audio_demand

        if audio_remaining > 0:
            cpu[tick] = Occupant.AUDIO
            audio_remaining -= 1
            if aux_remaining > 0 and aux_started:
                sleeping[tick] = True
        elif aux_remaining > 0:
            cpu[tick] = Occupant.AUX
            if not aux_started:
                aux_started = True
                events.append((tick + 1, "InferenceStart"))
            aux_remaining -= 1
            if aux_remaining == 0:
                events.append((tick + 1, "InferenceDone"))
                aux_started = False

        if tick_in_block == tpb - 1:
            if audio_demand > tpb:
                events.append((tick + 1, "Underrun"))
            if is_trigger_block(block):
                events.append((tick + 1, "Trigger"))
                if not config.inference_on_audio_thread:
                    if aux_remaining > 0:
                        events.append((tick + 1, "MissedTrigger"))
                    elif config.inference_cost_ticks == 0:
                        events.append((tick + 1, "InferenceStart"))
                        events.append((tick + 1, "InferenceDone"))
                    else:
                        aux_remaining = config.inference_cost_ticks
                        aux_started = False

    return SimTrace(config=config, cpu=cpu, aux_sleeping=sleeping, events=events)


def render_gantt(trace: SimTrace) -> str:
    """Fixed-width two-row chart, one column per tick, blocks separated by |."""
    tpb = trace.config.ticks_per_block

    def lane(chars: list[str]) -> str:
        cells = ["".join(chars[b : b + tpb]) for b in range(0, trace.n_ticks, tpb)]
        return "|" + "|".join(cells) + "|"

    audio = ["X" if c == Occupant.AUDIO else "." for c in trace.cpu]
    aux = [
        "X" if c == Occupant.AUX else ("z" if s else ".")
        for c, s in zip(trace.cpu, trace.aux_sleeping)
    ]
    header = [f"{b + 1:>{tpb}d}" for b in range(trace.config.n_blocks)]

    lines = [
        f"ticks/block={tpb} blocks={trace.config.n_blocks} "
        f"callback={trace.config.callback_cost_ticks} "
        f"inference={trace.config.inference_cost_ticks} "
        f"trigger_every={trace.config.trigger_every_blocks} "
        f"on_audio_thread={int(trace.config.inference_on_audio_thread)}",
        "legend: X=running  z=sleeping (preempted mid-inference)  .=idle",
        "block " + "|" + "|".join(header) + "|",
        "audio " + lane(audio),
        "aux   " + lane(aux),
    ]
    for tick, name in trace.events:
        lines.append(f"tick {tick}: {name}")
    return "\n".join(lines) + "\n"


def write_trace_csv(trace: SimTrace, destination) -> int:
    """Machine-readable trace: one row per tick plus a config header line."""
    c = trace.config
    out = io.StringIO()
    out.write(
        f"# pulsekit-simtrace v1 ticks_per_block={c.ticks_per_block} "
        f"n_blocks={c.n_blocks} callback={c.callback_cost_ticks} "
        f"inference={c.inference_cost_ticks} trigger_every={c.trigger_every_blocks} "
        f"on_audio_thread={int(c.inference_on_audio_thread)}\n"
    )
    out.write("tick,audio,aux,events\n")
    by_tick: dict[int, list[str]] = {}
    for tick, name in trace.events:
        by_tick.setdefault(tick, []).append(name)
    for i in range(trace.n_ticks):
        audio = "run" if trace.cpu[i] == Occupant.AUDIO else "idle"
        if trace.cpu[i] == Occupant.AUX:
            aux = "run"
        elif trace.aux_sleeping[i]:
            aux = "sleep"
        else:
            aux = "idle"
        names = "+".join(by_tick.get(i + 1, []))
        out.write(f"{i + 1},{audio},{aux},{names}\n")
    blob = out.getvalue().encode("ascii")
    if hasattr(destination, "write"):
        destination.write(blob)
    else:
        with open(destination, "wb") as fh:
            fh.write(blob)
    return len(blob)


def read_trace_csv(source) -> SimTrace:
    """Inverse of write_trace_csv."""
    if hasattr(source, "read"):
        text = source.read()
        if isinstance(text, bytes):
            text = text.decode("ascii")
    else:
        with open(source, "rb") as fh:
            text = fh.read().decode("ascii")
    lines = text.splitlines()
    if not lines or not lines[0].startswith("# pulsekit-simtrace v1 "):
        raise FormatError("missing simtrace header line")
    fields = dict(kv.split("=") for kv in lines[0].split()[3:])
    config = SimConfig(
        ticks_per_block=int(fields["ticks_per_block"]),
        n_blocks=int(fields["n_blocks"]),
        callback_cost_ticks=int(fields["callback"]),
        inference_cost_ticks=int(fields["inference"]),
        trigger_every_blocks=int(fields["trigger_every"]),
        inference_on_audio_thread=bool(int(fields["on_audio_thread"])),
    )
    n_ticks = config.n_blocks * config.ticks_per_block
    if len(lines) != 2 + n_ticks:
        raise FormatError(f"expected {n_ticks} tick rows, found {len(lines) - 2}")
    cpu = np.zeros(n_ticks, dtype=np.int8)
    sleeping = np.zeros(n_ticks, dtype=bool)
    events: list[tuple[int, str]] = []
    for i, line in enumerate(lines[2:]):
        tick_s, audio, aux, names = line.split(",")
        if int(tick_s) != i + 1:
            raise FormatError(f"tick column out of order at row {i}")
        if audio == "run":
            cpu[i] = Occupant.AUDIO
        elif aux == "run":
            cpu[i] = Occupant.AUX
        sleeping[i] = aux == "sleep"
        if names:
            events.extend((i + 1, name) for name in names.split("+"))
    return SimTrace(config=config, cpu=cpu, aux_sleeping=sleeping, events=events)


def max_aux_latency(trace: SimTrace) -> int:
    """Worst ticks from an accepted trigger to its InferenceDone; 0 if none."""
    pending: int | None = None
    worst = 0
    missed = {t for t, n in trace.events if n == "MissedTrigger"}
    for tick, name in trace.events:  # already in causal order
        if name == "Trigger" and tick not in missed and pending is None:
            pending = tick
        elif name == "InferenceDone" and pending is not None:
            worst = max(worst, tick - pending)
            pending = None
    return worst


def sweep(base: SimConfig, ranges: dict[str, list]) -> list[dict]:
    """Simulate the cross product of parameter ranges over a base config.

    Returns one row per point with the config values and the headline
    schedulability outcomes.
    """
    for name, values in ranges.items():
        if name not in SimConfig.__dataclass_fields__:
            raise ConfigError(f"unknown sweep parameter {name!r}")
        if not list(values):
            raise ConfigError(f"empty range for {name!r}")

    names = sorted(ranges)
    rows: list[dict] = []

    def rec(i: int, overrides: dict):
        if i == len(names):
            cfg_kwargs = {**base.__dict__, **overrides}
            config = SimConfig(**cfg_kwargs)
            trace = simulate(config)
            row = dict(cfg_kwargs)
            row["underruns"] = trace.count("Underrun")
            row["missed_triggers"] = trace.count("MissedTrigger")
            row["completed_inferences"] = trace.count("InferenceDone")
            row["max_aux_latency_ticks"] = max_aux_latency(trace)
            row["inherent_latency_blocks"] = config.trigger_every_blocks
            rows.append(row)
            return
        for value in ranges[names[i]]:
            rec(i + 1, {**overrides, names[i]: value})

    rec(0, {})
    return rows


def sweep_to_csv(rows: list[dict], destination) -> int:
    if not rows:
        raise ConfigError("no sweep rows")
    cols = list(rows[0])
    out = io.StringIO()
    out.write(",".join(cols) + "\n")
    for row in rows:
        out.write(",".join(str(int(row[c])) for c in cols) + "\n")
    blob = out.getvalue().encode("ascii")
    if hasattr(destination, "write"):
        destination.write(blob)
    else:
        with open(destination, "wb") as fh:
            fh.write(blob)
    return len(blob)
