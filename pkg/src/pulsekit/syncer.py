"""Sample-level alignment of multi-device sensor logs.

Pulses are matched across devices by ordinal ``pulse_index``; the per-pulse
offset of a receiver is the difference between its observed local frame and
the transmitter's frame for the same pulse. Corrections are piecewise
constant: every local frame belonging to pulse segment k is shifted by that
segment's offset, with no resampling, so raw sensor values survive
unchanged.

Segment-boundary conflicts are deterministic. When a changing offset makes
two local samples land on the same output column, the later segment wins.
When it leaves output columns with no source sample, the gap is filled by
repeating the nearest earlier sample (or the nearest later one at the very
start of the overlap) and counted in the device's diagnostics.

Receivers may start recording before the transmitter; local frames that map
to negative transmitter time are trimmed, as is anything outside the range
covered by every device.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    InternalError,
    NoOverlapError,
    PulseMismatchError,
    TopologyError,
    ValidationError,
)
from .logfmt import Role, SensorLog


@dataclass
class DeviceDiagnostics:
    max_offset_step: int  # max |o_{k+1} - o_k|, a drift indicator
    gap_frames: int = 0  # output columns filled by repetition
    duplicate_frames: int = 0  # output columns written by more than one segment


@dataclass
class AlignmentSolution:
    """Per-device corrections plus the common overlap in TX time."""

    corrections: list[list[tuple[int, int]]]  # per device: (pulse_index, offset_frames)
    overlap: tuple[int, int]  # inclusive (start_frame, end_frame), TX timebase
    diagnostics: list[DeviceDiagnostics]
    tx_index: int  # position of the TX log in the input list


@dataclass
class AlignedMatrix:
    data: np.ndarray  # (total_channels, n_timesteps) float32
    row_labels: list[str] = field(default_factory=list)
    sample_rate_hz: float = 0.0
    timebase: int = 0  # device_id of the TX


def _segment_bounds(pulse_frames: np.ndarray, n_frames: int) -> tuple[np.ndarray, np.ndarray]:
    """Local [lo, hi) range governed by each pulse segment.

    Segment 0 extends back to local frame 0 and the last segment forward to
    the end of the recording.
    """
    lo = pulse_frames.copy()
    lo[0] = 0
    hi = np.empty_like(pulse_frames)
    hi[:-1] = pulse_frames[1:]
    hi[-1] = n_frames
    return lo, hi


def estimate_offsets(logs: list[SensorLog]) -> AlignmentSolution:
    """Match pulses by ordinal and compute per-segment offsets and overlap."""
    if not logs:
        raise TopologyError("no logs given")
    tx_candidates = [i for i, log in enumerate(logs) if log.header.role == Role.TX]
    if len(tx_candidates) != 1:
        raise TopologyError(f"need exactly one TX log, found {len(tx_candidates)}")
    tx_index = tx_candidates[0]
    tx = logs[tx_index]

    for log in logs:
        if log.header.session_id != tx.header.session_id:
            raise ValidationError(
                f"device {log.header.device_id} session_id {log.header.session_id} "
                f"!= TX session_id {tx.header.session_id}"
            )
        if log.header.sample_rate_hz != tx.header.sample_rate_hz:
            raise ValidationError(
                f"device {log.header.device_id} sample rate {log.header.sample_rate_hz} "
                f"!= TX rate {tx.header.sample_rate_hz}"
            )

    tx_pulse_ids = tx.pulse_indices()
    for log in logs:
        ids = log.pulse_indices()
        if len(ids) != len(tx_pulse_ids) or not np.array_equal(ids, tx_pulse_ids):
            raise PulseMismatchError(
                f"device {log.header.device_id} recorded {len(ids)} pulses, "
                f"TX recorded {len(tx_pulse_ids)}"
            )
    if len(logs) > 1 and len(tx_pulse_ids) == 0:
        raise PulseMismatchError("multi-device session but no pulses recorded")

    tx_frames = tx.pulse_frames()
    corrections: list[list[tuple[int, int]]] = []
    diagnostics: list[DeviceDiagnostics] = []
    first_valid: list[int] = []
    last_valid: list[int] = []

    for i, log in enumerate(logs):
        if i == tx_index:
            corrections.append([])
            diagnostics.append(DeviceDiagnostics(max_offset_step=0))
            first_valid.append(0)
            last_valid.append(log.n_frames - 1)
            continue
        frames = log.pulse_frames()
        offsets = frames - tx_frames
        corrections.append(
            [(int(k), int(o)) for k, o in zip(tx_pulse_ids, offsets)]
        )
        step = int(np.max(np.abs(np.diff(offsets)))) if len(offsets) > 1 else 0
        diagnostics.append(DeviceDiagnostics(max_offset_step=step))
        lo, hi = _segment_bounds(frames, log.n_frames)
        seg_first = lo - offsets
        seg_last = hi - 1 - offsets
        nonempty = hi > lo
        if not nonempty.any():
            raise NoOverlapError(f"device {log.header.device_id} has no frames")
        first_valid.append(int(seg_first[nonempty].min()))
        last_valid.append(int(seg_last[nonempty].max()))

    start = max(max(first_valid), 0)
    end = min(last_valid)
    if start > end:
        raise NoOverlapError(f"no common range: start {start} > end {end}")

    return AlignmentSolution(
        corrections=corrections,
        overlap=(start, end),
        diagnostics=diagnostics,
        tx_index=tx_index,
    )


def align(logs: list[SensorLog], solution: AlignmentSolution) -> AlignedMatrix:
    """Apply a solution, producing one channels x timesteps matrix in TX time."""
    if len(solution.corrections) != len(logs):
        raise InternalError(
            f"solution covers {len(solution.corrections)} devices, got {len(logs)} logs"
        )
    start, end = solution.overlap
    n_cols = end - start + 1
    total_rows = sum(log.header.n_channels for log in logs)
    data = np.zeros((total_rows, n_cols), dtype=np.float32)
    labels: list[str] = []

    row = 0
    for i, log in enumerate(logs):
        n_ch = log.header.n_channels
        labels.extend(f"{log.header.device_id}:{lbl}" for lbl in log.header.channel_labels)
        block = data[row : row + n_ch]
        if i == solution.tx_index:
            if start < 0 or end >= log.n_frames:
                raise InternalError("overlap exceeds TX range")
            block[:] = log.samples[:, start : end + 1]
            row += n_ch
            continue

        corr = solution.corrections[i]
        if len(corr) != len(log.sync_events):
            raise InternalError(
                f"device {log.header.device_id}: {len(corr)} corrections for "
                f"{len(log.sync_events)} pulses"
            )
        offsets = np.array([o for _, o in corr], dtype=np.int64)
        lo, hi = _segment_bounds(log.pulse_frames(), log.n_frames)
        written = np.zeros(n_cols, dtype=bool)
        duplicates = 0
        for k in range(len(offsets)):
            o = int(offsets[k])
            t_lo = max(int(lo[k]) - o, start)
            t_hi = min(int(hi[k]) - o, end + 1)
            if t_lo >= t_hi:
                continue
            src_lo, src_hi = t_lo + o, t_hi + o
            if src_lo < 0 or src_hi > log.n_frames:
                raise InternalError(
                    f"device {log.header.device_id} segment {k} reads outside its log"
                )
            cols = slice(t_lo - start, t_hi - start)
            duplicates += int(written[cols].sum())
            block[:, cols] = log.samples[:, src_lo:src_hi]
            written[cols] = True

        gaps = int(n_cols - written.sum())
        if gaps:
            idx = np.where(written)[0]
            if idx.size == 0:
                raise InternalError(
                    f"device {log.header.device_id} contributes nothing to the overlap"
                )
            # map every column to the nearest written column at or before it;
            # columns before the first written one borrow from it instead
            fill_from = idx[np.clip(np.searchsorted(idx, np.arange(n_cols), "right") - 1, 0, None)]
            missing = ~written
            block[:, missing] = block[:, fill_from[missing]]
        solution.diagnostics[i].gap_frames += gaps
        solution.diagnostics[i].duplicate_frames += duplicates
        row += n_ch

    return AlignedMatrix(
        data=data,
        row_labels=labels,
        sample_rate_hz=logs[solution.tx_index].header.sample_rate_hz,
        timebase=logs[solution.tx_index].header.device_id,
    )


def sync(logs: list[SensorLog]) -> AlignedMatrix:
    """Convenience wrapper: estimate offsets, then align."""
    return align(logs, estimate_offsets(logs))
