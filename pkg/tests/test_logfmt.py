import io
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pulsekit.errors import FormatError, TruncationError, ValidationError
from pulsekit.logfmt import (
    LogWriteError,
    Role,
    SensorLog,
    parse_log,
    write_log,
)

from conftest import make_log


def assemble_reference_bytes() -> bytes:
    """Hand-assembled file: 2 channels, 4 frames, one pulse at frame 2.

    Built field by field from the format table, independently of write_log.
    """
    out = b"BSLG"
    out += bytes([1])  # version
    out += struct.pack("<H", 7)  # device_id
    out += struct.pack("<B", 1)  # role RX
    out += struct.pack("<d", 500.0)  # sample_rate_hz
    out += struct.pack("<I", 2)  # n_channels
    out += struct.pack("<Q", 100)  # pulse_period_frames
    out += struct.pack("<Q", 42)  # session_id
    out += struct.pack("<Q", 4)  # n_frames
    out += struct.pack("<Q", 1)  # n_sync_events
    for label in ("acc", "piezo"):
        out += struct.pack("<H", len(label)) + label.encode()
    for value in (0.0, 0.25, -0.5, 1.0):  # channel 0
        out += struct.pack("<f", value)
    for value in (0.125, -1.0, 0.75, 0.0):  # channel 1
        out += struct.pack("<f", value)
    out += struct.pack("<QQ", 0, 2)  # pulse 0 at frame 2
    return out


def reference_log() -> SensorLog:
    return make_log(
        device_id=7,
        role=Role.RX,
        sample_rate_hz=500.0,
        samples=[[0.0, 0.25, -0.5, 1.0], [0.125, -1.0, 0.75, 0.0]],
        pulses=[(0, 2)],
        pulse_period=100,
        session_id=42,
        labels=["acc", "piezo"],
    )


def test_write_matches_hand_assembled_bytes():
    sink = io.BytesIO()
    n = write_log(reference_log(), sink)
    expected = assemble_reference_bytes()
    assert sink.getvalue() == expected
    assert n == len(expected)


def test_parse_hand_assembled_bytes():
    log = parse_log(assemble_reference_bytes())
    assert log == reference_log()


def test_empty_log_fixed_size():
    log = make_log(samples=np.zeros((1, 0), dtype=np.float32), labels=["ch0"])
    sink = io.BytesIO()
    n = write_log(log, sink)
    # 5 magic+version, 47 fixed header fields, 2+3 for the one label
    assert n == 5 + 47 + 5
    assert parse_log(sink.getvalue()) == log


def test_round_trip_identity():
    log = make_log(
        samples=np.linspace(-1, 1, 30, dtype=np.float32).reshape(3, 10),
        pulses=[(0, 1), (1, 5), (2, 9)],
        role=Role.RX,
    )
    sink = io.BytesIO()
    write_log(log, sink)
    assert parse_log(sink.getvalue()) == log


@settings(max_examples=50, deadline=None)
@given(
    n_channels=st.integers(1, 4),
    n_frames=st.integers(0, 40),
    device_id=st.integers(0, 0xFFFF),
    session_id=st.integers(0, 2**64 - 1),
    data=st.data(),
)
def test_round_trip_property(n_channels, n_frames, device_id, session_id, data):
    samples = np.array(
        data.draw(
            st.lists(
                st.lists(
                    st.floats(-1, 1, width=32, allow_nan=False),
                    min_size=n_frames,
                    max_size=n_frames,
                ),
                min_size=n_channels,
                max_size=n_channels,
            )
        ),
        dtype=np.float32,
    ).reshape(n_channels, n_frames)
    n_pulses = data.draw(st.integers(0, min(3, n_frames)))
    frames = sorted(data.draw(st.sets(st.integers(0, n_frames - 1), min_size=n_pulses, max_size=n_pulses))) if n_frames else []
    log = make_log(
        device_id=device_id,
        session_id=session_id,
        samples=samples,
        pulses=list(enumerate(frames)),
        role=Role.RX,
    )
    sink = io.BytesIO()
    write_log(log, sink)
    parsed = parse_log(sink.getvalue())
    assert parsed == log
    assert parsed.samples.tobytes() == log.samples.tobytes()


def test_bad_magic():
    blob = b"XXXX" + assemble_reference_bytes()[4:]
    with pytest.raises(FormatError):
        parse_log(blob)


def test_bad_version():
    blob = bytearray(assemble_reference_bytes())
    blob[4] = 9
    with pytest.raises(FormatError):
        parse_log(bytes(blob))


def test_truncated_mid_samples():
    blob = assemble_reference_bytes()
    with pytest.raises(TruncationError) as err:
        parse_log(blob[: len(blob) - 20])
    assert err.value.expected == len(blob)
    assert err.value.actual == len(blob) - 20


def test_trailing_bytes_rejected():
    with pytest.raises(FormatError, match="trailing"):
        parse_log(assemble_reference_bytes() + b"\x00")


def test_non_monotonic_sync_events():
    blob = bytearray(assemble_reference_bytes())
    # add a second event equal to the first: counts as non-monotonic
    blob[44:52] = struct.pack("<Q", 2)  # n_sync_events = 2
    blob += struct.pack("<QQ", 0, 2)
    with pytest.raises(ValidationError):
        parse_log(bytes(blob))


def test_event_frame_beyond_samples():
    blob = bytearray(assemble_reference_bytes())
    blob[-8:] = struct.pack("<Q", 4)  # frame_index == n_frames
    with pytest.raises(ValidationError):
        parse_log(bytes(blob))


def test_hostile_header_checked_before_allocation():
    blob = bytearray(assemble_reference_bytes())
    blob[36:44] = struct.pack("<Q", 2**60)  # absurd n_frames
    with pytest.raises(TruncationError) as err:
        parse_log(bytes(blob))
    assert err.value.expected > 2**60


@pytest.mark.parametrize(
    "offset,width,value",
    [
        (16, 4, 0),  # n_channels = 0
        (16, 4, 3),  # n_channels inconsistent with labels/payload
        (36, 8, 5),  # n_frames inconsistent
        (44, 8, 7),  # n_sync_events inconsistent
        (52, 2, 60000),  # label length runs past the payload
    ],
)
def test_rejection_completeness(offset, width, value):
    """Mutating any single header length field must produce an error."""
    blob = bytearray(assemble_reference_bytes())
    blob[offset : offset + width] = value.to_bytes(width, "little")
    with pytest.raises((FormatError, ValidationError)):
        parse_log(bytes(blob))


def test_write_failure_reports_progress():
    class FailingSink:
        def __init__(self, after):
            self.after = after
            self.written = 0

        def write(self, chunk):
            if self.written + len(chunk) > self.after:
                raise OSError("disk full")
            self.written += len(chunk)

    sink = FailingSink(after=20)
    with pytest.raises(LogWriteError) as err:
        write_log(reference_log(), sink)
    assert 0 < err.value.bytes_written <= 20


def test_invalid_log_refused_on_write():
    log = reference_log()
    log.header.n_channels = 3  # now inconsistent with samples
    with pytest.raises(ValidationError):
        write_log(log, io.BytesIO())
