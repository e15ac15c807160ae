import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pulsekit.errors import ConfigError
from pulsekit.logfmt import Role, write_log
from pulsekit.synthgen import (
    DampedSine,
    ImpulseTrain,
    SessionConfig,
    WhiteNoise,
    format_signal_spec,
    generate_session,
    parse_signal_spec,
    render_channel,
)


def session(**overrides) -> SessionConfig:
    base = dict(
        n_devices=2,
        channels_per_device=1,
        n_frames=2500,
        sample_rate_hz=1000.0,
        pulse_period_frames=1000,
        start_offset_frames=[0, 50],
        drift_ppm=[0.0, 0.0],
        pulse_jitter_frames=0,
        signal_specs=[DampedSine(50.0, 0.5), WhiteNoise(0.5)],
        seed=7,
    )
    base.update(overrides)
    return SessionConfig(**base)


def test_pulse_frames_match_direct_formula():
    logs, truth = generate_session(session())
    assert [e.frame_index for e in logs[0].sync_events] == [0, 1000, 2000]
    assert [e.frame_index for e in logs[1].sync_events] == [50, 1050, 2050]
    assert truth.offsets.tolist() == [[0, 0, 0], [50, 50, 50]]
    assert truth.offset(1, 2) == 50


def test_identity_config_gives_identical_pulses():
    logs, truth = generate_session(session(start_offset_frames=[0, 0]))
    assert [e.frame_index for e in logs[0].sync_events] == [
        e.frame_index for e in logs[1].sync_events
    ]
    assert (truth.offsets == 0).all()


def test_determinism_byte_identical():
    def dump():
        logs, _ = generate_session(session(pulse_jitter_frames=3, drift_ppm=[0, 80]))
        blobs = []
        for log in logs:
            sink = io.BytesIO()
            write_log(log, sink)
            blobs.append(sink.getvalue())
        return blobs

    assert dump() == dump()


def test_roles_and_metadata():
    logs, _ = generate_session(session())
    assert logs[0].header.role == Role.TX
    assert logs[1].header.role == Role.RX
    assert {log.header.session_id for log in logs} == {7}
    assert {log.header.pulse_period_frames for log in logs} == {1000}


def test_session_too_short():
    with pytest.raises(ConfigError, match="too short"):
        generate_session(session(start_offset_frames=[0, 600], n_frames=2500))


def test_drift_makes_offsets_grow():
    logs, truth = generate_session(
        session(n_frames=20500, drift_ppm=[0, 500], start_offset_frames=[0, 10])
    )
    offsets = truth.offsets[1]
    assert offsets[0] == 10
    assert offsets[-1] > offsets[0]  # 500 ppm over 20 pulse periods
    assert (np.diff(offsets) >= 0).all()


def test_tx_invariants_enforced():
    with pytest.raises(ConfigError):
        session(start_offset_frames=[5, 50]).validate()
    with pytest.raises(ConfigError):
        session(drift_ppm=[1.0, 0.0]).validate()
    with pytest.raises(ConfigError):
        session(pulse_jitter_frames=500).validate()  # period must exceed 2x jitter


def test_channel_regeneration_is_pure():
    cfg = session(
        channels_per_device=2,
        signal_specs=[
            DampedSine(50.0, 0.5),
            WhiteNoise(0.5),
            ImpulseTrain(10.0, 0.8),
            WhiteNoise(0.2),
        ],
    )
    logs, _ = generate_session(cfg)
    for dev in range(2):
        for ch in range(2):
            spec = cfg.signal_specs[dev * 2 + ch]
            again = render_channel(spec, cfg, dev, ch)
            assert np.array_equal(again, logs[dev].samples[ch])


def test_noise_streams_differ_per_channel():
    cfg = session(
        channels_per_device=2,
        signal_specs=[WhiteNoise(0.5)] * 4,
    )
    logs, _ = generate_session(cfg)
    assert not np.array_equal(logs[0].samples[0], logs[0].samples[1])
    assert not np.array_equal(logs[0].samples[0], logs[1].samples[0])


def test_impulse_train_rate():
    cfg = session(signal_specs=[ImpulseTrain(10.0, 0.8), WhiteNoise(0.1)])
    logs, _ = generate_session(cfg)
    hits = np.flatnonzero(logs[0].samples[0])
    # 10 Hz at 1 kHz over 2.5 s: hits at 0, 100, 200, ...
    assert hits.tolist() == list(range(0, 2500, 100))
    assert np.allclose(logs[0].samples[0][hits], 0.8)


def test_damped_sine_zero_before_process_start():
    cfg = session(
        start_offset_frames=[0, 100],
        signal_specs=[WhiteNoise(0.5), DampedSine(50.0, 0.5)],
    )
    logs, _ = generate_session(cfg)
    # RX local frames before its offset map to negative TX time
    assert (logs[1].samples[0][:100] == 0).all()
    assert logs[1].samples[0][100:110].any()


@settings(max_examples=40, deadline=None)
@given(
    n_devices=st.integers(1, 4),
    jitter=st.integers(0, 3),
    drift=st.floats(-200, 200),
    seed=st.integers(0, 2**32),
)
def test_matched_pulse_counts_property(n_devices, jitter, drift, seed):
    cfg = session(
        n_devices=n_devices,
        start_offset_frames=[0] + [37] * (n_devices - 1),
        drift_ppm=[0.0] + [drift] * (n_devices - 1),
        pulse_jitter_frames=jitter,
        signal_specs=[WhiteNoise(0.5)] * n_devices,
        seed=seed,
    )
    logs, truth = generate_session(cfg)
    counts = {len(log.sync_events) for log in logs}
    assert counts == {truth.n_pulses}
    if jitter == 0 and drift == 0:
        assert all(len(set(row)) == 1 for row in truth.offsets.tolist())


def test_signal_spec_parsing_round_trip():
    for spec in (DampedSine(5.0, 0.5), ImpulseTrain(3.0, 0.8), WhiteNoise(0.2)):
        assert parse_signal_spec(format_signal_spec(spec)) == spec
    with pytest.raises(ConfigError):
        parse_signal_spec("sawtooth:1.0")
    with pytest.raises(ConfigError):
        parse_signal_spec("damped_sine:nope:1")
