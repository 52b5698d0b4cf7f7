"""Streaming engine tests: batch equivalence, lookahead gating, baselines."""

from __future__ import annotations

import numpy as np
import pytest

from affectloop.catalog import load_seed_catalog
from affectloop.errors import ValidationError
from affectloop.features import Baseline, eda_decompose, smooth
from affectloop.pipeline import (
    StreamProcessor,
    analyze_recording,
    baseline_from_signals,
    calibration_baseline,
    lookahead_s,
)
from affectloop.playersim import (
    PhaseConfig,
    PhaseSchedule,
    build_protocol_schedule,
    default_model,
    generate_session,
)
from affectloop.session import GameEvent, UniformSeries

from conftest import scr_bump


@pytest.fixture(scope="module")
def seed_cat():
    return load_seed_catalog()


@pytest.fixture(scope="module")
def quiet_baseline():
    rec = generate_session(
        default_model(seed=22, noise_sigma_eda_us=0.0), PhaseSchedule((), 70.0)
    )
    eda = UniformSeries(0.0, 25.0, rec.stream("sim", "eda").values)
    pulse = UniformSeries(0.0, 100.0, rec.stream("sim", "pulse").values)
    return baseline_from_signals(eda, pulse)


BASE = Baseline(
    hr_mean=70.0, hr_sd=3.0, scl_mean=2.0, scl_sd=0.05, scr_rate_per_min=0.0, duration_s=60.0
)


def feed_constant_session(proc, duration_s, hr_bpm=70.0, eda_us=2.0):
    proc.declare("dev", "hr", 4.0)
    proc.declare("dev", "eda", 25.0)
    for k in range(int(duration_s * 4)):
        proc.feed("dev", "hr", k / 4.0, hr_bpm)
    for k in range(int(duration_s * 25)):
        proc.feed("dev", "eda", k / 25.0, eda_us)


def test_constant_inputs_sit_at_midpoint():
    proc = StreamProcessor(BASE)
    feed_constant_session(proc, 40.0)
    live = proc.poll()
    tail = proc.finalize()
    states = live + tail
    assert states and states[0].t == 5.0
    assert [s.t for s in states] == [float(k) for k in range(5, 40)]
    for s in states:
        assert abs(s.arousal - 0.5) < 1e-9
        assert s.level == "medium"
        assert s.valence is None and s.valence_confidence == 0.0


def test_poll_respects_lookahead():
    proc = StreamProcessor(BASE)
    feed_constant_session(proc, 24.0)
    assert proc.poll() == []  # horizon 24 s cannot finalize even t=5
    for k in range(int(24 * 4), int(27 * 4)):
        proc.feed("dev", "hr", k / 4.0, 70.0)
    for k in range(int(24 * 25), int(27 * 25)):
        proc.feed("dev", "eda", k / 25.0, 2.0)
    live = proc.poll()
    assert live and max(s.t for s in live) <= proc.horizon() - lookahead_s() + 1e-9


def test_streaming_matches_batch_bit_for_bit(seed_cat, quiet_baseline):
    sched = PhaseSchedule(
        (
            GameEvent(25.0, "pattern_event", ("enemies",)),
            GameEvent(45.0, "pattern_event", ("enemies",)),
            GameEvent(60.0, "pattern_event", ("time_limit",)),
        ),
        120.0,
    )
    rec = generate_session(default_model(seed=21), sched)
    batch = analyze_recording(rec, quiet_baseline, seed_cat)
    assert len(batch) > 80

    proc = StreamProcessor(quiet_baseline, seed_cat)
    proc.declare("sim", "pulse", 100.0)
    proc.declare("sim", "eda", 25.0)
    pulse = rec.stream("sim", "pulse")
    eda = rec.stream("sim", "eda")
    live = []
    for sec in range(120):
        for k in range(sec * 100, (sec + 1) * 100):
            proc.feed("sim", "pulse", float(pulse.t[k]), float(pulse.values[k]))
        for k in range(sec * 25, (sec + 1) * 25):
            proc.feed("sim", "eda", float(eda.t[k]), float(eda.values[k]))
        for ev in rec.events:
            if sec <= ev.t < sec + 1:
                proc.feed_event(ev)
        live.extend(proc.poll())
    tail = proc.finalize()
    assert len(live) > 60  # most states were emitted before the end of input
    assert live + tail == batch


def test_states_react_to_a_burst(quiet_baseline, seed_cat):
    events = tuple(
        GameEvent(t, "pattern_event", ("enemies",)) for t in (60.0, 63.0, 66.0, 69.0, 72.0)
    )
    rec = generate_session(
        default_model(seed=5, habituation_gamma=1.0), PhaseSchedule(events, 140.0)
    )
    states = analyze_recording(rec, quiet_baseline, seed_cat)
    before = [s.arousal for s in states if 30 <= s.t <= 55]
    during = [s.arousal for s in states if 64 <= s.t <= 85]
    assert np.mean(during) > np.mean(before) + 0.05
    assert max(during) > 0.6
    # the enemy pattern is valence-negative in the catalog
    tagged = [s for s in states if s.valence is not None]
    assert tagged and all(s.valence < 0 for s in tagged)
    assert {s.valence_confidence for s in tagged} == {0.5}


def test_device_hr_bypasses_beat_detection():
    proc = StreamProcessor(BASE)
    proc.declare("band", "hr", 4.0)
    proc.declare("gsr", "eda", 25.0)
    rng = np.random.default_rng(3)
    for k in range(40 * 4):
        proc.feed("band", "hr", k / 4.0, 76.0)  # +2 sd above baseline
    for k in range(40 * 25):
        proc.feed("gsr", "eda", k / 25.0, 2.0 + 1e-4 * rng.standard_normal())
    states = proc.finalize()
    assert states
    for s in states:
        assert abs(s.arousal - (0.5 + 2.0 / 18.0)) < 0.02


def test_declare_and_feed_validation():
    proc = StreamProcessor(BASE)
    with pytest.raises(ValidationError):
        proc.declare("d", "ecg", 100.0)
    with pytest.raises(ValidationError):
        proc.declare("d", "pulse", 30.0)
    with pytest.raises(ValidationError):
        proc.declare("d", "eda", 2.0)
    proc.declare("d", "eda", 25.0)
    proc.declare("d", "eda", 25.0)  # idempotent redeclare is fine
    with pytest.raises(ValidationError):
        proc.declare("other", "eda", 25.0)
    with pytest.raises(ValidationError):
        proc.feed("nobody", "eda", 0.0, 2.0)
    proc.feed("d", "eda", 0.0, 2.0)
    with pytest.raises(ValidationError, match="cadence"):
        proc.feed("d", "eda", 0.5, 2.0)
    with pytest.raises(ValidationError):
        proc.feed("d", "eda", 1 / 25.0, -1.0)
    proc.declare("d", "hr", 4.0)
    with pytest.raises(ValidationError):
        proc.feed("d", "hr", 0.0, 300.0)
    with pytest.raises(ValidationError):
        StreamProcessor(BASE, eval_period_s=0.0)
    with pytest.raises(ValidationError):
        StreamProcessor(BASE, window_s=0.2)
    with pytest.raises(ValidationError):
        StreamProcessor("not a baseline")


def test_incremental_tonic_cache_is_exact():
    rate = 25.0
    n = int(90 * rate)
    t = np.arange(n) / rate
    rng = np.random.default_rng(11)
    values = (
        2.0
        + 0.001 * t
        + scr_bump(t, 20.0, 0.4)
        + scr_bump(t, 55.0, 0.2)
        + 0.003 * rng.standard_normal(n)
    )
    proc = StreamProcessor(BASE)
    proc.declare("d", "eda", rate)
    fed = 0
    while fed < n:
        chunk = int(rng.integers(1, 400))
        for k in range(fed, min(n, fed + chunk)):
            proc.feed("d", "eda", t[k], values[k])
        fed += chunk
        proc._extend_eda(final=False)
    proc._extend_eda(final=True)
    series = UniformSeries(0.0, rate, values)
    smoothed = smooth(series, 0.75)
    tonic, phasic = eda_decompose(smoothed, 20.0)
    np.testing.assert_array_equal(proc._smoothed, smoothed.values)
    np.testing.assert_array_equal(proc._tonic, tonic.values)
    got = {(s.onset_t, s.amplitude_us) for s in proc._scrs}
    from affectloop.features import detect_scrs

    want = {(s.onset_t, s.amplitude_us) for s in detect_scrs(phasic)}
    assert got == want and len(want) >= 2


def test_calibration_baseline_from_protocol():
    sched = build_protocol_schedule(PhaseConfig(phases=("calibration",), seed=6))
    rec = generate_session(default_model(seed=6), sched)
    base = calibration_baseline(rec)
    assert 58.0 <= base.hr_mean <= 75.0
    assert abs(base.scl_mean - 2.0) < 0.3
    assert base.duration_s >= 60.0


def test_calibration_baseline_quiescent():
    sched = PhaseSchedule((GameEvent(0.0, "phase_marker", ("calibration",)),), 70.0)
    rec = generate_session(default_model(seed=2, noise_sigma_eda_us=0.0), sched)
    base = calibration_baseline(rec)
    assert abs(base.hr_mean - 60.0) < 0.5
    assert base.scr_rate_per_min == 0.0


def test_calibration_baseline_requires_marker():
    rec = generate_session(default_model(seed=2), PhaseSchedule((), 70.0))
    with pytest.raises(ValidationError, match="calibration"):
        calibration_baseline(rec)
