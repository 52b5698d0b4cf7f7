"""Loop engine tests: permutation statistics and the closed control cycle."""

from __future__ import annotations

import numpy as np
import pytest

from affectloop.catalog import (
    AffectAnnotation,
    Catalog,
    DesignPattern,
    load_seed_catalog,
)
from affectloop.control import ControllerConfig
from affectloop.errors import (
    ConfigError,
    DenseSessionError,
    FormatError,
    ValidationError,
)
from affectloop.features import eda_decompose, smooth
from affectloop.loop import (
    CorrelationReport,
    PatternStats,
    correlate_events,
    read_loop_trace,
    read_report,
    run_closed_loop,
    time_in_band,
    write_loop_trace,
    write_report,
)
from affectloop.playersim import PhaseSchedule, default_model, generate_session
from affectloop.session import GameEvent, UniformSeries, write_session

from conftest import scr_bump


@pytest.fixture(scope="module")
def seed_cat():
    return load_seed_catalog()


def session_phasic(rec, smooth_window_s=0.75):
    eda = rec.stream("sim", "eda")
    series = UniformSeries(float(eda.t[0]), 25.0, eda.values)
    _, phasic = eda_decompose(smooth(series, smooth_window_s))
    return phasic


def events_every(pid, start, step, count, duration=None):
    evs = tuple(GameEvent(start + step * k, "pattern_event", (pid,)) for k in range(count))
    dur = duration if duration is not None else evs[-1].t + 20.0
    return PhaseSchedule(evs, dur)


# ---------------------------------------------------------------------------
# correlate_events


def test_responding_pattern_is_significant(seed_cat):
    sched = events_every("enemies", 30.0, 25.0, 8)
    rec = generate_session(default_model(seed=14, habituation_gamma=1.0), sched)
    report = correlate_events(rec, session_phasic(rec), seed_cat, n_permutations=500, seed=1)
    e = report["enemies"]
    assert e.n_events == 8
    assert e.p_value < 0.01
    assert e.mean_response_us > e.null_mean_us + 0.05
    assert e.effect_size_d > 3.0


def test_zero_gain_pattern_is_null(seed_cat):
    # traversing has gain 0: events leave no physiological trace
    hits = 0
    for s in range(12):
        sched = events_every("traversing", 25.0, 18.0, 6)
        rec = generate_session(default_model(seed=100 + s), sched)
        report = correlate_events(
            rec, session_phasic(rec), seed_cat, n_permutations=200, seed=s
        )
        if report["traversing"].p_value > 0.05:
            hits += 1
    assert hits >= 10  # >= ~90 percent behave as null


def test_absent_pattern_missing_and_unknown_rejected(seed_cat):
    sched = events_every("enemies", 30.0, 25.0, 3)
    rec = generate_session(default_model(seed=3), sched)
    report = correlate_events(rec, session_phasic(rec), seed_cat, n_permutations=120)
    assert "pick_ups" not in report
    assert "enemies" in report
    bad = generate_session(
        default_model(seed=3, pattern_gains={"mystery": 0.2}),
        PhaseSchedule((GameEvent(30.0, "pattern_event", ("mystery",)),), 60.0),
    )
    with pytest.raises(ValidationError, match="mystery"):
        correlate_events(bad, session_phasic(bad), seed_cat, n_permutations=120)


def test_empty_session_gives_empty_report(seed_cat):
    rec = generate_session(default_model(seed=4), PhaseSchedule((), 60.0))
    report = correlate_events(rec, session_phasic(rec), seed_cat, n_permutations=120)
    assert report.entries == ()


def test_dense_session_raises(seed_cat):
    sched = events_every("enemies", 8.0, 6.0, 12, duration=86.0)
    rec = generate_session(default_model(seed=5), sched)
    with pytest.raises(DenseSessionError):
        correlate_events(rec, session_phasic(rec), seed_cat, n_permutations=120)


def test_correlate_determinism_and_validation(seed_cat):
    sched = events_every("enemies", 30.0, 25.0, 4)
    rec = generate_session(default_model(seed=6), sched)
    ph = session_phasic(rec)
    a = correlate_events(rec, ph, seed_cat, n_permutations=150, seed=9)
    b = correlate_events(rec, ph, seed_cat, n_permutations=150, seed=9)
    assert a == b
    c = correlate_events(rec, ph, seed_cat, n_permutations=150, seed=10)
    assert c["enemies"].p_value == a["enemies"].p_value or c != a
    with pytest.raises(ValidationError):
        correlate_events(rec, ph, seed_cat, n_permutations=50)
    with pytest.raises(ValidationError):
        correlate_events(rec, ph, seed_cat, response_window=(6.0, 1.0))


def test_effect_size_tracks_known_amplitude(seed_cat):
    # hand-built phasic: noise floor plus clean kernels at known times
    rate = 25.0
    n = int(400 * rate)
    t = np.arange(n) / rate
    rng = np.random.default_rng(8)
    noise = 0.002 * rng.standard_normal(n)
    times = [40.0 + 22.0 * k for k in range(12)]
    sig = noise + sum(scr_bump(t, ti + 1.5, 0.05) for ti in times)
    rec = generate_session(
        default_model(seed=9),
        PhaseSchedule(
            tuple(GameEvent(ti, "pattern_event", ("enemies",)) for ti in times), 400.0
        ),
        rates={"eda": rate},
    )
    phasic = UniformSeries(0.0, rate, sig)
    report = correlate_events(rec, phasic, seed_cat, n_permutations=300, seed=2)
    e = report["enemies"]
    assert abs(e.mean_response_us - 0.05) < 0.01
    assert e.p_value < 0.01


def test_report_roundtrip_and_errors():
    rep = CorrelationReport(
        (
            PatternStats("enemies", 8, 0.09, 0.004, 1 / 301, 4.2),
            PatternStats("time_limit", 3, 0.02, 0.004, 0.2, 0.5),
        ),
        (1.0, 6.0),
        300,
        7,
    )
    text = write_report(rep)
    assert read_report(text) == rep
    with pytest.raises(FormatError):
        read_report("C enemies 8 0.1 0.0 0.5 1.0\n")  # no W header
    with pytest.raises(FormatError):
        read_report("W 1.0 6.0 300 7\nC enemies 8 0.1\n")
    with pytest.raises(FormatError):
        read_report("W 1.0 6.0 300 7\nX what\n")
    with pytest.raises(ValidationError):
        CorrelationReport(
            (PatternStats("b", 1, 0.1, 0.0, 0.5, 1.0), PatternStats("a", 1, 0.1, 0.0, 0.5, 1.0)),
            (1.0, 6.0),
            300,
            7,
        )
    with pytest.raises(ValidationError):
        PatternStats("a", 0, 0.1, 0.0, 0.5, 1.0)


# ---------------------------------------------------------------------------
# closed loop


def test_disabled_controller_reduces_to_open_loop(seed_cat):
    model = default_model(seed=42)
    trace = run_closed_loop(
        model,
        ControllerConfig(band=(0.0, 1.0)),
        seed_cat,
        duration_s=90.0,
        initial_arousal=0.0,
    )
    assert trace.directives == [] and trace.events == []
    rec = generate_session(model, PhaseSchedule((), 90.0))
    np.testing.assert_array_equal(trace.pulse.values, rec.stream("sim", "pulse").values)
    np.testing.assert_array_equal(trace.eda.values, rec.stream("sim", "eda").values)


def test_closed_loop_is_bit_reproducible(seed_cat):
    cfg = ControllerConfig()
    a = run_closed_loop(default_model(), cfg, seed_cat, duration_s=120.0, seed=42)
    b = run_closed_loop(default_model(), cfg, seed_cat, duration_s=120.0, seed=42)
    assert a.states == b.states
    assert a.directives == b.directives
    assert a.events == b.events
    np.testing.assert_array_equal(a.pulse.values, b.pulse.values)
    np.testing.assert_array_equal(a.eda.values, b.eda.values)
    c = run_closed_loop(default_model(), cfg, seed_cat, duration_s=120.0, seed=43)
    assert not np.array_equal(a.eda.values, c.eda.values)


def test_closed_loop_settles_into_band(seed_cat):
    cfg = ControllerConfig()
    trace = run_closed_loop(default_model(), cfg, seed_cat, duration_s=240.0, seed=3)
    frac = time_in_band(trace, t_lo=120.0, t_hi=240.0)
    assert frac >= 0.7
    ts = [d.t for d in trace.directives]
    assert all(b - a >= cfg.cooldown_s - 1e-9 for a, b in zip(ts, ts[1:]))
    # the estimate lags physiology, so early elevated states trigger easing
    assert all(d.action == "ease_off" for d in trace.directives)


def test_closed_loop_counters_low_arousal(seed_cat):
    # a plant biased low: estimated arousal sits under the band until the
    # controller starts injecting events
    cfg = ControllerConfig(band=(0.55, 0.95))
    trace = run_closed_loop(
        default_model(seed=8),
        cfg,
        seed_cat,
        duration_s=150.0,
        initial_arousal=0.0,
    )
    injected = [d for d in trace.directives if d.action == "inject_event"]
    assert injected, "controller never tried to raise arousal"
    assert all(d.pattern_id == "competition" for d in injected)
    assert [e.pattern_ids for e in trace.events] == [("competition",)] * len(trace.events)
    # injections drive the estimate up over the run
    early = [s.arousal for s in trace.states if s.t <= 40.0]
    late = [s.arousal for s in trace.states if s.t >= 90.0]
    assert np.mean(late) > np.mean(early)


def test_closed_loop_validation(seed_cat):
    with pytest.raises(ValidationError):
        run_closed_loop(default_model(), ControllerConfig(), seed_cat, duration_s=30.0)
    calm_only = Catalog(
        {"calm": DesignPattern("calm", "Calm", AffectAnnotation("lower", "positive", 1.0, 4.0))}
    )
    with pytest.raises(ConfigError):
        run_closed_loop(default_model(), ControllerConfig(), calm_only, duration_s=60.0)
    # wide-open band never fires, so the same catalog is acceptable
    trace = run_closed_loop(
        default_model(), ControllerConfig(band=(0.0, 1.0)), calm_only, duration_s=60.0
    )
    assert trace.directives == []


def test_trace_file_roundtrip(seed_cat):
    trace = run_closed_loop(
        default_model(), ControllerConfig(), seed_cat, duration_s=90.0, seed=7
    )
    text = write_loop_trace(trace)
    states, directives, events = read_loop_trace(text)
    assert states == trace.states
    assert directives == trace.directives
    assert events == trace.events
    with pytest.raises(FormatError):
        read_loop_trace("Z 1 2 3\n")
    with pytest.raises(FormatError):
        read_loop_trace("E 1.0 pattern_event enemies not_a_number\n")
    with pytest.raises(FormatError):
        read_loop_trace("E 1.0 no_such_kind enemies -\n")


def test_time_in_band_bounds(seed_cat):
    trace = run_closed_loop(
        default_model(), ControllerConfig(), seed_cat, duration_s=90.0, seed=7
    )
    assert 0.0 <= time_in_band(trace) <= 1.0
    with pytest.raises(ValidationError):
        time_in_band(trace, t_lo=5000.0)
