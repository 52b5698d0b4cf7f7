"""Shared test helpers: small hand-rolled builders independent of the code under test."""

from __future__ import annotations

import numpy as np

from affectloop.session import (
    DeviceDecl,
    GameEvent,
    SessionMeta,
    SessionRecording,
    Stream,
)

EPOCH = "2024-05-01T10:00:00"


def make_recording(streams=(), events=(), subject="s01", epoch=EPOCH):
    """Assemble a SessionRecording from (device, channel, t, values) tuples."""
    decls = []
    smap = {}
    for dev, ch, t, v in streams:
        t = np.asarray(t, dtype=float)
        v = np.asarray(v, dtype=float)
        rate = 1.0 / np.median(np.diff(t)) if len(t) > 1 else 1.0
        decls.append(DeviceDecl(dev, ch, round(float(rate), 6)))
        smap[(dev, ch)] = Stream(dev, ch, t, v)
    return SessionRecording(
        meta=SessionMeta(subject, epoch, tuple(decls)),
        streams=smap,
        events=list(events),
    )


def grid(rate_hz, duration_s, t0=0.0):
    """Quantized uniform time grid matching the serialized 6-decimal format."""
    n = int(round(duration_s * rate_hz))
    return np.round(t0 + np.arange(n) / rate_hz, 6)


def pulse_wave(beat_times, rate_hz=100.0, duration_s=None, width_s=0.03, amp=1.0, t0=0.0):
    """Synthetic pulse wave: one Gaussian bump of known center per beat.

    Built directly from the bump formula so detector tests have an
    independent ground truth for every beat time.
    """
    from affectloop.session import UniformSeries

    beat_times = np.asarray(beat_times, dtype=float)
    if duration_s is None:
        duration_s = float(beat_times.max()) + 1.0
    n = int(round(duration_s * rate_hz))
    t = t0 + np.arange(n) / rate_hz
    v = np.zeros(n)
    for b in beat_times:
        lo = np.searchsorted(t, b - 6 * width_s)
        hi = np.searchsorted(t, b + 6 * width_s)
        v[lo:hi] += amp * np.exp(-0.5 * ((t[lo:hi] - b) / width_s) ** 2)
    return UniformSeries(t0, rate_hz, v)


def steady_beats(bpm, duration_s, t_first=0.5):
    """Beat schedule at constant rate, stopping short of the series end."""
    period = 60.0 / bpm
    return np.arange(t_first, duration_s - 0.3, period)


def ramp_beats(bpm_start, bpm_end, duration_s, t_first=0.5):
    """Beat times for a linear bpm ramp via fine-grained phase integration."""
    dt = 1e-4
    t_ax = np.arange(t_first, duration_s - 0.3, dt)
    bpm = bpm_start + (bpm_end - bpm_start) * (t_ax - t_first) / (duration_s - t_first)
    phase = np.concatenate([[0.0], np.cumsum(bpm / 60.0 * dt)])[:-1]
    beats = [t_first]
    k = 1
    for i in range(1, len(t_ax)):
        if phase[i] >= k:
            # linear interpolation of the crossing instant
            frac = (k - phase[i - 1]) / (phase[i] - phase[i - 1])
            beats.append(t_ax[i - 1] + frac * dt)
            k += 1
    return np.asarray(beats)


def scr_bump(t, onset_t, amplitude, tau1=2.0, tau2=0.75):
    """Difference-of-exponentials response with unit-normalized peak.

    Mirrors the canonical biexponential conductance kernel so decomposition
    tests know each injected response's exact amplitude.
    """
    t = np.asarray(t, dtype=float)
    x = t - onset_t
    raw = np.where(x > 0, np.exp(-np.maximum(x, 0) / tau1) - np.exp(-np.maximum(x, 0) / tau2), 0.0)
    t_peak = np.log(tau1 / tau2) * tau1 * tau2 / (tau1 - tau2)
    peak = np.exp(-t_peak / tau1) - np.exp(-t_peak / tau2)
    return amplitude * raw / peak


def random_recording(rng: np.random.Generator) -> SessionRecording:
    """Small random but valid recording for serialization round-trips."""
    streams = []
    n_dev = rng.integers(1, 4)
    for d in range(n_dev):
        dev = f"dev{d}"
        for ch in rng.choice(["pulse", "eda", "hr"], size=rng.integers(1, 3), replace=False):
            rate = float(rng.choice([4.0, 25.0, 50.0, 100.0]))
            n = int(rng.integers(3, 40))
            t = np.round(rng.uniform(0, 2) + np.arange(n) / rate, 6)
            if ch == "eda":
                v = rng.uniform(0.5, 10.0, size=n)
            elif ch == "hr":
                v = rng.uniform(40.0, 180.0, size=n)
            else:
                v = rng.normal(0.0, 1.0, size=n)
            streams.append((dev, ch, t, v))
    events = []
    t_ev = 0.0
    for _ in range(int(rng.integers(0, 6))):
        t_ev += float(rng.uniform(0, 5))
        kind = str(rng.choice(["stimulus_onset", "pattern_event", "phase_marker", "rating"]))
        ids = ()
        payload = None
        if kind == "pattern_event":
            ids = tuple(rng.choice(["enemies", "time_limit", "pick_ups"], size=rng.integers(1, 3), replace=False))
        elif kind == "stimulus_onset":
            ids = ("stimulus_high",)
        elif kind == "phase_marker":
            ids = ("gaming",)
        elif kind == "rating":
            payload = float(rng.integers(1, 10))
        events.append(GameEvent(round(t_ev, 6), kind, ids, payload))
    return make_recording(streams, events)


def assert_recordings_equal(a: SessionRecording, b: SessionRecording) -> None:
    assert a.meta.subject_id == b.meta.subject_id
    assert a.meta.session_epoch == b.meta.session_epoch
    assert sorted(a.meta.devices, key=lambda d: (d.device_id, d.channel)) == sorted(
        b.meta.devices, key=lambda d: (d.device_id, d.channel)
    )
    assert set(a.streams) == set(b.streams)
    for key in a.streams:
        np.testing.assert_array_equal(a.streams[key].t, b.streams[key].t)
        np.testing.assert_array_equal(a.streams[key].values, b.streams[key].values)
    assert a.events == b.events
