"""Streaming affect engine: physiological samples in, AffectState trace out.

One engine serves both batch analysis and live ingestion. Every stage is
causal with a bounded lookahead: the state at evaluation time T depends
only on samples up to T + lookahead, so once the data horizon passes that
point the state is final. Replaying a recording sample by sample therefore
produces bit-identical output to analyzing the whole file at once; the
cost is output latency of one lookahead, which is the honest price of a
centered tonic median and SCR rise confirmation.

The lookahead decomposes as

    tonic_window/2 + smooth_window/2 + max SCR rise + confirm margin

which is 20.625 s at the defaults.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field

import numpy as np

from .affect import (
    DEFAULT_DWELL_S,
    DEFAULT_MARGIN,
    DEFAULT_THRESHOLDS,
    AffectState,
    arousal_index,
    classify,
)
from .catalog import Catalog
from .errors import CoverageError, SignalError, ValidationError
from .features import (
    SCR_RISE_BOUNDS,
    Baseline,
    HrSeries,
    _odd_window,
    compute_baseline,
    detect_beats,
    detect_scrs,
    eda_decompose,
    ibi_to_hr,
    running_median,
    smooth,
)
from .session import (
    CHANNELS,
    GameEvent,
    SessionRecording,
    UniformSeries,
)

DEFAULT_SMOOTH_WINDOW_S = 0.75
DEFAULT_EVAL_PERIOD_S = 1.0
DEFAULT_WINDOW_S = 5.0

# detect_beats computes its band-pass with a 0.6 s centered window, so a
# beat within 0.3 s of the data edge is provisional
_BEAT_EDGE_S = 0.3

# phasic must extend one sample past an SCR peak to confirm the downturn
_SCR_CONFIRM_S = 0.25


def lookahead_s(
    smooth_window_s: float = DEFAULT_SMOOTH_WINDOW_S,
    tonic_window_s: float = 20.0,
) -> float:
    """Data horizon needed beyond T before the state at T is final."""
    return tonic_window_s / 2 + smooth_window_s / 2 + SCR_RISE_BOUNDS[1] + _SCR_CONFIRM_S


@dataclass
class _Buf:
    """Accumulated samples of one channel on a uniform grid."""

    device_id: str
    rate_hz: float
    t0: float | None = None
    values: list = field(default_factory=list)

    def end_t(self) -> float | None:
        if self.t0 is None or not self.values:
            return None
        return self.t0 + (len(self.values) - 1) / self.rate_hz

    def array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=float)


def _slice_uniform(t0: float, rate: float, values: np.ndarray, t_lo: float, t_hi: float):
    """UniformSeries over the samples with t in (t_lo, t_hi], or None."""
    i_lo = math.floor((t_lo - t0) * rate + 1e-9) + 1
    i_hi = math.floor((t_hi - t0) * rate + 1e-9)
    i_lo = max(i_lo, 0)
    i_hi = min(i_hi, len(values) - 1)
    if i_hi < i_lo:
        return None
    return UniformSeries(t0 + i_lo / rate, rate, values[i_lo : i_hi + 1])


class StreamProcessor:
    """Incremental affect estimator over declared physiological streams.

    Usage: ``declare`` each stream, then ``feed`` samples (and any events)
    in time order, calling ``poll`` whenever fresh states are wanted;
    ``finalize`` flushes the tail once the input is complete. States carry
    arousal from the banked baseline, a hysteretic level, and valence
    looked up from catalog annotations of recent pattern events.

    Heart rate comes from the ``pulse`` channel unless a ``hr`` channel is
    declared, which bypasses beat detection entirely (device-reported
    rate). Exactly one device may provide any given channel.
    """

    def __init__(
        self,
        baseline: Baseline,
        catalog: Catalog | None = None,
        *,
        eval_period_s: float = DEFAULT_EVAL_PERIOD_S,
        window_s: float = DEFAULT_WINDOW_S,
        smooth_window_s: float = DEFAULT_SMOOTH_WINDOW_S,
        tonic_window_s: float = 20.0,
        weights: tuple[float, float, float] = (1.0, 1.0, 1.0),
        thresholds: tuple[float, float] = DEFAULT_THRESHOLDS,
        margin: float = DEFAULT_MARGIN,
        dwell_s: float = DEFAULT_DWELL_S,
    ):
        if not isinstance(baseline, Baseline):
            raise ValidationError("baseline must be a Baseline")
        if eval_period_s <= 0:
            raise ValidationError("eval_period_s must be > 0")
        if window_s < 1.0:
            raise ValidationError("window_s must be >= 1 s")
        self.baseline = baseline
        self.catalog = catalog
        self.eval_period_s = eval_period_s
        self.window_s = window_s
        self.smooth_window_s = smooth_window_s
        self.tonic_window_s = tonic_window_s
        self.weights = weights
        self.thresholds = thresholds
        self.margin = margin
        self.dwell_s = dwell_s
        self.lookahead_s = lookahead_s(smooth_window_s, tonic_window_s)

        self._bufs: dict[str, _Buf] = {}
        self._events: list[GameEvent] = []
        self._event_ts: list[float] = []
        self._dwell = None
        self._next_k: int | None = None
        self._finalized = False
        self.states: list[AffectState] = []

        # finalized eda caches, all aligned to the eda buffer grid
        self._smoothed = np.empty(0)
        self._tonic = np.empty(0)
        self._scrs: list = []
        self._scr_len = -1

    # ------------------------------------------------------------------
    # input side

    def declare(self, device_id: str, channel: str, rate_hz: float) -> None:
        if channel not in CHANNELS:
            raise ValidationError(f"unknown channel {channel!r}")
        if not rate_hz > 0:
            raise ValidationError("rate_hz must be > 0")
        if channel == "pulse" and rate_hz < 50.0:
            raise ValidationError("pulse rate must be >= 50 Hz for beat detection")
        if channel == "eda" and rate_hz < 4.0:
            raise ValidationError("eda rate must be >= 4 Hz")
        have = self._bufs.get(channel)
        if have is not None:
            if have.device_id != device_id or have.rate_hz != rate_hz:
                raise ValidationError(
                    f"channel {channel!r} already declared by {have.device_id!r} "
                    f"at {have.rate_hz:g} Hz"
                )
            return
        self._bufs[channel] = _Buf(device_id, rate_hz)

    def feed(self, device_id: str, channel: str, t: float, value: float) -> None:
        buf = self._bufs.get(channel)
        if buf is None or buf.device_id != device_id:
            raise ValidationError(f"undeclared stream {device_id!r}/{channel!r}")
        if buf.t0 is None:
            buf.t0 = t
        else:
            expected = buf.t0 + len(buf.values) / buf.rate_hz
            if abs(t - expected) > 0.5 / buf.rate_hz:
                raise ValidationError(
                    f"sample at t={t:.6f} breaks the {buf.rate_hz:g} Hz cadence "
                    f"of {device_id!r}/{channel!r} (expected {expected:.6f})"
                )
        if channel == "eda" and not value > 0:
            raise ValidationError("eda must be positive")
        if channel == "hr" and not (25.0 < value < 250.0):
            raise ValidationError("hr out of physiological range")
        buf.values.append(float(value))

    def feed_array(self, device_id: str, channel: str, t0: float, values) -> None:
        """Bulk append of consecutive samples starting at t0."""
        buf = self._bufs.get(channel)
        if buf is None or buf.device_id != device_id:
            raise ValidationError(f"undeclared stream {device_id!r}/{channel!r}")
        values = np.asarray(values, dtype=float)
        if buf.t0 is None:
            buf.t0 = t0
        else:
            expected = buf.t0 + len(buf.values) / buf.rate_hz
            if abs(t0 - expected) > 0.5 / buf.rate_hz:
                raise ValidationError(f"bulk append at t={t0:.6f} breaks cadence")
        if channel == "eda" and not np.all(values > 0):
            raise ValidationError("eda must be positive")
        if channel == "hr" and not np.all((values > 25.0) & (values < 250.0)):
            raise ValidationError("hr out of physiological range")
        buf.values.extend(values.tolist())

    def feed_event(self, ev: GameEvent) -> None:
        pos = bisect.bisect_right(self._event_ts, ev.t)
        self._event_ts.insert(pos, ev.t)
        self._events.insert(pos, ev)

    # ------------------------------------------------------------------
    # output side

    def horizon(self) -> float | None:
        """Latest time covered by every channel the estimate needs."""
        eda = self._bufs.get("eda")
        hr_src = self._bufs.get("hr") or self._bufs.get("pulse")
        if eda is None or hr_src is None:
            return None
        ends = [eda.end_t(), hr_src.end_t()]
        if any(e is None for e in ends):
            return None
        return min(ends)

    def poll(self) -> list[AffectState]:
        return self._emit(final=False)

    def finalize(self) -> list[AffectState]:
        self._finalized = True
        return self._emit(final=True)

    def _emit(self, final: bool) -> list[AffectState]:
        h = self.horizon()
        if h is None:
            return []
        eda = self._bufs["eda"]
        hr_src = self._bufs.get("hr") or self._bufs["pulse"]
        if self._next_k is None:
            start = max(eda.t0, hr_src.t0) + self.window_s
            self._next_k = math.ceil(start / self.eval_period_s - 1e-9)
        out = []
        while True:
            t_eval = self._next_k * self.eval_period_s
            need = t_eval if final else t_eval + self.lookahead_s
            if need > h + 1e-9:
                break
            state = self._state_at(t_eval, final)
            if state is not None:
                out.append(state)
                self.states.append(state)
            self._next_k += 1
        return out

    def _state_at(self, t_eval: float, final: bool) -> AffectState | None:
        self._extend_eda(final)
        eda = self._bufs["eda"]
        if len(self._tonic) == 0:
            return None
        tonic_win = _slice_uniform(
            eda.t0, eda.rate_hz, self._tonic, t_eval - self.window_s, t_eval
        )
        hr = self._hr_series(final)
        if hr is None or tonic_win is None:
            return None
        hr_win = _slice_uniform(
            hr.t0, hr.rate_hz, hr.values, t_eval - self.window_s, t_eval
        )
        if hr_win is None:
            return None
        scrs = [
            s
            for s in self._scrs
            if t_eval - self.window_s + 1e-9 < s.onset_t <= t_eval + 1e-9
        ]
        try:
            a = arousal_index(
                hr_win, tonic_win, scrs, self.baseline, self.weights, self.window_s
            )
        except CoverageError:
            return None
        level, self._dwell = classify(
            a, t_eval, self._dwell, self.thresholds, self.margin, self.dwell_s
        )
        valence, conf = self._valence_at(t_eval)
        return AffectState(t_eval, a, valence, conf, level)

    def _extend_eda(self, final: bool) -> None:
        buf = self._bufs["eda"]
        raw = buf.array()
        n = len(raw)
        if n == 0:
            return
        rate = buf.rate_hz
        smooth_half = _odd_window(self.smooth_window_s, rate) // 2
        tonic_w = _odd_window(self.tonic_window_s, rate)
        tonic_half = tonic_w // 2
        s_n = n if final else max(0, n - smooth_half)
        t_n = n if final else max(0, s_n - tonic_half)
        if s_n > len(self._smoothed):
            # recompute from raw: values left of the provisional edge match the
            # full-series smoothing exactly, so the cache only ever grows
            full = smooth(UniformSeries(buf.t0, rate, raw), self.smooth_window_s)
            self._smoothed = full.values[:s_n]
        if t_n > len(self._tonic):
            m0 = len(self._tonic)
            a = max(0, m0 - tonic_half)
            b = t_n if final else min(s_n, t_n + tonic_half)
            seg = running_median(self._smoothed[a:b], tonic_w)
            self._tonic = np.concatenate([self._tonic, seg[m0 - a : t_n - a]])
        if len(self._tonic) != self._scr_len and len(self._tonic) >= 2:
            phasic = self._smoothed[: len(self._tonic)] - self._tonic
            self._scrs = detect_scrs(UniformSeries(buf.t0, rate, phasic))
            self._scr_len = len(self._tonic)

    def _hr_series(self, final: bool) -> HrSeries | None:
        dev = self._bufs.get("hr")
        if dev is not None and dev.values:
            return HrSeries(dev.t0, dev.rate_hz, dev.array(), source="device_reported")
        pulse = self._bufs.get("pulse")
        if pulse is None or pulse.t0 is None:
            return None
        series = UniformSeries(pulse.t0, pulse.rate_hz, pulse.array())
        if series.duration_s < 5.0:
            return None
        try:
            beats = detect_beats(series)
            return ibi_to_hr(beats)
        except SignalError:
            return None

    def _valence_at(self, t: float):
        if self.catalog is None:
            return None, 0.0
        signs = []
        hi = bisect.bisect_right(self._event_ts, t)
        for ev in self._events[:hi]:
            if ev.kind != "pattern_event":
                continue
            for pid in ev.pattern_ids:
                if pid not in self.catalog:
                    continue
                ann = self.catalog[pid].annotation
                if ann.valence_effect == "neutral":
                    continue
                if ann.latency_lo_s <= t - ev.t <= ann.latency_hi_s:
                    signs.append(1.0 if ann.valence_effect == "positive" else -1.0)
        if not signs:
            return None, 0.0
        return 0.5 * float(np.mean(signs)), 0.5


# ----------------------------------------------------------------------
# batch entry points


def analyze_recording(
    rec: SessionRecording,
    baseline: Baseline,
    catalog: Catalog | None = None,
    **kwargs,
) -> list[AffectState]:
    """Whole-file analysis through the streaming engine."""
    proc = StreamProcessor(baseline, catalog, **kwargs)
    rates = {(d.device_id, d.channel): d.rate_hz for d in rec.meta.devices}
    for key in sorted(rec.streams):
        stream = rec.streams[key]
        if not len(stream):
            continue
        proc.declare(key[0], key[1], rates[key])
        proc.feed_array(key[0], key[1], float(stream.t[0]), stream.values)
    for ev in rec.events:
        proc.feed_event(ev)
    return proc.finalize()


def _phase_span(rec: SessionRecording, phase: str) -> tuple[float, float]:
    markers = [e for e in rec.events if e.kind == "phase_marker"]
    start = None
    end = rec.end_t()
    for m in markers:
        if m.pattern_ids == (phase,) and start is None:
            start = m.t
        elif start is not None:
            end = m.t
            break
    if start is None:
        raise ValidationError(f"recording has no {phase!r} phase marker")
    return start, end


def _channel_segment(rec: SessionRecording, channel: str, t_lo: float, t_hi: float):
    streams = rec.channel_streams(channel)
    if not streams:
        return None
    stream = streams[0]
    rates = {(d.device_id, d.channel): d.rate_hz for d in rec.meta.devices}
    rate = rates[(stream.device_id, channel)]
    keep = (stream.t >= t_lo - 1e-9) & (stream.t < t_hi - 1e-9)
    if not np.any(keep):
        return None
    t0 = float(stream.t[keep][0])
    return UniformSeries(t0, rate, stream.values[keep])


def baseline_from_signals(
    eda: UniformSeries,
    pulse: UniformSeries | None = None,
    hr: HrSeries | None = None,
    *,
    smooth_window_s: float = DEFAULT_SMOOTH_WINDOW_S,
    tonic_window_s: float = 20.0,
    min_duration_s: float = 60.0,
) -> Baseline:
    """Resting-segment statistics through the standard feature chain."""
    if hr is None:
        if pulse is None:
            raise ValidationError("need a pulse series or a device hr series")
        hr = ibi_to_hr(detect_beats(pulse))
    smoothed = smooth(eda, smooth_window_s)
    tonic, phasic = eda_decompose(smoothed, tonic_window_s)
    scrs = detect_scrs(phasic)
    return compute_baseline(hr, tonic, scrs, min_duration_s)


def calibration_baseline(rec: SessionRecording, **kwargs) -> Baseline:
    """Baseline from a recording's calibration phase."""
    t_lo, t_hi = _phase_span(rec, "calibration")
    eda = _channel_segment(rec, "eda", t_lo, t_hi)
    if eda is None:
        raise ValidationError("calibration phase has no eda samples")
    hr_stream = _channel_segment(rec, "hr", t_lo, t_hi)
    hr = None
    if hr_stream is not None:
        hr = HrSeries(hr_stream.t0, hr_stream.rate_hz, hr_stream.values, source="device_reported")
    pulse = _channel_segment(rec, "pulse", t_lo, t_hi)
    return baseline_from_signals(eda, pulse, hr, **kwargs)
