"""Session data model and text serialization for multi-device recordings.

A session file is line oriented, whitespace separated, UTF-8:

    H <subject_id> <session_epoch_iso8601>
    D <device_id> <channel> <rate_hz>        one per declared stream
    S <t> <device_id> <channel> <value>      sample
    E <t> <kind> <pattern_ids|-> <payload|-> event

``t`` is seconds since session epoch, written with 6 decimals. Sample values
and rates are written as shortest round-trip decimal literals. Canonical body
order is by t, events before samples at equal t, then device_id, then channel.
``pattern_ids`` is a comma-separated list; ``-`` stands for an empty list or an
absent payload. Comment lines are not part of this format.

Channels are fixed: ``pulse`` (raw pulse wave), ``eda`` (skin conductance, uS),
``hr`` (device-reported heart rate, bpm).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from datetime import datetime
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    AmbiguousAlignmentError,
    FormatError,
    SignalError,
    ValidationError,
)

CHANNELS = ("pulse", "eda", "hr")
EVENT_KINDS = ("stimulus_onset", "pattern_event", "phase_marker", "rating")
MAX_CLOCK_OFFSET_S = 60.0

# time resolution of the serialized format: 6 decimals = 1 microsecond
def quantize_t(t: float) -> float:
    return round(float(t), 6)


@dataclass(frozen=True)
class Sample:
    """One physiological sample on a device's local clock."""

    t: float
    device_id: str
    channel: str
    value: float


@dataclass(frozen=True)
class DeviceDecl:
    """Declared stream: a (device, channel) pair with its nominal rate."""

    device_id: str
    channel: str
    rate_hz: float


@dataclass(frozen=True)
class SessionMeta:
    subject_id: str
    session_epoch: str
    devices: tuple[DeviceDecl, ...] = ()


@dataclass(frozen=True)
class GameEvent:
    """Timed marker on the shared session clock.

    ``pattern_ids`` carries design-pattern ids for pattern_event, the stimulus
    class for stimulus_onset, and the phase name for phase_marker. ``payload``
    holds the rating value for rating events and is otherwise free.
    """

    t: float
    kind: str
    pattern_ids: tuple[str, ...] = ()
    payload: float | None = None


@dataclass(eq=False)
class Stream:
    """Samples of one (device, channel), strictly increasing in t."""

    device_id: str
    channel: str
    t: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.t.shape != self.values.shape or self.t.ndim != 1:
            raise ValidationError("stream t and values must be 1-d and equal length")

    def __len__(self) -> int:
        return len(self.t)


@dataclass(eq=False)
class UniformSeries:
    """Uniformly sampled series: value k sits at t0 + k / rate_hz."""

    t0: float
    rate_hz: float
    values: np.ndarray

    def __post_init__(self):
        if not (self.rate_hz > 0 and math.isfinite(self.rate_hz)):
            raise ValidationError("rate_hz must be positive and finite")
        self.values = np.asarray(self.values, dtype=float)

    @property
    def times(self) -> np.ndarray:
        return self.t0 + np.arange(len(self.values)) / self.rate_hz

    @property
    def duration_s(self) -> float:
        return max(len(self.values) - 1, 0) / self.rate_hz

    def __len__(self) -> int:
        return len(self.values)

    def window(self, t_lo: float, t_hi: float) -> np.ndarray:
        """Values with t in (t_lo, t_hi]; half-open to keep hops disjoint."""
        idx = np.arange(len(self.values))
        t = self.t0 + idx / self.rate_hz
        return self.values[(t > t_lo + 1e-9) & (t <= t_hi + 1e-9)]


@dataclass(eq=False)
class SessionRecording:
    """Parsed session: meta, per-(device, channel) streams, ordered events.

    Treated as immutable after construction; operations return new recordings.
    """

    meta: SessionMeta
    streams: dict[tuple[str, str], Stream] = field(default_factory=dict)
    events: list[GameEvent] = field(default_factory=list)

    def stream(self, device_id: str, channel: str) -> Stream:
        return self.streams[(device_id, channel)]

    def channel_streams(self, channel: str) -> list[Stream]:
        keys = sorted(k for k in self.streams if k[1] == channel)
        return [self.streams[k] for k in keys]

    def end_t(self) -> float:
        ends = [s.t[-1] for s in self.streams.values() if len(s)]
        ends += [ev.t for ev in self.events]
        return max(ends) if ends else 0.0


@dataclass(frozen=True)
class ClockOffset:
    """Correction in seconds added to device timestamps to reach the reference clock."""

    device_id: str
    offset_s: float

    def __post_init__(self):
        if not abs(self.offset_s) < MAX_CLOCK_OFFSET_S:
            raise ValidationError(
                f"clock offset {self.offset_s:+.3f} s outside sanity bound "
                f"+/-{MAX_CLOCK_OFFSET_S:.0f} s"
            )


def validate_recording(rec: SessionRecording) -> None:
    """Raise ValidationError when any session invariant is broken."""
    if not rec.meta.subject_id or any(c.isspace() for c in rec.meta.subject_id):
        raise ValidationError("subject_id must be a non-empty token")
    try:
        datetime.fromisoformat(rec.meta.session_epoch)
    except ValueError:
        raise ValidationError(
            f"session_epoch {rec.meta.session_epoch!r} is not ISO 8601"
        ) from None
    declared = {(d.device_id, d.channel) for d in rec.meta.devices}
    if len(declared) != len(rec.meta.devices):
        raise ValidationError("duplicate stream declaration")
    for d in rec.meta.devices:
        if d.channel not in CHANNELS:
            raise ValidationError(f"unknown channel {d.channel!r}")
        if not (d.rate_hz > 0 and math.isfinite(d.rate_hz)):
            raise ValidationError(f"declared rate for {d.device_id} must be positive")
    for (dev, ch), s in rec.streams.items():
        if (dev, ch) != (s.device_id, s.channel):
            raise ValidationError("stream key disagrees with stream identity")
        if (dev, ch) not in declared:
            raise ValidationError(f"stream {dev}/{ch} not declared in header")
        if len(s) == 0:
            continue
        if not np.all(np.isfinite(s.t)) or s.t[0] < 0:
            raise ValidationError(f"stream {dev}/{ch} has a negative or non-finite t")
        if np.any(np.diff(s.t) <= 0):
            raise ValidationError(f"stream {dev}/{ch} is not strictly increasing in t")
        _check_values(ch, s.values, dev)
    last = -math.inf
    for ev in rec.events:
        _check_event(ev)
        if ev.t < last:
            raise ValidationError("events are not sorted by t")
        last = ev.t


def _check_values(channel: str, values: np.ndarray, device_id: str) -> None:
    if not np.all(np.isfinite(values)):
        raise ValidationError(f"stream {device_id}/{channel} has non-finite values")
    if channel == "eda" and np.any(values < 0):
        raise ValidationError(f"stream {device_id}/eda has negative conductance")
    if channel == "hr" and (np.any(values <= 0) or np.any(values >= 300)):
        raise ValidationError(f"stream {device_id}/hr outside (0, 300) bpm")


def _check_event(ev: GameEvent) -> None:
    if ev.kind not in EVENT_KINDS:
        raise ValidationError(f"unknown event kind {ev.kind!r}")
    if not (math.isfinite(ev.t) and ev.t >= 0):
        raise ValidationError("event t must be finite and >= 0")
    if ev.kind == "pattern_event" and not ev.pattern_ids:
        raise ValidationError("pattern_event requires at least one pattern id")
    if ev.kind == "rating":
        if ev.payload is None or not (1 <= ev.payload <= 9):
            raise ValidationError("rating payload must be in [1, 9]")
    if ev.payload is not None and not math.isfinite(ev.payload):
        raise ValidationError("event payload must be finite")


# ---------------------------------------------------------------------------
# parsing / writing

def parse_session(data: bytes | str) -> SessionRecording:
    """Parse session text into a SessionRecording, validating as it goes.

    Errors name the offending 1-based line number.
    """
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    meta: SessionMeta | None = None
    devices: list[DeviceDecl] = []
    declared: set[tuple[str, str]] = set()
    ts: dict[tuple[str, str], list[float]] = {}
    vs: dict[tuple[str, str], list[float]] = {}
    events: list[GameEvent] = []
    body_seen = False
    last_event_t = -math.inf

    for line_no, raw in enumerate(data.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        parts = line.split()
        tag = parts[0]
        if meta is None:
            if tag != "H":
                raise FormatError("first line must be an H header", line_no)
            if len(parts) != 3:
                raise FormatError("H line needs subject_id and epoch", line_no)
            meta = SessionMeta(subject_id=parts[1], session_epoch=parts[2])
            continue
        if tag == "H":
            raise FormatError("duplicate H header", line_no)
        if tag == "D":
            if body_seen:
                raise FormatError("D line after first sample or event", line_no)
            if len(parts) != 4:
                raise FormatError("D line needs device, channel, rate", line_no)
            dev, ch = parts[1], parts[2]
            rate = _parse_float(parts[3], "rate", line_no)
            if ch not in CHANNELS:
                raise FormatError(f"unknown channel {ch!r}", line_no)
            if (dev, ch) in declared:
                raise FormatError(f"duplicate declaration {dev}/{ch}", line_no)
            declared.add((dev, ch))
            devices.append(DeviceDecl(dev, ch, rate))
            continue
        body_seen = True
        if tag == "S":
            if len(parts) != 5:
                raise FormatError("S line needs t, device, channel, value", line_no)
            t = _parse_float(parts[1], "t", line_no)
            dev, ch = parts[2], parts[3]
            value = _parse_float(parts[4], "value", line_no)
            if (dev, ch) not in declared:
                raise FormatError(f"sample for undeclared stream {dev}/{ch}", line_no)
            key = (dev, ch)
            prev = ts[key][-1] if ts.get(key) else None
            if prev is not None and t <= prev:
                raise FormatError(
                    f"non-monotone t for stream {dev}/{ch} ({t:.6f} after {prev:.6f})",
                    line_no,
                )
            ts.setdefault(key, []).append(t)
            vs.setdefault(key, []).append(value)
        elif tag == "E":
            if len(parts) != 5:
                raise FormatError("E line needs t, kind, pattern_ids, payload", line_no)
            t = _parse_float(parts[1], "t", line_no)
            kind = parts[2]
            ids = () if parts[3] == "-" else tuple(parts[3].split(","))
            payload = None if parts[4] == "-" else _parse_float(parts[4], "payload", line_no)
            if t < last_event_t:
                raise FormatError("events not sorted by t", line_no)
            last_event_t = t
            ev = GameEvent(t=t, kind=kind, pattern_ids=ids, payload=payload)
            try:
                _check_event(ev)
            except ValidationError as exc:
                raise FormatError(str(exc), line_no) from None
            events.append(ev)
        else:
            raise FormatError(f"unknown line kind {tag!r}", line_no)

    if meta is None:
        raise FormatError("empty input: missing H header", None)
    streams = {
        key: Stream(key[0], key[1], np.array(ts[key]), np.array(vs[key]))
        for key in ts
    }
    rec = SessionRecording(
        meta=SessionMeta(meta.subject_id, meta.session_epoch, tuple(devices)),
        streams=streams,
        events=events,
    )
    validate_recording(rec)
    return rec


def _parse_float(text: str, what: str, line_no: int) -> float:
    try:
        value = float(text)
    except ValueError:
        raise FormatError(f"bad {what} {text!r}", line_no) from None
    if not math.isfinite(value):
        raise FormatError(f"non-finite {what}", line_no)
    return value


def format_event(ev: GameEvent) -> str:
    """One E line in the session format; shared by every writer of events."""
    ids = ",".join(ev.pattern_ids) if ev.pattern_ids else "-"
    payload = "-" if ev.payload is None else repr(float(ev.payload))
    return f"E {ev.t:.6f} {ev.kind} {ids} {payload}"


def parse_event_line(parts: Sequence[str], line_no: int | None = None) -> GameEvent:
    """Parse a split E line back into a validated GameEvent."""
    if len(parts) != 5:
        raise FormatError("expected 'E <t> <kind> <ids> <payload>'", line_no)
    try:
        t = float(parts[1])
        payload = None if parts[4] == "-" else float(parts[4])
    except ValueError:
        raise FormatError("bad number in E line", line_no) from None
    ids = () if parts[3] == "-" else tuple(parts[3].split(","))
    ev = GameEvent(t, parts[2], ids, payload)
    try:
        _check_event(ev)
    except ValidationError as exc:
        raise FormatError(str(exc), line_no) from None
    return ev


def write_session(rec: SessionRecording) -> bytes:
    """Serialize to canonical bytes: sorted declarations, t-sorted body."""
    validate_recording(rec)
    out: list[str] = [f"H {rec.meta.subject_id} {rec.meta.session_epoch}"]
    for d in sorted(rec.meta.devices, key=lambda d: (d.device_id, d.channel)):
        out.append(f"D {d.device_id} {d.channel} {d.rate_hz!r}")
    # merge events and samples; events sort before samples at equal t and keep
    # their relative order
    entries: list[tuple[float, int, str, str, int, str]] = []
    for i, ev in enumerate(rec.events):
        entries.append((ev.t, 0, "", "", i, format_event(ev)))
    for (dev, ch) in sorted(rec.streams):
        s = rec.streams[(dev, ch)]
        for t, v in zip(s.t, s.values):
            entries.append(
                (t, 1, dev, ch, 0, f"S {t:.6f} {dev} {ch} {float(v)!r}")
            )
    entries.sort(key=lambda e: (e[0], e[1], e[2], e[3], e[4]))
    out.extend(e[5] for e in entries)
    return ("\n".join(out) + "\n").encode("utf-8")


# ---------------------------------------------------------------------------
# stream operations

def resample(series: Stream | UniformSeries, rate_hz: float) -> UniformSeries:
    """Linear interpolation onto a uniform grid anchored at the first sample.

    No extrapolation: the grid spans [first t, last t]. Resampling an already
    uniform series at its own rate reproduces its values exactly.
    """
    if not (rate_hz > 0 and math.isfinite(rate_hz)):
        raise SignalError("resample rate must be positive")
    if isinstance(series, UniformSeries):
        t = series.times
        v = series.values
    else:
        t, v = series.t, series.values
    if len(t) < 2:
        raise SignalError("resample needs at least 2 samples")
    n = int(math.floor((t[-1] - t[0]) * rate_hz)) + 1
    grid = t[0] + np.arange(n) / rate_hz
    return UniformSeries(t0=float(t[0]), rate_hz=float(rate_hz), values=np.interp(grid, t, v))


def sliding_windows(series: UniformSeries, len_s: float, hop_s: float) -> list[UniformSeries]:
    """Fixed-length windows: floor(len_s * rate) samples every floor(hop_s * rate)."""
    if not (len_s > 0 and hop_s > 0 and len_s >= hop_s):
        raise SignalError("need len_s >= hop_s > 0")
    w = int(math.floor(len_s * series.rate_hz))
    h = int(math.floor(hop_s * series.rate_hz))
    if w < 1 or h < 1:
        raise SignalError("window or hop shorter than one sample period")
    n = len(series.values)
    out: list[UniformSeries] = []
    start = 0
    while start + w <= n:
        out.append(
            UniformSeries(
                t0=series.t0 + start / series.rate_hz,
                rate_hz=series.rate_hz,
                values=series.values[start : start + w].copy(),
            )
        )
        start += h
    return out


def estimate_offset(
    reference: Stream | UniformSeries,
    other: Stream | UniformSeries,
    max_lag_s: float = 30.0,
    rate_hz: float = 100.0,
) -> float:
    """Clock offset of ``other`` against ``reference`` by cross-correlation.

    Both inputs are resampled to ``rate_hz``; the returned offset is the lag
    (resolution 1 / rate_hz, |offset| bounded by max_lag_s) whose normalized
    correlation over the overlap is highest. Add the offset to the other
    device's timestamps to express them on the reference clock.

    Raises AmbiguousAlignmentError when the correlation peak is below 0.5.
    """
    if not (0 < max_lag_s < MAX_CLOCK_OFFSET_S):
        raise SignalError(f"max_lag_s must be in (0, {MAX_CLOCK_OFFSET_S:.0f})")
    ra, rb = resample(reference, rate_hz), resample(other, rate_hz)
    if ra.duration_s < 2.0 or rb.duration_s < 2.0:
        raise SignalError("offset estimation needs >= 2 s of overlap material")
    a = ra.values - ra.values.mean()
    b = rb.values - rb.values.mean()
    if a.std() == 0 or b.std() == 0:
        raise AmbiguousAlignmentError("constant signal; alignment undefined")
    # other sample j lands on reference index j + q + k for candidate lag k
    q = int(round((rb.t0 - ra.t0) * rate_hz))
    K = int(round(max_lag_s * rate_hz))
    min_overlap = int(rate_hz)  # 1 s
    best_r, best_k = -np.inf, None
    for k in range(-K, K + 1):
        shift = q + k
        i0, j0 = max(0, shift), max(0, -shift)
        L = min(len(a) - i0, len(b) - j0)
        if L < min_overlap:
            continue
        x = a[i0 : i0 + L]
        y = b[j0 : j0 + L]
        sx, sy = x.std(), y.std()
        if sx == 0 or sy == 0:
            continue
        r = float(np.dot(x - x.mean(), y - y.mean()) / (L * sx * sy))
        if r > best_r:
            best_r, best_k = r, k
    if best_k is None or best_r < 0.5:
        raise AmbiguousAlignmentError(
            f"correlation peak {best_r:.3f} below 0.5; cannot align"
        )
    return best_k / rate_hz


def merge_streams(
    recordings: Sequence[SessionRecording],
    offsets: Iterable[ClockOffset] = (),
) -> SessionRecording:
    """Merge recordings onto the first recording's clock.

    The first recording is the reference (offset 0). Every device of every
    other recording needs a ClockOffset; sample and event times are shifted by
    it. Devices of one non-reference recording must share a single offset,
    otherwise its events have no well-defined clock.
    """
    if not recordings:
        raise ValidationError("nothing to merge")
    for rec in recordings:
        validate_recording(rec)
    by_dev = {o.device_id: o.offset_s for o in offsets}
    ref = recordings[0]
    for d in {dd.device_id for dd in ref.meta.devices}:
        if by_dev.get(d, 0.0) != 0.0:
            raise ValidationError(f"reference device {d} must have offset 0")

    decls: dict[tuple[str, str], DeviceDecl] = {}
    raw: dict[tuple[str, str], list[tuple[np.ndarray, np.ndarray]]] = {}
    events: list[GameEvent] = []
    for idx, rec in enumerate(recordings):
        rec_devs = {dd.device_id for dd in rec.meta.devices}
        if idx == 0:
            rec_offsets = {d: 0.0 for d in rec_devs}
        else:
            missing = sorted(d for d in rec_devs if d not in by_dev)
            if missing:
                raise ValidationError(f"no clock offset for device(s) {missing}")
            rec_offsets = {d: by_dev[d] for d in rec_devs}
        distinct = set(rec_offsets.values())
        if len(distinct) > 1:
            raise ValidationError(
                "devices of one recording carry different offsets; "
                "event clock is ambiguous"
            )
        ev_shift = distinct.pop() if distinct else 0.0
        for dd in rec.meta.devices:
            key = (dd.device_id, dd.channel)
            if key in decls and decls[key].rate_hz != dd.rate_hz:
                raise ValidationError(f"stream {key} declared twice with different rates")
            decls[key] = dd
        for key, s in rec.streams.items():
            shifted = np.round(s.t + rec_offsets[s.device_id], 6)
            if len(shifted) and shifted[0] < 0:
                raise ValidationError(f"offset moves stream {key} before session start")
            raw.setdefault(key, []).append((shifted, s.values))
        for ev in rec.events:
            events.append(
                GameEvent(quantize_t(ev.t + ev_shift), ev.kind, ev.pattern_ids, ev.payload)
            )

    streams: dict[tuple[str, str], Stream] = {}
    for key, chunks in raw.items():
        t = np.concatenate([c[0] for c in chunks])
        v = np.concatenate([c[1] for c in chunks])
        order = np.argsort(t, kind="stable")
        t, v = t[order], v[order]
        if np.any(np.diff(t) <= 0):
            raise ValidationError(f"conflicting duplicate stream {key[0]}/{key[1]}")
        streams[key] = Stream(key[0], key[1], t, v)
    events.sort(key=lambda ev: ev.t)
    merged = SessionRecording(
        meta=SessionMeta(ref.meta.subject_id, ref.meta.session_epoch, tuple(decls.values())),
        streams=streams,
        events=events,
    )
    validate_recording(merged)
    return merged
