"""Low-level physiological feature extraction.

Implements the feature chain both analysis paths share: pulse-wave beat
detection, artifact-tolerant instantaneous heart rate, electrodermal
tonic/phasic decomposition, skin conductance response (SCR) detection, and
session baseline statistics.

All detectors are causal up to a fixed, documented lookahead so that a
streaming consumer reproduces batch output exactly.
"""

from __future__ import annotations

import io
import math
from collections import deque
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.ndimage import median_filter

from .errors import CoverageError, FormatError, SignalError, ValidationError
from .session import UniformSeries

HR_SOURCE_PULSE = "derived_from_pulse"
HR_SOURCE_DEVICE = "device_reported"

# interval plausibility bounds used by ibi_to_hr: [0.3, 2.0] s = 30..200 bpm
IBI_ABS_BOUNDS = (0.3, 2.0)
IBI_REL_TOLERANCE = 0.25
IBI_MEDIAN_WINDOW = 5

BEAT_REFRACTORY_S = 0.3
BEAT_THRESHOLD_FRACTION = 0.5
BEAT_PEAK_MEMORY = 8

SCR_DERIV_THRESHOLD = 0.02  # uS/s
SCR_MIN_AMPLITUDE = 0.01  # uS
SCR_RISE_BOUNDS = (0.25, 10.0)  # s

HR_SD_FLOOR = 0.5  # bpm
SCL_SD_FLOOR = 0.01  # uS


@dataclass(frozen=True)
class Scr:
    """One skin conductance response on the phasic channel."""

    onset_t: float
    peak_t: float
    amplitude_us: float
    rise_time_s: float


@dataclass(eq=False)
class HrSeries(UniformSeries):
    """Uniform instantaneous heart rate in bpm with its provenance."""

    source: str = HR_SOURCE_PULSE

    def __post_init__(self):
        super().__post_init__()
        if self.source not in (HR_SOURCE_PULSE, HR_SOURCE_DEVICE):
            raise ValidationError(f"unknown hr source {self.source!r}")
        if len(self.values) and (self.values.min() <= 25.0 or self.values.max() >= 250.0):
            raise ValidationError("hr values outside (25, 250) bpm")


@dataclass(frozen=True)
class Baseline:
    """Calibration statistics all z-scores are taken against."""

    hr_mean: float
    hr_sd: float
    scl_mean: float
    scl_sd: float
    scr_rate_per_min: float
    duration_s: float

    def __post_init__(self):
        if self.hr_sd < HR_SD_FLOOR or self.scl_sd < SCL_SD_FLOOR:
            raise ValidationError("baseline sd below documented floor")
        if self.duration_s < 60.0:
            raise ValidationError("baseline needs >= 60 s of material")
        if self.scr_rate_per_min < 0:
            raise ValidationError("negative scr rate")


def smooth(series: UniformSeries, window_s: float) -> UniformSeries:
    """Centered moving average with an odd window; endpoints shrink.

    The window is floor(window_s * rate) samples, forced odd (upward). A
    constant series passes through unchanged at any window.
    """
    w = _odd_window(window_s, series.rate_hz)
    v = series.values
    n = len(v)
    if n == 0:
        return UniformSeries(series.t0, series.rate_hz, v.copy())
    half = w // 2
    # anchor at v[0] so a constant series passes through bit-exactly
    c = np.concatenate([[0.0], np.cumsum(v - v[0])])
    idx = np.arange(n)
    lo = np.maximum(0, idx - half)
    hi = np.minimum(n, idx + half + 1)
    out = v[0] + (c[hi] - c[lo]) / (hi - lo)
    return UniformSeries(series.t0, series.rate_hz, out)


def _odd_window(window_s: float, rate_hz: float) -> int:
    if not window_s > 0:
        raise SignalError("window must be positive")
    w = int(math.floor(window_s * rate_hz))
    if w < 1:
        raise SignalError("window shorter than one sample period")
    return w if w % 2 == 1 else w + 1


def running_median(values: np.ndarray, window_samples: int) -> np.ndarray:
    """Centered running median, odd window, edge-replicated boundaries."""
    if window_samples % 2 == 0 or window_samples < 1:
        raise SignalError("median window must be odd and >= 1")
    return median_filter(np.asarray(values, dtype=float), size=window_samples, mode="nearest")


def eda_decompose(
    series: UniformSeries, tonic_window_s: float = 20.0
) -> tuple[UniformSeries, UniformSeries]:
    """Split EDA into tonic and phasic components.

    Parameters
    ----------
    series : UniformSeries
        Skin conductance in uS, rate >= 4 Hz, at least 30 s long.
    tonic_window_s : float
        Width of the centered running-median window estimating the tonic
        level. The default is wide relative to a single SCR so response
        amplitudes survive in the phasic remainder.

    Returns
    -------
    (tonic, phasic) : tuple of UniformSeries
        Same grid as the input; ``tonic + phasic`` reproduces the input
        sample-exactly by construction.
    """
    if series.rate_hz < 4.0:
        raise SignalError(f"eda rate {series.rate_hz:g} Hz below 4 Hz minimum")
    if series.duration_s < 30.0:
        raise SignalError("eda series shorter than 30 s")
    w = _odd_window(tonic_window_s, series.rate_hz)
    tonic = running_median(series.values, w)
    phasic = series.values - tonic
    return (
        UniformSeries(series.t0, series.rate_hz, tonic),
        UniformSeries(series.t0, series.rate_hz, phasic),
    )


def detect_scrs(
    phasic: UniformSeries,
    deriv_threshold: float = SCR_DERIV_THRESHOLD,
    min_amplitude: float = SCR_MIN_AMPLITUDE,
    rise_bounds: tuple[float, float] = SCR_RISE_BOUNDS,
) -> list[Scr]:
    """Scan a phasic series for skin conductance responses.

    An onset opens where the first difference (scaled to uS/s) crosses above
    ``deriv_threshold``; the response peaks at the next local maximum.
    Overlapping responses split naturally at local minima because recovery
    pushes the derivative below threshold before the next rise re-crosses it.
    Responses below ``min_amplitude`` or with rise time outside
    ``rise_bounds`` are discarded, as is a trailing rise with no confirmed
    peak before the series ends.
    """
    v = phasic.values
    n = len(v)
    if n < 3:
        return []
    rate = phasic.rate_hz
    d = np.diff(v) * rate
    above = d > deriv_threshold
    crossings = np.flatnonzero(above & ~np.concatenate([[False], above[:-1]]))
    out: list[Scr] = []
    last_peak = -1
    for i in crossings:
        j = _next_peak(v, int(i))
        if j is None or j == last_peak:
            continue
        amplitude = float(v[j] - v[i])
        rise = (j - i) / rate
        if amplitude < min_amplitude:
            continue
        if not (rise_bounds[0] <= rise <= rise_bounds[1]):
            continue
        last_peak = j
        out.append(
            Scr(
                onset_t=float(phasic.t0 + i / rate),
                peak_t=float(phasic.t0 + j / rate),
                amplitude_us=amplitude,
                rise_time_s=float(rise),
            )
        )
    return out


def _next_peak(v: np.ndarray, start: int) -> int | None:
    # first downturn after the onset; the final sample cannot confirm a peak
    for j in range(start + 1, len(v) - 1):
        if v[j] > v[j + 1] and v[j] >= v[j - 1]:
            return j
    return None


def detect_beats(pulse: UniformSeries) -> np.ndarray:
    """Detect beat times in a raw pulse wave.

    The wave is band-limited by the difference of 0.1 s and 0.6 s centered
    moving averages and squared into an energy signal. Local maxima above an
    adaptive threshold (half the running median of the last 8 accepted peak
    heights) become beats, refined to sub-sample precision by parabolic
    interpolation, with a 0.3 s refractory period.

    Returns
    -------
    np.ndarray
        Beat times in seconds, strictly increasing. Empty for flat input.
    """
    if pulse.rate_hz < 50.0:
        raise SignalError(f"pulse rate {pulse.rate_hz:g} Hz below 50 Hz minimum")
    if pulse.duration_s < 5.0:
        raise SignalError("pulse series shorter than 5 s")
    rate = pulse.rate_hz
    band = smooth(pulse, 0.1).values - smooth(pulse, 0.6).values
    energy = band * band
    n = len(energy)
    # candidate peaks: strictly above the left neighbour or equal, strictly
    # above the right one, so plateaus resolve to their left edge
    cand = np.flatnonzero(
        (energy[1:-1] >= energy[:-2]) & (energy[1:-1] > energy[2:])
    ) + 1
    if len(cand) == 0:
        return np.array([])
    boot = energy[: max(int(2.0 * rate), 2)].max()
    threshold = BEAT_THRESHOLD_FRACTION * boot
    heights: deque[float] = deque(maxlen=BEAT_PEAK_MEMORY)
    beats: list[float] = []
    last_t = -math.inf
    for i in cand:
        h = energy[i]
        if h < threshold or h <= 0.0:
            continue
        t = pulse.t0 + (i + _parabolic_delta(energy, int(i))) / rate
        if t - last_t < BEAT_REFRACTORY_S:
            continue
        beats.append(t)
        last_t = t
        heights.append(float(h))
        threshold = BEAT_THRESHOLD_FRACTION * float(np.median(heights))
    return np.array(beats)


def _parabolic_delta(e: np.ndarray, i: int) -> float:
    if i <= 0 or i >= len(e) - 1:
        return 0.0
    denom = e[i - 1] - 2.0 * e[i] + e[i + 1]
    if denom >= 0:
        return 0.0
    delta = 0.5 * (e[i - 1] - e[i + 1]) / denom
    return float(np.clip(delta, -0.5, 0.5))


def ibi_to_hr(beats: Sequence[float], out_rate_hz: float = 4.0) -> HrSeries:
    """Instantaneous heart rate from beat times with artifact rejection.

    Inter-beat intervals outside [0.3, 2.0] s or deviating more than 25% from
    the median of the 5 preceding accepted intervals are rejected. A
    one-interval lookahead merges the fragments a spurious beat leaves behind:
    when an otherwise plausible interval is followed by an implausible one and
    their sum fits the running median, the middle beat is treated as spurious
    and the fragments fuse. Accepted intervals yield rate points (60 / ibi)
    at their end beats, linearly interpolated onto a uniform grid.

    Raises SignalError with fewer than 3 accepted intervals.
    """
    beats = np.asarray(list(beats), dtype=float)
    if len(beats) >= 2 and np.any(np.diff(beats) <= 0):
        raise ValidationError("beat times must be strictly increasing")
    if not out_rate_hz > 0:
        raise SignalError("output rate must be positive")

    window: deque[float] = deque(maxlen=IBI_MEDIAN_WINDOW)
    point_t: list[float] = []
    point_bpm: list[float] = []

    def plausible(x: float) -> bool:
        if not (IBI_ABS_BOUNDS[0] <= x <= IBI_ABS_BOUNDS[1]):
            return False
        if window:
            m = float(np.median(window))
            if abs(x - m) > IBI_REL_TOLERANCE * m:
                return False
        return True

    i = 1
    start = beats[0] if len(beats) else 0.0
    while i < len(beats):
        d = beats[i] - start
        nxt = beats[i + 1] - beats[i] if i + 1 < len(beats) else None
        if plausible(d) and (nxt is None or plausible(nxt) or not plausible(d + nxt)):
            window.append(d)
            point_t.append(float(beats[i]))
            point_bpm.append(60.0 / d)
            start = beats[i]
            i += 1
        elif plausible(d):
            # next interval is implausible but the fused one fits: the beat at
            # i is the artifact, skip it and let d grow
            i += 1
        elif d > IBI_ABS_BOUNDS[1] or (
            window and d - float(np.median(window)) > IBI_REL_TOLERANCE * float(np.median(window))
        ):
            # overshot any plausible interval: drop the span and resync
            start = beats[i]
            i += 1
        else:
            # too short so far: keep accumulating over the suspect beat
            i += 1

    if len(point_t) < 3:
        raise SignalError(f"only {len(point_t)} accepted inter-beat intervals; need 3")

    rate = float(out_rate_hz)
    t_start = math.ceil(point_t[0] * rate) / rate
    t_end = math.floor(point_t[-1] * rate) / rate
    n = int(round((t_end - t_start) * rate)) + 1
    if n < 2:
        raise SignalError("accepted intervals span less than two grid points")
    tg = t_start + np.arange(n) / rate
    bpm = np.interp(tg, point_t, point_bpm)
    return HrSeries(t0=float(t_start), rate_hz=rate, values=bpm, source=HR_SOURCE_PULSE)


def compute_baseline(
    hr: HrSeries,
    tonic: UniformSeries,
    scrs: Sequence[Scr],
    min_duration_s: float = 60.0,
) -> Baseline:
    """Summarize a calibration segment into Baseline statistics.

    Means and sample standard deviations of heart rate and tonic skin
    conductance, with documented sd floors (0.5 bpm, 0.01 uS) so later
    z-scores stay bounded, plus the SCR rate per minute over the segment.
    """
    span = tonic.duration_s
    if span < min_duration_s or hr.duration_s < min_duration_s:
        raise CoverageError(
            f"baseline needs >= {min_duration_s:.0f} s of hr and eda coverage"
        )
    hr_sd = float(np.std(hr.values, ddof=1))
    scl_sd = float(np.std(tonic.values, ddof=1))
    return Baseline(
        hr_mean=float(np.mean(hr.values)),
        hr_sd=max(hr_sd, HR_SD_FLOOR),
        scl_mean=float(np.mean(tonic.values)),
        scl_sd=max(scl_sd, SCL_SD_FLOOR),
        scr_rate_per_min=len(scrs) / span * 60.0,
        duration_s=float(span),
    )


# ---------------------------------------------------------------------------
# baseline serialization: one "key value" pair per line

_BASELINE_KEYS = ("hr_mean", "hr_sd", "scl_mean", "scl_sd", "scr_rate_per_min", "duration_s")


def write_baseline(baseline: Baseline) -> bytes:
    buf = io.StringIO()
    for key in _BASELINE_KEYS:
        buf.write(f"{key} {getattr(baseline, key)!r}\n")
    return buf.getvalue().encode("utf-8")


def read_baseline(data: bytes | str) -> Baseline:
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    got: dict[str, float] = {}
    for line_no, raw in enumerate(data.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 2 or parts[0] not in _BASELINE_KEYS:
            raise FormatError(f"bad baseline line {line!r}", line_no)
        if parts[0] in got:
            raise FormatError(f"duplicate key {parts[0]}", line_no)
        try:
            got[parts[0]] = float(parts[1])
        except ValueError:
            raise FormatError(f"bad number {parts[1]!r}", line_no) from None
    missing = [k for k in _BASELINE_KEYS if k not in got]
    if missing:
        raise FormatError(f"missing baseline key(s): {', '.join(missing)}")
    return Baseline(**got)
