"""Arousal estimation, level classification, and reaction templates.

The estimation side turns baselined physiological windows into a bounded
arousal index and a hysteretic low/medium/high level. The template side
builds stimulus-locked average epochs per stimulus class and matches fresh
epochs against them by post-onset shape correlation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import CoverageError, FormatError, SignalError, ValidationError
from .features import Baseline, Scr
from .session import UniformSeries, quantize_t

LEVELS = ("low", "medium", "high")

TEMPLATE_CHANNELS = ("hr", "phasic")

DEFAULT_THRESHOLDS = (0.33, 0.66)
DEFAULT_MARGIN = 0.03
DEFAULT_DWELL_S = 3.0

EPOCH_PRE_S = 2.0
EPOCH_POST_S = 8.0
EPOCH_GRID_HZ = 4.0


@dataclass(frozen=True)
class AffectState:
    """One timestamped affect estimate.

    valence is only ever populated from annotations (stimulus labels or
    pattern affect declarations), never inferred from physiology; when it is
    absent the confidence must be 0.
    """

    t: float
    arousal: float
    valence: float | None
    valence_confidence: float
    level: str

    def __post_init__(self):
        if not (0.0 <= self.arousal <= 1.0):
            raise ValidationError(f"arousal {self.arousal} outside [0,1]")
        if self.level not in LEVELS:
            raise ValidationError(f"unknown level {self.level!r}")
        if self.valence is None:
            if self.valence_confidence != 0.0:
                raise ValidationError("confidence must be 0 without valence")
        else:
            if not (-1.0 <= self.valence <= 1.0):
                raise ValidationError(f"valence {self.valence} outside [-1,1]")
        if not (0.0 <= self.valence_confidence <= 1.0):
            raise ValidationError("valence confidence outside [0,1]")


def format_affect_state(state: AffectState) -> str:
    val = "-" if state.valence is None else repr(state.valence)
    return (
        f"F {state.t:.6f} {state.arousal!r} {val} "
        f"{state.valence_confidence!r} {state.level}"
    )


def parse_affect_state(line: str, line_no: int | None = None) -> AffectState:
    parts = line.split()
    if len(parts) != 6 or parts[0] != "F":
        raise FormatError(f"bad affect line {line!r}", line_no)
    try:
        valence = None if parts[3] == "-" else float(parts[3])
        return AffectState(
            t=quantize_t(float(parts[1])),
            arousal=float(parts[2]),
            valence=valence,
            valence_confidence=float(parts[4]),
            level=parts[5],
        )
    except ValueError:
        raise FormatError(f"bad number in affect line {line!r}", line_no) from None


# ---------------------------------------------------------------------------
# arousal index


def arousal_index(
    hr_window: UniformSeries,
    eda_window: UniformSeries,
    scrs_in_window: Sequence[Scr],
    baseline: Baseline,
    weights: tuple[float, float, float] = (1.0, 1.0, 1.0),
    min_window_s: float = 5.0,
) -> float:
    """Combine baselined features into an arousal value in [0, 1].

    Each feature becomes a z-score against the calibration baseline; the
    weighted z-mean is squashed linearly so that +-3 sigma on every component
    spans the whole range:

        a = clamp(0.5 + sum(w_i * z_i) / (6 * sum(w)), 0, 1)

    The windows must cover the same interval of at least ``min_window_s``
    (grid truncation slack of half a second is tolerated). The SCR rate
    z-score divides by max(baseline rate, 1) so a silent calibration cannot
    blow it up.
    """
    if len(weights) != 3 or any(w < 0 for w in weights) or sum(weights) <= 0:
        raise ValidationError("weights must be 3 non-negative values, sum > 0")
    span_hr = _coverage_s(hr_window)
    span_eda = _coverage_s(eda_window)
    if span_hr < min_window_s - 0.5 or span_eda < min_window_s - 0.5:
        raise CoverageError(
            f"window coverage {span_hr:.2f}/{span_eda:.2f} s below {min_window_s:g} s"
        )
    if (
        abs(hr_window.t0 - eda_window.t0) > 0.5
        or abs(hr_window.times[-1] - eda_window.times[-1]) > 0.5
    ):
        raise CoverageError("hr and eda windows cover different intervals")

    lo = min(hr_window.t0, eda_window.t0)
    hi = max(hr_window.times[-1], eda_window.times[-1])
    window_s = hi - lo
    z_hr = (float(np.mean(hr_window.values)) - baseline.hr_mean) / baseline.hr_sd
    z_scl = (float(np.mean(eda_window.values)) - baseline.scl_mean) / baseline.scl_sd
    rate = len(scrs_in_window) / window_s * 60.0
    z_scr = (rate - baseline.scr_rate_per_min) / max(baseline.scr_rate_per_min, 1.0)
    w = np.asarray(weights, dtype=float)
    a = 0.5 + float(np.dot(w, [z_hr, z_scl, z_scr])) / (6.0 * w.sum())
    return float(np.clip(a, 0.0, 1.0))


def _coverage_s(series: UniformSeries) -> float:
    if len(series.values) == 0:
        return 0.0
    return len(series.values) / series.rate_hz


# ---------------------------------------------------------------------------
# hysteretic level classification


@dataclass(frozen=True)
class DwellState:
    """Classifier memory: committed level plus a pending candidate."""

    level: str
    candidate: str | None = None
    candidate_since: float = math.nan
    last_t: float = -math.inf


def classify(
    arousal: float,
    t: float,
    state: DwellState | None = None,
    thresholds: tuple[float, float] = DEFAULT_THRESHOLDS,
    margin: float = DEFAULT_MARGIN,
    dwell_s: float = DEFAULT_DWELL_S,
) -> tuple[str, DwellState]:
    """Map arousal to a level with hysteresis and a dwell requirement.

    From the committed level, a boundary only counts as crossed once arousal
    clears it by ``margin`` in the travel direction, and the crossing only
    commits after it has persisted for ``dwell_s`` seconds. The first call
    (state None) commits immediately to the plain region of ``arousal``.

    Returns (level, new_state); feed the state back on the next call with a
    strictly larger t.
    """
    lo, hi = thresholds
    if not (0.0 < lo < hi < 1.0):
        raise ValidationError("thresholds must satisfy 0 < low < high < 1")
    if state is None:
        level = "low" if arousal < lo else ("high" if arousal > hi else "medium")
        return level, DwellState(level=level, last_t=t)
    if not t > state.last_t:
        raise ValidationError(f"classify time went backwards: {t} after {state.last_t}")

    region = _hysteretic_region(arousal, state.level, lo, hi, margin)
    if region == state.level:
        new = DwellState(level=state.level, last_t=t)
    elif region == state.candidate:
        if t - state.candidate_since >= dwell_s:
            new = DwellState(level=region, last_t=t)
        else:
            new = DwellState(
                level=state.level,
                candidate=region,
                candidate_since=state.candidate_since,
                last_t=t,
            )
    else:
        new = DwellState(
            level=state.level, candidate=region, candidate_since=t, last_t=t
        )
    return new.level, new


def _hysteretic_region(a: float, current: str, lo: float, hi: float, margin: float) -> str:
    idx = LEVELS.index(current)
    # climb while the upper boundary is cleared with margin
    while idx < 2 and a > (lo, hi)[idx] + margin:
        idx += 1
    while idx > 0 and a < (lo, hi)[idx - 1] - margin:
        idx -= 1
    return LEVELS[idx]


# ---------------------------------------------------------------------------
# stimulus-locked epochs and templates


def _grid_offsets(pre_s: float, post_s: float, rate: float) -> np.ndarray:
    n = int(round((pre_s + post_s) * rate))
    return -pre_s + np.arange(n) / rate


@dataclass(eq=False)
class Epoch:
    """One baseline-corrected stimulus-locked excerpt on the template grid."""

    event_t: float
    channel: str
    values: np.ndarray
    pre_s: float = EPOCH_PRE_S
    post_s: float = EPOCH_POST_S
    grid_rate_hz: float = EPOCH_GRID_HZ

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        _check_grid(self.channel, self.values, self.pre_s, self.post_s, self.grid_rate_hz)

    @property
    def offsets(self) -> np.ndarray:
        return _grid_offsets(self.pre_s, self.post_s, self.grid_rate_hz)

    @property
    def n_pre(self) -> int:
        return int(round(self.pre_s * self.grid_rate_hz))


@dataclass(eq=False)
class ReactionTemplate:
    """Per-class average reaction shape with its contributing epoch count."""

    class_id: str
    channel: str
    mean_curve: np.ndarray
    n: int
    pre_s: float = EPOCH_PRE_S
    post_s: float = EPOCH_POST_S
    grid_rate_hz: float = EPOCH_GRID_HZ

    def __post_init__(self):
        self.mean_curve = np.asarray(self.mean_curve, dtype=float)
        _check_grid(self.channel, self.mean_curve, self.pre_s, self.post_s, self.grid_rate_hz)
        if self.n < 1:
            raise ValidationError("template needs n >= 1")
        if not self.class_id or any(c.isspace() for c in self.class_id):
            raise ValidationError(f"bad class id {self.class_id!r}")
        n_pre = int(round(self.pre_s * self.grid_rate_hz))
        if n_pre and abs(float(np.mean(self.mean_curve[:n_pre]))) > 1e-6:
            raise ValidationError("template pre-onset segment not baseline-corrected")

    @property
    def n_pre(self) -> int:
        return int(round(self.pre_s * self.grid_rate_hz))


def _check_grid(channel: str, values: np.ndarray, pre_s: float, post_s: float, rate: float):
    if channel not in TEMPLATE_CHANNELS:
        raise ValidationError(f"unknown template channel {channel!r}")
    if pre_s < 0 or post_s <= 0 or rate <= 0:
        raise ValidationError("bad epoch grid parameters")
    want = int(round((pre_s + post_s) * rate))
    if len(values) != want:
        raise ValidationError(f"curve length {len(values)} != grid length {want}")


def extract_epoch(
    series: UniformSeries,
    event_t: float,
    channel: str,
    pre_s: float = EPOCH_PRE_S,
    post_s: float = EPOCH_POST_S,
    grid_rate_hz: float = EPOCH_GRID_HZ,
) -> Epoch:
    """Cut a [-pre_s, +post_s) window around event_t onto the template grid.

    The source series is linearly interpolated onto the grid and the mean of
    the pre-onset points is subtracted from everything, so epochs from
    different moments of a drifting signal stay comparable.
    """
    offsets = _grid_offsets(pre_s, post_s, grid_rate_hz)
    want = event_t + offsets
    t_last = series.t0 + (len(series.values) - 1) / series.rate_hz
    if len(series.values) < 2 or want[0] < series.t0 - 1e-9 or want[-1] > t_last + 1e-9:
        raise CoverageError(
            f"series [{series.t0:.3f}, {t_last:.3f}] does not cover epoch at {event_t:.3f}"
        )
    sampled = np.interp(want, series.times, series.values)
    n_pre = int(round(pre_s * grid_rate_hz))
    if n_pre:
        sampled = sampled - sampled[:n_pre].mean()
    return Epoch(
        event_t=event_t,
        channel=channel,
        values=sampled,
        pre_s=pre_s,
        post_s=post_s,
        grid_rate_hz=grid_rate_hz,
    )


def build_template(epochs: Sequence[Epoch], class_id: str) -> ReactionTemplate:
    """Pointwise mean of identically gridded epochs."""
    if not epochs:
        raise ValidationError("need at least one epoch")
    first = epochs[0]
    for e in epochs[1:]:
        if (
            e.channel != first.channel
            or e.pre_s != first.pre_s
            or e.post_s != first.post_s
            or e.grid_rate_hz != first.grid_rate_hz
        ):
            raise ValidationError("epochs disagree on grid or channel")
    mean = np.mean([e.values for e in epochs], axis=0)
    n_pre = first.n_pre
    if n_pre:
        # re-center: float summation can leave the pre segment a hair off zero
        mean = mean - mean[:n_pre].mean()
    return ReactionTemplate(
        class_id=class_id,
        channel=first.channel,
        mean_curve=mean,
        n=len(epochs),
        pre_s=first.pre_s,
        post_s=first.post_s,
        grid_rate_hz=first.grid_rate_hz,
    )


def match_template(
    epoch: Epoch, template: ReactionTemplate, r_threshold: float = 0.6
) -> tuple[float, bool]:
    """Correlate an epoch against a template over the post-onset segment.

    Returns (r, matched) with matched = (r >= r_threshold). Correlation is
    shape-only: invariant under positive scaling and offset of the epoch, so
    per-subject amplitude differences do not defeat the match.
    """
    if (
        epoch.channel != template.channel
        or epoch.pre_s != template.pre_s
        or epoch.post_s != template.post_s
        or epoch.grid_rate_hz != template.grid_rate_hz
    ):
        raise ValidationError("epoch and template grids differ")
    a = epoch.values[epoch.n_pre :]
    b = template.mean_curve[template.n_pre :]
    if float(np.std(b)) == 0.0:
        raise SignalError("template post-onset segment is constant")
    if float(np.std(a)) == 0.0:
        raise SignalError("epoch post-onset segment is constant")
    r = float(np.corrcoef(a, b)[0, 1])
    return r, bool(r >= r_threshold)


# ---------------------------------------------------------------------------
# template file format: one record per line


def write_templates(templates: Sequence[ReactionTemplate]) -> bytes:
    lines = []
    for tp in templates:
        curve = ",".join(f"{v:.6f}" for v in tp.mean_curve)
        lines.append(
            f"T {tp.class_id} {tp.channel} {tp.pre_s!r} {tp.post_s!r} "
            f"{tp.grid_rate_hz!r} {tp.n} {curve}"
        )
    return ("\n".join(lines) + "\n" if lines else "").encode("utf-8")


def read_templates(data: bytes | str) -> list[ReactionTemplate]:
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    out: list[ReactionTemplate] = []
    for line_no, raw in enumerate(data.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 8 or parts[0] != "T":
            raise FormatError(f"bad template line {line!r}", line_no)
        try:
            curve = np.array([float(x) for x in parts[7].split(",")])
            tpl = ReactionTemplate(
                class_id=parts[1],
                channel=parts[2],
                mean_curve=curve,
                n=int(parts[6]),
                pre_s=float(parts[3]),
                post_s=float(parts[4]),
                grid_rate_hz=float(parts[5]),
            )
        except ValueError:
            raise FormatError("bad number in template line", line_no) from None
        except ValidationError as exc:
            raise FormatError(f"invalid template: {exc}", line_no) from None
        out.append(tpl)
    return out
