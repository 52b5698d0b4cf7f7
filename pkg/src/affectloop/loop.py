"""The affective loop: event-response correlation and closed-loop control.

Analysis mode asks, per design pattern, whether the phasic EDA after that
pattern's events rises above what random moments of the same session show.
Control mode closes the loop: the simulated player's signals run through
the streaming engine, the band controller watches the resulting arousal
estimates, and its directives are fed back to the player as game events.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .affect import format_affect_state, parse_affect_state
from .catalog import Catalog, require_raise_pattern
from .control import (
    AdaptationDirective,
    ControllerConfig,
    control_step,
    format_directive,
    parse_directive,
)
from .errors import DenseSessionError, FormatError, ValidationError
from .features import Baseline
from .pipeline import StreamProcessor, baseline_from_signals
from .playersim import PlayerModel, drive_plant, init_state, render_pulse
from .session import (
    GameEvent,
    SessionRecording,
    UniformSeries,
    format_event,
    parse_event_line,
)

DEFAULT_RESPONSE_WINDOW = (1.0, 6.0)
NULL_CLEARANCE_S = 10.0
_NULL_GRID_STEP_S = 0.25

# kinds that drive physiology and so poison nearby null samples
_PHYSIO_KINDS = ("pattern_event", "stimulus_onset")


@dataclass(frozen=True)
class PatternStats:
    pattern_id: str
    n_events: int
    mean_response_us: float
    null_mean_us: float
    p_value: float
    effect_size_d: float

    def __post_init__(self):
        if self.n_events < 1:
            raise ValidationError("a report entry needs at least one event")
        if not 0.0 < self.p_value <= 1.0:
            raise ValidationError("p_value must be in (0, 1]")


@dataclass(frozen=True)
class CorrelationReport:
    entries: tuple
    response_window: tuple[float, float]
    n_permutations: int
    seed: int

    def __post_init__(self):
        ids = [e.pattern_id for e in self.entries]
        if ids != sorted(ids) or len(set(ids)) != len(ids):
            raise ValidationError("report entries must be unique and sorted by id")

    def __getitem__(self, pattern_id: str) -> PatternStats:
        for e in self.entries:
            if e.pattern_id == pattern_id:
                return e
        raise KeyError(pattern_id)

    def __contains__(self, pattern_id: str) -> bool:
        return any(e.pattern_id == pattern_id for e in self.entries)


def correlate_events(
    session: SessionRecording,
    phasic: UniformSeries,
    catalog: Catalog,
    response_window: tuple[float, float] = DEFAULT_RESPONSE_WINDOW,
    n_permutations: int = 1000,
    seed: int = 0,
) -> CorrelationReport:
    """Permutation test of phasic responses against each pattern's events.

    The statistic per event is the phasic maximum in the response window.
    The null distribution is built from surrogate event sets: each
    permutation draws as many uniform random times as the pattern has
    events, restricted to moments at least ``NULL_CLEARANCE_S`` away from
    every physiology-driving event, and contributes the mean statistic.
    Cohen's d uses the single-draw pooled spread, so it measures how far
    one response sits above one quiet moment.
    """
    lo, hi = response_window
    if not (0.0 <= lo < hi):
        raise ValidationError("response window must satisfy 0 <= lo < hi")
    if n_permutations < 100:
        raise ValidationError("need at least 100 permutations")

    by_pattern: dict[str, list[float]] = {}
    unknown = set()
    for ev in session.events:
        if ev.kind != "pattern_event":
            continue
        for pid in ev.pattern_ids:
            if pid not in catalog:
                unknown.add(pid)
            by_pattern.setdefault(pid, []).append(ev.t)
    if unknown:
        raise ValidationError(f"events reference unknown patterns: {sorted(unknown)}")
    if not by_pattern:
        return CorrelationReport((), response_window, n_permutations, seed)

    rate = phasic.rate_hz
    t0 = phasic.t0
    values = np.asarray(phasic.values, dtype=float)
    w = int(math.floor((hi - lo) * rate + 1e-9))
    if w < 1 or len(values) < w:
        raise ValidationError("response window shorter than one sample or longer than data")
    window_max = np.max(np.lib.stride_tricks.sliding_window_view(values, w), axis=1)

    def stat_index(t: float) -> int:
        return int(math.ceil((t + lo - t0) * rate - 1e-9))

    n_starts = len(window_max)
    excl = np.array(
        sorted(ev.t for ev in session.events if ev.kind in _PHYSIO_KINDS), dtype=float
    )
    grid_n = int(math.floor((len(values) - 1) / rate / _NULL_GRID_STEP_S)) + 1
    grid = t0 + _NULL_GRID_STEP_S * np.arange(grid_n)
    starts = np.ceil((grid + lo - t0) * rate - 1e-9).astype(int)
    ok = (starts >= 0) & (starts < n_starts)
    if len(excl):
        pos = np.searchsorted(excl, grid)
        d_right = np.where(pos < len(excl), excl[np.minimum(pos, len(excl) - 1)] - grid, np.inf)
        d_left = np.where(pos > 0, grid - excl[np.maximum(pos - 1, 0)], np.inf)
        ok &= np.minimum(d_left, d_right) >= NULL_CLEARANCE_S
    eligible = starts[ok]
    if len(eligible) == 0:
        raise DenseSessionError(
            f"no moment is {NULL_CLEARANCE_S:g} s clear of events; session too dense"
        )
    null_pool = window_max[eligible]

    rng = np.random.default_rng(seed)
    entries = []
    for pid in sorted(by_pattern):
        times = by_pattern[pid]
        obs = []
        for t in times:
            s = stat_index(t)
            if 0 <= s < n_starts:
                obs.append(window_max[s])
        if not obs:
            raise ValidationError(
                f"response window never fits the recording for pattern {pid!r}"
            )
        obs = np.asarray(obs)
        draws = null_pool[rng.integers(0, len(null_pool), size=(n_permutations, len(obs)))]
        null_means = draws.mean(axis=1)
        obs_mean = float(obs.mean())
        p = (1 + int(np.sum(null_means >= obs_mean))) / (1 + n_permutations)
        null_mean = float(draws.mean())
        var_obs = float(np.var(obs, ddof=1)) if len(obs) > 1 else 0.0
        singles = draws.ravel()
        var_null = float(np.var(singles, ddof=1))
        dof = (len(obs) - 1) + (len(singles) - 1)
        pooled = math.sqrt(((len(obs) - 1) * var_obs + (len(singles) - 1) * var_null) / dof)
        d = (obs_mean - null_mean) / max(pooled, 1e-12)
        entries.append(
            PatternStats(pid, len(times), obs_mean, null_mean, p, d)
        )
    return CorrelationReport(tuple(entries), response_window, n_permutations, seed)


def write_report(report: CorrelationReport) -> str:
    lines = [
        f"W {report.response_window[0]!r} {report.response_window[1]!r} "
        f"{report.n_permutations} {report.seed}"
    ]
    for e in report.entries:
        lines.append(
            f"C {e.pattern_id} {e.n_events} {e.mean_response_us!r} "
            f"{e.null_mean_us!r} {e.p_value!r} {e.effect_size_d!r}"
        )
    return "\n".join(lines) + "\n"


def read_report(text: str) -> CorrelationReport:
    header = None
    entries = []
    for line_no, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if parts[0] == "W":
            if header is not None:
                raise FormatError("duplicate W line", line_no)
            if len(parts) != 5:
                raise FormatError("expected 'W <lo> <hi> <n_permutations> <seed>'", line_no)
            try:
                header = (float(parts[1]), float(parts[2]), int(parts[3]), int(parts[4]))
            except ValueError:
                raise FormatError("bad number in W line", line_no) from None
        elif parts[0] == "C":
            if len(parts) != 7:
                raise FormatError("expected 'C <id> <n> <mean> <null> <p> <d>'", line_no)
            try:
                entries.append(
                    PatternStats(
                        parts[1],
                        int(parts[2]),
                        float(parts[3]),
                        float(parts[4]),
                        float(parts[5]),
                        float(parts[6]),
                    )
                )
            except ValueError:
                raise FormatError("bad number in C line", line_no) from None
        else:
            raise FormatError(f"unknown record {parts[0]!r}", line_no)
    if header is None:
        raise FormatError("missing W header line", 0)
    return CorrelationReport(tuple(entries), (header[0], header[1]), header[2], header[3])


# ----------------------------------------------------------------------
# closed loop

PULSE_RATE_HZ = 100.0
EDA_RATE_HZ = 25.0
_PULSE_FINAL_LAG_S = 0.18  # 6 sigma of the rendered bump width


@dataclass
class LoopTrace:
    """Everything one closed-loop run produced."""

    states: list
    directives: list
    events: list
    pulse: UniformSeries
    eda: UniformSeries
    baseline: Baseline
    model: PlayerModel
    controller: ControllerConfig
    seed: int

    def arousal(self) -> np.ndarray:
        return np.array([s.arousal for s in self.states])


def time_in_band(
    trace: LoopTrace, t_lo: float = None, t_hi: float = None, band=None
) -> float:
    """Fraction of states with arousal inside the band, over [t_lo, t_hi]."""
    band = band if band is not None else trace.controller.band
    picked = [
        s
        for s in trace.states
        if (t_lo is None or s.t >= t_lo) and (t_hi is None or s.t <= t_hi)
    ]
    if not picked:
        raise ValidationError("no states in the requested span")
    inside = sum(1 for s in picked if band[0] <= s.arousal <= band[1])
    return inside / len(picked)


def run_closed_loop(
    player: PlayerModel,
    cfg: ControllerConfig,
    catalog: Catalog,
    duration_s: float = 300.0,
    seed: int | None = None,
    *,
    initial_arousal: float = 0.2,
    schedule_events: tuple = (),
    preroll_s: float = 70.0,
    **processor_kwargs,
) -> LoopTrace:
    """Run the full detect, interpret, adapt cycle against the player model.

    The baseline comes from an internal quiescent pre-roll on a separate
    random stream, so the main phase consumes exactly the same draw
    sequence as an open-loop run with the same seed: with the controller
    unable to fire, the emitted signal streams are bit-identical to
    ``generate_session``. Directives become pattern events one master step
    after the evaluation that produced them; easing is encoded as payload
    -1 on the event, which the player applies as a negative gain.
    """
    if duration_s < 60.0:
        raise ValidationError("closed-loop run needs at least 60 s")
    if seed is not None:
        player = replace(player, seed=seed)
    lo, hi = cfg.band
    if lo > 0.0 or hi < 1.0:
        # a band this wide can never fire, so an all-lowering catalog is fine
        require_raise_pattern(catalog)

    master_hz = PULSE_RATE_HZ
    dt = 1.0 / master_hz
    eda_every = int(round(master_hz / EDA_RATE_HZ))
    n_master = int(round(duration_s * master_hz))
    eval_every = max(1, int(round(cfg.eval_period_s * master_hz)))

    # quiescent pre-roll on a derived stream for the calibration statistics
    pre_rng = np.random.default_rng([101, player.seed])
    pre_state = init_state(player, 0.0, pre_rng)
    n_pre = int(round(preroll_s * master_hz))
    _, pre_eda, _ = drive_plant(player, pre_state, [], n_pre, master_hz, eda_every)
    pre_pulse = render_pulse(pre_state.beats, 0.0, master_hz, n_pre)
    baseline = baseline_from_signals(
        UniformSeries(0.0, EDA_RATE_HZ, pre_eda),
        UniformSeries(0.0, master_hz, pre_pulse),
        min_duration_s=min(60.0, preroll_s),
    )

    proc = StreamProcessor(
        baseline, catalog, eval_period_s=cfg.eval_period_s, **processor_kwargs
    )
    proc.declare("sim", "pulse", master_hz)
    proc.declare("sim", "eda", EDA_RATE_HZ)

    state = init_state(player, initial_arousal)
    directives: list[AdaptationDirective] = []
    ctl = None
    fed = {"pulse": 0, "eda": 0}

    def feed_new(t_now: float, eda_vals: list, force_all: bool = False) -> None:
        final_n = n_master if force_all else (
            int(math.floor((t_now - _PULSE_FINAL_LAG_S) * master_hz + 1e-9)) + 1
        )
        final_n = min(max(final_n, 0), n_master)
        if final_n > fed["pulse"]:
            wave = render_pulse(state.beats, 0.0, master_hz, final_n)
            for i in range(fed["pulse"], final_n):
                proc.feed("sim", "pulse", i * dt, float(wave[i]))
            fed["pulse"] = final_n
        for j in range(fed["eda"], len(eda_vals)):
            proc.feed("sim", "eda", j * eda_every * dt, eda_vals[j])
        fed["eda"] = len(eda_vals)

    def hook(k: int, t: float, st, eda_idx, eda_vals):
        nonlocal ctl
        if k % eval_every or k == 0:
            return None
        feed_new(t, eda_vals)
        proc.poll()
        if not proc.states:
            return None
        ds, ctl = control_step(t, proc.states[-1], cfg, catalog, ctl)
        if not ds:
            return None
        directives.extend(ds)
        out = []
        for d in ds:
            payload = -1.0 if d.action == "ease_off" else None
            out.append(GameEvent((k + 1) * dt, "pattern_event", (d.pattern_id,), payload))
        for ev in out:
            proc.feed_event(ev)
        return out

    events_in = sorted(schedule_events, key=lambda ev: ev.t)
    for ev in events_in:
        proc.feed_event(ev)
    _, eda_vals, injected = drive_plant(
        player, state, events_in, n_master, master_hz, eda_every, hook
    )
    feed_new(duration_s, eda_vals, force_all=True)
    proc.finalize()

    pulse = UniformSeries(0.0, master_hz, render_pulse(state.beats, 0.0, master_hz, n_master))
    eda = UniformSeries(0.0, EDA_RATE_HZ, np.asarray(eda_vals))
    all_events = sorted(events_in + injected, key=lambda ev: ev.t)
    return LoopTrace(
        states=proc.states,
        directives=directives,
        events=all_events,
        pulse=pulse,
        eda=eda,
        baseline=baseline,
        model=player,
        controller=cfg,
        seed=player.seed,
    )


# ----------------------------------------------------------------------
# trace serialization


def write_loop_trace(trace: LoopTrace) -> str:
    """Line-delimited trace: E events, F affect states, A directives, by t."""
    entries = []
    for ev in trace.events:
        entries.append((ev.t, 0, format_event(ev)))
    for s in trace.states:
        entries.append((s.t, 1, format_affect_state(s)))
    for d in trace.directives:
        entries.append((d.t, 2, format_directive(d)))
    entries.sort(key=lambda e: (e[0], e[1]))
    return "".join(e[2] + "\n" for e in entries)


def read_loop_trace(text: str):
    """Parse a trace file back into (states, directives, events)."""
    states, directives, events = [], [], []
    for line_no, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        tag = line.split(None, 1)[0]
        if tag == "F":
            states.append(parse_affect_state(line, line_no))
        elif tag == "A":
            directives.append(parse_directive(line, line_no))
        elif tag == "E":
            events.append(parse_event_line(line.split(), line_no))
        else:
            raise FormatError(f"unknown record {tag!r}", line_no)
    return states, directives, events


def write_arousal_columns(states) -> str:
    """Columnar text for plotting: t, arousal, level per row."""
    lines = ["# t_s arousal level"]
    for s in states:
        lines.append(f"{s.t:.6f} {s.arousal!r} {s.level}")
    return "\n".join(lines) + "\n"
