"""Synthetic player physiology: the package's ground-truth oracle.

A first-order latent arousal state decays toward zero and jumps when game
events land, with per-pattern geometric habituation. Arousal drives heart
rate above a floor; each positive jump schedules a two-exponential skin
conductance response after a fixed latency. The module renders pulse and EDA
streams for a scheduled protocol and doubles as the plant for the closed
loop.

Event semantics inside `step`: every event kind is looked up in the model's
gain map via its pattern ids (phase markers and ratings simply have no
gains). A pattern_event with a negative payload is an ease marker: it
applies the negated habituated gain without advancing habituation and never
spawns an SCR kernel.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .catalog import Catalog, load_seed_catalog
from .errors import ConfigError, FormatError, ValidationError
from .session import (
    DeviceDecl,
    GameEvent,
    SessionMeta,
    SessionRecording,
    Stream,
    quantize_t,
    validate_recording,
)

PHASE_ORDER = ("calibration", "gaming", "strong_stimulus")

STIMULUS_CLASSES = ("stimulus_neutral", "stimulus_high", "stimulus_strong")

# nominal stimulus gains; strong = 3x the nominal raise-pattern gain
STIMULUS_GAINS = {
    "stimulus_neutral": 0.02,
    "stimulus_high": 0.2,
    "stimulus_strong": 0.45,
}

RAISE_GAIN = 0.15
LOWER_GAIN = -0.10

SIM_DEVICE = "sim"
DEFAULT_RATES = {"pulse": 100.0, "eda": 25.0}

# kernels older than this contribute < 2e-11 uS and are dropped
KERNEL_HORIZON_S = 50.0


def scr_kernel_curve(
    t: np.ndarray | float, tau1: float = 2.0, tau2: float = 0.75
) -> np.ndarray:
    """Two-exponential response shape normalized to unit peak.

    Zero for t <= 0; rises to 1 at t* = ln(tau1/tau2) * tau1*tau2/(tau1-tau2)
    (about 1.18 s at the defaults) and decays with tau1.
    """
    t = np.asarray(t, dtype=float)
    x = np.maximum(t, 0.0)
    raw = np.where(t > 0, np.exp(-x / tau1) - np.exp(-x / tau2), 0.0)
    t_peak = math.log(tau1 / tau2) * tau1 * tau2 / (tau1 - tau2)
    peak = math.exp(-t_peak / tau1) - math.exp(-t_peak / tau2)
    return raw / peak


def render_pulse(
    beats: Sequence[float],
    t0: float,
    rate_hz: float,
    n: int,
    width_s: float = 0.03,
    amp: float = 1.0,
) -> np.ndarray:
    """Pulse waveform on a uniform grid: one Gaussian bump per beat."""
    t = t0 + np.arange(n) / rate_hz
    v = np.zeros(n)
    for b in beats:
        lo = np.searchsorted(t, b - 6 * width_s)
        hi = np.searchsorted(t, b + 6 * width_s)
        if hi > lo:
            v[lo:hi] += amp * np.exp(-0.5 * ((t[lo:hi] - b) / width_s) ** 2)
    return v


@dataclass(frozen=True)
class PlayerModel:
    """Immutable simulation parameters; see module docstring for dynamics."""

    pattern_gains: Mapping[str, float] = field(default_factory=dict)
    tau_a_s: float = 20.0
    habituation_gamma: float = 0.9
    scr_tau1_s: float = 2.0
    scr_tau2_s: float = 0.75
    scr_coupling_us: float = 0.6
    scr_latency_s: float = 1.5
    hr_floor_bpm: float = 60.0
    hr_coupling_bpm: float = 30.0
    noise_sigma_eda_us: float = 0.003
    eda_base_us: float = 2.0
    pulse_width_s: float = 0.03
    seed: int = 0

    def __post_init__(self):
        if not self.tau_a_s > 0:
            raise ValidationError("tau_a_s must be positive")
        if not (self.scr_tau1_s > self.scr_tau2_s > 0):
            raise ValidationError("need scr_tau1_s > scr_tau2_s > 0")
        if not (0.0 < self.habituation_gamma <= 1.0):
            raise ValidationError("habituation_gamma must be in (0, 1]")
        for pid, g in self.pattern_gains.items():
            if not (-1.0 <= g <= 1.0):
                raise ValidationError(f"gain for {pid} outside [-1, 1]")
        if self.noise_sigma_eda_us < 0 or self.eda_base_us < 0:
            raise ValidationError("negative eda parameter")
        if self.scr_latency_s < 0 or self.pulse_width_s <= 0:
            raise ValidationError("bad latency or pulse width")
        if self.hr_floor_bpm <= 0 or self.hr_floor_bpm + self.hr_coupling_bpm >= 300:
            raise ValidationError("hr range must stay inside (0, 300) bpm")


def default_gains(catalog: Catalog | None = None) -> dict[str, float]:
    """Stimulus-class gains plus catalog-annotation-derived pattern gains."""
    if catalog is None:
        catalog = load_seed_catalog()
    gains = dict(STIMULUS_GAINS)
    for pid in catalog.ids():
        effect = catalog[pid].annotation.arousal_effect
        gains[pid] = {"raise": RAISE_GAIN, "lower": LOWER_GAIN, "neutral": 0.0}[effect]
    return gains


def default_model(catalog: Catalog | None = None, seed: int = 0, **overrides) -> PlayerModel:
    """Annotation-derived model; a pattern_gains override merges over the defaults."""
    gains = dict(default_gains(catalog))
    gains.update(overrides.pop("pattern_gains", {}))
    return PlayerModel(pattern_gains=gains, seed=seed, **overrides)


@dataclass
class PlayerState:
    """Mutable simulation state; create via init_state."""

    t: float
    a: float
    phase: float
    rng: np.random.Generator
    rep_counts: dict[str, int] = field(default_factory=dict)
    kernels: list[tuple[float, float]] = field(default_factory=list)  # (onset_t, amp)
    beats: list[float] = field(default_factory=list)


def init_state(
    model: PlayerModel,
    initial_arousal: float = 0.0,
    rng: np.random.Generator | None = None,
) -> PlayerState:
    if not (0.0 <= initial_arousal <= 1.0):
        raise ValidationError("initial arousal outside [0, 1]")
    return PlayerState(
        t=0.0,
        a=float(initial_arousal),
        phase=0.0,
        rng=rng if rng is not None else np.random.default_rng(model.seed),
    )


def _apply_events(model: PlayerModel, state: PlayerState, events) -> float:
    """Apply event jumps to the state; returns the total arousal delta."""
    delta = 0.0
    for ev in events:
        easing = ev.kind == "pattern_event" and ev.payload is not None and ev.payload < 0
        for pid in ev.pattern_ids:
            gain = model.pattern_gains.get(pid, 0.0)
            if gain == 0.0:
                continue
            rep = state.rep_counts.get(pid, 0)
            jump = gain * model.habituation_gamma**rep
            if easing:
                delta -= jump
                continue
            state.rep_counts[pid] = rep + 1
            delta += jump
            if jump > 0:
                state.kernels.append(
                    (ev.t + model.scr_latency_s, model.scr_coupling_us * jump)
                )
    return delta


def _eda_at(model: PlayerModel, state: PlayerState, t: float) -> float:
    """Noiseless EDA: tonic base plus every active kernel, evaluated at t."""
    tau1, tau2 = model.scr_tau1_s, model.scr_tau2_s
    t_peak = math.log(tau1 / tau2) * tau1 * tau2 / (tau1 - tau2)
    peak = math.exp(-t_peak / tau1) - math.exp(-t_peak / tau2)
    if state.kernels and state.kernels[0][0] < t - KERNEL_HORIZON_S:
        state.kernels = [k for k in state.kernels if k[0] >= t - KERNEL_HORIZON_S]
    eda = model.eda_base_us
    for onset, ampl in state.kernels:
        x = t - onset
        if x > 0:
            eda += ampl * (math.exp(-x / tau1) - math.exp(-x / tau2)) / peak
    return eda


def step(
    model: PlayerModel,
    state: PlayerState,
    dt: float,
    events_now: Sequence[GameEvent] = (),
) -> tuple[PlayerState, float, float]:
    """Advance the player by dt, applying the given events.

    Returns (state, eda_sample, pulse_progress): the noisy EDA value at the
    new time and the accumulated beat phase (beats elapsed, fractional).
    The state object is mutated and returned.
    """
    if not (0.0 < dt <= 0.1):
        raise ValidationError(f"dt {dt} outside (0, 0.1]")
    t_new = state.t + dt
    a = state.a * math.exp(-dt / model.tau_a_s)
    state.a = a  # _apply_events reads reps only, but keep state coherent
    a += _apply_events(model, state, events_now)
    a = min(1.0, max(0.0, a))

    bpm = model.hr_floor_bpm + model.hr_coupling_bpm * a
    phase_new = state.phase + bpm / 60.0 * dt
    c = math.floor(state.phase) + 1
    while c <= phase_new:
        frac = (c - state.phase) / (phase_new - state.phase)
        state.beats.append(state.t + frac * dt)
        c += 1

    eda = _eda_at(model, state, t_new)
    eda += model.noise_sigma_eda_us * float(state.rng.standard_normal())

    state.t = t_new
    state.a = a
    state.phase = phase_new
    return state, eda, phase_new


# ---------------------------------------------------------------------------
# protocol schedules


@dataclass(frozen=True)
class PhaseSchedule:
    events: tuple[GameEvent, ...]
    duration_s: float

    def __post_init__(self):
        times = [ev.t for ev in self.events]
        if any(b < a for a, b in zip(times, times[1:])):
            raise ValidationError("schedule events out of order")
        markers = [
            ev.pattern_ids[0]
            for ev in self.events
            if ev.kind == "phase_marker" and ev.pattern_ids
        ]
        order = [PHASE_ORDER.index(m) for m in markers if m in PHASE_ORDER]
        if order != sorted(order) or len(set(markers)) != len(markers):
            raise ValidationError("phase markers out of order or repeated")
        if self.events and not self.duration_s > self.events[-1].t:
            raise ValidationError("duration does not cover the last event")

    def phase_bounds(self) -> dict[str, tuple[float, float]]:
        """Phase name -> [start, end) using marker times and the duration."""
        markers = [
            (ev.pattern_ids[0], ev.t)
            for ev in self.events
            if ev.kind == "phase_marker" and ev.pattern_ids
        ]
        out: dict[str, tuple[float, float]] = {}
        for i, (name, t) in enumerate(markers):
            end = markers[i + 1][1] if i + 1 < len(markers) else self.duration_s
            out[name] = (t, end)
        return out


@dataclass(frozen=True)
class PhaseConfig:
    calibration_stimuli: int = 10
    stimulus_display_s: float = 6.0
    gaming_duration_s: float = 180.0
    gaming_event_rate_per_min: float = 6.0
    strong_neutral_s: float = 30.0
    lead_s: float = 2.0
    tail_s: float = 8.0
    phases: tuple[str, ...] = PHASE_ORDER
    seed: int = 0

    def __post_init__(self):
        if self.calibration_stimuli < 0:
            raise ValidationError("negative stimulus count")
        if min(self.stimulus_display_s, self.gaming_duration_s) <= 0:
            raise ValidationError("phase durations must be positive")
        if self.gaming_event_rate_per_min < 0 or self.strong_neutral_s < 0:
            raise ValidationError("negative rate or neutral span")
        if self.lead_s < 0 or self.tail_s < 0:
            raise ValidationError("negative lead or tail")
        seen = [PHASE_ORDER.index(p) for p in self.phases if p in PHASE_ORDER]
        if len(self.phases) != len(set(self.phases)) or len(seen) != len(self.phases):
            raise ValidationError(f"unknown or repeated phase in {self.phases}")
        if seen != sorted(seen):
            raise ValidationError("phases must follow calibration, gaming, strong_stimulus")


def build_protocol_schedule(
    cfg: PhaseConfig, catalog: Catalog | None = None
) -> PhaseSchedule:
    """Lay out the three-phase protocol as a timed event list.

    Calibration alternates neutral and high stimuli, each displayed for the
    configured span and followed by a synthetic rating drawn from the
    stimulus class (neutral 4-6, high 7-9). Gaming draws pattern events as a
    Poisson stream over the catalog's patterns. The last phase shows one
    neutral stimulus, waits, then fires the strong stimulus.
    """
    if catalog is None:
        catalog = load_seed_catalog()
    rng = np.random.default_rng(cfg.seed)
    events: list[GameEvent] = []
    t = 0.0
    for phase in cfg.phases:
        events.append(GameEvent(quantize_t(t), "phase_marker", (phase,)))
        if phase == "calibration":
            for k in range(cfg.calibration_stimuli):
                onset = t + cfg.lead_s + k * cfg.stimulus_display_s
                cls = "stimulus_neutral" if k % 2 == 0 else "stimulus_high"
                lo, hi = (4, 7) if cls == "stimulus_neutral" else (7, 10)
                events.append(GameEvent(quantize_t(onset), "stimulus_onset", (cls,)))
                events.append(
                    GameEvent(
                        quantize_t(onset + cfg.stimulus_display_s),
                        "rating",
                        (),
                        float(rng.integers(lo, hi)),
                    )
                )
            t += 2 * cfg.lead_s + cfg.calibration_stimuli * cfg.stimulus_display_s
        elif phase == "gaming":
            ids = catalog.ids()
            if cfg.gaming_event_rate_per_min > 0 and ids:
                s = t + cfg.lead_s
                end = t + cfg.gaming_duration_s
                while True:
                    s += float(rng.exponential(60.0 / cfg.gaming_event_rate_per_min))
                    if s >= end:
                        break
                    pid = str(rng.choice(ids))
                    events.append(GameEvent(quantize_t(s), "pattern_event", (pid,)))
            t += cfg.gaming_duration_s
        else:  # strong_stimulus
            events.append(
                GameEvent(
                    quantize_t(t + cfg.lead_s), "stimulus_onset", ("stimulus_neutral",)
                )
            )
            events.append(
                GameEvent(
                    quantize_t(t + cfg.lead_s + cfg.strong_neutral_s),
                    "stimulus_onset",
                    ("stimulus_strong",),
                )
            )
            t += 2 * cfg.lead_s + cfg.strong_neutral_s
    events.sort(key=lambda ev: ev.t)
    return PhaseSchedule(events=tuple(events), duration_s=quantize_t(t + cfg.tail_s))


# ---------------------------------------------------------------------------
# session generation


def generate_session(
    model: PlayerModel,
    schedule: PhaseSchedule,
    duration_s: float | None = None,
    rates: Mapping[str, float] | None = None,
    subject_id: str = "sim01",
    session_epoch: str = "2024-01-01T00:00:00",
) -> SessionRecording:
    """Run the player over a schedule and record pulse + eda streams.

    Deterministic for a given (model, schedule): the generator is seeded
    from model.seed on every call.
    """
    rates = dict(DEFAULT_RATES if rates is None else rates)
    unknown = set(rates) - {"pulse", "eda"}
    if unknown:
        raise ConfigError(f"unknown channel(s) {sorted(unknown)}")
    if not rates:
        raise ConfigError("need at least one of pulse, eda")
    master = float(rates.get("pulse", rates.get("eda")))
    if "pulse" in rates and master < 50.0:
        raise ConfigError("pulse rate below 50 Hz will not support beat detection")
    ratio = 1
    if "pulse" in rates and "eda" in rates:
        ratio = rates["pulse"] / rates["eda"]
        if abs(ratio - round(ratio)) > 1e-9 or ratio < 1:
            raise ConfigError("pulse rate must be an integer multiple of eda rate")
        ratio = int(round(ratio))
    dur = float(duration_s) if duration_s is not None else float(schedule.duration_s)
    if schedule.events and schedule.events[-1].t >= dur:
        raise ValidationError(
            f"schedule extends to {schedule.events[-1].t:.3f} s, beyond {dur:.3f} s"
        )
    if dur < 1.0:
        raise ValidationError("duration below 1 s")

    state = init_state(model)
    n_master = int(round(dur * master))
    emit_eda = "eda" in rates
    eda_idx, eda_vals, _ = drive_plant(
        model, state, schedule.events, n_master, master, ratio if emit_eda else 0
    )

    streams = {}
    decls = []
    if "pulse" in rates:
        n = n_master
        tgrid = np.round(np.arange(n) / master, 6)
        wave = render_pulse(state.beats, 0.0, master, n, model.pulse_width_s)
        decls.append(DeviceDecl(SIM_DEVICE, "pulse", master))
        streams[(SIM_DEVICE, "pulse")] = Stream(SIM_DEVICE, "pulse", tgrid, wave)
    if "eda" in rates:
        te = np.round(np.asarray(eda_idx) / master, 6)
        decls.append(DeviceDecl(SIM_DEVICE, "eda", float(rates["eda"])))
        streams[(SIM_DEVICE, "eda")] = Stream(
            SIM_DEVICE, "eda", te, np.maximum(np.asarray(eda_vals), 0.0)
        )
    rec = SessionRecording(
        meta=SessionMeta(subject_id, session_epoch, tuple(decls)),
        streams=streams,
        events=list(schedule.events),
    )
    validate_recording(rec)
    return rec


def drive_plant(
    model: PlayerModel,
    state: PlayerState,
    events: Sequence[GameEvent],
    n_master: int,
    master_hz: float,
    eda_every: int,
    hook=None,
) -> tuple[list[int], list[float], list[GameEvent]]:
    """Step the player across a uniform master grid, the one true loop.

    ``events`` must be time-sorted. An EDA sample is captured at every
    ``eda_every``-th master index (0 disables capture). ``hook(k, t, state,
    eda_idx, eda_vals)`` runs after each captured index and may return new
    GameEvents at times >= t; they join the event stream and are also
    returned, so a feedback controller can be spliced into the plant without
    touching this loop. With no hook the random draw sequence depends only on
    (model, state, events), which is what makes the open loop reproducible.

    Returns (eda_idx, eda_vals, injected_events).
    """
    dt = 1.0 / master_hz
    pending = list(events)
    injected: list[GameEvent] = []
    p = 0

    def take(upto: float) -> list[GameEvent]:
        nonlocal p
        out = []
        while p < len(pending) and pending[p].t <= upto + 1e-12:
            out.append(pending[p])
            p += 1
        return out

    def inject(new_events) -> None:
        nonlocal pending, p
        if not new_events:
            return
        for ev in new_events:
            injected.append(ev)
        merged = sorted(pending[p:] + list(new_events), key=lambda ev: ev.t)
        pending, p = merged, 0

    eda_idx: list[int] = []
    eda_vals: list[float] = []

    # sample 0 reflects the initial state; events at t <= 0 apply to it
    state.a = min(1.0, max(0.0, state.a + _apply_events(model, state, take(0.0))))
    if eda_every:
        eda0 = _eda_at(model, state, 0.0)
        eda0 += model.noise_sigma_eda_us * float(state.rng.standard_normal())
        eda_idx.append(0)
        eda_vals.append(eda0)
    if hook is not None:
        inject(hook(0, 0.0, state, eda_idx, eda_vals))
    for k in range(1, n_master):
        state, eda, _ = step(model, state, dt, take(k * dt))
        if eda_every and k % eda_every == 0:
            eda_idx.append(k)
            eda_vals.append(eda)
        if hook is not None:
            inject(hook(k, k * dt, state, eda_idx, eda_vals))
    return eda_idx, eda_vals, injected


# ---------------------------------------------------------------------------
# config files: "key value" lines, unknown keys rejected


_MODEL_FLOAT_KEYS = (
    "tau_a_s",
    "habituation_gamma",
    "scr_tau1_s",
    "scr_tau2_s",
    "scr_coupling_us",
    "scr_latency_s",
    "hr_floor_bpm",
    "hr_coupling_bpm",
    "noise_sigma_eda_us",
    "eda_base_us",
    "pulse_width_s",
)

_PHASE_KEYS = (
    "calibration_stimuli",
    "stimulus_display_s",
    "gaming_duration_s",
    "gaming_event_rate_per_min",
    "strong_neutral_s",
    "lead_s",
    "tail_s",
    "phases",
    "seed",
)


def _kv_lines(data: bytes | str):
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    for line_no, raw in enumerate(data.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split(None, 1)
        if len(parts) != 2:
            raise FormatError(f"expected 'key value', got {line!r}", line_no)
        yield line_no, parts[0], parts[1].strip()


def read_model_config(data: bytes | str, catalog: Catalog | None = None) -> PlayerModel:
    """Player model from key-value text; `gain.<pattern_id>` overrides gains."""
    kwargs: dict = {}
    gains = default_gains(catalog)
    for line_no, key, value in _kv_lines(data):
        try:
            if key in _MODEL_FLOAT_KEYS:
                kwargs[key] = float(value)
            elif key == "seed":
                kwargs[key] = int(value)
            elif key.startswith("gain."):
                gains[key[5:]] = float(value)
            else:
                raise FormatError(f"unknown model key {key!r}", line_no)
        except ValueError:
            raise FormatError(f"bad number {value!r} for {key}", line_no) from None
    try:
        return PlayerModel(pattern_gains=gains, **kwargs)
    except ValidationError as exc:
        raise ConfigError(f"invalid player model: {exc}") from None


def read_phase_config(data: bytes | str) -> PhaseConfig:
    kwargs: dict = {}
    for line_no, key, value in _kv_lines(data):
        try:
            if key in ("calibration_stimuli", "seed"):
                kwargs[key] = int(value)
            elif key == "phases":
                kwargs[key] = tuple(p for p in value.split(",") if p)
            elif key in _PHASE_KEYS:
                kwargs[key] = float(value)
            else:
                raise FormatError(f"unknown phase key {key!r}", line_no)
        except ValueError:
            raise FormatError(f"bad number {value!r} for {key}", line_no) from None
    try:
        return PhaseConfig(**kwargs)
    except ValidationError as exc:
        raise ConfigError(f"invalid phase config: {exc}") from None
