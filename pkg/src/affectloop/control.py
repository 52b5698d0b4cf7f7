"""Arousal band controller.

Rule-based difficulty adaptation: when the estimated arousal leaves the
target band and stays out for a dwell period, emit a directive nudging it
back, then hold fire for a cooldown. Pattern choice is the
lexicographically first arousal-raising pattern that does not conflict
with whatever patterns the surrounding game reports as active, so the
whole step is a pure function of its inputs.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

from .affect import AffectState
from .catalog import Catalog, first_eligible
from .errors import ConfigError, FormatError, ValidationError

ACTIONS = ("inject_event", "ease_off")
REASONS = ("below_band", "above_band")

# slack for dwell/cooldown comparisons on accumulated float timestamps
_T_EPS = 1e-9


@dataclass(frozen=True)
class ControllerConfig:
    band: tuple[float, float] = (0.4, 0.7)
    dwell_s: float = 3.0
    cooldown_s: float = 5.0
    eval_period_s: float = 1.0

    def __post_init__(self):
        lo, hi = self.band
        if not (0.0 <= lo < hi <= 1.0):
            raise ValidationError(f"band must satisfy 0 <= lo < hi <= 1, got {self.band}")
        if self.dwell_s < 0:
            raise ValidationError("dwell_s must be >= 0")
        if self.cooldown_s < 0:
            raise ValidationError("cooldown_s must be >= 0")
        if self.eval_period_s <= 0:
            raise ValidationError("eval_period_s must be > 0")


@dataclass(frozen=True)
class AdaptationDirective:
    t: float
    action: str
    pattern_id: str
    reason: str

    def __post_init__(self):
        if self.action not in ACTIONS:
            raise ValidationError(f"unknown action {self.action!r}")
        if self.reason not in REASONS:
            raise ValidationError(f"unknown reason {self.reason!r}")
        if not self.pattern_id or any(c.isspace() for c in self.pattern_id):
            raise ValidationError(f"bad pattern id {self.pattern_id!r}")


@dataclass(frozen=True)
class ControllerState:
    """Carries band-violation tracking between evaluation calls.

    `active` is the set of pattern ids the game currently runs; the
    controller reads it for conflict checks but never mutates it, since a
    directive is a request to the game, not a catalog state change.
    """

    violation_side: str | None = None
    violation_since: float | None = None
    last_directive_t: float | None = None
    active: frozenset = frozenset()


def control_step(now, state, cfg: ControllerConfig, catalog: Catalog, ctl_state=None):
    """One controller evaluation; returns (directives, new ctl_state)."""
    if ctl_state is None:
        ctl_state = ControllerState()
    arousal = state.arousal if isinstance(state, AffectState) else float(state)
    lo, hi = cfg.band
    if arousal < lo:
        side = "below"
    elif arousal > hi:
        side = "above"
    else:
        return [], replace(ctl_state, violation_side=None, violation_since=None)

    since = ctl_state.violation_since if ctl_state.violation_side == side else now
    out = replace(ctl_state, violation_side=side, violation_since=since)
    if now - since < cfg.dwell_s - _T_EPS:
        return [], out
    last = ctl_state.last_directive_t
    if last is not None and now - last < cfg.cooldown_s - _T_EPS:
        return [], out

    pid = first_eligible(catalog, "raise", ctl_state.active)
    if pid is None:
        raise ConfigError("no arousal-raising pattern available outside the active set")
    if side == "below":
        directive = AdaptationDirective(now, "inject_event", pid, "below_band")
    else:
        directive = AdaptationDirective(now, "ease_off", pid, "above_band")
    return [directive], replace(out, last_directive_t=now)


def format_directive(d: AdaptationDirective) -> str:
    return f"A {d.t:.6f} {d.action} {d.pattern_id} {d.reason}"


def parse_directive(line: str, line_no: int = 0) -> AdaptationDirective:
    parts = line.split()
    if len(parts) != 5 or parts[0] != "A":
        raise FormatError("expected 'A <t> <action> <pattern_id> <reason>'", line_no)
    try:
        t = float(parts[1])
    except ValueError:
        raise FormatError(f"bad timestamp {parts[1]!r}", line_no) from None
    try:
        return AdaptationDirective(t, parts[2], parts[3], parts[4])
    except ValidationError as exc:
        raise FormatError(str(exc), line_no) from None


def write_directives(directives) -> str:
    return "".join(format_directive(d) + "\n" for d in directives)


def read_directives(text: str) -> list:
    out = []
    for line_no, line in enumerate(text.splitlines(), start=1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        out.append(parse_directive(line.strip(), line_no))
    return out
