"""Affectively annotated game design pattern catalog.

Patterns are nodes with an affect annotation and typed relations
(instantiates, modulates, conflicts). The catalog file is line-oriented:

    V <version-tag>                 optional, at most once, before patterns
    P <id> <display name...>
      A <arousal_effect> <valence_effect> <latency_lo_s> <latency_hi_s>
      R <kind> <target_id>
      D <description text...>

Indented lines belong to the preceding P. `#` starts a comment line.
Exactly one A line per pattern; R and D lines are optional and repeatable
(D lines concatenate).
"""

from __future__ import annotations

import graphlib
import importlib.resources
from dataclasses import dataclass, field

from .errors import ConfigError, FormatError, ValidationError

AROUSAL_EFFECTS = ("raise", "lower", "neutral")
VALENCE_EFFECTS = ("positive", "negative", "neutral")
RELATION_KINDS = ("instantiates", "modulates", "conflicts")


@dataclass(frozen=True)
class AffectAnnotation:
    arousal_effect: str
    valence_effect: str
    latency_lo_s: float
    latency_hi_s: float

    def __post_init__(self):
        if self.arousal_effect not in AROUSAL_EFFECTS:
            raise ValidationError(f"unknown arousal effect {self.arousal_effect!r}")
        if self.valence_effect not in VALENCE_EFFECTS:
            raise ValidationError(f"unknown valence effect {self.valence_effect!r}")
        lo, hi = self.latency_lo_s, self.latency_hi_s
        if not (0.0 <= lo < hi <= 30.0):
            raise ValidationError(f"latency window ({lo}, {hi}) must satisfy 0 <= lo < hi <= 30")


@dataclass(frozen=True)
class Relation:
    kind: str
    target: str

    def __post_init__(self):
        if self.kind not in RELATION_KINDS:
            raise ValidationError(f"unknown relation kind {self.kind!r}")


@dataclass(frozen=True)
class DesignPattern:
    id: str
    name: str
    annotation: AffectAnnotation
    description: str = ""
    relations: tuple[Relation, ...] = ()

    def __post_init__(self):
        if not self.id or any(c.isspace() for c in self.id):
            raise ValidationError(f"bad pattern id {self.id!r}")
        for rel in self.relations:
            if rel.target == self.id:
                raise ValidationError(f"pattern {self.id} relates to itself")

    def targets(self, kind: str) -> tuple[str, ...]:
        return tuple(r.target for r in self.relations if r.kind == kind)


@dataclass(frozen=True)
class Catalog:
    patterns: dict[str, DesignPattern] = field(default_factory=dict)
    version: str = "1"

    def __post_init__(self):
        for pid, pat in self.patterns.items():
            if pid != pat.id:
                raise ValidationError(f"key {pid!r} does not match pattern id {pat.id!r}")

    def __contains__(self, pattern_id: str) -> bool:
        return pattern_id in self.patterns

    def __getitem__(self, pattern_id: str) -> DesignPattern:
        return self.patterns[pattern_id]

    def __len__(self) -> int:
        return len(self.patterns)

    def ids(self) -> tuple[str, ...]:
        return tuple(sorted(self.patterns))


# ---------------------------------------------------------------------------
# parsing and writing


def parse_catalog(data: bytes | str) -> Catalog:
    """Parse without validating graph-level invariants (see load_catalog)."""
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    version = "1"
    seen_version = False
    patterns: dict[str, DesignPattern] = {}
    current: dict | None = None

    def close(line_no):
        nonlocal current
        if current is None:
            return
        if current["annotation"] is None:
            raise FormatError(f"pattern {current['id']} has no A line", line_no)
        try:
            pat = DesignPattern(
                id=current["id"],
                name=current["name"],
                annotation=current["annotation"],
                description=" ".join(current["desc"]),
                relations=tuple(current["relations"]),
            )
        except ValidationError as exc:
            raise FormatError(str(exc), line_no) from None
        patterns[pat.id] = pat
        current = None

    for line_no, raw in enumerate(data.splitlines(), start=1):
        stripped = raw.strip()
        if not stripped or stripped.startswith("#"):
            continue
        indented = raw[0].isspace()
        parts = stripped.split()
        tag = parts[0]
        if not indented:
            if tag == "V":
                if seen_version or patterns or current is not None:
                    raise FormatError("V line must come first, once", line_no)
                if len(parts) != 2:
                    raise FormatError("V needs exactly one tag", line_no)
                version = parts[1]
                seen_version = True
            elif tag == "P":
                if len(parts) < 3:
                    raise FormatError("P needs an id and a name", line_no)
                close(line_no)
                if parts[1] in patterns:
                    raise FormatError(f"duplicate pattern id {parts[1]!r}", line_no)
                current = {
                    "id": parts[1],
                    "name": " ".join(parts[2:]),
                    "annotation": None,
                    "relations": [],
                    "desc": [],
                }
            else:
                raise FormatError(f"unknown top-level tag {tag!r}", line_no)
            continue
        if current is None:
            raise FormatError("indented line outside a pattern block", line_no)
        if tag == "A":
            if current["annotation"] is not None:
                raise FormatError("second A line in one pattern", line_no)
            if len(parts) != 5:
                raise FormatError("A needs arousal, valence, lat_lo, lat_hi", line_no)
            try:
                current["annotation"] = AffectAnnotation(
                    parts[1], parts[2], float(parts[3]), float(parts[4])
                )
            except ValueError:
                raise FormatError(f"bad latency number in {stripped!r}", line_no) from None
            except ValidationError as exc:
                raise FormatError(str(exc), line_no) from None
        elif tag == "R":
            if len(parts) != 3:
                raise FormatError("R needs a kind and a target id", line_no)
            try:
                current["relations"].append(Relation(parts[1], parts[2]))
            except ValidationError as exc:
                raise FormatError(str(exc), line_no) from None
        elif tag == "D":
            current["desc"].append(" ".join(parts[1:]))
        else:
            raise FormatError(f"unknown pattern tag {tag!r}", line_no)
    close(None)
    return Catalog(patterns=patterns, version=version)


def write_catalog(cat: Catalog) -> bytes:
    lines = [f"V {cat.version}"]
    for pid in cat.ids():
        pat = cat[pid]
        lines.append(f"P {pat.id} {pat.name}")
        a = pat.annotation
        lines.append(
            f"  A {a.arousal_effect} {a.valence_effect} {a.latency_lo_s!r} {a.latency_hi_s!r}"
        )
        for rel in pat.relations:
            lines.append(f"  R {rel.kind} {rel.target}")
        if pat.description:
            lines.append(f"  D {pat.description}")
    return ("\n".join(lines) + "\n").encode("utf-8")


def load_catalog(data: bytes | str) -> Catalog:
    """Parse and fully validate; raises on any violation."""
    cat = parse_catalog(data)
    violations = validate_catalog(cat)
    if violations:
        raise ValidationError("invalid catalog: " + "; ".join(violations))
    return cat


def load_seed_catalog() -> Catalog:
    """The 9-pattern catalog shipped with the package."""
    text = (
        importlib.resources.files("affectloop")
        .joinpath("data/patterns.txt")
        .read_text(encoding="utf-8")
    )
    return load_catalog(text)


# ---------------------------------------------------------------------------
# validation


def validate_catalog(cat: Catalog) -> list[str]:
    """Graph-level rule check; returns human-readable violations, sorted."""
    out: list[str] = []
    for pid in cat.ids():
        for rel in cat[pid].relations:
            if rel.target not in cat:
                out.append(f"unresolved relation target: {pid} {rel.kind} {rel.target}")
    for pid in cat.ids():
        for target in cat[pid].targets("conflicts"):
            if target in cat and pid not in cat[target].targets("conflicts"):
                out.append(f"asymmetric conflict: {pid} conflicts {target} but not back")
    graph = {
        pid: [t for t in cat[pid].targets("instantiates") if t in cat] for pid in cat.ids()
    }
    try:
        tuple(graphlib.TopologicalSorter(graph).static_order())
    except graphlib.CycleError as exc:
        cycle = sorted(set(exc.args[1]))
        out.append("instantiates cycle: " + " ".join(cycle))
    return sorted(out)


# ---------------------------------------------------------------------------
# queries


def effective_set(cat: Catalog, selected) -> tuple[frozenset[str], list[tuple[str, str]]]:
    """Close a selection under instantiates edges and list internal conflicts.

    Returns (active, conflict_pairs); pairs are (a, b) with a < b, sorted.
    """
    for pid in selected:
        if pid not in cat:
            raise ValidationError(f"unknown pattern id {pid!r}")
    active = set(selected)
    frontier = list(selected)
    while frontier:
        pid = frontier.pop()
        for target in cat[pid].targets("instantiates"):
            if target not in active:
                active.add(target)
                frontier.append(target)
    pairs = set()
    for pid in active:
        for target in cat[pid].targets("conflicts"):
            if target in active:
                pairs.add((min(pid, target), max(pid, target)))
    return frozenset(active), sorted(pairs)


def conflicts_with_set(cat: Catalog, pattern_id: str, active) -> bool:
    """True when pattern_id conflicts with any active pattern, either way."""
    pat = cat[pattern_id]
    if any(t in active for t in pat.targets("conflicts")):
        return True
    return any(pattern_id in cat[a].targets("conflicts") for a in active if a in cat)


def recommend(cat: Catalog, selected, goal: str, k: int) -> list[str]:
    """Rank patterns a designer could add to push arousal toward a goal.

    Candidates are patterns outside the effective set of ``selected`` that do
    not conflict with it, ordered by: annotation matches the goal, then
    modulates some active pattern, then id. Deterministic by construction.
    """
    if goal not in ("raise", "lower"):
        raise ValidationError(f"goal must be raise or lower, not {goal!r}")
    if k < 0:
        raise ValidationError("k must be >= 0")
    active, _ = effective_set(cat, selected)
    candidates = [
        pid
        for pid in cat.ids()
        if pid not in active and not conflicts_with_set(cat, pid, active)
    ]

    def key(pid: str):
        pat = cat[pid]
        matches = pat.annotation.arousal_effect == goal
        modulates = any(t in active for t in pat.targets("modulates"))
        return (not matches, not modulates, pid)

    return sorted(candidates, key=key)[:k]


def first_eligible(cat: Catalog, effect: str, active) -> str | None:
    """Lexicographically first pattern with the given arousal effect that
    does not conflict with the active set; None when there is none."""
    for pid in cat.ids():
        if cat[pid].annotation.arousal_effect != effect:
            continue
        if conflicts_with_set(cat, pid, active):
            continue
        return pid
    return None


def require_raise_pattern(cat: Catalog) -> None:
    if not any(cat[p].annotation.arousal_effect == "raise" for p in cat.ids()):
        raise ConfigError("catalog has no arousal-raising pattern")
