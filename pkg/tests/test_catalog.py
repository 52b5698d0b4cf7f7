"""Catalog parsing, validation, closure, and recommendation tests."""

from __future__ import annotations

from itertools import combinations

import pytest

from affectloop.catalog import (
    AffectAnnotation,
    Catalog,
    DesignPattern,
    Relation,
    conflicts_with_set,
    effective_set,
    first_eligible,
    load_catalog,
    load_seed_catalog,
    parse_catalog,
    recommend,
    require_raise_pattern,
    validate_catalog,
    write_catalog,
)
from affectloop.errors import ConfigError, FormatError, ValidationError

SEED_IDS = (
    "collecting",
    "competition",
    "enemies",
    "imperfect_information",
    "indirect_information",
    "perfect_information",
    "pick_ups",
    "time_limit",
    "traversing",
)


@pytest.fixture(scope="module")
def seed():
    return load_seed_catalog()


def pat(pid, effect="neutral", relations=()):
    return DesignPattern(
        id=pid,
        name=pid.title(),
        annotation=AffectAnnotation(effect, "neutral", 1.0, 5.0),
        relations=tuple(Relation(k, t) for k, t in relations),
    )


def make_cat(*patterns):
    return Catalog(patterns={p.id: p for p in patterns})


# ---------------------------------------------------------------------------
# parsing


def test_seed_catalog_loads_nine_patterns(seed):
    assert len(seed) == 9
    assert seed.ids() == SEED_IDS
    assert validate_catalog(seed) == []
    assert seed["pick_ups"].name == "Pick-Ups"
    assert seed["enemies"].annotation.arousal_effect == "raise"
    assert seed["perfect_information"].annotation.arousal_effect == "lower"
    assert "pick_ups" in seed["collecting"].targets("instantiates")


def test_empty_catalog_is_valid():
    cat = load_catalog(b"# nothing here\n")
    assert len(cat) == 0 and cat.version == "1"


def test_duplicate_id_rejected():
    text = "P a Alpha\n  A neutral neutral 1 5\nP a Alpha2\n  A neutral neutral 1 5\n"
    with pytest.raises(FormatError, match="duplicate pattern id 'a'"):
        parse_catalog(text)


def test_version_line():
    cat = parse_catalog("V 2024.1\nP a Alpha\n  A neutral neutral 1 5\n")
    assert cat.version == "2024.1"
    with pytest.raises(FormatError, match="V line"):
        parse_catalog("P a Alpha\n  A neutral neutral 1 5\nV 2\n")


@pytest.mark.parametrize(
    "text,err",
    [
        ("Q what\n", "unknown top-level"),
        ("  A neutral neutral 1 5\n", "outside a pattern"),
        ("P a Alpha\n", "no A line"),
        ("P a Alpha\n  A neutral neutral 1 5\n  A neutral neutral 1 5\n", "second A"),
        ("P a Alpha\n  A neutral neutral five 6\n", "bad latency"),
        ("P a Alpha\n  A neutral neutral 5 1\n", "latency window"),
        ("P a Alpha\n  A sideways neutral 1 5\n", "arousal effect"),
        ("P a Alpha\n  A neutral neutral 1 5\n  R blocks b\n", "relation kind"),
        ("P a Alpha\n  A neutral neutral 1 5\n  R conflicts a\n", "itself"),
        ("P a\n", "needs an id and a name"),
    ],
)
def test_parse_errors(text, err):
    with pytest.raises(FormatError, match=err):
        parse_catalog(text)


def test_catalog_roundtrip(seed):
    back = load_catalog(write_catalog(seed))
    assert back.version == seed.version
    assert back.ids() == seed.ids()
    for pid in seed.ids():
        assert back[pid] == seed[pid]


# ---------------------------------------------------------------------------
# validation


def test_one_way_conflict_flagged():
    cat = make_cat(pat("a", relations=[("conflicts", "b")]), pat("b"))
    out = validate_catalog(cat)
    assert len(out) == 1 and "asymmetric conflict" in out[0]


def test_instantiates_cycle_flagged():
    cat = make_cat(
        pat("a", relations=[("instantiates", "b")]),
        pat("b", relations=[("instantiates", "a")]),
    )
    out = validate_catalog(cat)
    assert any("cycle" in v and "a" in v and "b" in v for v in out)


def test_unresolved_target_flagged():
    cat = make_cat(pat("a", relations=[("modulates", "ghost")]))
    out = validate_catalog(cat)
    assert out == ["unresolved relation target: a modulates ghost"]


def test_load_catalog_raises_on_violations():
    text = "P a Alpha\n  A neutral neutral 1 5\n  R conflicts b\nP b Beta\n  A neutral neutral 1 5\n"
    with pytest.raises(ValidationError, match="asymmetric"):
        load_catalog(text)


# ---------------------------------------------------------------------------
# effective set


def test_effective_set_empty(seed):
    active, pairs = effective_set(seed, set())
    assert active == frozenset() and pairs == []


def test_effective_set_instantiates_closure(seed):
    active, pairs = effective_set(seed, {"collecting"})
    assert active == {"collecting", "pick_ups"}
    assert pairs == []


def test_effective_set_conflict_pair(seed):
    active, pairs = effective_set(seed, {"perfect_information", "imperfect_information"})
    assert pairs == [("imperfect_information", "perfect_information")]


def test_effective_set_unknown_id(seed):
    with pytest.raises(ValidationError, match="unknown pattern"):
        effective_set(seed, {"minibosses"})


def all_subsets():
    for r in range(len(SEED_IDS) + 1):
        yield from (set(c) for c in combinations(SEED_IDS, r))


def test_effective_set_monotone_and_idempotent(seed):
    for sel in all_subsets():
        active, _ = effective_set(seed, sel)
        again, _ = effective_set(seed, active)
        assert again == active
        for extra in SEED_IDS:
            if extra not in sel:
                bigger, _ = effective_set(seed, sel | {extra})
                assert active <= bigger


# ---------------------------------------------------------------------------
# recommendation


def test_recommend_raise_for_time_limit(seed):
    out = recommend(seed, {"time_limit"}, "raise", 8)
    assert out.index("enemies") < out.index("pick_ups")
    # raise-annotated candidates first, in id order
    assert out[:3] == ["competition", "enemies", "imperfect_information"]
    # then the modulates tie-break: indirect_information modulates time_limit
    assert out[3] == "indirect_information"


def test_recommend_falls_through_to_tiebreak(seed):
    # the only lower-annotated pattern conflicts with the selection
    out = recommend(seed, {"imperfect_information"}, "lower", 3)
    assert len(out) == 3
    assert "perfect_information" not in out
    assert out == ["collecting", "competition", "enemies"]


def test_recommend_all_selected_is_empty(seed):
    assert recommend(seed, set(SEED_IDS), "raise", 5) == []


def test_recommend_never_conflicts_with_active(seed):
    for sel in all_subsets():
        active, _ = effective_set(seed, sel)
        for goal in ("raise", "lower"):
            for pid in recommend(seed, sel, goal, 9):
                assert pid not in active
                assert not conflicts_with_set(seed, pid, active)


def test_recommend_deterministic(seed):
    a = recommend(seed, {"enemies", "collecting"}, "raise", 6)
    b = recommend(seed, {"collecting", "enemies"}, "raise", 6)
    assert a == b
    with pytest.raises(ValidationError):
        recommend(seed, set(), "sideways", 3)


# ---------------------------------------------------------------------------
# controller support queries


def test_first_eligible_raise(seed):
    assert first_eligible(seed, "raise", frozenset()) == "competition"
    assert first_eligible(seed, "lower", frozenset()) == "perfect_information"
    assert first_eligible(seed, "lower", frozenset({"imperfect_information"})) is None


def test_require_raise_pattern(seed):
    require_raise_pattern(seed)
    with pytest.raises(ConfigError):
        require_raise_pattern(make_cat(pat("a"), pat("b", effect="lower")))
