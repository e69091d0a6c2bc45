"""Shared test machinery: random machine builders and the brute-force
matching oracle that the deterministic evaluator is checked against.

The oracle deliberately re-derives everything from first principles: it
enumerates every injective assignment of generated transitions onto
same-key ground-truth transitions (each generated transition may also stay
unmatched) and reports the lexicographic maximum of
(transition TPs, guard TPs, action TPs). No code is shared with the
matcher beyond the public name/text canonicalizers it is specified
against.
"""

from __future__ import annotations

import random
from collections import Counter
from typing import Optional

import hypothesis.strategies as st

from smforge import ir
from smforge.evaluation import AliasMap

# ---------------------------------------------------------------------------
# Random flat machine pairs (seeded random, used by the oracle check)

_STATE_POOL = ["Alpha", "Beta", "Gamma", "Delta", "Echo", "Foxtrot", "Golf", "Hotel"]
_EVENT_POOL = ["go", "stop", "tick", None]
_GUARD_POOL = [None, "x > 0", "ready"]
_ACTION_POOL = ["beep", "log", "reset"]


def random_flat_machine(
    rng: random.Random,
    name: str,
    max_states: int = 6,
    max_transitions: int = 8,
    dense: bool = False,
) -> ir.StateMachine:
    """Flat machine; ``dense`` shrinks the name/event space so transition
    keys collide often, which is where one-to-one matching gets hard."""
    if dense:
        n = rng.randint(2, 3)
        states = rng.sample(_STATE_POOL[:2], 2) if rng.random() < 0.5 else rng.sample(_STATE_POOL[:3], n)
        events = ["go", None]
        n_transitions = rng.randint(4, max_transitions)
    else:
        n = rng.randint(1, max_states)
        states = rng.sample(_STATE_POOL, n)
        events = _EVENT_POOL
        n_transitions = rng.randint(0, max_transitions)
    transitions = []
    for _ in range(n_transitions):
        actions = [rng.choice(_ACTION_POOL) for _ in range(rng.randint(0, 2))]
        transitions.append(
            ir.transition(
                rng.choice(states),
                rng.choice(states),
                event=rng.choice(events),
                guard=rng.choice(_GUARD_POOL),
                actions=actions,
            )
        )
    return ir.machine(name, [ir.simple(s) for s in states], transitions)


def random_pair(rng: random.Random) -> tuple[ir.StateMachine, ir.StateMachine]:
    dense = rng.random() < 0.5
    return (
        random_flat_machine(rng, "gen", dense=dense),
        random_flat_machine(rng, "truth", dense=dense),
    )


# ---------------------------------------------------------------------------
# Brute-force oracle

def _state_mapping_by_name(gen: ir.StateMachine, truth: ir.StateMachine) -> dict[str, str]:
    gen_names = {ir.normalize_name(n.name) for n, _, _ in ir.iter_states(gen)}
    truth_names = {ir.normalize_name(n.name) for n, _, _ in ir.iter_states(truth)}
    return {name: name for name in gen_names & truth_names}


def _gen_key(t: ir.Transition, mapping: dict[str, str], aliases: AliasMap) -> Optional[tuple]:
    src, tgt = mapping.get(t.source), mapping.get(t.target)
    if src is None or tgt is None:
        return None
    event = ""
    if t.event:
        canon = ir.normalize_name(t.event)
        event = aliases.lookup("event", canon) or canon
    return (src, tgt, event)


def _truth_key(t: ir.Transition) -> tuple:
    return (t.source, t.target, ir.normalize_name(t.event) if t.event else "")


def _gen_annotations(t: ir.Transition, aliases: AliasMap) -> tuple[Optional[str], tuple[str, ...]]:
    guard = None
    if t.guard is not None:
        guard = ir.canonical_text(t.guard)
        guard = aliases.lookup("guard", guard) or guard
    actions = []
    for a in t.actions:
        canon = ir.canonical_text(a)
        actions.append(aliases.lookup("action", canon) or canon)
    return guard, tuple(actions)


def _truth_annotations(t: ir.Transition) -> tuple[Optional[str], tuple[str, ...]]:
    guard = ir.canonical_text(t.guard) if t.guard is not None else None
    return guard, tuple(ir.canonical_text(a) for a in t.actions)


def brute_force_max_tp(
    gen: ir.StateMachine,
    truth: ir.StateMachine,
    aliases: Optional[AliasMap] = None,
    mapping: Optional[dict[str, str]] = None,
) -> tuple[int, int, int]:
    """Lexicographic maximum (transition, guard, action) true positives over
    every injective transition assignment."""
    aliases = aliases or AliasMap()
    if mapping is None:
        mapping = _state_mapping_by_name(gen, truth)

    gens = []
    for t in gen.transitions:
        key = _gen_key(t, mapping, aliases)
        guard, actions = _gen_annotations(t, aliases)
        gens.append((key, guard, actions))
    truths = []
    for t in truth.transitions:
        guard, actions = _truth_annotations(t)
        truths.append((_truth_key(t), guard, actions))

    best = (0, 0, 0)

    def rec(i: int, used: frozenset, t_tp: int, g_tp: int, a_tp: int) -> None:
        nonlocal best
        if i == len(gens):
            best = max(best, (t_tp, g_tp, a_tp))
            return
        key, guard, actions = gens[i]
        rec(i + 1, used, t_tp, g_tp, a_tp)  # leave unmatched
        if key is None:
            return
        for j, (tkey, tguard, tactions) in enumerate(truths):
            if j in used or tkey != key:
                continue
            g_hit = int(guard is not None and guard == tguard)
            a_hit = sum((Counter(actions) & Counter(tactions)).values())
            rec(i + 1, used | {j}, t_tp + 1, g_tp + g_hit, a_tp + a_hit)

    rec(0, frozenset(), 0, 0, 0)
    return best


# ---------------------------------------------------------------------------
# Hypothesis strategies for valid machines (used by round-trip properties)

_IDENT = st.from_regex(r"[A-Za-z][A-Za-z0-9_]{0,7}", fullmatch=True)
_SAFE_TEXT = st.text(
    alphabet="abcdefghijklmnopqrstuvwxyz0123456789 ()<>=+-_", min_size=1, max_size=12
).map(lambda s: s.strip()).filter(bool)


@st.composite
def machines(draw) -> ir.StateMachine:
    """Valid machines with optional nesting, regions, history and
    annotated transitions."""
    total = draw(st.integers(min_value=1, max_value=7))
    names: list[str] = []
    canon_seen: set[str] = set()
    i = 0
    while len(names) < total:
        base = draw(_IDENT)
        candidate = f"{base}{i}"
        canon = ir.normalize_name(candidate)
        if canon not in canon_seen:
            canon_seen.add(canon)
            names.append(candidate)
        i += 1

    # Partition names into a forest: some roots composite with 1-2 regions.
    nodes: list[ir.StateNode] = []
    remaining = list(names)
    while remaining:
        name = remaining.pop(0)
        make_composite = len(remaining) >= 1 and draw(st.booleans())
        if not make_composite:
            nodes.append(ir.simple(name))
            continue
        n_regions = draw(st.integers(min_value=1, max_value=min(2, len(remaining))))
        regions = []
        for _ in range(n_regions):
            size = draw(st.integers(min_value=1, max_value=min(2, len(remaining))))
            members = [remaining.pop(0) for _ in range(size)]
            regions.append(ir.region([ir.simple(m) for m in members]))
            if not remaining:
                break
        has_history = draw(st.booleans())
        nodes.append(ir.composite(name, regions, has_history=has_history))

    all_canon = [ir.normalize_name(n) for n in names]
    n_transitions = draw(st.integers(min_value=0, max_value=6))
    transitions = []
    seen = set()
    for _ in range(n_transitions):
        src = draw(st.sampled_from(all_canon))
        tgt = draw(st.sampled_from(all_canon))
        event = draw(st.one_of(st.none(), _IDENT))
        guard = draw(st.one_of(st.none(), _SAFE_TEXT))
        actions = draw(st.lists(_SAFE_TEXT, max_size=2))
        # Exact duplicates cannot survive the table round trip (dedupe
        # collapses them by design), so the generator avoids them.
        key = (src, tgt, event, guard, tuple(actions))
        if key in seen:
            continue
        seen.add(key)
        transitions.append(ir.Transition(src, tgt, event=event, guard=guard, actions=tuple(actions)))

    sm = ir.machine(draw(_IDENT), nodes, transitions)
    assert not ir.validate(sm), ir.validate(sm)
    return sm
