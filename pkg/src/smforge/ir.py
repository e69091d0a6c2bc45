"""In-memory representation of hierarchical UML state machines.

The model covers the features the rest of the pipeline scores: simple and
composite states, orthogonal regions inside composites, a shallow-history
flag per composite, and transitions annotated with an optional trigger
event, an optional guard expression, and an ordered list of actions.
Guards and actions are opaque text; they are compared, never interpreted.

Values are immutable once constructed. Build trees bottom-up with the
``simple``/``composite``/``region``/``transition``/``machine`` helpers,
which canonicalize transition endpoints and auto-name regions.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterator, Optional

SIMPLE = "simple"
COMPOSITE = "composite"

#: The seven scored component keys, in reporting order.
COMPONENTS = (
    "states",
    "transitions",
    "guards",
    "actions",
    "hierarchical",
    "parallel",
    "history",
)

_IDENT_RE = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")
_NORM_STRIP_RE = re.compile(r"[^a-z0-9]+")


class NameUnusable(ValueError):
    """Raised when a name has no alphanumeric content to canonicalize."""


class InvalidMachine(ValueError):
    """Raised when an operation requires a machine that passes validation."""

    def __init__(self, violations: list["Violation"]):
        self.violations = violations
        detail = "; ".join(str(v) for v in violations[:5])
        super().__init__(f"machine fails validation: {detail}")


def normalize_name(raw: str) -> str:
    """Collapse a name to its canonical token: lowercase alphanumerics only.

    Spaces, underscores, punctuation and case distinctions all vanish, so
    ``"Paper_Jam"``, ``"paperJam"`` and ``"paper jam"`` share one canonical
    form. Idempotent. Raises :class:`NameUnusable` if nothing survives.
    """
    token = _NORM_STRIP_RE.sub("", raw.lower())
    if not token:
        raise NameUnusable(f"no usable characters in name {raw!r}")
    return token


def canonical_text(raw: str) -> str:
    """Canonical form for opaque guard/action text: lowercase, single
    spaces, no trailing punctuation. Used wherever such text is compared."""
    text = re.sub(r"\s+", " ", raw.lower()).strip()
    while text and text[-1] in ".,;:!?":
        text = text[:-1].rstrip()
    return text


@dataclass(frozen=True)
class Transition:
    """A transition between two states, identified by canonical state names.

    ``event`` of None denotes an automatic (triggerless) transition.
    """

    source: str
    target: str
    event: Optional[str] = None
    guard: Optional[str] = None
    actions: tuple[str, ...] = ()


@dataclass(frozen=True)
class Region:
    name: str
    substates: tuple["StateNode", ...]
    initial: str  # display name of one member of substates


@dataclass(frozen=True)
class StateNode:
    name: str
    kind: str  # SIMPLE or COMPOSITE
    regions: tuple[Region, ...] = ()
    has_history: bool = False


@dataclass(frozen=True)
class StateMachine:
    name: str
    root_states: tuple[StateNode, ...]
    transitions: tuple[Transition, ...]
    events: frozenset[str]


@dataclass(frozen=True)
class ComponentCounts:
    states: int = 0
    transitions: int = 0
    guards: int = 0
    actions: int = 0
    hierarchical_states: int = 0
    parallel_regions: int = 0
    history_states: int = 0

    def as_dict(self) -> dict[str, int]:
        return {
            "states": self.states,
            "transitions": self.transitions,
            "guards": self.guards,
            "actions": self.actions,
            "hierarchical_states": self.hierarchical_states,
            "parallel_regions": self.parallel_regions,
            "history_states": self.history_states,
        }


@dataclass(frozen=True)
class Violation:
    rule: str
    element: str
    message: str

    def __str__(self) -> str:
        return f"[{self.rule}] {self.element}: {self.message}"


# ---------------------------------------------------------------------------
# Construction helpers


def simple(name: str) -> StateNode:
    return StateNode(name=name, kind=SIMPLE)


def region(
    substates: list[StateNode] | tuple[StateNode, ...],
    name: str = "",
    initial: Optional[str] = None,
) -> Region:
    """Build a region; the initial substate is moved to the front.

    An empty ``name`` marks the region for auto-naming ("r1", "r2", ...)
    when it is attached to a composite.
    """
    subs = list(substates)
    if initial is not None and subs and subs[0].name != initial:
        for i, node in enumerate(subs):
            if node.name == initial:
                subs.insert(0, subs.pop(i))
                break
    init = subs[0].name if subs else ""
    return Region(name=name, substates=tuple(subs), initial=init)


def composite(
    name: str,
    regions: list[Region] | list[list[StateNode]],
    has_history: bool = False,
) -> StateNode:
    """Build a composite state; unnamed regions get positional auto-names."""
    fixed: list[Region] = []
    for i, reg in enumerate(regions):
        if not isinstance(reg, Region):
            reg = region(reg)
        if not reg.name:
            reg = Region(name=f"r{i + 1}", substates=reg.substates, initial=reg.initial)
        fixed.append(reg)
    return StateNode(
        name=name, kind=COMPOSITE, regions=tuple(fixed), has_history=has_history
    )


def transition(
    source: str,
    target: str,
    event: Optional[str] = None,
    guard: Optional[str] = None,
    actions: list[str] | tuple[str, ...] = (),
) -> Transition:
    """Build a transition, canonicalizing the endpoint state names."""
    return Transition(
        source=normalize_name(source),
        target=normalize_name(target),
        event=event,
        guard=guard,
        actions=tuple(actions),
    )


def machine(
    name: str,
    root_states: list[StateNode] | tuple[StateNode, ...],
    transitions: list[Transition] | tuple[Transition, ...] = (),
    events: Optional[set[str]] = None,
) -> StateMachine:
    """Build a machine; ``events`` defaults to the triggers on transitions."""
    trans = tuple(transitions)
    if events is None:
        events = {t.event for t in trans if t.event}
    return StateMachine(
        name=name,
        root_states=tuple(root_states),
        transitions=trans,
        events=frozenset(events),
    )


# ---------------------------------------------------------------------------
# Traversal


def iter_states(sm: StateMachine) -> Iterator[tuple[StateNode, Optional[StateNode], Optional[Region]]]:
    """Yield (node, parent, region) for every state in document order (DFS)."""

    def walk(node: StateNode, parent, reg):
        yield node, parent, reg
        for r in node.regions:
            for sub in r.substates:
                yield from walk(sub, node, r)

    for root in sm.root_states:
        yield from walk(root, None, None)


def find_state(sm: StateMachine, canonical: str) -> Optional[StateNode]:
    """Depth-first lookup by canonical name; first match in document order."""
    for node, _, _ in iter_states(sm):
        try:
            if normalize_name(node.name) == canonical:
                return node
        except NameUnusable:
            continue
    return None


# ---------------------------------------------------------------------------
# Validation

# Characters that cannot survive a round trip through the textual syntax.
_GUARD_FORBIDDEN = ("]", "\n", "\r")
_ACTION_FORBIDDEN = (";", "{", "}", "\n", "\r")


def validate(sm: StateMachine) -> list[Violation]:
    """Check every structural invariant; an empty list means valid.

    Violations are returned, never raised. Beyond referential integrity
    (unique state names, transition endpoints exist, trigger events are
    declared), names must be identifiers and guard/action text must avoid
    the delimiter characters of the textual syntax, so that every valid
    machine can be emitted and re-parsed without loss.
    """
    out: list[Violation] = []

    def bad(rule: str, element: str, message: str) -> None:
        out.append(Violation(rule=rule, element=element, message=message))

    if not _IDENT_RE.match(sm.name):
        bad("name-not-identifier", sm.name or "<machine>", "machine name must be an identifier")

    seen: dict[str, str] = {}
    for node, parent, _ in iter_states(sm):
        where = node.name or "<unnamed>"
        if not _IDENT_RE.match(node.name):
            bad("name-not-identifier", where, "state name must be an identifier")
        try:
            canon = normalize_name(node.name)
        except NameUnusable:
            bad("name-unusable", where, "state name has no usable characters")
            canon = None
        if canon is not None:
            if canon in seen:
                bad("duplicate-state-name", where, f"canonical name clashes with {seen[canon]!r}")
            else:
                seen[canon] = node.name
        if node.kind == SIMPLE:
            if node.regions:
                bad("simple-with-regions", where, "simple state must have no regions")
            if node.has_history:
                bad("simple-with-history", where, "history flag requires a composite state")
        elif node.kind == COMPOSITE:
            if not node.regions:
                bad("composite-without-regions", where, "composite state needs at least one region")
            for reg in node.regions:
                rwhere = f"{where}.{reg.name or '<region>'}"
                if not reg.substates:
                    bad("empty-region", rwhere, "region must contain at least one substate")
                elif reg.initial not in {s.name for s in reg.substates}:
                    bad("bad-initial", rwhere, f"initial {reg.initial!r} is not a member substate")
        else:
            bad("bad-kind", where, f"unknown state kind {node.kind!r}")

    for i, t in enumerate(sm.transitions):
        where = f"transition#{i}({t.source}->{t.target})"
        if not t.source or not t.target:
            bad("empty-endpoint", where, "source and target must be non-empty")
            continue
        if t.source not in seen:
            bad("unknown-source", where, f"no state with canonical name {t.source!r}")
        if t.target not in seen:
            bad("unknown-target", where, f"no state with canonical name {t.target!r}")
        if t.event is not None:
            if not _IDENT_RE.match(t.event):
                bad("name-not-identifier", where, f"event {t.event!r} must be an identifier")
            if t.event not in sm.events:
                bad("undeclared-event", where, f"event {t.event!r} missing from machine events")
        if t.guard is not None:
            if not t.guard:
                bad("guard-empty", where, "empty guard; use no guard instead")
            elif any(c in t.guard for c in _GUARD_FORBIDDEN):
                bad("guard-unemittable", where, "guard text may not contain ']' or newlines")
            elif t.guard != t.guard.strip():
                bad("guard-untrimmed", where, "guard text may not have leading/trailing whitespace")
        for a in t.actions:
            if not a.strip():
                bad("empty-action", where, "actions may not contain empty strings")
            elif any(c in a for c in _ACTION_FORBIDDEN):
                bad("action-unemittable", where, "action text may not contain ';', braces or newlines")
            elif a != a.strip():
                bad("action-untrimmed", where, "action text may not have leading/trailing whitespace")

    return out


def require_valid(sm: StateMachine) -> None:
    violations = validate(sm)
    if violations:
        raise InvalidMachine(violations)


# ---------------------------------------------------------------------------
# Component counting


def component_counts(sm: StateMachine) -> ComponentCounts:
    """Count the seven scored components of a valid machine.

    ``states`` covers every node at every depth. A composite counts once as
    a hierarchical state; its regions count toward ``parallel_regions`` only
    when it has two or more (each such region counts individually).
    """
    require_valid(sm)
    states = 0
    hierarchical = 0
    parallel = 0
    history = 0
    for node, _, _ in iter_states(sm):
        states += 1
        if node.kind == COMPOSITE:
            hierarchical += 1
            if len(node.regions) >= 2:
                parallel += len(node.regions)
            if node.has_history:
                history += 1
    guards = sum(1 for t in sm.transitions if t.guard is not None)
    actions = sum(len(t.actions) for t in sm.transitions)
    return ComponentCounts(
        states=states,
        transitions=len(sm.transitions),
        guards=guards,
        actions=actions,
        hierarchical_states=hierarchical,
        parallel_regions=parallel,
        history_states=history,
    )


# ---------------------------------------------------------------------------
# Equality


def emission_order(reg: Region) -> tuple[StateNode, ...]:
    """Substates with the initial one rotated to the front.

    This is the order the emitters write, since "first substate is the
    initial" is how the textual and table forms encode the initial state.
    """
    subs = list(reg.substates)
    for i, node in enumerate(subs):
        if node.name == reg.initial:
            subs.insert(0, subs.pop(i))
            break
    return tuple(subs)


def _transition_key(t: Transition) -> tuple:
    return (t.source, t.target, t.event or "", t.guard or "", t.actions)


def equivalent(
    a: StateMachine,
    b: StateMachine,
    *,
    ignore_region_names: bool = True,
) -> bool:
    """Structural equality as the round-trip contract defines it.

    Machine names are ignored (the table form has no slot for one) and
    transitions compare as multisets (the textual form groups them by source
    state). Region names are ignored by default because the textual form
    regenerates them. State order, region order, substate order relative to
    the initial state, history flags and event sets all compare exactly.
    """

    def node_eq(x: StateNode, y: StateNode) -> bool:
        if x.name != y.name or x.kind != y.kind or x.has_history != y.has_history:
            return False
        if len(x.regions) != len(y.regions):
            return False
        for rx, ry in zip(x.regions, y.regions):
            if not ignore_region_names and rx.name != ry.name:
                return False
            if rx.initial != ry.initial:
                return False
            sx, sy = emission_order(rx), emission_order(ry)
            if len(sx) != len(sy):
                return False
            if not all(node_eq(i, j) for i, j in zip(sx, sy)):
                return False
        return True

    if len(a.root_states) != len(b.root_states):
        return False
    if not all(node_eq(x, y) for x, y in zip(a.root_states, b.root_states)):
        return False
    if sorted(map(_transition_key, a.transitions)) != sorted(map(_transition_key, b.transitions)):
        return False
    return a.events == b.events
