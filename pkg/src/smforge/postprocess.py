"""Rule-based merging of per-step outputs and finalization into the IR.

Each pipeline step is responsible for a fixed subset of the seven scored
components. Merging replaces exactly the responsible components' view of
the accumulated rows; when a step's output failed to parse for one of its
components, the previous rows are kept and a fallback warning is recorded
(never invented data). Warning lines follow the machine-readable shape
``WARN <step> <component> <message>``.

``dedupe`` collapses duplicate rows (the event-driven strategy produces
them by construction) and ``finalize`` builds a validated state machine
out of the surviving rows, dropping whatever cannot be reconciled, each
drop leaving a warning behind.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Optional

from . import ir
from .tables import PartialModel, StateRow, StructureRow, TransitionRow


class FinalizeFailed(ValueError):
    """No usable machine could be built (zero surviving states)."""


@dataclass
class StepOutcome:
    """One pipeline step's raw response and what was parsed out of it."""

    step_id: str
    raw_response: str
    components: tuple[str, ...]  # components this step is responsible for
    parsed: Optional[PartialModel]
    component_ok: dict[str, bool] = field(default_factory=dict)
    temperature_used: float = 0.0

    def ok(self, component: str) -> bool:
        return self.parsed is not None and self.component_ok.get(component, False)


@dataclass
class MergeState:
    snapshots: dict[str, PartialModel] = field(default_factory=dict)
    current: PartialModel = field(default_factory=PartialModel)
    warnings: list[str] = field(default_factory=list)


def new_merge_state() -> MergeState:
    return MergeState()


def _norm(name: Optional[str]) -> str:
    if not name:
        return ""
    try:
        return ir.normalize_name(name)
    except ir.NameUnusable:
        return ""


def _row_key(row: TransitionRow) -> tuple[str, str, str]:
    return (_norm(row.source), _norm(row.target), _norm(row.event))


def _is_marker(row: StateRow) -> bool:
    return row.kind == "history-marker"


def _structure_flags(rows: list[StructureRow]) -> dict[str, bool]:
    flags: dict[str, bool] = {}
    for row in rows:
        key = _norm(row.composite)
        flags[key] = flags.get(key, False) or row.has_history
    return flags


def merge_step(state: MergeState, outcome: StepOutcome) -> MergeState:
    """Fold one step's outcome into the accumulated model.

    For every component the step is responsible for: a successful parse
    replaces that component's rows and advances its provenance; a failed
    parse keeps the prior rows and appends a fallback warning. Components
    outside the step's responsibility pass through untouched. Raises
    ``ValueError`` if the step id was merged before.
    """
    if outcome.step_id in state.snapshots:
        raise ValueError(f"step {outcome.step_id!r} already merged")

    current = state.current.copy()
    warnings = list(state.warnings)

    for comp in ir.COMPONENTS:
        if comp not in outcome.components:
            continue
        if not outcome.ok(comp):
            prior = current.provenance.get(comp, "initial")
            warnings.append(
                f"WARN {outcome.step_id} {comp} parse failed; keeping rows from {prior}"
            )
            continue
        _apply_component(current, comp, outcome, warnings)
        current.provenance[comp] = outcome.step_id

    snapshots = dict(state.snapshots)
    snapshots[outcome.step_id] = current.copy()
    return MergeState(snapshots=snapshots, current=current, warnings=warnings)


def _apply_component(
    current: PartialModel, comp: str, outcome: StepOutcome, warnings: list[str]
) -> None:
    parsed = outcome.parsed
    assert parsed is not None
    step = outcome.step_id

    if comp == "states":
        markers = [r for r in current.states_rows if _is_marker(r)]
        fresh = [r for r in parsed.states_rows if not _is_marker(r)]
        current.states_rows = fresh + markers

    elif comp == "transitions":
        own_guards = "guards" in outcome.components and outcome.ok("guards")
        own_actions = "actions" in outcome.components and outcome.ok("actions")
        prior_by_key: dict[tuple, TransitionRow] = {}
        for row in current.transition_rows:
            prior_by_key.setdefault(_row_key(row), row)
        fresh = []
        for row in parsed.transition_rows:
            prior = prior_by_key.get(_row_key(row))
            guard = row.guard if own_guards else (prior.guard if prior else None)
            actions = list(row.actions) if own_actions else (list(prior.actions) if prior else [])
            fresh.append(
                TransitionRow(source=row.source, target=row.target, event=row.event, guard=guard, actions=actions)
            )
        current.transition_rows = fresh

    elif comp in ("guards", "actions"):
        if "transitions" in outcome.components:
            return  # already folded in while replacing the transitions
        parsed_by_key: dict[tuple, TransitionRow] = {}
        for row in parsed.transition_rows:
            parsed_by_key.setdefault(_row_key(row), row)
        seen_keys = set()
        for row in current.transition_rows:
            key = _row_key(row)
            seen_keys.add(key)
            src = parsed_by_key.get(key)
            if comp == "guards":
                row.guard = src.guard if src else None
            else:
                row.actions = list(src.actions) if src else []
        for key, row in parsed_by_key.items():
            if key not in seen_keys:
                warnings.append(
                    f"WARN {step} {comp} row for unknown transition {row.source}->{row.target} ignored"
                )

    elif comp == "hierarchical":
        fresh = [
            StructureRow(r.composite, r.region, list(r.substates), r.has_history)
            for r in parsed.structure_rows
        ]
        if "parallel" not in outcome.components:
            fresh = _keep_prior_partitions(current.structure_rows, fresh)
        if "history" not in outcome.components:
            flags = _structure_flags(current.structure_rows)
            for row in fresh:
                row.has_history = flags.get(_norm(row.composite), False)
        current.structure_rows = fresh

    elif comp == "parallel":
        mentioned = {_norm(r.composite) for r in parsed.structure_rows}
        keep_flags = _structure_flags(current.structure_rows)
        kept = [r for r in current.structure_rows if _norm(r.composite) not in mentioned]
        fresh = [
            StructureRow(r.composite, r.region, list(r.substates), r.has_history)
            for r in parsed.structure_rows
        ]
        if "history" not in outcome.components:
            for row in fresh:
                row.has_history = keep_flags.get(_norm(row.composite), False)
        current.structure_rows = kept + fresh

    elif comp == "history":
        non_markers = [r for r in current.states_rows if not _is_marker(r)]
        fresh_markers = [
            StateRow(r.name, r.parent, r.region, r.kind)
            for r in parsed.states_rows
            if _is_marker(r)
        ]
        current.states_rows = non_markers + fresh_markers
        flags = _structure_flags(parsed.structure_rows)
        marker_parents = {_norm(r.parent) for r in fresh_markers}
        for row in current.structure_rows:
            key = _norm(row.composite)
            row.has_history = flags.get(key, False) or key in marker_parents


def _keep_prior_partitions(
    prior: list[StructureRow], fresh: list[StructureRow]
) -> list[StructureRow]:
    """Preserve an existing multi-region split that a later single-region
    grouping would otherwise flatten, as long as the substate union agrees."""
    prior_by_comp: dict[str, list[StructureRow]] = {}
    for row in prior:
        prior_by_comp.setdefault(_norm(row.composite), []).append(row)
    fresh_by_comp: dict[str, list[StructureRow]] = {}
    for row in fresh:
        fresh_by_comp.setdefault(_norm(row.composite), []).append(row)

    out: list[StructureRow] = []
    done: set[str] = set()
    for row in fresh:
        comp = _norm(row.composite)
        if comp in done:
            continue
        fresh_rows = fresh_by_comp[comp]
        prior_rows = prior_by_comp.get(comp, [])
        if len(prior_rows) >= 2 and len(fresh_rows) == 1:
            prior_union = {_norm(s) for r in prior_rows for s in r.substates}
            fresh_union = {_norm(s) for r in fresh_rows for s in r.substates}
            if prior_union == fresh_union:
                out.extend(
                    StructureRow(r.composite, r.region, list(r.substates), r.has_history)
                    for r in prior_rows
                )
                done.add(comp)
                continue
        out.extend(fresh_rows)
        done.add(comp)
    return out


# ---------------------------------------------------------------------------
# Dedupe


def dedupe(partial: PartialModel, warnings: Optional[list[str]] = None) -> PartialModel:
    """Collapse duplicate rows; idempotent.

    Transition rows sharing (normalized source, target, event, guard)
    become one row whose action list is the first-seen-order union. State
    rows sharing a canonical name become one row, composite kind winning.
    Guard variants of one (source, target, event) triple are kept as
    separate rows but flagged, since they are conflicting candidates.
    """
    w = warnings if warnings is not None else []

    states: dict[str, StateRow] = {}
    markers: dict[str, StateRow] = {}
    for row in partial.states_rows:
        if _is_marker(row):
            key = _norm(row.parent)
            if key and key not in markers:
                markers[key] = StateRow(row.name, row.parent, row.region, row.kind)
            continue
        key = _norm(row.name)
        if not key:
            continue
        kept = states.get(key)
        if kept is None:
            states[key] = StateRow(row.name, row.parent, row.region, row.kind)
        else:
            if kept.kind == "simple" and row.kind == "composite":
                kept.kind = "composite"
            if kept.parent is None:
                kept.parent = row.parent
            if kept.region is None:
                kept.region = row.region

    transitions: dict[tuple, TransitionRow] = {}
    guard_variants: dict[tuple, set[str]] = {}
    for row in partial.transition_rows:
        triple = _row_key(row)
        guard_canon = ir.canonical_text(row.guard or "")
        key = triple + (guard_canon,)
        guard_variants.setdefault(triple, set()).add(guard_canon)
        kept = transitions.get(key)
        if kept is None:
            transitions[key] = TransitionRow(row.source, row.target, row.event, row.guard, list(row.actions))
            continue
        kept_canon = [ir.canonical_text(a) for a in kept.actions]
        added = [a for a in row.actions if ir.canonical_text(a) not in kept_canon]
        if added:
            w.append(
                f"WARN dedupe transitions conflicting actions for "
                f"{kept.source}->{kept.target} on {kept.event or '(auto)'}; unioned"
            )
            kept.actions.extend(added)

    for triple, variants in sorted(guard_variants.items()):
        if len(variants) > 1:
            w.append(
                f"WARN dedupe guards {len(variants)} guard variants kept for "
                f"{triple[0]}->{triple[1]} on {triple[2] or '(auto)'}"
            )

    structure: dict[tuple, StructureRow] = {}
    for row in partial.structure_rows:
        key = (_norm(row.composite), _norm(row.region))
        kept = structure.get(key)
        if kept is None:
            structure[key] = StructureRow(row.composite, row.region, list(row.substates), row.has_history)
            continue
        kept_canon = {_norm(s) for s in kept.substates}
        added = [s for s in row.substates if _norm(s) not in kept_canon]
        if added:
            w.append(f"WARN dedupe hierarchical merged substate lists for {kept.composite}/{kept.region}")
            kept.substates.extend(added)
        kept.has_history = kept.has_history or row.has_history

    return PartialModel(
        states_rows=list(states.values()) + list(markers.values()),
        transition_rows=list(transitions.values()),
        structure_rows=list(structure.values()),
        provenance=dict(partial.provenance),
    )


# ---------------------------------------------------------------------------
# Finalize

_IDENT_STRIP = re.compile(r"[^A-Za-z0-9_]+")
_IDENT_OK = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")


def _safe_ident(raw: str) -> Optional[str]:
    """Squeeze arbitrary LLM text into an identifier, or None if hopeless."""
    cleaned = _IDENT_STRIP.sub("", raw.strip())
    if not cleaned:
        return None
    if cleaned[0].isdigit():
        cleaned = "s" + cleaned
    return cleaned if _IDENT_OK.match(cleaned) else None


def _sanitize_guard(raw: str) -> Optional[str]:
    out = " ".join(raw.replace("]", ")").split())
    return out or None


def _sanitize_action(raw: str) -> Optional[str]:
    out = raw.replace("{", "(").replace("}", ")").replace(";", ",")
    out = " ".join(out.split())
    return out or None


@dataclass
class _Proto:
    display: str
    kind: str  # "simple" | "composite"
    has_history: bool = False
    parent: Optional[str] = None  # canonical name of claimed parent
    region_label: str = ""  # normalized region key within the parent
    region_display: str = ""


def finalize(partial: PartialModel, warnings: Optional[list[str]] = None) -> ir.StateMachine:
    """Build a validated machine out of accumulated rows.

    Structure rows win over per-state parent cells; the first parent claim
    in document order wins conflicts; transitions whose endpoints never
    materialized are dropped. Every drop or repair appends a warning.
    Raises :class:`FinalizeFailed` when zero states survive.
    """
    w = warnings if warnings is not None else []

    protos: dict[str, _Proto] = {}

    def materialize(raw_name: str, kind: str, origin: str) -> Optional[str]:
        ident = _safe_ident(raw_name)
        if ident is None:
            w.append(f"WARN finalize states unusable state name {raw_name!r} dropped ({origin})")
            return None
        key = ir.normalize_name(ident)
        proto = protos.get(key)
        if proto is None:
            if origin != "states table":
                w.append(f"WARN finalize states {ident!r} only mentioned in {origin}; created")
            protos[key] = _Proto(display=ident, kind=kind)
        elif kind == "composite" and proto.kind == "simple":
            proto.kind = "composite"
        return key

    marker_rows: list[StateRow] = []
    deferred_parent_claims: list[tuple[str, str, Optional[str]]] = []
    for row in partial.states_rows:
        if _is_marker(row):
            marker_rows.append(row)
            continue
        key = materialize(row.name, "composite" if row.kind == "composite" else "simple", "states table")
        if key is not None and row.parent:
            deferred_parent_claims.append((key, row.parent, row.region))

    def claim(child_key: str, parent_key: str, region_display: str) -> None:
        proto = protos[child_key]
        region_label = _norm(region_display) or ""
        if proto.parent is not None:
            if proto.parent != parent_key or proto.region_label != region_label:
                w.append(
                    f"WARN finalize hierarchical {protos[child_key].display} already placed "
                    f"under {protos[proto.parent].display}; later claim ignored"
                )
            return
        # Reject claims that would create a containment cycle.
        cursor: Optional[str] = parent_key
        while cursor is not None:
            if cursor == child_key:
                w.append(
                    f"WARN finalize hierarchical cyclic nesting involving "
                    f"{protos[child_key].display} dropped"
                )
                return
            cursor = protos[cursor].parent
        proto.parent = parent_key
        proto.region_label = region_label
        proto.region_display = region_display

    # Structure rows are the authority on nesting; they come first.
    for row in partial.structure_rows:
        parent_key = materialize(row.composite, "composite", "structure table")
        if parent_key is None:
            continue
        if row.has_history:
            protos[parent_key].has_history = True
        for sub in row.substates:
            child_key = materialize(sub, "simple", "structure table")
            if child_key is None:
                continue
            if child_key == parent_key:
                w.append(f"WARN finalize hierarchical {row.composite} cannot contain itself; ignored")
                continue
            claim(child_key, parent_key, row.region)

    for child_key, parent_raw, region_raw in deferred_parent_claims:
        parent_ident = _safe_ident(parent_raw)
        if parent_ident is None:
            w.append(f"WARN finalize hierarchical unusable parent name {parent_raw!r} ignored")
            continue
        parent_key = materialize(parent_ident, "composite", "states table parent")
        if parent_key is None or parent_key == child_key:
            continue
        claim(child_key, parent_key, region_raw or "")

    for row in marker_rows:
        parent_key = _norm(row.parent)
        if parent_key not in protos:
            w.append(f"WARN finalize history marker names unknown state {row.parent!r}; dropped")
            continue
        protos[parent_key].has_history = True

    if not protos:
        raise FinalizeFailed("no states survived finalization")

    # Group children per (parent, region) in claim order.
    children: dict[str, dict[str, list[str]]] = {}
    for key, proto in protos.items():
        if proto.parent is not None:
            children.setdefault(proto.parent, {}).setdefault(proto.region_label, []).append(key)

    # Parents of someone must be composite; composites with no children
    # cannot stand and are demoted.
    for key, proto in protos.items():
        if key in children:
            proto.kind = "composite"
        elif proto.kind == "composite":
            w.append(f"WARN finalize hierarchical composite {proto.display} has no substates; demoted to simple")
            proto.kind = "simple"

    for key, proto in protos.items():
        if proto.has_history and proto.kind != "composite":
            w.append(f"WARN finalize history flag on non-composite {proto.display} dropped")
            proto.has_history = False

    def build(key: str) -> ir.StateNode:
        proto = protos[key]
        if proto.kind != "composite":
            return ir.simple(proto.display)
        regions = []
        for label, members in children[key].items():
            display = next(
                (protos[m].region_display for m in members if protos[m].region_display), ""
            )
            regions.append(ir.region([build(m) for m in members], name=display))
        return ir.composite(proto.display, regions, has_history=proto.has_history)

    roots = [key for key, proto in protos.items() if proto.parent is None]
    root_nodes = [build(key) for key in roots]

    transitions: list[ir.Transition] = []
    seen_transitions: set[tuple] = set()
    for row in partial.transition_rows:
        src_ident = _safe_ident(row.source)
        tgt_ident = _safe_ident(row.target)
        src = ir.normalize_name(src_ident) if src_ident else ""
        tgt = ir.normalize_name(tgt_ident) if tgt_ident else ""
        if src not in protos or tgt not in protos:
            w.append(
                f"WARN finalize transitions {row.source!r}->{row.target!r} references "
                "an unknown state; dropped"
            )
            continue
        event = None
        if row.event:
            event = _safe_ident(row.event)
            if event is None:
                w.append(f"WARN finalize transitions unusable event {row.event!r}; treated as automatic")
        guard = _sanitize_guard(row.guard) if row.guard else None
        actions = []
        for a in row.actions:
            cleaned = _sanitize_action(a)
            if cleaned:
                actions.append(cleaned)
        key = (src, tgt, event or "", guard or "", tuple(actions))
        if key in seen_transitions:
            continue
        seen_transitions.add(key)
        transitions.append(ir.Transition(source=src, target=tgt, event=event, guard=guard, actions=tuple(actions)))

    sm = ir.machine("generated", root_nodes, transitions)
    violations = ir.validate(sm)
    if violations:
        raise FinalizeFailed(f"finalized machine is invalid: {violations[:3]}")
    return sm
