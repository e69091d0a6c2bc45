"""The three-HTML-table form used by the multi-step generation strategies.

A machine travels between pipeline steps as three tables:

* States:      Name | Parent | Region | Kind   (kind "simple", "composite",
               or "history" for a history marker attached to Parent)
* Transitions: Source | Target | Event | Guard | Actions  (";"-separated)
* Structure:   Composite | Region | Substates | History   (","-separated
               substates, History "yes"/"no")

Emission is deterministic and minimal. Extraction is a purpose-built
tolerant scanner for short LLM emissions, with fixed recovery rules:

* tags match case-insensitively; a table needs its closing ``</table>``;
* the first row of a table is its header; ``<th>`` and ``<td>`` are
  interchangeable there; ``<thead>``/``<tbody>`` are ignored;
* an unclosed cell ends at the next ``<td``, ``<th``, ``</tr`` or
  ``</table``; an unclosed final row is still included;
* ``&amp; &lt; &gt; &quot;`` are decoded; any other markup inside a cell
  is stripped; cell text is trimmed but inner whitespace is preserved.

Header matching is case/punctuation-insensitive and extra columns are
ignored, so reshuffled or re-cased LLM tables still classify.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Optional

from . import ir

RawTable = list[list[str]]

_TABLE_OPEN_RE = re.compile(r"<table\b[^>]*>", re.IGNORECASE)
_TABLE_CLOSE_RE = re.compile(r"</table\b[^>]*>", re.IGNORECASE)
_TR_OPEN_RE = re.compile(r"<tr\b[^>]*>", re.IGNORECASE)
_CELL_OPEN_RE = re.compile(r"<t[dh]\b[^>]*>", re.IGNORECASE)
_CELL_END_RE = re.compile(r"<td\b|<th\b|</tr\b|</table\b|</td\b|</th\b", re.IGNORECASE)
_ROW_END_RE = re.compile(r"</tr\b|<tr\b", re.IGNORECASE)
_TAG_RE = re.compile(r"<[^>]*>")


@dataclass
class StateRow:
    name: str
    parent: Optional[str] = None
    region: Optional[str] = None
    kind: str = "simple"  # "simple" | "composite" | "history-marker"


@dataclass
class TransitionRow:
    source: str
    target: str
    event: Optional[str] = None
    guard: Optional[str] = None
    actions: list[str] = field(default_factory=list)


@dataclass
class StructureRow:
    composite: str
    region: str
    substates: list[str] = field(default_factory=list)
    has_history: bool = False


@dataclass
class PartialModel:
    """Accumulated rows across pipeline steps, plus per-component provenance.

    ``provenance`` maps a component key (see :data:`smforge.ir.COMPONENTS`)
    to the id of the last step whose parse of that component succeeded.
    """

    states_rows: list[StateRow] = field(default_factory=list)
    transition_rows: list[TransitionRow] = field(default_factory=list)
    structure_rows: list[StructureRow] = field(default_factory=list)
    provenance: dict[str, str] = field(default_factory=dict)

    def copy(self) -> "PartialModel":
        return PartialModel(
            states_rows=[StateRow(r.name, r.parent, r.region, r.kind) for r in self.states_rows],
            transition_rows=[
                TransitionRow(r.source, r.target, r.event, r.guard, list(r.actions))
                for r in self.transition_rows
            ],
            structure_rows=[
                StructureRow(r.composite, r.region, list(r.substates), r.has_history)
                for r in self.structure_rows
            ],
            provenance=dict(self.provenance),
        )


@dataclass
class ParsedTables:
    """Result of classifying raw tables: rows plus per-component success."""

    partial: PartialModel
    component_ok: dict[str, bool]
    warnings: list[str] = field(default_factory=list)


# ---------------------------------------------------------------------------
# Extraction


def _decode_entities(text: str) -> str:
    text = text.replace("&lt;", "<").replace("&gt;", ">").replace("&quot;", '"')
    return text.replace("&amp;", "&")


def _clean_cell(raw: str) -> str:
    return _decode_entities(_TAG_RE.sub("", raw)).strip()


def _split_cells(row_html: str) -> list[str]:
    cells = []
    pos = 0
    while (m := _CELL_OPEN_RE.search(row_html, pos)) is not None:
        start = m.end()
        end_m = _CELL_END_RE.search(row_html, start)
        end = end_m.start() if end_m else len(row_html)
        cells.append(_clean_cell(row_html[start:end]))
        if end_m and end_m.group(0).lower() in ("</td", "</th"):
            pos = end_m.end()
        else:
            pos = end
    return cells


def extract_html_tables(response: str) -> list[RawTable]:
    """Return every closed ``<table>`` block as rows of cell strings.

    Tables appear in document order; surrounding prose is ignored. Never
    raises, whatever the input; zero tables is a normal result.
    """
    tables: list[RawTable] = []
    pos = 0
    while (open_m := _TABLE_OPEN_RE.search(response, pos)) is not None:
        close_m = _TABLE_CLOSE_RE.search(response, open_m.end())
        if close_m is None:
            break  # unclosed table: not well-formed, drop the tail
        block = response[open_m.end() : close_m.start()]
        rows: RawTable = []
        rpos = 0
        while (tr_m := _TR_OPEN_RE.search(block, rpos)) is not None:
            next_m = _ROW_END_RE.search(block, tr_m.end())
            rend = next_m.start() if next_m else len(block)
            cells = _split_cells(block[tr_m.end() : rend])
            if cells:
                rows.append(cells)
            if next_m and next_m.group(0).lower() == "</tr":
                rpos = next_m.end()
            else:
                rpos = rend
        if rows:
            tables.append(rows)
        pos = close_m.end()
    return tables


# ---------------------------------------------------------------------------
# Classification


def _norm(cell: str) -> str:
    try:
        return ir.normalize_name(cell)
    except ir.NameUnusable:
        return ""


def _header_index(header: list[str]) -> dict[str, int]:
    out: dict[str, int] = {}
    for i, cell in enumerate(header):
        key = _norm(cell)
        if key and key not in out:
            out[key] = i
    return out


def _cell(row: list[str], idx: Optional[int]) -> str:
    if idx is None or idx >= len(row):
        return ""
    return row[idx]


def _parse_kind(cell: str, warnings: list[str]) -> str:
    key = _norm(cell)
    if not key or key == "simple":
        return "simple"
    if key.startswith("comp") or key == "superstate":
        return "composite"
    if key.startswith("hist"):
        return "history-marker"
    warnings.append(f"unknown state kind {cell!r}; treated as simple")
    return "simple"


_TRUTHY = {"yes", "y", "true", "1", "h", "history"}


def parse_tables(tables: list[RawTable]) -> ParsedTables:
    """Classify raw tables by header and harvest rows.

    Unclassifiable tables are ignored; rows missing required cells are
    skipped with a warning. ``component_ok`` records which of the seven
    scored components this set of tables successfully expressed, which is
    what drives the merge-time last-good fallback.
    """
    partial = PartialModel()
    warnings: list[str] = []
    ok = {c: False for c in ir.COMPONENTS}

    for table in tables:
        if not table:
            continue
        header = _header_index(table[0])
        body = table[1:]
        if "source" in header and "target" in header:
            has_guard = "guard" in header
            has_actions = "actions" in header or "action" in header
            actions_idx = header.get("actions", header.get("action"))
            ok["transitions"] = True
            ok["guards"] = ok["guards"] or has_guard
            ok["actions"] = ok["actions"] or has_actions
            for row in body:
                source = _cell(row, header["source"]).strip()
                target = _cell(row, header["target"]).strip()
                if not source or not target:
                    warnings.append(f"transition row missing source/target: {row!r}")
                    continue
                event = _cell(row, header.get("event")).strip() or None
                guard = _cell(row, header.get("guard")).strip() or None if has_guard else None
                raw_actions = _cell(row, actions_idx) if has_actions else ""
                actions = [a.strip() for a in raw_actions.split(";") if a.strip()]
                partial.transition_rows.append(
                    TransitionRow(source=source, target=target, event=event, guard=guard, actions=actions)
                )
        elif "composite" in header and "substates" in header:
            has_region = "region" in header
            has_history = "history" in header
            ok["hierarchical"] = True
            ok["parallel"] = ok["parallel"] or has_region
            ok["history"] = ok["history"] or has_history
            region_counts: dict[str, int] = {}
            for row in body:
                composite = _cell(row, header["composite"]).strip()
                raw_subs = _cell(row, header["substates"])
                substates = [s.strip() for s in raw_subs.split(",") if s.strip()]
                if not composite or not substates:
                    warnings.append(f"structure row missing composite/substates: {row!r}")
                    continue
                ckey = _norm(composite)
                region = _cell(row, header.get("region")).strip()
                if not region:
                    if has_region:
                        region_counts[ckey] = region_counts.get(ckey, 0) + 1
                        region = f"r{region_counts[ckey]}"
                    else:
                        region = "r1"
                else:
                    region_counts[ckey] = region_counts.get(ckey, 0) + 1
                history = _norm(_cell(row, header.get("history"))) in _TRUTHY if has_history else False
                partial.structure_rows.append(
                    StructureRow(composite=composite, region=region, substates=substates, has_history=history)
                )
        elif "name" in header:
            ok["states"] = True
            for row in body:
                name = _cell(row, header["name"]).strip()
                if not name:
                    warnings.append(f"state row missing name: {row!r}")
                    continue
                kind = _parse_kind(_cell(row, header.get("kind")), warnings)
                parent = _cell(row, header.get("parent")).strip() or None
                region = _cell(row, header.get("region")).strip() or None
                if kind == "history-marker" and parent is None:
                    warnings.append(f"history marker row without a parent: {row!r}")
                    continue
                partial.states_rows.append(StateRow(name=name, parent=parent, region=region, kind=kind))
        # else: not one of ours; ignore.

    # History markers ride the states table, so a parsed states table is
    # also evidence the step could express history.
    ok["history"] = ok["history"] or ok["states"]
    return ParsedTables(partial=partial, component_ok=ok, warnings=warnings)


# ---------------------------------------------------------------------------
# Emission


def _escape(text: str) -> str:
    return (
        text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;").replace('"', "&quot;")
    )


def render_table(header: list[str], rows: list[list[str]]) -> str:
    """Render one table in the canonical minimal HTML."""
    lines = ["<table>"]
    lines.append("<tr>" + "".join(f"<th>{_escape(h)}</th>" for h in header) + "</tr>")
    for row in rows:
        lines.append("<tr>" + "".join(f"<td>{_escape(c)}</td>" for c in row) + "</tr>")
    lines.append("</table>")
    return "\n".join(lines)


def rows_of_machine(sm: ir.StateMachine) -> PartialModel:
    """Decompose a machine into table rows (the inverse of finalization)."""
    states: list[StateRow] = []
    markers: list[StateRow] = []
    structure: list[StructureRow] = []

    def walk(node: ir.StateNode, parent: Optional[str], region_name: Optional[str]) -> None:
        states.append(StateRow(name=node.name, parent=parent, region=region_name, kind=node.kind))
        if node.has_history:
            markers.append(StateRow(name="H", parent=node.name, region=None, kind="history-marker"))
        for reg in node.regions:
            subs = ir.emission_order(reg)
            structure.append(
                StructureRow(
                    composite=node.name,
                    region=reg.name,
                    substates=[s.name for s in subs],
                    has_history=node.has_history,
                )
            )
            for sub in subs:
                walk(sub, node.name, reg.name)

    for root in sm.root_states:
        walk(root, None, None)

    display = {ir.normalize_name(n.name): n.name for n, _, _ in ir.iter_states(sm)}
    transitions = [
        TransitionRow(
            source=display[t.source],
            target=display[t.target],
            event=t.event,
            guard=t.guard,
            actions=list(t.actions),
        )
        for t in sm.transitions
    ]
    return PartialModel(
        states_rows=states + markers,
        transition_rows=transitions,
        structure_rows=structure,
    )


def render_partial(partial: PartialModel) -> str:
    """Render accumulated rows as the three canonical HTML tables."""
    state_rows = [
        [r.name, r.parent or "", r.region or "", "history" if r.kind == "history-marker" else r.kind]
        for r in partial.states_rows
    ]
    transition_rows = [
        [r.source, r.target, r.event or "", r.guard or "", "; ".join(r.actions)]
        for r in partial.transition_rows
    ]
    structure_rows = [
        [r.composite, r.region, ", ".join(r.substates), "yes" if r.has_history else "no"]
        for r in partial.structure_rows
    ]
    return "\n\n".join(
        [
            render_table(["Name", "Parent", "Region", "Kind"], state_rows),
            render_table(["Source", "Target", "Event", "Guard", "Actions"], transition_rows),
            render_table(["Composite", "Region", "Substates", "History"], structure_rows),
        ]
    )


def emit_tables(sm: ir.StateMachine) -> str:
    """Render a valid machine as the three canonical HTML tables."""
    ir.require_valid(sm)
    return render_partial(rows_of_machine(sm))
