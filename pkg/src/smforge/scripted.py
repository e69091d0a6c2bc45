"""A scripted stand-in for the LLM: answers each strategy's calls from a
known ground-truth machine.

This is how the shipped replay fixtures are produced (record a run against
the scripted backend, commit the transcript) and it doubles as an offline
demo backend. The response sequence mirrors each strategy's exact call
order, so a recording made here replays cleanly through the same strategy.
"""

from __future__ import annotations

from collections import deque

from . import ir, tables, umple
from .gateway import CompletionRequest, CompletionResponse, Usage


class ScriptedBackend:
    """Pops one prepared response per call; raises when over-consumed."""

    def __init__(self, responses: list[str]):
        self._queue = deque(responses)

    def complete(self, req: CompletionRequest) -> CompletionResponse:
        if not self._queue:
            raise AssertionError("scripted backend exhausted: unexpected extra call")
        content = self._queue.popleft()
        prompt_chars = sum(len(m.content) for m in req.messages)
        return CompletionResponse(
            content=content,
            finish="stop",
            usage=Usage(prompt_tokens=prompt_chars // 4, completion_tokens=len(content) // 4),
        )

    @property
    def remaining(self) -> int:
        return len(self._queue)


# ---------------------------------------------------------------------------
# Response builders


def _states_table(truth: ir.StateMachine, flat: bool = True) -> str:
    rows = []
    for row in tables.rows_of_machine(truth).states_rows:
        if row.kind == "history-marker":
            continue
        if flat:
            rows.append([row.name, "", "", row.kind])
        else:
            rows.append([row.name, row.parent or "", row.region or "", row.kind])
    return tables.render_table(["Name", "Parent", "Region", "Kind"], rows)


def event_order(truth: ir.StateMachine) -> list[str]:
    """Trigger events in first-seen transition order."""
    events: list[str] = []
    for t in truth.transitions:
        if t.event and t.event not in events:
            events.append(t.event)
    return events


def _events_table(truth: ir.StateMachine) -> str:
    return tables.render_table(["Event"], [[e] for e in event_order(truth)])


def _transition_cells(truth: ir.StateMachine, with_actions: bool, only_event: str | None = None) -> list[list[str]]:
    display = {ir.normalize_name(n.name): n.name for n, _, _ in ir.iter_states(truth)}
    rows = []
    for t in truth.transitions:
        if only_event is not None and t.event != only_event:
            continue
        row = [display[t.source], display[t.target], t.event or "", t.guard or ""]
        if with_actions:
            row.append("; ".join(t.actions))
        rows.append(row)
    return rows


def _transitions_table(truth: ir.StateMachine, with_actions: bool, only_event: str | None = None) -> str:
    header = ["Source", "Target", "Event", "Guard"] + (["Actions"] if with_actions else [])
    return tables.render_table(header, _transition_cells(truth, with_actions, only_event))


def _structure_cells(truth: ir.StateMachine, parallel_only: bool, with_history: bool) -> list[list[str]]:
    structure = tables.rows_of_machine(truth).structure_rows
    by_comp: dict[str, int] = {}
    for row in structure:
        by_comp[row.composite] = by_comp.get(row.composite, 0) + 1
    rows = []
    for row in structure:
        if parallel_only and by_comp[row.composite] < 2:
            continue
        cells = [row.composite, row.region, ", ".join(row.substates)]
        if with_history:
            cells.append("yes" if row.has_history else "no")
        rows.append(cells)
    return rows


def _structure_table(truth: ir.StateMachine, parallel_only: bool = False, with_history: bool = False) -> str:
    header = ["Composite", "Region", "Substates"] + (["History"] if with_history else [])
    return tables.render_table(header, _structure_cells(truth, parallel_only, with_history))


def single_prompt_response(truth: ir.StateMachine) -> str:
    return (
        "Here is the complete state machine for the described system.\n\n"
        "```\n" + umple.emit_umple(truth) + "```\n"
    )


def structure_driven_responses(truth: ir.StateMachine) -> list[str]:
    return [
        "The relevant states and events:\n\n" + _states_table(truth) + "\n\n" + _events_table(truth),
        "Parallel regions:\n\n" + _structure_table(truth, parallel_only=True),
        "Outgoing transitions with guards:\n\n" + _transitions_table(truth, with_actions=False),
        "Transitions with their actions:\n\n" + _transitions_table(truth, with_actions=True),
        "Hierarchical grouping:\n\n" + _structure_table(truth),
        "History assessment:\n\n" + _structure_table(truth, with_history=True),
    ]


def event_driven_responses(truth: ir.StateMachine) -> list[str]:
    responses = [
        "The relevant states:\n\n" + _states_table(truth),
        "The relevant events:\n\n" + _events_table(truth),
    ]
    for event in event_order(truth):
        responses.append(
            f"Transitions on {event}:\n\n" + _transitions_table(truth, with_actions=True, only_event=event)
        )
    responses.append("Hierarchical grouping:\n\n" + _structure_table(truth))
    responses.append("Parallel regions:\n\n" + _structure_table(truth, parallel_only=True))
    responses.append("History assessment:\n\n" + _structure_table(truth, with_history=True))
    return responses


def hybrid_responses(truth: ir.StateMachine) -> list[str]:
    return [single_prompt_response(truth)] + structure_driven_responses(truth)


def scripted_responses(strategy: str, truth: ir.StateMachine) -> list[str]:
    if strategy == "single_prompt":
        return [single_prompt_response(truth)]
    if strategy == "structure_driven":
        return structure_driven_responses(truth)
    if strategy == "event_driven":
        return event_driven_responses(truth)
    if strategy == "hybrid":
        return hybrid_responses(truth)
    raise ValueError(f"unknown strategy {strategy!r}")
