"""The four generation strategies: single prompt, structure-driven,
event-driven, and the hybrid of both.

Each strategy maps (scenario description, config) to a finalized state
machine plus the transcript of every LLM call it made. The single-prompt
strategy asks for a complete machine in the textual syntax in one shot
(3-shot examples by default). The multi-step strategies run fixed step
sequences (2-shot by default), feed the accumulated HTML tables into each
next prompt, and rely on the post-processor's per-component merging with
last-good fallback. The hybrid strategy first runs the single-prompt
baseline and appends its raw output to every structure-driven step prompt
as a colleague-provided draft.

Few-shot examples are drawn in pool order, always excluding the scenario
under test. Only the opening state-discovery step of each multi-step
strategy uses the creative sampling profile; everything else runs at the
deterministic temperature.

Prompt templates are data: ``templates/<strategy>/<step_id>.txt`` with
``{{name}}`` placeholders, overridable per config. Example blocks sit
between the "### Worked examples" and "### Task" markers, which is what
makes prompt-leakage audits mechanical.
"""

from __future__ import annotations

import re
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional

from . import gateway, ir, postprocess, tables, umple
from .corpus import Scenario
from .postprocess import StepOutcome

STRATEGIES = ("single_prompt", "structure_driven", "event_driven", "hybrid")

EXAMPLES_HEADER = "### Worked examples"
TASK_HEADER = "### Task"

DEFAULT_SHOTS = {"single_prompt": 3, "structure_driven": 2, "event_driven": 2, "hybrid": 2}

DEFAULT_CREATIVE_STEPS = {
    "single_prompt": frozenset(),
    "structure_driven": frozenset({"s1_states_events"}),
    "event_driven": frozenset({"e1_states"}),
    "hybrid": frozenset({"s1_states_events"}),
}

#: Step order and per-step component responsibility, structure-driven.
STRUCTURE_STEPS: tuple[tuple[str, tuple[str, ...]], ...] = (
    ("s1_states_events", ("states",)),
    ("s2_parallel_regions", ("parallel",)),
    ("s3_transitions_guards", ("transitions", "guards")),
    ("s4_actions", ("actions",)),
    ("s5_hierarchy", ("hierarchical",)),
    ("s6_history", ("history",)),
)

_TEMPLATE_VAR_RE = re.compile(r"\{\{(\w+)\}\}")


class InsufficientExamples(ValueError):
    """The example pool cannot supply the requested number of shots."""


class TemplateError(ValueError):
    pass


@dataclass
class GenerationConfig:
    strategy: str
    model: str = "gpt-4o"
    shots: Optional[int] = None  # None: strategy default (3 single, 2 multi)
    example_pool: tuple[str, ...] = ()
    creative_steps: Optional[frozenset[str]] = None
    max_tokens: int = gateway.DEFAULT_MAX_TOKENS
    profiles: gateway.SamplingProfiles = field(default_factory=gateway.SamplingProfiles)
    templates_dir: Optional[Path] = None

    def resolved_shots(self, strategy: Optional[str] = None) -> int:
        if self.shots is not None:
            return self.shots
        return DEFAULT_SHOTS[strategy or self.strategy]

    def resolved_creative(self) -> frozenset[str]:
        if self.creative_steps is not None:
            return self.creative_steps
        return DEFAULT_CREATIVE_STEPS[self.strategy]


@dataclass
class RunResult:
    machine: ir.StateMachine
    transcript: gateway.Transcript
    warnings: list[str]
    outcomes: list[StepOutcome]
    merge_state: Optional[postprocess.MergeState] = None  # multi-step runs only


# ---------------------------------------------------------------------------
# Templates


def templates_root() -> Path:
    return Path(__file__).parent / "templates"


def load_template(strategy: str, step_id: str, config: Optional[GenerationConfig] = None) -> str:
    root = config.templates_dir if config and config.templates_dir else templates_root()
    path = Path(root) / strategy / f"{step_id}.txt"
    if not path.is_file():
        raise TemplateError(f"missing template {path}")
    return path.read_text(encoding="utf-8")


def render_template(template: str, variables: Mapping[str, str]) -> str:
    def sub(match: re.Match) -> str:
        name = match.group(1)
        if name not in variables:
            raise TemplateError(f"template references unknown placeholder {{{{{name}}}}}")
        return variables[name]

    return _TEMPLATE_VAR_RE.sub(sub, template)


# ---------------------------------------------------------------------------
# Few-shot examples


def build_fewshot(
    pool: tuple[str, ...] | list[str],
    test_id: str,
    n: int,
    fmt: str,
    scenarios: Mapping[str, Scenario],
) -> list[str]:
    """First ``n`` pool scenarios (pool order) excluding the one under test,
    each rendered as description plus ground truth in ``fmt``."""
    remaining = [pid for pid in pool if pid != test_id]
    if len(remaining) < n:
        raise InsufficientExamples(
            f"need {n} examples but only {len(remaining)} pool scenarios remain after excluding {test_id!r}"
        )
    blocks = []
    for pid in remaining[:n]:
        sc = scenarios[pid]
        if fmt == "umple":
            rendered = umple.emit_umple(sc.truth)
        elif fmt == "tables":
            rendered = tables.emit_tables(sc.truth)
        else:
            raise ValueError(f"unknown example format {fmt!r}")
        blocks.append(
            f"System description:\n{sc.description.strip()}\n\nSolution:\n{rendered.strip()}"
        )
    return blocks


def render_examples(blocks: list[str]) -> str:
    parts = [EXAMPLES_HEADER]
    for i, block in enumerate(blocks, 1):
        parts.append(f"#### Example {i}\n{block}")
    return "\n\n".join(parts)


def fewshot_section(prompt: str) -> str:
    """Everything before the task marker: instructions plus example blocks.

    The scenario under test must never appear here (leakage audit). The
    marker only counts at the start of a line, so prose cannot fake it."""
    return prompt.split("\n" + TASK_HEADER)[0]


# ---------------------------------------------------------------------------
# Call plumbing


class _Recorder:
    """In-memory transcript collector around any backend."""

    def __init__(self, backend: gateway.Backend, strategy_id: str, scenario_id: str):
        self.backend = backend
        self.transcript = gateway.Transcript(strategy_id=strategy_id, scenario_id=scenario_id)

    def complete(self, req: gateway.CompletionRequest) -> gateway.CompletionResponse:
        start = time.monotonic()
        resp = self.backend.complete(req)
        ms = int((time.monotonic() - start) * 1000)
        self.transcript.entries.append(
            gateway.TranscriptEntry(
                digest=gateway.request_digest(req), request=req, response=resp, ms=ms
            )
        )
        return resp


def _call(
    rec: _Recorder,
    config: GenerationConfig,
    step_id: str,
    prompt: str,
    warnings: list[str],
) -> tuple[gateway.CompletionResponse, float]:
    kind = "creative" if step_id in config.resolved_creative() else "deterministic"
    temperature = gateway.profile(kind, config.profiles)
    req = gateway.CompletionRequest(
        model=config.model,
        messages=(gateway.Message("user", prompt),),
        temperature=temperature,
        max_tokens=config.max_tokens,
    )
    try:
        resp = rec.complete(req)
    except gateway.GatewayError as exc:
        raise exc.with_step(step_id)
    if resp.truncated:
        warnings.append(f"WARN {step_id} response truncated (finish=length)")
    return resp, temperature


# ---------------------------------------------------------------------------
# Single-prompt baseline


def _single_prompt_call(
    scenario: Scenario,
    config: GenerationConfig,
    rec: _Recorder,
    pool: Mapping[str, Scenario],
    warnings: list[str],
) -> tuple[ir.StateMachine, str]:
    shots = config.resolved_shots("single_prompt")
    blocks = build_fewshot(config.example_pool, scenario.id, shots, "umple", pool)
    prompt = render_template(
        load_template("single_prompt", "main", config),
        {
            "examples": render_examples(blocks),
            "description": scenario.description.strip(),
        },
    )
    resp, _ = _call(rec, config, "main", prompt, warnings)
    doc = umple.parse_umple(resp.content, umple.LENIENT)
    for diag in doc.diagnostics:
        warnings.append(f"WARN main parse {diag}")
    assert doc.machine is not None  # lenient always yields a machine
    return doc.machine, resp.content


def run_single_prompt(
    scenario: Scenario,
    config: GenerationConfig,
    backend: gateway.Backend,
    pool: Mapping[str, Scenario],
) -> RunResult:
    rec = _Recorder(backend, "single_prompt", scenario.id)
    warnings: list[str] = []
    machine, _ = _single_prompt_call(scenario, config, rec, pool, warnings)
    return RunResult(machine=machine, transcript=rec.transcript, warnings=warnings, outcomes=[])


# ---------------------------------------------------------------------------
# Table-step machinery shared by structure-driven, event-driven and hybrid


def _parse_step(step_id: str, components: tuple[str, ...], resp: gateway.CompletionResponse, temperature: float) -> StepOutcome:
    parsed = tables.parse_tables(tables.extract_html_tables(resp.content))
    return StepOutcome(
        step_id=step_id,
        raw_response=resp.content,
        components=components,
        parsed=parsed.partial,
        component_ok=parsed.component_ok,
        temperature_used=temperature,
    )


def _table_step_prompt(
    strategy_dir: str,
    step_id: str,
    scenario: Scenario,
    config: GenerationConfig,
    examples_text: str,
    accumulated: tables.PartialModel,
    extra_vars: Optional[dict[str, str]] = None,
    baseline_suffix: Optional[str] = None,
) -> str:
    variables = {
        "examples": examples_text,
        "description": scenario.description.strip(),
        "tables": tables.render_partial(accumulated),
    }
    if extra_vars:
        variables.update(extra_vars)
    prompt = render_template(load_template(strategy_dir, step_id, config), variables)
    if baseline_suffix:
        prompt = prompt.rstrip("\n") + "\n\n" + baseline_suffix
    return prompt


def _run_structure_steps(
    scenario: Scenario,
    config: GenerationConfig,
    rec: _Recorder,
    pool: Mapping[str, Scenario],
    warnings: list[str],
    baseline_suffix: Optional[str] = None,
) -> tuple[ir.StateMachine, postprocess.MergeState, list[StepOutcome]]:
    shots = config.resolved_shots("structure_driven")
    blocks = build_fewshot(config.example_pool, scenario.id, shots, "tables", pool)
    examples_text = render_examples(blocks)
    state = postprocess.new_merge_state()
    outcomes: list[StepOutcome] = []
    for step_id, components in STRUCTURE_STEPS:
        prompt = _table_step_prompt(
            "structure_driven", step_id, scenario, config, examples_text, state.current,
            baseline_suffix=baseline_suffix,
        )
        resp, temperature = _call(rec, config, step_id, prompt, warnings)
        outcome = _parse_step(step_id, components, resp, temperature)
        state = postprocess.merge_step(state, outcome)
        outcomes.append(outcome)
    warnings.extend(state.warnings)
    partial = postprocess.dedupe(state.current, warnings)
    machine = postprocess.finalize(partial, warnings)
    return machine, state, outcomes


def run_structure_driven(
    scenario: Scenario,
    config: GenerationConfig,
    backend: gateway.Backend,
    pool: Mapping[str, Scenario],
) -> RunResult:
    rec = _Recorder(backend, "structure_driven", scenario.id)
    warnings: list[str] = []
    machine, state, outcomes = _run_structure_steps(scenario, config, rec, pool, warnings)
    return RunResult(
        machine=machine, transcript=rec.transcript, warnings=warnings, outcomes=outcomes, merge_state=state
    )


# ---------------------------------------------------------------------------
# Event-driven


def _extract_events(content: str) -> list[str]:
    """Pull the event list out of an events table (single Event column)."""
    events: list[str] = []
    seen: set[str] = set()
    for table in tables.extract_html_tables(content):
        header = [h.strip().lower() for h in table[0]]
        if "event" not in header or ("source" in header and "target" in header):
            continue
        idx = header.index("event")
        for row in table[1:]:
            if idx >= len(row):
                continue
            name = row[idx].strip()
            if not name:
                continue
            try:
                canon = ir.normalize_name(name)
            except ir.NameUnusable:
                continue
            if canon not in seen:
                seen.add(canon)
                events.append(name)
    return events


def run_event_driven(
    scenario: Scenario,
    config: GenerationConfig,
    backend: gateway.Backend,
    pool: Mapping[str, Scenario],
) -> RunResult:
    rec = _Recorder(backend, "event_driven", scenario.id)
    warnings: list[str] = []
    shots = config.resolved_shots("event_driven")
    blocks = build_fewshot(config.example_pool, scenario.id, shots, "tables", pool)
    examples_text = render_examples(blocks)
    state = postprocess.new_merge_state()
    outcomes: list[StepOutcome] = []

    def step(step_id: str, components: tuple[str, ...]) -> StepOutcome:
        nonlocal state
        prompt = _table_step_prompt(
            "event_driven", step_id, scenario, config, examples_text, state.current
        )
        resp, temperature = _call(rec, config, step_id, prompt, warnings)
        outcome = _parse_step(step_id, components, resp, temperature)
        if components:
            state = postprocess.merge_step(state, outcome)
        outcomes.append(outcome)
        return outcome

    step("e1_states", ("states",))

    e2 = step("e2_events", ())
    events = _extract_events(e2.raw_response)
    if not events:
        warnings.append("WARN e2_events transitions no events extracted; skipping per-event steps")

    per_event: list[StepOutcome] = []
    for event in events:
        step_id = f"e3_event_transitions:{ir.normalize_name(event)}"
        try:
            prompt = _table_step_prompt(
                "event_driven", "e3_event_transitions", scenario, config, examples_text,
                state.current, extra_vars={"event": event},
            )
            resp, temperature = _call(rec, config, "e3_event_transitions", prompt, warnings)
        except gateway.GatewayError as exc:
            warnings.append(f"WARN {step_id} transitions event call failed ({exc}); skipped")
            continue
        outcome = _parse_step(step_id, (), resp, temperature)
        outcomes.append(outcome)
        if outcome.component_ok.get("transitions"):
            per_event.append(outcome)
        else:
            warnings.append(f"WARN {step_id} transitions no parsable table; event skipped")

    combined = tables.PartialModel()
    combined_ok = {"transitions": False, "guards": False, "actions": False}
    for outcome in per_event:
        assert outcome.parsed is not None
        combined.transition_rows.extend(outcome.parsed.transition_rows)
        for comp in combined_ok:
            combined_ok[comp] = combined_ok[comp] or outcome.component_ok.get(comp, False)
    merged_outcome = StepOutcome(
        step_id="e3_event_transitions",
        raw_response="",
        components=("transitions", "guards", "actions"),
        parsed=combined if per_event else None,
        component_ok=combined_ok,
        temperature_used=gateway.profile("deterministic", config.profiles),
    )
    if events:
        state = postprocess.merge_step(state, merged_outcome)
        outcomes.append(merged_outcome)

    step("e4_hierarchy", ("hierarchical",))
    step("e5_parallel", ("parallel",))
    step("e6_history", ("history",))

    warnings.extend(state.warnings)
    partial = postprocess.dedupe(state.current, warnings)
    machine = postprocess.finalize(partial, warnings)
    return RunResult(
        machine=machine, transcript=rec.transcript, warnings=warnings, outcomes=outcomes, merge_state=state
    )


# ---------------------------------------------------------------------------
# Hybrid


def run_hybrid(
    scenario: Scenario,
    config: GenerationConfig,
    backend: gateway.Backend,
    pool: Mapping[str, Scenario],
) -> RunResult:
    """Single-prompt baseline first; its raw output rides along at the end
    of every structure-driven step prompt. A baseline gateway failure
    aborts the run; an empty baseline machine does not."""
    rec = _Recorder(backend, "hybrid", scenario.id)
    warnings: list[str] = []
    _, baseline_raw = _single_prompt_call(scenario, config, rec, pool, warnings)
    suffix = render_template(
        load_template("hybrid", "colleague_note", config),
        {"baseline": baseline_raw.strip()},
    )
    machine, state, outcomes = _run_structure_steps(
        scenario, config, rec, pool, warnings, baseline_suffix=suffix
    )
    return RunResult(
        machine=machine, transcript=rec.transcript, warnings=warnings, outcomes=outcomes, merge_state=state
    )


# ---------------------------------------------------------------------------
# Dispatch


_RUNNERS = {
    "single_prompt": run_single_prompt,
    "structure_driven": run_structure_driven,
    "event_driven": run_event_driven,
    "hybrid": run_hybrid,
}


def run(
    scenario: Scenario,
    config: GenerationConfig,
    backend: gateway.Backend,
    pool: Mapping[str, Scenario],
) -> RunResult:
    if config.strategy not in _RUNNERS:
        raise ValueError(f"unknown strategy {config.strategy!r}")
    return _RUNNERS[config.strategy](scenario, config, backend, pool)
