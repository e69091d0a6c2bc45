#!/usr/bin/env python3
"""Regenerate the committed replay fixtures.

Records every (scenario x strategy) run of the mini-corpus against the
scripted backend into tests/fixtures/replay_bundle/, plus one deliberately
corrupted structure-driven run (garbage instead of the actions-step
response) into tests/fixtures/replay_corrupt/. Each recording is sanity-
checked: clean runs must reproduce the ground truth exactly; the corrupted
run must reproduce it minus actions, with a fallback warning.

Usage: python3 scripts/build_replay_bundle.py [--out tests/fixtures]
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from smforge import corpus, gateway, ir, strategies  # noqa: E402
from smforge.scripted import ScriptedBackend, scripted_responses, structure_driven_responses  # noqa: E402

SHOTS = 2  # the 3-scenario pool leaves only 2 examples after exclusion


def record_run(
    scenario: corpus.Scenario,
    strategy: str,
    responses: list[str],
    sink: Path,
    scenarios: dict[str, corpus.Scenario],
) -> strategies.RunResult:
    backend = ScriptedBackend(responses)
    recorder = gateway.record_wrap(backend, sink, strategy_id=strategy, scenario_id=scenario.id)
    config = strategies.GenerationConfig(
        strategy=strategy, shots=SHOTS, example_pool=corpus.pool_ids(scenarios)
    )
    try:
        result = strategies.run(scenario, config, recorder, scenarios)
    finally:
        recorder.close()
    if backend.remaining:
        raise AssertionError(f"{scenario.id}/{strategy}: {backend.remaining} scripted responses unused")
    return result


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="tests/fixtures", help="fixture root directory")
    args = parser.parse_args()

    fixture_root = Path(args.out)
    bundle_dir = fixture_root / "replay_bundle"
    corrupt_dir = fixture_root / "replay_corrupt"
    bundle_dir.mkdir(parents=True, exist_ok=True)
    corrupt_dir.mkdir(parents=True, exist_ok=True)

    scenarios = corpus.load_mini_corpus()

    for strategy in strategies.STRATEGIES:
        for sid, scenario in scenarios.items():
            sink = bundle_dir / f"{sid}__{strategy}.jsonl"
            result = record_run(scenario, strategy, scripted_responses(strategy, scenario.truth), sink, scenarios)
            if not ir.equivalent(result.machine, scenario.truth):
                raise AssertionError(f"{sid}/{strategy}: recorded run does not reproduce the ground truth")
            print(f"recorded {sink} ({len(result.transcript.entries)} calls)")

    # Corrupted variant: the actions step returns prose instead of a table,
    # so the final machine must fall back to action-less transitions.
    scenario = scenarios["kettle"]
    responses = structure_driven_responses(scenario.truth)
    responses[3] = "I'm sorry, I cannot format this as a table right now."
    sink = corrupt_dir / "kettle__structure_driven.jsonl"
    result = record_run(scenario, "structure_driven", responses, sink, scenarios)
    expected = ir.machine(
        scenario.truth.name,
        scenario.truth.root_states,
        [
            ir.Transition(t.source, t.target, t.event, t.guard, ())
            for t in scenario.truth.transitions
        ],
    )
    if not ir.equivalent(result.machine, expected):
        raise AssertionError("corrupted run did not fall back to action-less transitions")
    if not any("WARN s4_actions actions" in w for w in result.warnings):
        raise AssertionError("corrupted run emitted no fallback warning")
    print(f"recorded {sink} ({len(result.transcript.entries)} calls, actions fallback verified)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
