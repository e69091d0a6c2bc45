"""Command-line entry point: generate, evaluate, bench.

    smforge generate --scenario DIR --strategy NAME [--replay FILE | --record FILE]
    smforge evaluate --scenario DIR --generated FILE
    smforge bench --corpus DIR --strategies a,b,c --replay DIR --out DIR

Exit codes: 0 ok (possibly with warnings), 1 pipeline failure, 2 usage,
3 gateway/auth failure. With ``--replay`` everything runs offline and the
written reports are byte-stable across runs and platforms.
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Optional

from . import corpus, evaluation, gateway, ir, postprocess, strategies, tables, umple

EXIT_OK = 0
EXIT_PIPELINE = 1
EXIT_USAGE = 2
EXIT_GATEWAY = 3

COMPONENT_LABELS = {
    "states": "States",
    "transitions": "Transitions",
    "guards": "Guards",
    "actions": "Actions",
    "hierarchical": "Hierarchical states",
    "parallel": "Parallel regions",
    "history": "History states",
}


def _fmt(value: Optional[float]) -> str:
    return f"{value:.4f}" if value is not None else "-"


def format_report_table(report: evaluation.EvalReport) -> str:
    """Markdown table: one row per component plus the aggregate All row."""
    lines = [
        "| Component | Precision | Recall | F1 |",
        "|---|---|---|---|",
    ]
    for comp in ir.COMPONENTS:
        triple = report.components.get(comp)
        if triple is None:
            lines.append(f"| {COMPONENT_LABELS[comp]} | - | - | - |")
        else:
            lines.append(
                f"| {COMPONENT_LABELS[comp]} | {_fmt(triple.precision)} | {_fmt(triple.recall)} | {_fmt(triple.f1)} |"
            )
    agg = report.aggregate
    if agg is None:
        lines.append("| All | - | - | - |")
    else:
        lines.append(f"| All | {_fmt(agg.precision)} | {_fmt(agg.recall)} | {_fmt(agg.f1)} |")
    return "\n".join(lines)


def report_to_dict(report: evaluation.EvalReport) -> dict:
    def triple(t: Optional[evaluation.MetricTriple]) -> Optional[dict]:
        if t is None:
            return None
        return {"precision": t.precision, "recall": t.recall, "f1": t.f1}

    return {
        "mode": report.mode,
        "components": {c: triple(report.components.get(c)) for c in ir.COMPONENTS},
        "aggregate": triple(report.aggregate),
    }


def sets_to_dict(sets: evaluation.MatchSets) -> dict:
    return {
        comp: {"tp": tally.tp, "fp": tally.fp, "fn": tally.fn}
        for comp, tally in sorted(sets.components.items())
    }


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


# ---------------------------------------------------------------------------
# Backend selection


def _live_backend(args) -> gateway.Backend:
    if args.provider == "anthropic":
        return gateway.AnthropicChatBackend()
    return gateway.OpenAIChatBackend()


def _config_from_args(args, pool: tuple[str, ...], strategy: str) -> strategies.GenerationConfig:
    return strategies.GenerationConfig(
        strategy=strategy,
        model=args.model,
        shots=args.shots,
        example_pool=pool,
        max_tokens=args.max_tokens,
        profiles=gateway.SamplingProfiles(
            deterministic=args.temp_deterministic, creative=args.temp_creative
        ),
        templates_dir=Path(args.templates) if getattr(args, "templates", None) else None,
    )


# ---------------------------------------------------------------------------
# generate


def cmd_generate(args) -> int:
    scenarios = corpus.load_corpus(args.corpus)
    scenario = corpus.load_scenario(args.scenario)
    pool = corpus.pool_ids(scenarios)
    config = _config_from_args(args, pool, args.strategy)

    backend: gateway.Backend
    recorder = None
    if args.replay:
        backend = gateway.ReplayBackend(
            gateway.load_transcript(args.replay, args.strategy, scenario.id)
        )
    else:
        backend = _live_backend(args)
    if args.record:
        recorder = gateway.record_wrap(
            backend,
            args.record,
            strategy_id=args.strategy,
            scenario_id=scenario.id,
            expected_max_tokens=args.max_tokens,
        )
        backend = recorder

    try:
        result = strategies.run(scenario, config, backend, scenarios)
    except gateway.GatewayError as exc:
        print(f"error: gateway failure: {exc}", file=sys.stderr)
        return EXIT_GATEWAY
    except (postprocess.FinalizeFailed, strategies.InsufficientExamples) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PIPELINE
    finally:
        if recorder is not None:
            recorder.close()

    out = Path(args.out)
    if args.format in ("umple", "both"):
        _write(out / "model.ump", umple.emit_umple(result.machine))
    if args.format in ("tables", "both"):
        _write(out / "model.tables.html", tables.emit_tables(result.machine) + "\n")
    _write(out / "warnings.txt", "".join(w + "\n" for w in result.warnings))
    counts = ir.component_counts(result.machine)
    print(f"generated machine: {counts.as_dict()}")
    if result.warnings:
        print(f"{len(result.warnings)} warning(s) written to {out / 'warnings.txt'}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# evaluate


def _load_generated(path: Path) -> ir.StateMachine:
    text = path.read_text(encoding="utf-8")
    if path.suffix == ".ump":
        doc = umple.parse_umple(text, umple.STRICT)
        assert doc.machine is not None
        return doc.machine
    parsed = tables.parse_tables(tables.extract_html_tables(text))
    return postprocess.finalize(parsed.partial)


def cmd_evaluate(args) -> int:
    scenario = corpus.load_scenario(args.scenario)
    try:
        generated = _load_generated(Path(args.generated))
    except (umple.ParseFailed, postprocess.FinalizeFailed) as exc:
        print(f"error: cannot load generated model: {exc}", file=sys.stderr)
        return EXIT_PIPELINE

    result = evaluation.evaluate(
        generated, scenario.truth, scenario.aliases, similarity_threshold=args.similarity_threshold
    )
    print(f"Scenario: {scenario.id}")
    print("Averaging mode: single scenario (counts pooled across components for All)")
    print(format_report_table(result.report))
    if args.out:
        record = {
            "scenario": scenario.id,
            "counts": sets_to_dict(result.sets),
            "report": report_to_dict(result.report),
        }
        _write(Path(args.out) / f"evaluate_{scenario.id}.json", json.dumps(record, indent=2, sort_keys=True) + "\n")
    return EXIT_OK


# ---------------------------------------------------------------------------
# bench


def _bench_one(
    scenario: corpus.Scenario,
    strategy: str,
    args,
    scenarios: dict[str, corpus.Scenario],
    pool: tuple[str, ...],
) -> tuple[str, str, Optional[evaluation.Evaluation], Optional[str]]:
    """Returns (scenario_id, strategy, evaluation or None, failure note)."""
    config = _config_from_args(args, pool, strategy)
    if args.replay:
        transcript_path = Path(args.replay) / f"{scenario.id}__{strategy}.jsonl"
        if not transcript_path.is_file():
            return scenario.id, strategy, None, f"missing transcript {transcript_path.name}"
        backend = gateway.ReplayBackend(
            gateway.load_transcript(transcript_path, strategy, scenario.id)
        )
    else:
        backend = _live_backend(args)
    try:
        result = strategies.run(scenario, config, backend, scenarios)
    except (gateway.GatewayError, postprocess.FinalizeFailed, strategies.InsufficientExamples) as exc:
        return scenario.id, strategy, None, str(exc)
    evald = evaluation.evaluate(
        result.machine, scenario.truth, scenario.aliases,
        similarity_threshold=args.similarity_threshold,
    )
    return scenario.id, strategy, evald, None


def cmd_bench(args) -> int:
    scenarios = corpus.load_corpus(args.corpus)
    strategy_list = [s.strip() for s in args.strategies.split(",") if s.strip()]
    unknown = [s for s in strategy_list if s not in strategies.STRATEGIES]
    if unknown:
        print(f"error: unknown strategy name(s): {', '.join(unknown)}", file=sys.stderr)
        return EXIT_USAGE
    if not args.replay:
        missing_live = not (args.live or False)
        if missing_live:
            print("error: bench needs --replay DIR (or --live to call providers)", file=sys.stderr)
            return EXIT_USAGE

    pool = corpus.pool_ids(scenarios)
    jobs = []
    for strategy in strategy_list:
        for sid in sorted(scenarios):
            jobs.append((scenarios[sid], strategy))

    if args.jobs > 1:
        with ThreadPoolExecutor(max_workers=args.jobs) as pool_exec:
            results = list(
                pool_exec.map(lambda j: _bench_one(j[0], j[1], args, scenarios, pool), jobs)
            )
    else:
        results = [_bench_one(sc, st, args, scenarios, pool) for sc, st in jobs]

    out = Path(args.out)
    notices: list[str] = []
    by_strategy: dict[str, list[tuple[str, evaluation.Evaluation]]] = {s: [] for s in strategy_list}
    for sid, strategy, evald, failure in sorted(results, key=lambda r: (r[1], r[0])):
        if evald is None:
            notices.append(f"{strategy}/{sid}: excluded ({failure})")
            continue
        by_strategy[strategy].append((sid, evald))
        record = {
            "scenario": sid,
            "strategy": strategy,
            "counts": sets_to_dict(evald.sets),
            "report": report_to_dict(evald.report),
        }
        _write(out / "reports" / f"{sid}__{strategy}.json", json.dumps(record, indent=2, sort_keys=True) + "\n")

    overall_lines = [
        f"Averaging mode: {args.avg}",
        "",
        "| Generation strategy | Precision | Recall | F1 |",
        "|---|---|---|---|",
    ]
    alternate_mode = "pooled" if args.avg == "macro" else "macro"
    alternate_lines = [
        "",
        f"Alternate averaging mode ({alternate_mode}), for comparison:",
        "",
        "| Generation strategy | Precision | Recall | F1 |",
        "|---|---|---|---|",
    ]
    for strategy in strategy_list:
        evals = by_strategy[strategy]
        if not evals:
            notices.append(f"{strategy}: no scenarios completed; omitted from summary")
            continue
        # Both averaging modes are always computed; --avg picks which one
        # the per-strategy tables show.
        macro = evaluation.macro_average([e.report for _, e in evals])
        pooled = evaluation.pooled_average([e.sets for _, e in evals])
        summary, alternate = (pooled, macro) if args.avg == "pooled" else (macro, pooled)
        lines = [
            f"# Strategy: {strategy}",
            "",
            f"Averaging mode: {summary.mode} over {len(evals)} scenario(s)",
            "",
            format_report_table(summary),
            "",
        ]
        _write(out / f"{strategy}_metrics.md", "\n".join(lines))
        print("\n".join(lines))

        def row(report):
            agg = report.aggregate
            return (
                f"| {strategy} | {_fmt(agg.precision if agg else None)} | "
                f"{_fmt(agg.recall if agg else None)} | {_fmt(agg.f1 if agg else None)} |"
            )

        overall_lines.append(row(summary))
        alternate_lines.append(row(alternate))
    _write(out / "overall.md", "\n".join(overall_lines + alternate_lines) + "\n")
    print("\n".join(overall_lines))

    if notices:
        _write(out / "notices.txt", "".join(n + "\n" for n in notices))
        print(f"warnings: {len(notices)} run(s) excluded; see {out / 'notices.txt'}", file=sys.stderr)
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing


def _add_common_generation_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--model", default="gpt-4o", help="opaque model identifier sent to the provider")
    p.add_argument("--provider", choices=("openai", "anthropic"), default="openai")
    p.add_argument("--shots", type=int, default=None, help="few-shot examples (default 3 single-prompt, 2 multi-step)")
    p.add_argument("--max-tokens", type=int, default=gateway.DEFAULT_MAX_TOKENS)
    p.add_argument("--temp-deterministic", type=float, default=0.01)
    p.add_argument("--temp-creative", type=float, default=0.5)
    p.add_argument("--templates", default=None, help="override template directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="smforge", description="LLM state machine generation pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="run one strategy on one scenario")
    gen.add_argument("--scenario", required=True, help="scenario directory")
    gen.add_argument("--strategy", required=True, choices=strategies.STRATEGIES)
    gen.add_argument("--corpus", default=str(corpus.mini_corpus_dir()), help="corpus directory supplying the example pool")
    gen.add_argument("--replay", default=None, help="replay transcript file (offline)")
    gen.add_argument("--record", default=None, help="record transcript to this file")
    gen.add_argument("--out", default="out", help="output directory")
    gen.add_argument("--format", choices=("umple", "tables", "both"), default="both")
    _add_common_generation_flags(gen)
    gen.set_defaults(func=cmd_generate)

    ev = sub.add_parser("evaluate", help="score a generated model against a scenario's ground truth")
    ev.add_argument("--scenario", required=True)
    ev.add_argument("--generated", required=True, help="model file (.ump or HTML tables)")
    ev.add_argument("--out", default=None)
    ev.add_argument(
        "--similarity-threshold", type=float, default=None,
        help="opt-in fuzzy state matching (0..1); off by default, aliases are preferred",
    )
    ev.set_defaults(func=cmd_evaluate)

    bench = sub.add_parser("bench", help="run strategies x scenarios and summarize")
    bench.add_argument("--corpus", default=str(corpus.mini_corpus_dir()))
    bench.add_argument("--strategies", required=True, help="comma-separated strategy names")
    bench.add_argument("--replay", default=None, help="replay bundle directory (<scenario>__<strategy>.jsonl)")
    bench.add_argument("--live", action="store_true", help="call live providers instead of replaying")
    bench.add_argument("--out", default="bench_out")
    bench.add_argument("--avg", choices=("macro", "pooled"), default="macro")
    bench.add_argument("--jobs", type=int, default=1)
    bench.add_argument("--format", choices=("umple", "tables", "both"), default="both")
    bench.add_argument(
        "--similarity-threshold", type=float, default=None,
        help="opt-in fuzzy state matching (0..1); off by default, aliases are preferred",
    )
    _add_common_generation_flags(bench)
    bench.set_defaults(func=cmd_bench)

    return parser


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else 0
    try:
        return args.func(args)
    except (corpus.MissingFile, corpus.CorpusError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except umple.ParseFailed as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PIPELINE


if __name__ == "__main__":
    sys.exit(main())
