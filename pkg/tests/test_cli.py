import json
from pathlib import Path

import pytest

from smforge import cli, corpus, ir, umple
from conftest import REPLAY_BUNDLE

MINI = str(corpus.mini_corpus_dir())
ALL_STRATEGIES = "single_prompt,structure_driven,event_driven,hybrid"


def run_cli(*argv):
    return cli.main(list(argv))


class TestGenerate:
    def test_replay_generate_writes_model(self, tmp_path):
        out = tmp_path / "out"
        code = run_cli(
            "generate",
            "--scenario", f"{MINI}/kettle",
            "--strategy", "structure_driven",
            "--replay", str(REPLAY_BUNDLE / "kettle__structure_driven.jsonl"),
            "--shots", "2",
            "--out", str(out),
        )
        assert code == 0
        doc = umple.parse_umple((out / "model.ump").read_text(), umple.STRICT)
        truth = corpus.load_scenario(Path(MINI) / "kettle").truth
        assert ir.equivalent(doc.machine, truth)
        assert (out / "model.tables.html").exists()
        assert (out / "warnings.txt").exists()

    def test_unknown_strategy_is_usage_error(self, tmp_path):
        code = run_cli(
            "generate", "--scenario", f"{MINI}/kettle", "--strategy", "mystery", "--out", str(tmp_path)
        )
        assert code == cli.EXIT_USAGE

    def test_generate_without_credentials_is_gateway_error(self, tmp_path, monkeypatch):
        monkeypatch.delenv("SMFORGE_OPENAI_KEY", raising=False)
        code = run_cli(
            "generate",
            "--scenario", f"{MINI}/kettle",
            "--strategy", "single_prompt",
            "--shots", "2",
            "--out", str(tmp_path / "o"),
        )
        assert code == cli.EXIT_GATEWAY

    def test_record_replays_through_scripted_stub(self, tmp_path, monkeypatch):
        # Record against a replay of the shipped bundle, then replay the
        # fresh recording: a full record/replay cycle without a network.
        first_out = tmp_path / "a"
        recorded = tmp_path / "rec.jsonl"
        code = run_cli(
            "generate",
            "--scenario", f"{MINI}/turnstile",
            "--strategy", "single_prompt",
            "--replay", str(REPLAY_BUNDLE / "turnstile__single_prompt.jsonl"),
            "--record", str(recorded),
            "--shots", "2",
            "--out", str(first_out),
        )
        assert code == 0
        assert recorded.exists()
        second_out = tmp_path / "b"
        code = run_cli(
            "generate",
            "--scenario", f"{MINI}/turnstile",
            "--strategy", "single_prompt",
            "--replay", str(recorded),
            "--shots", "2",
            "--out", str(second_out),
        )
        assert code == 0
        assert (first_out / "model.ump").read_text() == (second_out / "model.ump").read_text()


class TestEvaluate:
    def test_truth_against_itself_is_all_ones(self, tmp_path, capsys):
        code = run_cli(
            "evaluate",
            "--scenario", f"{MINI}/media_player",
            "--generated", f"{MINI}/media_player/model.ump",
            "--out", str(tmp_path),
        )
        assert code == 0
        printed = capsys.readouterr().out
        assert "1.0000" in printed
        assert "0.0000" not in printed
        record = json.loads((tmp_path / "evaluate_media_player.json").read_text())
        assert record["report"]["aggregate"]["f1"] == 1.0

    def test_turnstile_actions_row_excluded(self, capsys):
        code = run_cli(
            "evaluate",
            "--scenario", f"{MINI}/turnstile",
            "--generated", f"{MINI}/turnstile/model.ump",
        )
        assert code == 0
        printed = capsys.readouterr().out
        assert "| Actions | - | - | - |" in printed

    def test_known_imperfect_pair(self, tmp_path, capsys):
        generated = tmp_path / "gen.ump"
        generated.write_text(
            "class Turnstile {\n  sm {\n    Locked {\n      coin -> Unlocked;\n"
            "      push -> Locked;\n    }\n    Unlocked {\n      push -> Locked;\n    }\n  }\n}\n"
        )
        code = run_cli("evaluate", "--scenario", f"{MINI}/turnstile", "--generated", str(generated))
        assert code == 0
        printed = capsys.readouterr().out
        # states: tp=2 fp=0 fn=1 -> P=1.0, R=2/3
        assert "| States | 1.0000 | 0.6667 | 0.8000 |" in printed
        # transitions: tp=3 of 6 truth, 0 fp -> P=1, R=0.5
        assert "| Transitions | 1.0000 | 0.5000 | 0.6667 |" in printed

    def test_malformed_generated_file_fails_pipeline(self, tmp_path):
        bad = tmp_path / "bad.ump"
        bad.write_text("not a machine {{{")
        code = run_cli("evaluate", "--scenario", f"{MINI}/turnstile", "--generated", str(bad))
        assert code == cli.EXIT_PIPELINE


class TestBench:
    def test_full_replay_bench(self, tmp_path, capsys):
        out = tmp_path / "bench"
        code = run_cli(
            "bench",
            "--corpus", MINI,
            "--strategies", ALL_STRATEGIES,
            "--replay", str(REPLAY_BUNDLE),
            "--shots", "2",
            "--out", str(out),
        )
        assert code == 0
        printed = capsys.readouterr().out
        assert "Averaging mode: macro" in printed
        for strategy in ALL_STRATEGIES.split(","):
            assert (out / f"{strategy}_metrics.md").exists()
        reports = sorted(p.name for p in (out / "reports").glob("*.json"))
        assert len(reports) == 12
        overall = (out / "overall.md").read_text()
        assert "| single_prompt | 1.0000 | 1.0000 | 1.0000 |" in overall

    def test_bench_is_byte_deterministic(self, tmp_path):
        outs = []
        for name in ("one", "two"):
            out = tmp_path / name
            code = run_cli(
                "bench",
                "--corpus", MINI,
                "--strategies", "single_prompt,structure_driven",
                "--replay", str(REPLAY_BUNDLE),
                "--shots", "2",
                "--out", str(out),
            )
            assert code == 0
            outs.append(out)
        files_a = sorted(p.relative_to(outs[0]) for p in outs[0].rglob("*") if p.is_file())
        files_b = sorted(p.relative_to(outs[1]) for p in outs[1].rglob("*") if p.is_file())
        assert files_a == files_b
        for rel in files_a:
            assert (outs[0] / rel).read_bytes() == (outs[1] / rel).read_bytes(), rel

    def test_pooled_mode_flag(self, tmp_path, capsys):
        code = run_cli(
            "bench",
            "--corpus", MINI,
            "--strategies", "single_prompt",
            "--replay", str(REPLAY_BUNDLE),
            "--shots", "2",
            "--avg", "pooled",
            "--out", str(tmp_path / "b"),
        )
        assert code == 0
        assert "Averaging mode: pooled" in capsys.readouterr().out

    def test_missing_transcript_excluded_with_notice(self, tmp_path, capsys):
        bundle = tmp_path / "partial_bundle"
        bundle.mkdir()
        src = REPLAY_BUNDLE / "kettle__single_prompt.jsonl"
        (bundle / src.name).write_bytes(src.read_bytes())
        out = tmp_path / "bench"
        code = run_cli(
            "bench",
            "--corpus", MINI,
            "--strategies", "single_prompt",
            "--replay", str(bundle),
            "--shots", "2",
            "--out", str(out),
        )
        assert code == 0
        captured = capsys.readouterr()
        assert "excluded" in captured.err
        notices = (out / "notices.txt").read_text()
        assert "media_player" in notices and "turnstile" in notices

    def test_unknown_strategy_usage_error(self, tmp_path):
        code = run_cli(
            "bench", "--corpus", MINI, "--strategies", "wild", "--replay", str(REPLAY_BUNDLE),
            "--out", str(tmp_path / "x"),
        )
        assert code == cli.EXIT_USAGE

    def test_empty_corpus_usage_error(self, tmp_path):
        empty = tmp_path / "corpus"
        empty.mkdir()
        code = run_cli(
            "bench", "--corpus", str(empty), "--strategies", "single_prompt",
            "--replay", str(REPLAY_BUNDLE), "--out", str(tmp_path / "x"),
        )
        assert code == cli.EXIT_USAGE

    def test_parallel_jobs_match_serial(self, tmp_path):
        outs = []
        for jobs in ("1", "4"):
            out = tmp_path / f"jobs{jobs}"
            code = run_cli(
                "bench",
                "--corpus", MINI,
                "--strategies", ALL_STRATEGIES,
                "--replay", str(REPLAY_BUNDLE),
                "--shots", "2",
                "--jobs", jobs,
                "--out", str(out),
            )
            assert code == 0
            outs.append(out)
        for rel in sorted(p.relative_to(outs[0]) for p in outs[0].rglob("*") if p.is_file()):
            assert (outs[0] / rel).read_bytes() == (outs[1] / rel).read_bytes(), rel
