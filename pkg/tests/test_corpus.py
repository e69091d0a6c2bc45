import shutil

import pytest

from smforge import corpus, ir
from smforge.corpus import (
    CorpusError,
    MissingFile,
    expected_artifact_counts,
    load_corpus,
    load_scenario,
    verify_artifact_scenario,
    verify_counts,
)


@pytest.fixture
def kettle_dir(tmp_path):
    src = corpus.mini_corpus_dir() / "kettle"
    dst = tmp_path / "kettle"
    shutil.copytree(src, dst)
    return dst


class TestLoadScenario:
    def test_well_formed(self, kettle_dir):
        scenario = load_scenario(kettle_dir)
        assert scenario.id == "kettle"
        assert scenario.is_example_pool_member
        assert scenario.truth.name == "Kettle"
        assert scenario.aliases.lookup("state", "idle") == "standby"

    def test_missing_model_file(self, kettle_dir):
        (kettle_dir / "model.ump").unlink()
        with pytest.raises(MissingFile):
            load_scenario(kettle_dir)

    def test_strict_parse_failure_propagates(self, kettle_dir):
        (kettle_dir / "model.ump").write_text("Off { go -> Nowhere; }", encoding="utf-8")
        from smforge import umple

        with pytest.raises(umple.ParseFailed):
            load_scenario(kettle_dir)

    def test_missing_count_key_rejected(self, kettle_dir):
        meta = (kettle_dir / "meta.txt").read_text(encoding="utf-8")
        meta = "\n".join(l for l in meta.splitlines() if not l.startswith("guards"))
        (kettle_dir / "meta.txt").write_text(meta, encoding="utf-8")
        with pytest.raises(CorpusError):
            load_scenario(kettle_dir)


class TestVerifyCounts:
    def test_consistent_scenario_passes(self, mini_corpus):
        for scenario in mini_corpus.values():
            check = verify_counts(scenario)
            assert check.ok, (scenario.id, check)

    def test_mismatch_names_the_field(self, kettle_dir):
        meta = (kettle_dir / "meta.txt").read_text(encoding="utf-8")
        meta = meta.replace("transitions = 7", "transitions = 18")
        (kettle_dir / "meta.txt").write_text(meta, encoding="utf-8")
        check = verify_counts(load_scenario(kettle_dir))
        assert not check.ok
        assert check.mismatches == [("transitions", 18, 7)]


class TestLoadCorpus:
    def test_mini_corpus_ids_sorted(self, mini_corpus):
        assert list(mini_corpus) == ["kettle", "media_player", "turnstile"]

    def test_pool_ids(self, mini_corpus):
        assert corpus.pool_ids(mini_corpus) == ("kettle", "media_player", "turnstile")

    def test_missing_directory(self, tmp_path):
        with pytest.raises(MissingFile):
            load_corpus(tmp_path / "nope")

    def test_empty_directory(self, tmp_path):
        with pytest.raises(CorpusError):
            load_corpus(tmp_path)

    def test_zero_actions_scenario_is_representable(self, mini_corpus):
        assert mini_corpus["turnstile"].declared.actions == 0


class TestArtifactDeclarations:
    def test_printer_declaration(self):
        assert expected_artifact_counts("printer") == ir.ComponentCounts(6, 17, 6, 3, 2, 0, 1)

    def test_all_eight_scenarios_declared(self):
        ids = [
            "printer",
            "spa_manager",
            "dishwasher",
            "chess_clock",
            "bread_maker",
            "thermomix_tm6",
            "w_umple",
            "ssc7",
        ]
        for sid in ids:
            assert expected_artifact_counts(sid) is not None, sid
        assert expected_artifact_counts("spa_manager").actions == 0
        assert expected_artifact_counts("unknown") is None

    def test_every_declaration_has_one_history_state(self):
        for sid in ("printer", "spa_manager", "dishwasher", "chess_clock"):
            assert expected_artifact_counts(sid).history_states == 1

    def test_imported_scenario_declaration_mismatch_flagged(self, kettle_dir, tmp_path):
        # An import claiming to be the printer must carry the published
        # declaration; the kettle numbers do not match it.
        meta = (kettle_dir / "meta.txt").read_text(encoding="utf-8")
        (kettle_dir / "meta.txt").write_text(meta.replace("id = kettle", "id = printer"), encoding="utf-8")
        scenario = load_scenario(kettle_dir)
        check = verify_artifact_scenario(scenario)
        assert not check.ok

    def test_non_artifact_scenario_falls_back_to_count_check(self, mini_corpus):
        for scenario in mini_corpus.values():
            assert verify_artifact_scenario(scenario).ok
