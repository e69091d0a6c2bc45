from pathlib import Path

import pytest

from smforge import corpus

FIXTURES = Path(__file__).parent / "fixtures"
REPLAY_BUNDLE = FIXTURES / "replay_bundle"
REPLAY_CORRUPT = FIXTURES / "replay_corrupt"


@pytest.fixture(scope="session")
def mini_corpus():
    return corpus.load_mini_corpus()


@pytest.fixture(scope="session")
def replay_bundle_dir():
    assert REPLAY_BUNDLE.is_dir(), "run scripts/build_replay_bundle.py first"
    return REPLAY_BUNDLE


@pytest.fixture(scope="session")
def replay_corrupt_dir():
    assert REPLAY_CORRUPT.is_dir(), "run scripts/build_replay_bundle.py first"
    return REPLAY_CORRUPT
