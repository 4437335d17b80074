import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from clxabsa.model import build_toy_tagger  # noqa: E402
from clxabsa.synthetic import make_bilingual_corpus  # noqa: E402


@pytest.fixture(scope="session")
def small_corpus():
    return make_bilingual_corpus(n_train=40, n_dev=12, n_test=16, n_unlabeled=20, seed=0)


@pytest.fixture(scope="session")
def corpus_tokens(small_corpus):
    return [s.tokens for ds in small_corpus.files().values() for s in ds]


@pytest.fixture
def tiny_tagger(corpus_tokens):
    return build_toy_tagger(corpus_tokens, hidden_dim=8, embedding_dim=8, seed=0)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
