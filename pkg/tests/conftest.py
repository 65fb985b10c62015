import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from apakit.corpus import load_corpus  # noqa: E402
from apakit.scorekit import PhoneScore, SentenceScores, UtteranceAnnotation, WordScore  # noqa: E402

FIXTURE = Path(__file__).resolve().parents[1] / "src" / "apakit" / "data" / "fixture"


@pytest.fixture(scope="session")
def fixture_root():
    return FIXTURE


@pytest.fixture
def fixture_corpus():
    return load_corpus(FIXTURE)


def make_annotation(uid="u1", words=("good", "morning"), phones=(("G", "UH", "D"), ("M", "AO", "R", "N", "IH", "NG")),
                    sentence=(8.0, 9.0, 7.0, 10.0, 8.0), word_scores=None, phone_scores=None):
    word_scores = word_scores or [(8.0, 10.0, 8.0)] * len(words)
    sent = SentenceScores(*sentence)
    ws = [WordScore(w, *s) for w, s in zip(words, word_scores)]
    ph = None
    if phones is not None:
        ph = []
        for gi, g in enumerate(phones):
            scores = phone_scores[gi] if phone_scores else [8.0] * len(g)
            ph.append([PhoneScore(p, s) for p, s in zip(g, scores)])
    return UtteranceAnnotation(uid, "spk1", list(words), [list(g) for g in phones] if phones else [],
                               sent, ws, ph)


@pytest.fixture
def annotation():
    return make_annotation()


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
