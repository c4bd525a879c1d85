import numpy as np
import pytest

from spliceguard.corpus import CorpusConfig, generate_toy_corpus


@pytest.fixture(scope="session")
def small_corpus():
    genuine = generate_toy_corpus(CorpusConfig(num_utterances=12), seed=3)
    fake = generate_toy_corpus(CorpusConfig(num_utterances=4, family="filtered_noise", id_prefix="fake"), seed=4)
    return genuine, fake


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES = []


@pytest.fixture
def criterion():
    """Record one PASS/FAIL line per acceptance criterion, then assert it."""

    def record(number, ok, detail):
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split(":")[0].split()[1])):
            terminalreporter.write_line(line)
