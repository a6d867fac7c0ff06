from __future__ import annotations

import pytest

from hypnav.agent import frontier_contexts

# worlds whose NoSemantic-arm queries make up the shared frontier corpus
CORPUS_SEEDS = range(170)


@pytest.fixture(scope="session")
def frontier_corpus():
    return frontier_contexts(CORPUS_SEEDS)


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import LINES

    if LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(LINES):
            terminalreporter.write_line(LINES[n])
