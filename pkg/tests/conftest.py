import pytest

from pairscore.synthetic import random_context_set, random_drug_set, random_triples

_LINES = pytest.StashKey[list]()


@pytest.fixture(scope="session")
def drugs():
    return random_drug_set(12, seed=5, min_fragments=1, max_fragments=3)


@pytest.fixture(scope="session")
def contexts():
    return random_context_set(3, 5, seed=6)


@pytest.fixture(scope="session")
def triples(drugs, contexts):
    return random_triples(sorted(drugs), sorted(contexts), 40, seed=7)


@pytest.fixture
def criterion(request, capsys):
    """Record one ``criterion N: PASS|FAIL  detail`` line and assert on it."""

    def record(number: int, ok: bool, detail: str) -> None:
        line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        request.config.stash.setdefault(_LINES, []).append(line)
        with capsys.disabled():
            print("\n" + line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
