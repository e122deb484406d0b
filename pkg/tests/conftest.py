import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from helpers import EXAMPLE_ANSWER  # noqa: E402


def pytest_addoption(parser):
    parser.addoption(
        "--run-live-repro",
        action="store_true",
        default=False,
        help="run checks that need the real corpora and a live model server",
    )


def pytest_collection_modifyitems(config, items):
    if config.getoption("--run-live-repro"):
        return
    skip = pytest.mark.skip(reason="needs --run-live-repro")
    for item in items:
        if "live_repro" in item.keywords:
            item.add_marker(skip)


@pytest.fixture
def example_answer():
    return EXAMPLE_ANSWER


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def criterion(request):
    """Record one PASS/FAIL line for an acceptance criterion, then assert."""

    def record(name: str, ok: bool, detail: str = "") -> None:
        line = f"{'PASS' if ok else 'FAIL'}  {name}" + (f"  ({detail})" if detail else "")
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
