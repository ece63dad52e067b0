import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from fpsim.synthetic import write_personas_file  # noqa: E402


@pytest.fixture
def personas_file(tmp_path):
    def make(n=10, seed=0, name="personas.jsonl"):
        return write_personas_file(tmp_path / name, n, seed)
    return make


ACCEPTANCE_RESULTS: list[tuple[str, bool, str]] = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in ACCEPTANCE_RESULTS:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}  {detail}")
