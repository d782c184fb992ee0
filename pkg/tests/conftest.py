import sys
from pathlib import Path

import pytest

HELPERS = Path(__file__).parent / "helpers"

# Behaviour listing as printed with the original dataset description (no blank lines between cues).
LISTING = """0:05:11.000 --> 0:05:23.000
Cow 2 Drinking
0:05:17.000 --> 0:05:42.000
Cow 4 Other
0:05:22.000 --> 0:05:40.000
Cow 8 Grazing
"""

# Published TSN confusion counts; rows are true labels, columns predictions.
TSN_COUNTS = ((92, 6, 11), (2, 117, 5), (12, 55, 50))


def helper_command(name: str, *args: str) -> str:
    import shlex
    return " ".join(shlex.quote(a) for a in (sys.executable, str(HELPERS / name), *args))


@pytest.fixture
def listing():
    return LISTING


@pytest.fixture
def tsn_counts():
    return TSN_COUNTS


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def acceptance_report():
    """Call with (number, title, passed, detail); lines are printed after the run."""
    def record(number, title, passed, detail=""):
        ACCEPTANCE_LINES.append(f"[{'PASS' if passed else 'FAIL'}] criterion {number}: {title}"
                                + (f" ({detail})" if detail else ""))
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
