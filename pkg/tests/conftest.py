import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from confidence_engine import bundled_model, load  # noqa: E402


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def tpa_model():
    return load(bundled_model("tpa").read_text())


@pytest.fixture(scope="session")
def tpa_revised_model():
    return load(bundled_model("tpa_revised").read_text())
