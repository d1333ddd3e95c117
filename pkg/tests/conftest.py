import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture(scope="session")
def fixture_csv():
    return FIXTURES / "hlf_fixture_1k.csv"


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def f64():
    from pqforge import autodiff as ad

    with ad.default_dtype(np.float64):
        yield np.float64


def pytest_terminal_summary(terminalreporter):
    """One line per acceptance criterion, taken from the tests' recorded properties."""
    rows = []
    for outcome in ("passed", "failed"):
        for report in terminalreporter.stats.get(outcome, []):
            if report.when != "call":
                continue
            props = dict(report.user_properties)
            if "criterion" in props:
                rows.append((props["criterion"], "PASS" if outcome == "passed" else "FAIL", props.get("detail", "")))
    if not rows:
        return
    terminalreporter.section("acceptance criteria")
    for criterion, verdict, detail in sorted(rows):
        terminalreporter.write_line(f"{criterion}: {verdict}  {detail}")
