import sys
from pathlib import Path

# the scalar oracles live next to the tests
sys.path.insert(0, str(Path(__file__).parent))

# (criterion, passed, detail) lines recorded by test_acceptance.py
ACCEPTANCE: list = []


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance: acceptance criterion (slow)")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for crit, ok, detail in sorted(ACCEPTANCE, key=lambda r: r[0]):
        terminalreporter.write_line(f"criterion {crit}: {'PASS' if ok else 'FAIL'}  {detail}")
