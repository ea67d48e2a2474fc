import os
import sys

import pytest
from hypothesis import settings

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile("default", max_examples=100, deadline=None, derandomize=True)
settings.load_profile("default")

# (label, passed, detail) for every acceptance criterion checked in this session
ACCEPTANCE_LINES = []


@pytest.fixture
def criterion():
    """Record a named criterion as one line and fail the test if any check failed.

    Usage: ``criterion("1 linear n=100", [("CE-m* NC <= 5", nc <= 5, f"nc={nc}"), ...])``.
    """

    def record(label, checks):
        passed = all(ok for _, ok, _ in checks)
        detail = "; ".join(f"{'ok' if ok else 'MISS'} {name} ({info})" for name, ok, info in checks)
        ACCEPTANCE_LINES.append((label, passed, detail))
        misses = [f"{name} ({info})" for name, ok, info in checks if not ok]
        assert not misses, f"criterion {label} missed: " + "; ".join(misses)

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for label, passed, detail in ACCEPTANCE_LINES:
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  {label}: {detail}")
