import contextlib

import pytest

# criterion label -> (passed, detail); filled by tests/test_acceptance.py
ACCEPTANCE = {}


@contextlib.contextmanager
def record_criterion(label: str, description: str):
    """Record the outcome of one acceptance criterion, re-raising failures."""
    notes = []
    try:
        yield notes
    except BaseException as exc:
        ACCEPTANCE[label] = (False, description, "; ".join(notes + [f"{type(exc).__name__}: {exc}".splitlines()[0]]))
        raise
    ACCEPTANCE[label] = (True, description, "; ".join(notes))


@pytest.fixture
def criterion():
    return record_criterion


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for label in sorted(ACCEPTANCE, key=lambda s: (len(s.rstrip("abc")), s)):
        passed, description, detail = ACCEPTANCE[label]
        line = f"[{'PASS' if passed else 'FAIL'}] criterion {label}: {description}"
        terminalreporter.write_line(line + (f" | {detail}" if detail else ""))
