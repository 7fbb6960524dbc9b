from __future__ import annotations

import pytest

from dagkernel import runner
from dagkernel.registry import RESERVED_FIELDS

# acceptance results, filled by test_acceptance.py: number -> (title, passed)
ACCEPTANCE: dict[int, tuple[str, bool]] = {}

# every RunState created during the suite, checked for reserved-key leaks
_STATES: list = []
_LEAKS: list[tuple[str, list[str]]] = []
_original_start = runner.RunState.start.__func__


def _recording_start(cls, *args, **kwargs):
    state = _original_start(cls, *args, **kwargs)
    _STATES.append(state)
    return state


@pytest.fixture(autouse=True)
def reserved_key_hygiene(request, monkeypatch):
    """After each test, no serialized context may mention a reserved field."""
    monkeypatch.setattr(runner.RunState, "start", classmethod(_recording_start))
    first = len(_STATES)
    yield
    for state in _STATES[first:]:
        blob = state.context.to_json()
        leaked = [name for name in RESERVED_FIELDS if name in blob]
        if leaked:
            _LEAKS.append((request.node.nodeid, leaked))
        assert not leaked, f"reserved fields {leaked} leaked into the context"


def reserved_leaks() -> list[tuple[str, list[str]]]:
    return list(_LEAKS)


def scanned_states() -> int:
    return len(_STATES)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    if 5 in ACCEPTANCE and _LEAKS:
        # hygiene covers every run in the session, not only the acceptance file
        ACCEPTANCE[5] = (ACCEPTANCE[5][0], False)
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        title, ok = ACCEPTANCE[number]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  criterion {number:>2}: {title}")
