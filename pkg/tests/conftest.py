from __future__ import annotations

import os

import pytest

# criterion id -> (passed, detail); filled by the acceptance suite
ACCEPTANCE: dict[str, tuple[bool, str]] = {}


def record(criterion: str, passed: bool, detail: str = "") -> bool:
    ACCEPTANCE[criterion] = (bool(passed), detail)
    print(f"[{'PASS' if passed else 'FAIL'}] {criterion}: {detail}")
    return bool(passed)


def pytest_collection_modifyitems(config, items):
    if os.environ.get("THERMBATH_HEAVY") == "1":
        return
    skip = pytest.mark.skip(reason="heavy run; set THERMBATH_HEAVY=1")
    for item in items:
        if "heavy" in item.keywords:
            item.add_marker(skip)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=_natural):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {key}  {detail}")


def _natural(key: str):
    head, _, tail = key.partition(" ")
    num = "".join(ch for ch in head if ch.isdigit())
    return (int(num) if num else 0, key)
