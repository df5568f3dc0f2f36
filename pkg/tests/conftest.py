"""Collects acceptance outcomes and prints one PASS/FAIL line per criterion."""

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

_RESULTS: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number, title): acceptance criterion this test checks")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("acceptance")
    if mark is None or rep.when not in ("setup", "call"):
        return
    num, title = mark.args
    entry = _RESULTS.setdefault(num, {"title": title, "ok": True, "notes": []})
    if rep.failed:
        entry["ok"] = False
        entry["notes"].append(f"{item.name} failed")
    elif rep.skipped:
        entry["ok"] = False
        entry["notes"].append(f"{item.name} skipped")
    for key, value in item.user_properties:
        if key == "detail":
            entry["notes"].append(value)


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_RESULTS):
        e = _RESULTS[num]
        # user_properties repeat across report phases; keep each note once
        notes = "; ".join(dict.fromkeys(e["notes"]))
        line = f"criterion {num}: {'PASS' if e['ok'] else 'FAIL'}  {e['title']}"
        terminalreporter.write_line(line + (f"  ({notes})" if notes else ""))
