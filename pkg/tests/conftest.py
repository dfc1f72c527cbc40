"""Per-criterion PASS/FAIL/SKIP summary for the acceptance suite.

Tests tagged ``@pytest.mark.criterion("C3", "title")`` are grouped; a
criterion fails if any of its tests fails, skips if all of them skip.
"""

from __future__ import annotations

import pytest

_RESULTS: dict[str, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(cid, title): acceptance criterion this test gates")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    cid, title = marker.args
    entry = _RESULTS.setdefault(cid, {"title": title, "outcomes": [], "notes": []})
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        entry["outcomes"].append(report.outcome)
        if report.skipped and isinstance(report.longrepr, tuple):
            entry["notes"].append(report.longrepr[2])
        for name, text in report.user_properties:
            if name == "measured":
                entry["notes"].append(text)


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for cid in sorted(_RESULTS, key=lambda c: int(c[1:])):
        entry = _RESULTS[cid]
        outs = entry["outcomes"]
        if "failed" in outs:
            verdict = "FAIL"
        elif outs and all(o == "skipped" for o in outs):
            verdict = "SKIP"
        else:
            verdict = "PASS"
        note = "; ".join(dict.fromkeys(entry["notes"]))
        terminalreporter.write_line(f"{verdict} {cid} {entry['title']}" + (f" ({note})" if note else ""))
