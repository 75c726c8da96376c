"""Collects acceptance-criterion outcomes and prints one line per criterion."""

import pytest

_results: dict[int, dict] = {}


def pytest_runtest_logreport(report):
    crit = dict(report.user_properties).get("criterion")
    if crit is None:
        return
    number, title = crit
    entry = _results.setdefault(number, {"title": title, "ok": True, "details": [], "ran": False})
    if report.when == "call":
        entry["ran"] = True
    if report.failed or (report.when == "call" and report.skipped):
        entry["ok"] = False
    if report.when == "call":
        entry["details"].extend(v for k, v in report.user_properties if k == "detail")


@pytest.hookimpl(tryfirst=True)
def pytest_runtest_setup(item):
    m = item.get_closest_marker("criterion")
    if m is not None:
        item.user_properties.append(("criterion", tuple(m.args)))


@pytest.fixture
def detail(request):
    """Attach a measured value to the acceptance summary line."""
    def add(text):
        request.node.user_properties.append(("detail", text))
    return add


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_results):
        e = _results[n]
        status = "PASS" if e["ok"] and e["ran"] else "FAIL"
        line = f"criterion {n}: {status} - {e['title']}"
        if e["details"]:
            line += " [" + "; ".join(e["details"]) + "]"
        terminalreporter.write_line(line)
