import pytest

_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number, title = marker.args
    entry = _CRITERIA.setdefault(number, {"title": title, "ok": True, "ran": False, "notes": []})
    if rep.when == "call":
        entry["ran"] = True
    if rep.failed or rep.skipped:
        entry["ok"] = False


@pytest.fixture
def note(request):
    """Attach a measured value to the criterion line of the summary."""
    marker = request.node.get_closest_marker("criterion")

    def add(text):
        number, title = marker.args
        entry = _CRITERIA.setdefault(number, {"title": title, "ok": True, "ran": False,
                                              "notes": []})
        entry["notes"].append(text)
        print(f"[criterion {number}] {text}")

    return add


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        e = _CRITERIA[number]
        status = "PASS" if e["ok"] and e["ran"] else "FAIL"
        terminalreporter.write_line(f"criterion {number}: {status}  {e['title']}")
        for text in e["notes"]:
            terminalreporter.write_line(f"    {text}")
