import pytest

from certshare.data import load_idx, load_network
from certshare.fixtures import fixture_path

_CRITERIA: dict = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number, title): acceptance criterion check")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None or rep.when not in ("setup", "call"):
        return
    number, title = marker.args
    entry = _CRITERIA.setdefault(number, {"title": title, "ok": True, "failed": []})
    if rep.failed:
        entry["ok"] = False
        entry["failed"].append(item.name)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        e = _CRITERIA[number]
        status = "PASS" if e["ok"] else "FAIL"
        extra = f"  (failed: {', '.join(e['failed'])})" if e["failed"] else ""
        terminalreporter.write_line(f"criterion {number:>2}: {status}  {e['title']}{extra}")


@pytest.fixture(scope="session")
def running_net():
    return load_network(fixture_path("running_example.json"))


@pytest.fixture(scope="session")
def strokes():
    return load_idx(fixture_path("strokes-images.idx"), fixture_path("strokes-labels.idx"))


@pytest.fixture(scope="session")
def net_3x16():
    return load_network(fixture_path("dense_3x16.json"))


@pytest.fixture(scope="session")
def net_7x20():
    return load_network(fixture_path("dense_7x20.json"))


@pytest.fixture(scope="session")
def blobs_net():
    return load_network(fixture_path("blobs_net.json"))
