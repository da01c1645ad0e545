import sys
from pathlib import Path

import pytest

from binkit.synthetic import generate_synthetic_corpus

sys.path.insert(0, str(Path(__file__).parent))

_criteria: dict[int, dict] = {}


@pytest.fixture(scope="session")
def tiny_corpus(tmp_path_factory):
    """Small seeded corpus: 4 train, 1 validation, 2 test pages of 64x64."""
    root = tmp_path_factory.mktemp("corpus")
    manifest = generate_synthetic_corpus(root, seed=3, n_train=4, n_val=1, n_test=2, page_size=64)
    return root, manifest


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or report.when not in ("setup", "call"):
        return
    number, title = mark.args
    entry = _criteria.setdefault(number, {"title": title, "ok": True, "ran": False})
    if report.failed:
        entry["ok"] = False
    if report.when == "call" and not report.skipped:
        entry["ran"] = True


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        entry = _criteria[number]
        status = "PASS" if entry["ok"] and entry["ran"] else ("FAIL" if not entry["ok"] else "SKIP")
        terminalreporter.write_line(f"AC{number:<3d}{status}  {entry['title']}")
