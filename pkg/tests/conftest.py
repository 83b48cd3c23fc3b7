import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")

_criteria: dict[int, dict] = {}


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


class Criterion:
    def __init__(self, number: int, title: str):
        self.number, self.title, self.details = number, title, []

    def note(self, text: str) -> None:
        self.details.append(text)


@pytest.fixture
def criterion(request):
    marker = request.node.get_closest_marker("acceptance")
    c = Criterion(*marker.args)
    _criteria[c.number] = {"c": c, "outcome": None}
    yield c


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None or marker.args[0] not in _criteria:
        return
    entry = _criteria[marker.args[0]]
    if rep.when == "call" or (rep.when == "setup" and rep.failed):
        entry["outcome"] = "PASS" if rep.passed else "FAIL"
        c = entry["c"]
        line = f"{entry['outcome']} criterion {c.number}: {c.title}"
        if c.details:
            line += " | " + "; ".join(c.details)
        print("\n" + line)
        entry["line"] = line


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_criteria):
        terminalreporter.write_line(_criteria[n].get("line", f"FAIL criterion {n}: not run"))
