"""Collects acceptance outcomes and prints one pass/fail line per criterion."""
import pytest

CRITERIA = {
    1: "vein identities after normalizing",
    2: "liminf true path against the direct decision",
    3: "weak totalization keeps the function",
    4: "construction invariants and reproducible traces",
    5: "requirement behaviour in both regimes",
    6: "verifier round trip and embedding",
    7: "reduction checker verdicts",
    8: "brute-force leftmost leaf against the true path",
}

_results: dict = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    n = mark.args[0]
    if rep.when == "call" or rep.failed:
        ok = rep.passed if rep.when == "call" else False
        _results[n] = _results.get(n, True) and ok


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for n, label in CRITERIA.items():
        if n not in _results:
            status = "NOT RUN"
        else:
            status = "PASS" if _results[n] else "FAIL"
        terminalreporter.write_line(f"criterion {n}: {status}  {label}")
