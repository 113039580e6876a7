"""Collects acceptance outcomes and prints one PASS/FAIL line per criterion."""

_results = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, label): acceptance criterion number n")


def pytest_runtest_makereport(item, call):
    marker = item.get_closest_marker("criterion")
    if marker is None or call.when != "call":
        return
    n, label = marker.args
    _results[n] = (label, call.excinfo is None, call.duration)


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in sorted(_results):
        label, ok, secs = _results[n]
        tr.write_line(f"{'PASS' if ok else 'FAIL'}  {n:>2}  {label}  ({secs:.2f}s)")
