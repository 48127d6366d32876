import numpy as np
import pytest

_ACCEPTANCE = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number, title): numbered acceptance criterion")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def measured(request):
    """Dict for acceptance tests to stash the numbers they checked."""
    store = {}
    request.node.user_properties.append(("measured", store))
    return store


def pytest_runtest_logreport(report):
    if report.when != "call" and not report.failed:
        return
    props = dict(report.user_properties)
    meta = props.get("acceptance")
    if meta is None:
        return
    number, title = meta
    _ACCEPTANCE.setdefault(number, []).append((title, report.outcome, props.get("measured", {})))


@pytest.hookimpl(tryfirst=True)
def pytest_runtest_setup(item):
    m = item.get_closest_marker("acceptance")
    if m is not None:
        item.user_properties.append(("acceptance", (m.args[0], m.args[1])))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        for title, outcome, measured in _ACCEPTANCE[number]:
            status = "PASS" if outcome == "passed" else "FAIL"
            detail = ", ".join(f"{k}={_fmt(v)}" for k, v in measured.items())
            tr.write_line(f"[{status}] {number}. {title}" + (f"  ({detail})" if detail else ""))


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)
