import numpy as np
import pytest

_ACCEPTANCE = []


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def acceptance():
    """Record one exit-criterion outcome; asserts it and lists it in the summary.

    ``asserted=False`` records an informational line (reported, never failed);
    ``status`` overrides the printed label, e.g. "SKIP".
    """
    def record(name, passed, detail="", asserted=True, status=None):
        status = status or (("PASS" if passed else "FAIL") if asserted else "INFO")
        _ACCEPTANCE.append((name, status, detail))
        if asserted:
            assert passed, f"{name}: {detail}"
    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, status, detail in _ACCEPTANCE:
        terminalreporter.write_line(f"{status}  {name}  {detail}")
