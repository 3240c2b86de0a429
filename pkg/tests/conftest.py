import pytest

from lsdefect import _backend, annotset, kernels

BACKENDS = ["python"] + (["cython"] if _backend.compiled_impl is not None else [])

_ACCEPTANCE: list[str] = []


@pytest.fixture(params=BACKENDS)
def backend(request, monkeypatch):
    """Run a test once per available kernel backend."""
    impl = _backend.python_impl if request.param == "python" else _backend.compiled_impl
    monkeypatch.setattr(kernels, "impl", impl)
    monkeypatch.setattr(annotset, "impl", impl)
    return request.param


@pytest.fixture
def acceptance_log():
    return _ACCEPTANCE


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE:
            terminalreporter.write_line(line)
