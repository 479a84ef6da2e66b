import numpy as np
import pytest

VERDICTS = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[VERDICTS] = []


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(VERDICTS, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def verdict(request, capsys):
    """Print one PASS/FAIL line past the output capture and keep it for the summary."""
    def emit(criterion, ok, detail):
        line = f"[acceptance {criterion}] {'PASS' if ok else 'FAIL'}: {detail}"
        request.config.stash[VERDICTS].append(line)
        with capsys.disabled():
            print("\n" + line, flush=True)
    return emit
