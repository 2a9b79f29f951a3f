import numpy as np
import pytest

from flipdml.simgen import SimConfig, generate


def write(tmp_path, text, name="panel.csv"):
    path = tmp_path / name
    path.write_text(text)
    return path


@pytest.fixture
def csv_file(tmp_path):
    def make(text, name="panel.csv"):
        return write(tmp_path, text, name)
    return make


@pytest.fixture(scope="session")
def small_panel():
    """20 contests x 30 precincts, linear g, modest noise."""
    return generate(SimConfig(C=20, n_range=(20, 40), g_kind="linear", seed=11))


@pytest.fixture(scope="session")
def medium_panel():
    return generate(SimConfig(C=40, n_range=(60, 100), seed=5))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


# ---- acceptance verdicts ---------------------------------------------------

ACCEPTANCE: dict = {}


@pytest.fixture
def verdict():
    """Record a PASS/FAIL line for an acceptance criterion, then assert it."""
    def record(n, ok, detail):
        ACCEPTANCE[n] = (bool(ok), detail)
        print(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
        assert ok, f"criterion {n}: {detail}"
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
