import time

import pytest

from rds_conley.config import load_preset
from rds_conley.pipeline import run_lyapunov

ACCEPTANCE = {}


def record_criterion(number, title, passed, detail=""):
    """A criterion may be checked by several tests; it passes if all parts pass."""
    if number in ACCEPTANCE:
        _, ok, old = ACCEPTANCE[number]
        ACCEPTANCE[number] = (title, ok and bool(passed), f"{old}; {detail}" if detail else old)
    else:
        ACCEPTANCE[number] = (title, bool(passed), detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        title, ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n} {'PASS' if ok else 'FAIL'}: {title}  {detail}".rstrip())


_RUNS = {}


def preset_run(name):
    """Lyapunov run of a preset, computed once per session; returns (cfg, result, seconds)."""
    if name not in _RUNS:
        cfg = load_preset(name)
        t0 = time.perf_counter()
        lr = run_lyapunov(cfg)
        _RUNS[name] = (cfg, lr, time.perf_counter() - t0)
    return _RUNS[name]


@pytest.fixture(scope="session")
def double_well_run():
    return preset_run("double-well")


@pytest.fixture(scope="session")
def lorenz_run():
    return preset_run("random-lorenz")
