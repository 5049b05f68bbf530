import time

import numpy as np
import pytest

from ukmp.scenarios import make_scenario, scenario_models
from ukmp.simulator import run_scenario

SUITE_BUDGET_S = 300.0
_session_start = time.perf_counter()
ACCEPTANCE: dict = {}


def record(criterion: int, passed: bool, detail: str) -> None:
    """Store an acceptance verdict; lines are printed in the terminal summary."""
    ACCEPTANCE[criterion] = (passed, detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    elapsed = time.perf_counter() - _session_start
    tr = terminalreporter
    tr.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[k]
        tr.write_line(f"criterion {k}: {'PASS' if passed else 'FAIL'}  {detail}")
    ok = elapsed < SUITE_BUDGET_S
    tr.write_line(f"criterion 9 (suite runtime): {'PASS' if ok else 'FAIL'}  "
                  f"{elapsed:.1f} s < {SUITE_BUDGET_S:.0f} s")


def pytest_sessionfinish(session, exitstatus):
    if time.perf_counter() - _session_start >= SUITE_BUDGET_S and exitstatus == 0:
        session.exitstatus = 1


def assert_sym_psd(cov, sym_tol=1e-9, psd_rel=1e-9):
    cov = np.asarray(cov)
    mats = cov.reshape(-1, cov.shape[-2], cov.shape[-1])
    for m in mats:
        assert np.max(np.abs(m - m.T)) <= sym_tol * max(1.0, np.max(np.abs(m)))
        w = np.linalg.eigvalsh(0.5 * (m + m.T))
        assert w[0] >= -psd_rel * max(w[-1], 0.0)


class ScenarioRun:
    def __init__(self, name, seed=0):
        t0 = time.perf_counter()
        self.data, self.config = make_scenario(name, seed)
        self.trace = run_scenario(self.config)
        self.elapsed = time.perf_counter() - t0


_runs: dict = {}


@pytest.fixture(scope="session")
def scenario_run():
    """Cached ``ScenarioRun`` per (name, seed); the first call is timed."""
    def get(name, seed=0):
        key = (name, seed)
        if key not in _runs:
            _runs[key] = ScenarioRun(name, seed)
        return _runs[key]
    return get


@pytest.fixture(scope="session")
def toy_models():
    return scenario_models("toy1d", 0)


@pytest.fixture(scope="session")
def handover_models():
    return scenario_models("handover", 0)
