import numpy as np
import pytest

from cldnudge import scenario
from cldnudge.config import load_config

_ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def report():
    """Record one PASS/FAIL line for the acceptance summary."""
    def _report(label: str, ok: bool, detail: str = "") -> bool:
        line = f"{'PASS' if ok else 'FAIL'}  {label}" + (f"  [{detail}]" if detail else "")
        _ACCEPTANCE_LINES.append(line)
        print(line)
        return ok
    return _report


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def table1_cfg():
    return load_config("table1")


@pytest.fixture(scope="session")
def table1_model(table1_cfg):
    return scenario.model_from_config(table1_cfg)


@pytest.fixture(scope="session")
def table1_truth(table1_cfg, table1_model):
    """(initial PSDs, trajectory, record) of the Table 1 scenario."""
    psi0 = [p.values for p in scenario.seeds_for(table1_cfg, table1_model)]
    traj = table1_model.simulate(psi0)
    return psi0, traj, table1_model.measure(traj)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
