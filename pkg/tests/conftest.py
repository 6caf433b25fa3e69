import numpy as np
import pytest

from fluidnet.divergence import make_witness
from fluidnet.fixtures import rs_witness, rybko_stolyar, single_queue
from fluidnet.fluid import FluidSolution


@pytest.fixture(scope="session")
def sq():
    return single_queue()


@pytest.fixture(scope="session")
def rs():
    return rybko_stolyar()


@pytest.fixture(scope="session")
def witness(rs):
    return make_witness(rs, rs_witness())


def sq_drain(q0=4.0, horizon=10.0):
    """SQ (lambda=1, mu=2) draining from q0 at slope -1, then empty."""
    return FluidSolution(
        np.array([0.0, q0, horizon]),
        np.array([[q0], [0.0], [0.0]]),
        np.array([[0.0], [q0], [q0 + 0.5 * (horizon - q0)]]),
    )


# acceptance verdicts, echoed in the terminal summary so they survive output capture
ACCEPTANCE: dict[int, str] = {}


def record(criterion: int, ok: bool, detail: str) -> bool:
    line = f"criterion {criterion:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE[criterion] = line
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])
