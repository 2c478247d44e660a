import pytest

from nevlab.function_core import airy_symmetric, tangent
from nevlab.strip_dynamics import StripLattice
from nevlab.tract_models import build_system


@pytest.fixture(scope="session")
def flagship():
    return tangent()


@pytest.fixture(scope="session")
def flag_system(flagship):
    return build_system(flagship)


@pytest.fixture(scope="session")
def flag_lattice(flag_system):
    return StripLattice(flag_system, 3.0)


@pytest.fixture(scope="session")
def airy_system():
    return build_system(airy_symmetric())


@pytest.fixture(scope="session")
def airy_lattice(airy_system):
    return StripLattice(airy_system, 3.0)


_GATES: dict = {}


def record_gate(n: int, ok: bool, detail: str) -> None:
    _GATES[n] = (ok, detail)


def pytest_terminal_summary(terminalreporter):
    if not _GATES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_GATES):
        ok, detail = _GATES[n]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} criterion {n:2d}: {detail}")
