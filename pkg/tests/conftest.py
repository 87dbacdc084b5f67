import pytest

from ffconverge.closedform import solve_endpoint
from ffconverge.specfun import ModelParams


@pytest.fixture(scope="session")
def params():
    return ModelParams(b=0.3, gamma_charge=1.0, kappa=1.0)


@pytest.fixture(scope="session")
def geom_1e4(params):
    return solve_endpoint(10 ** 4, params)


@pytest.fixture(scope="session")
def geom_1e6(params):
    return solve_endpoint(10 ** 6, params)


def pytest_terminal_summary(terminalreporter):
    lines = []
    for key in ("passed", "failed"):
        for rep in terminalreporter.stats.get(key, []):
            if getattr(rep, "when", None) == "call":
                lines += [v for k, v in rep.user_properties if k == "acceptance"]
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
