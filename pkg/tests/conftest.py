import pytest

from tumorlin import KineticParams, SolverOptions, solve_stationary

BENCH = KineticParams(n=3, lambda_nutrient=1.0, k_B=3.0, k_D=2.0, k_P=2.0, k_Q=1.0)


@pytest.fixture(scope="session")
def bench_params():
    return BENCH


@pytest.fixture(scope="session")
def bench_sol():
    """Benchmark stationary state on the production grid."""
    return solve_stationary(BENCH, SolverOptions(N=4096))


@pytest.fixture(scope="session")
def coarse_sol():
    """Benchmark stationary state on a grid cheap enough for repeated time integration."""
    return solve_stationary(BENCH, SolverOptions(N=512))


ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def acceptance_log():
    return ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
