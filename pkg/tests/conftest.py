import numpy as np
import pytest

from bangbang_afem.benchmarks import get_problem
from bangbang_afem.mesh import generate_domain, uniform_refine
from bangbang_afem.ocp import fixed_point_solve


@pytest.fixture
def rng():
    return np.random.default_rng(20240917)


@pytest.fixture(scope="session")
def ex1_solution():
    """ex1 on the structured n=4 square refined uniformly three times (h = 1/32)."""
    problem = get_problem("ex1")
    mesh = generate_domain("unit_square", 4)
    for _ in range(3):
        mesh = uniform_refine(mesh)
    return problem, fixed_point_solve(problem, mesh)


@pytest.fixture(scope="session")
def ex2_solution():
    problem = get_problem("ex2")
    mesh = uniform_refine(generate_domain("lshape_sw", 4))
    return problem, fixed_point_solve(problem, mesh)


_ACCEPTANCE = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)


@pytest.fixture
def acceptance(request):
    """Record one PASS/FAIL line per criterion and fail the test on FAIL."""

    def record(number, title, checks):
        failed = [desc for desc, ok in checks if not ok]
        status = "FAIL" if failed else "PASS"
        detail = "; ".join(desc for desc, _ in checks)
        request.config.stash[_ACCEPTANCE].append(f"criterion {number}: {status}  {title}  [{detail}]")
        assert not failed, f"criterion {number} ({title}) failed: {'; '.join(failed)}"

    return record
