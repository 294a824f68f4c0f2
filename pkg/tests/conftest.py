import numpy as np
import pytest

from expconc.experiments import make_distribution
from expconc.problem import L1, Domain, ProblemSpec, SquareLoss

_CRITERIA = {}


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.outcome != "passed"):
        return
    crit = report.user_properties and dict(report.user_properties).get("criterion")
    if crit:
        _CRITERIA[crit[0]] = (crit[1], report.outcome)


@pytest.fixture(autouse=True)
def _record_criterion(request):
    marker = request.node.get_closest_marker("criterion")
    if marker is not None:
        request.node.user_properties.append(("criterion", marker.args))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        title, outcome = _CRITERIA[number]
        verdict = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"criterion {number:2d}: {verdict}  {title}")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def desk_spec(d=5, lam=0.05):
    return ProblemSpec(SquareLoss(), L1(lam), Domain(1.0, d), L=2.0, beta=0.125)


@pytest.fixture(scope="session")
def desk():
    spec = desk_spec()
    return spec, make_distribution(spec.dim, seed=0)
